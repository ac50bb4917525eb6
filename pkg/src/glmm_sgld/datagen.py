"""Synthetic longitudinal datasets for the benchmark designs.

Five named designs share a random-intercept, random-slope structure with
q = 2. Four of them ("lmm-fixed", "gaussian-unknown", "bernoulli", "poisson")
use x_it = (1, x_it) with x_it iid standard normal and Z = X; "lmm-fixed" and
"gaussian-unknown" produce identical data and differ only in which parameters
the fitted model treats as known. The "missingness" design uses
x_it = (1, tau_it, x_i) with an equally spaced follow-up time tau_it in [0, 1],
a subject-level covariate x_i shared across rows, z_it = (1, tau_it), and a
per-subject indicator w_i = 1(sum_t Y_it = 0) computed from the simulated
outcomes.
"""
from __future__ import annotations

import numpy as np

from .families import get_family
from .model import Dataset

TRUE_BETA = np.array([1.5, -0.5])
TRUE_SIGMA2 = 2.0
TRUE_COV = np.array([[1.5, -0.25], [-0.25, 1.5]])
# missingness default: modest baseline rate so all-zero subjects actually
# occur, distress decaying in follow-up time, positive subject-covariate slope
MISSINGNESS_BETA = np.array([-1.5, -0.5, 0.5])

DESIGN_FAMILIES: dict[str, str] = {
    "lmm-fixed": "gaussian",
    "gaussian-unknown": "gaussian",
    "bernoulli": "bernoulli-logit",
    "poisson": "poisson",
    "missingness": "bernoulli-logit",
}
DESIGNS = tuple(DESIGN_FAMILIES)


def generate_data(
    design: str,
    n: int,
    n_i: int,
    *,
    beta: np.ndarray | None = None,
    sigma2: float | None = None,
    cov: np.ndarray | None = None,
    seed: int = 0,
) -> tuple[Dataset, dict]:
    """Simulate one dataset for a named design.

    Returns the dataset together with a truth record (design, sizes, seed and
    the generating parameters) suitable for writing alongside the data. The
    Gaussian noise variance defaults to 2.0 and is ignored by the discrete
    families; beta defaults per design.
    """
    if design not in DESIGN_FAMILIES:
        raise ValueError(f"unknown design {design!r}; expected one of {DESIGNS}")
    if n < 1 or n_i < 1:
        raise ValueError("n and n_i must be positive")
    family_name = DESIGN_FAMILIES[design]
    cov = TRUE_COV if cov is None else np.asarray(cov, dtype=float)
    if beta is None:
        beta = MISSINGNESS_BETA if design == "missingness" else TRUE_BETA
    beta = np.asarray(beta, dtype=float)
    p_expected = 3 if design == "missingness" else 2
    if beta.shape != (p_expected,):
        raise ValueError(f"design {design!r} needs beta of shape ({p_expected},)")
    if family_name == "gaussian":
        sigma2 = TRUE_SIGMA2 if sigma2 is None else float(sigma2)
    else:
        sigma2 = None

    rng = np.random.default_rng(seed)
    if design == "missingness":
        data = _simulate_missingness(rng, n, n_i, beta, cov)
    else:
        data = _simulate_iid_covariate(rng, n, n_i, beta, cov, family_name, sigma2)

    truth = {
        "design": design,
        "family": family_name,
        "n": int(n),
        "n_i": int(n_i),
        "seed": int(seed),
        "beta": beta.tolist(),
        "sigma2": sigma2,
        "cov": cov.tolist(),
    }
    return data, truth


def _simulate_iid_covariate(rng, n, n_i, beta, cov, family_name, sigma2):
    family = get_family(family_name)
    x_col = rng.standard_normal((n, n_i))
    gamma = rng.standard_normal((n, 2)) @ np.linalg.cholesky(cov).T
    eta = beta[0] + beta[1] * x_col + gamma[:, [0]] + gamma[:, [1]] * x_col
    y = family.sample(rng, family.mean(eta), 1.0 if sigma2 is None else sigma2)
    xs = [np.column_stack([np.ones(n_i), x_col[i]]) for i in range(n)]
    return Dataset(y=list(y), x=xs, z=xs)


def _simulate_missingness(rng, n, n_i, beta, cov):
    family = get_family("bernoulli-logit")
    tau = np.arange(n_i, dtype=float) / max(n_i - 1, 1)
    x_subj = rng.standard_normal(n)
    gamma = rng.standard_normal((n, 2)) @ np.linalg.cholesky(cov).T
    eta = (
        beta[0]
        + beta[1] * tau[None, :]
        + beta[2] * x_subj[:, None]
        + gamma[:, [0]]
        + gamma[:, [1]] * tau[None, :]
    )
    y = family.sample(rng, family.mean(eta), 1.0)
    xs = [
        np.column_stack([np.ones(n_i), tau, np.full(n_i, x_subj[i])])
        for i in range(n)
    ]
    zs = [x[:, :2] for x in xs]
    w = (y.sum(axis=1) == 0).astype(int)
    return Dataset(y=list(y), x=xs, z=zs, w=w)
