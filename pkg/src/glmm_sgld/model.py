"""Model skeleton: longitudinal data container, unconstrained parameter
layout, and the per-subject joint log density with its analytic gradients.

The sampled parameter vector omega lives in R^d and concatenates, in order:
fixed effects beta, the unconstrained dispersion (Gaussian family with free
sigma^2 only), the unconstrained random-effect covariance block, and the
dropout coefficients alpha (missingness models only). Blocks held fixed by the
model (known sigma^2 or known Sigma) are excluded from omega entirely.

Per-subject joint density, at random effect gamma_i:

    log p(Y_i, gamma_i | omega) = sum_t loglik(y_it; eta_it, phi)
                                  + log N_q(gamma_i; 0, Sigma)

and, when a dropout indicator w_i is modeled, the conditional-likelihood term
is gated by 1(w_i = 0) and log p(w_i | alpha) is added.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .families import Family, get_family
from .transforms import (
    cov_block_size,
    cov_partials,
    cov_to_unconstrained,
    dispersion_to_unconstrained,
    unconstrained_to_cov,
    unconstrained_to_dispersion,
)

__all__ = [
    "Dataset",
    "GlmmModel",
    "missingness_design",
    "linear_predictor",
    "joint_loglik",
    "joint_gradient",
    "grad_beta",
    "grad_dispersion",
    "grad_cov",
    "grad_alpha",
    "mvn_logpdf",
]


@dataclass
class Dataset:
    """Per-subject response vectors and design matrices.

    y[i] is (n_i,), x[i] is (n_i, p), z[i] is (n_i, q). w, when present, holds
    one 0/1 dropout flag per subject. subject_ids preserves external ids for
    file round-trips; defaults to 1..n.
    """

    y: list[np.ndarray]
    x: list[np.ndarray]
    z: list[np.ndarray]
    w: np.ndarray | None = None
    subject_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.y)
        if not (len(self.x) == len(self.z) == n):
            raise ValueError("y, x, z must have one entry per subject")
        self.y = [np.asarray(v, dtype=float).reshape(-1) for v in self.y]
        self.x = [np.asarray(v, dtype=float) for v in self.x]
        self.z = [np.asarray(v, dtype=float) for v in self.z]
        for i in range(n):
            if self.x[i].ndim != 2 or self.z[i].ndim != 2:
                raise ValueError(f"subject {i}: design matrices must be 2-d")
            if not (self.x[i].shape[0] == self.z[i].shape[0] == self.y[i].shape[0]):
                raise ValueError(f"subject {i}: row counts of y, x, z disagree")
            if self.x[i].shape[1] != self.x[0].shape[1] or self.z[i].shape[1] != self.z[0].shape[1]:
                raise ValueError(f"subject {i}: column counts differ across subjects")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=int).reshape(-1)
            if self.w.shape[0] != n:
                raise ValueError("w must hold one flag per subject")
            if not np.isin(self.w, [0, 1]).all():
                raise ValueError("w entries must be 0 or 1")
        if not self.subject_ids:
            self.subject_ids = list(range(1, n + 1))

    @property
    def n_subjects(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x[0].shape[1]

    @property
    def q(self) -> int:
        return self.z[0].shape[1]

    @property
    def n_obs(self) -> int:
        return int(sum(v.shape[0] for v in self.y))


def missingness_design(data: Dataset) -> tuple[np.ndarray, list[int]]:
    """Subject-level design for the dropout model.

    Uses the columns of X that are constant within every subject (baseline
    covariates, including the intercept). Returns the (n, p_w) design and the
    selected column indices. Falls back to an intercept-only design if no
    column is subject-constant.
    """
    p = data.p
    keep = []
    for j in range(p):
        constant = all(
            np.ptp(data.x[i][:, j]) == 0.0 if data.x[i].shape[0] else True
            for i in range(data.n_subjects)
        )
        if constant:
            keep.append(j)
    if keep:
        design = np.stack([data.x[i][0, keep] for i in range(data.n_subjects)])
        return np.asarray(design, dtype=float), keep
    return np.ones((data.n_subjects, 1)), []


class GlmmModel:
    """Ties a response family to design dimensions, fixed components, and the
    block layout of the unconstrained parameter vector."""

    def __init__(
        self,
        family: Family | str,
        p: int,
        q: int,
        *,
        fixed_dispersion: float | None = None,
        fixed_cov: np.ndarray | None = None,
        missingness: bool = False,
        n_missing_covariates: int = 0,
    ) -> None:
        self.family = get_family(family) if isinstance(family, str) else family
        self.p = int(p)
        self.q = int(q)
        if fixed_dispersion is not None and not self.family.has_dispersion:
            raise ValueError(f"{self.family.name} has no dispersion to fix")
        self.fixed_dispersion = None if fixed_dispersion is None else float(fixed_dispersion)
        if fixed_cov is not None:
            fixed_cov = np.asarray(fixed_cov, dtype=float)
            if fixed_cov.shape != (q, q):
                raise ValueError("fixed_cov must be (q, q)")
        self.fixed_cov = fixed_cov
        self.missingness = bool(missingness)
        if missingness and n_missing_covariates < 1:
            raise ValueError("missingness model needs at least an intercept column")
        self.n_missing_covariates = int(n_missing_covariates) if missingness else 0

        # Block layout, in declaration order.
        start = 0
        self.beta_slice = slice(start, start + self.p)
        start += self.p
        if self.family.has_dispersion and self.fixed_dispersion is None:
            self.dispersion_slice: slice | None = slice(start, start + 1)
            start += 1
        else:
            self.dispersion_slice = None
        if self.fixed_cov is None:
            k = cov_block_size(self.q)
            self.cov_slice: slice | None = slice(start, start + k)
            start += k
        else:
            self.cov_slice = None
        if self.missingness:
            self.alpha_slice: slice | None = slice(start, start + self.n_missing_covariates)
            start += self.n_missing_covariates
        else:
            self.alpha_slice = None
        self.dim = start

    @classmethod
    def for_data(
        cls,
        family: Family | str,
        data: Dataset,
        *,
        fixed_dispersion: float | None = None,
        fixed_cov: np.ndarray | None = None,
        missingness: bool = False,
    ) -> "GlmmModel":
        n_w = 0
        if missingness:
            if data.w is None:
                raise ValueError("missingness model requires a w column in the data")
            n_w = missingness_design(data)[0].shape[1]
        return cls(
            family,
            data.p,
            data.q,
            fixed_dispersion=fixed_dispersion,
            fixed_cov=fixed_cov,
            missingness=missingness,
            n_missing_covariates=n_w,
        )

    # --- block accessors -------------------------------------------------
    def beta(self, omega: np.ndarray) -> np.ndarray:
        return omega[self.beta_slice]

    def dispersion(self, omega: np.ndarray) -> float:
        """sigma^2, whether fixed or sampled.  1.0 for families without one."""
        if not self.family.has_dispersion:
            return 1.0
        if self.fixed_dispersion is not None:
            return self.fixed_dispersion
        return unconstrained_to_dispersion(omega[self.dispersion_slice][0])

    def cov_matrix(self, omega: np.ndarray) -> np.ndarray:
        if self.fixed_cov is not None:
            return self.fixed_cov
        return unconstrained_to_cov(omega[self.cov_slice])

    def alpha(self, omega: np.ndarray) -> np.ndarray:
        if self.alpha_slice is None:
            raise ValueError("model has no missingness block")
        return omega[self.alpha_slice]

    def pack(
        self,
        beta: np.ndarray,
        *,
        sigma2: float | None = None,
        cov: np.ndarray | None = None,
        alpha: np.ndarray | None = None,
    ) -> np.ndarray:
        """Assemble omega from natural-scale components."""
        omega = np.zeros(self.dim)
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if beta.shape[0] != self.p:
            raise ValueError(f"beta must have length {self.p}")
        omega[self.beta_slice] = beta
        if self.dispersion_slice is not None:
            if sigma2 is None:
                raise ValueError("model has free dispersion; pass sigma2")
            omega[self.dispersion_slice] = dispersion_to_unconstrained(sigma2)
        if self.cov_slice is not None:
            if cov is None:
                raise ValueError("model has free covariance; pass cov")
            omega[self.cov_slice] = cov_to_unconstrained(np.asarray(cov, dtype=float))
        if self.alpha_slice is not None:
            if alpha is None:
                raise ValueError("missingness model; pass alpha")
            omega[self.alpha_slice] = np.asarray(alpha, dtype=float).reshape(-1)
        return omega

    def coordinate_labels(self) -> list[tuple[str, int]]:
        """(block, coord) label per omega entry, for chain files and reports."""
        labels: list[tuple[str, int]] = [("beta", j) for j in range(self.p)]
        if self.dispersion_slice is not None:
            labels.append(("dispersion", 0))
        if self.cov_slice is not None:
            k = self.cov_slice.stop - self.cov_slice.start
            labels.extend(("sigma", j) for j in range(k))
        if self.alpha_slice is not None:
            labels.extend(("alpha", j) for j in range(self.n_missing_covariates))
        return labels

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"GlmmModel(family={self.family.name}, p={self.p}, q={self.q}, "
            f"dim={self.dim}, missingness={self.missingness})"
        )


def mvn_logpdf(gamma: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """log N_q(gamma; 0, sigma) for a single point (q,) or a batch (R, q)."""
    gamma = np.asarray(gamma, dtype=float)
    single = gamma.ndim == 1
    gamma = np.atleast_2d(gamma)
    q = sigma.shape[0]
    chol = np.linalg.cholesky(sigma)
    u = np.linalg.solve(chol, gamma.T)  # (q, R)
    quad = np.sum(u * u, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (q * np.log(2.0 * np.pi) + logdet + quad)
    return out[0] if single else out


def _subject_w_design(model: GlmmModel, data: Dataset, i: int) -> np.ndarray:
    # Recomputing the constant-column selection per call would be wasteful;
    # cache the full design on the dataset instance.
    cached = getattr(data, "_w_design_cache", None)
    if cached is None or cached.shape[1] != model.n_missing_covariates:
        cached, _ = missingness_design(data)
        data._w_design_cache = cached
    return cached[i]


def linear_predictor(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """eta_i = X_i beta + Z_i gamma. gamma may be (q,) or a batch (R, q),
    giving (n_i,) or (R, n_i). Raises on non-finite values, naming the subject."""
    beta = model.beta(omega)
    gamma = np.asarray(gamma, dtype=float)
    base = data.x[i] @ beta
    if gamma.ndim == 1:
        eta = base + data.z[i] @ gamma
    else:
        eta = base[None, :] + gamma @ data.z[i].T
    if not np.all(np.isfinite(eta)):
        raise FloatingPointError(f"non-finite linear predictor for subject index {i}")
    return eta


def joint_loglik(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Per-subject joint log density log p(Y_i, gamma | omega).

    Batched over gamma rows when gamma is (R, q). For missingness models this
    is log p(Y_i, w_i, gamma | omega): the response term is gated by
    1(w_i = 0) and the dropout Bernoulli term is included.
    """
    gamma = np.asarray(gamma, dtype=float)
    gated = model.missingness and int(data.w[i]) == 1
    out = mvn_logpdf(gamma, model.cov_matrix(omega))
    if not gated:
        eta = linear_predictor(model, data, i, omega, gamma)
        phi = model.dispersion(omega)
        out = out + model.family.loglik(data.y[i], eta, phi).sum(axis=-1)
    if model.missingness:
        w_i = int(data.w[i])
        x_w = _subject_w_design(model, data, i)
        a = model.alpha(omega)
        lp = float(x_w @ a)
        # log Bernoulli(w; logit^-1(lp)), stable in both tails
        log_p_w = -np.logaddexp(0.0, -lp) if w_i == 1 else -np.logaddexp(0.0, lp)
        out = out + log_p_w
    if not np.all(np.isfinite(np.atleast_1d(out))):
        raise FloatingPointError(f"non-finite joint log density for subject index {i}")
    return out


def joint_gradient(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Score of the per-subject joint density, batched over draws.

    gammas is (R, q); returns (R, d) with one gradient of
    log p(Y_i, gamma_r | omega) per row, laid out per the model's blocks.
    """
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    R = gammas.shape[0]
    out = np.zeros((R, model.dim))
    y = data.y[i]
    phi = model.dispersion(omega)
    a_phi = model.family.a(phi)

    gated = model.missingness and int(data.w[i]) == 1
    if not gated:
        eta = linear_predictor(model, data, i, omega, gammas)  # (R, n_i)
        mu = model.family.mean(eta)
        resid = (y[None, :] - mu) / a_phi
        out[:, model.beta_slice] = resid @ data.x[i]
        if model.dispersion_slice is not None:
            # d/dphi of sum[(y theta - b)/a(phi) + c(y, phi)], then chain rule
            # through phi = exp(2 zeta).
            ydens = y[None, :] * eta - model.family.b(eta)
            dphi = (
                -(ydens * model.family.a_prime(phi) / a_phi**2).sum(axis=1)
                + model.family.c_phi(y, phi).sum() * np.ones(R)
            )
            out[:, model.dispersion_slice] = (dphi * 2.0 * phi)[:, None]

    if model.cov_slice is not None:
        delta = omega[model.cov_slice]
        sigma = unconstrained_to_cov(delta)
        sig_inv = np.linalg.inv(sigma)
        u = gammas @ sig_inv  # rows are Sigma^-1 gamma_r
        for j, dsig in enumerate(cov_partials(delta)):
            quad = np.einsum("rq,qk,rk->r", u, dsig, u)
            out[:, model.cov_slice.start + j] = 0.5 * (quad - np.trace(sig_inv @ dsig))

    if model.alpha_slice is not None:
        x_w = _subject_w_design(model, data, i)
        p_i = expit(float(x_w @ model.alpha(omega)))
        out[:, model.alpha_slice] = (float(data.w[i]) - p_i) * x_w[None, :]

    return out


# Single-draw convenience views over joint_gradient, one per block.

def grad_beta(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """d/dbeta log p(Y_i | gamma, omega) = X_i^T (Y_i - mu) / a(phi)."""
    return joint_gradient(model, data, i, omega, gamma)[0, model.beta_slice]


def grad_dispersion(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray, gamma: np.ndarray) -> float:
    if model.dispersion_slice is None:
        raise ValueError(f"model ({model.family.name}) has no free dispersion block")
    return float(joint_gradient(model, data, i, omega, gamma)[0, model.dispersion_slice][0])


def grad_cov(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Score of log N(gamma; 0, Sigma(delta)) in the unconstrained coordinates."""
    if model.cov_slice is None:
        raise ValueError("model holds Sigma fixed; no covariance block")
    return joint_gradient(model, data, i, omega, gamma)[0, model.cov_slice]


def grad_alpha(model: GlmmModel, data: Dataset, i: int, omega: np.ndarray) -> np.ndarray:
    """d/dalpha log p(w_i | alpha) = (w_i - p_i) x_i."""
    if model.alpha_slice is None:
        raise ValueError("model has no missingness block")
    gamma0 = np.zeros((1, model.q))
    return joint_gradient(model, data, i, omega, gamma0)[0, model.alpha_slice]
