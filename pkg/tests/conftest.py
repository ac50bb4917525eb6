"""Shared fixtures and numerical oracles used across the suite."""
from __future__ import annotations

import numpy as np
import pytest

from glmm_sgld.families import get_family
from glmm_sgld.model import Dataset, GlmmModel


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function on R^d."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def toy_dataset(
    rng: np.random.Generator,
    n: int = 6,
    n_i: int = 5,
    p: int = 2,
    q: int = 2,
    family: str = "gaussian",
    beta=None,
    cov=None,
    sigma2: float = 2.0,
) -> Dataset:
    """Small synthetic dataset with x_it = (1, ...) and z = x-style designs."""
    fam = get_family(family)
    beta = np.array([1.5, -0.5][:p]) if beta is None else np.asarray(beta, dtype=float)
    if cov is None:
        cov = np.array([[1.5, -0.25], [-0.25, 1.5]])[:q, :q]
    chol = np.linalg.cholesky(cov)
    ys, xs, zs = [], [], []
    for _ in range(n):
        x = np.column_stack([np.ones(n_i)] + [rng.normal(size=n_i) for _ in range(p - 1)])
        z = x[:, :q]
        gamma = chol @ rng.normal(size=q)
        eta = x @ beta + z @ gamma
        ys.append(fam.sample(rng, fam.mean(eta), sigma2))
        xs.append(x)
        zs.append(z)
    return Dataset(y=ys, x=xs, z=zs)


def lmm_closed_form_posterior(data: Dataset, sigma2: float, cov: np.ndarray, prior_variance: float = 100.0):
    """Conjugate posterior of beta with known variance components.

    Marginalizing gamma_i gives Y_i ~ N(X_i beta, V_i) with
    V_i = Z_i Sigma Z_i' + sigma^2 I; combined with the N(0, prior_variance I)
    prior the posterior is Gaussian with precision
    P = I/prior_variance + sum_i X_i' V_i^{-1} X_i.
    """
    p = data.p
    precision = np.eye(p) / prior_variance
    shift = np.zeros(p)
    for i in range(data.n_subjects):
        v = data.z[i] @ cov @ data.z[i].T + sigma2 * np.eye(data.y[i].shape[0])
        vinv_x = np.linalg.solve(v, data.x[i])
        precision += data.x[i].T @ vinv_x
        shift += vinv_x.T @ data.y[i]
    post_cov = np.linalg.inv(precision)
    post_cov = 0.5 * (post_cov + post_cov.T)
    return post_cov @ shift, post_cov


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Sink for the per-criterion verdict lines; echoed in the final summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def gaussian_model_free():
    """Gaussian model with free dispersion and free 2x2 covariance (d = p+1+3)."""
    return GlmmModel("gaussian", p=2, q=2)


@pytest.fixture
def gaussian_model_fixed():
    """Gaussian model with both variance components held fixed (d = p)."""
    return GlmmModel(
        "gaussian",
        p=2,
        q=2,
        fixed_dispersion=2.0,
        fixed_cov=np.array([[1.5, -0.25], [-0.25, 1.5]]),
    )
