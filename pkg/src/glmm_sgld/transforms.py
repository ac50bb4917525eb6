"""Bijections between constrained variance parameters and unconstrained
coordinates.

The sampler works on R^d, so scales enter as log sigma and the q=2 correlation
as the scaled logit log((1 + rho)/(1 - rho)). Round-trips are exact to
floating-point accuracy; prior densities on these coordinates carry the
appropriate Jacobian terms (handled in priors.py).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "cov_block_size",
    "cov_to_unconstrained",
    "unconstrained_to_cov",
    "cov_partials",
    "dispersion_to_unconstrained",
    "unconstrained_to_dispersion",
]


def cov_block_size(q: int) -> int:
    """Number of unconstrained coordinates parameterizing a q x q covariance."""
    if q == 1:
        return 1
    if q == 2:
        return 3
    raise ValueError(f"analytic covariance parameterization shipped for q in {{1, 2}}, got q={q}")


def cov_to_unconstrained(sigma: np.ndarray) -> np.ndarray:
    """Map an SPD covariance (q in {1, 2}) to its unconstrained coordinates."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape == (1, 1):
        if sigma[0, 0] <= 0:
            raise ValueError("covariance must be positive definite")
        return np.array([0.5 * np.log(sigma[0, 0])])
    if sigma.shape != (2, 2):
        raise ValueError(f"expected (1,1) or (2,2) covariance, got {sigma.shape}")
    s1 = np.sqrt(sigma[0, 0])
    s2 = np.sqrt(sigma[1, 1])
    rho = sigma[0, 1] / (s1 * s2)
    if not (s1 > 0 and s2 > 0 and -1.0 < rho < 1.0):
        raise ValueError("covariance must be positive definite with |rho| < 1")
    # log((1+rho)/(1-rho)) via log1p for accuracy near the boundary
    return np.array([np.log(s1), np.log(s2), np.log1p(rho) - np.log1p(-rho)])


def unconstrained_to_cov(delta: np.ndarray) -> np.ndarray:
    """Inverse of cov_to_unconstrained."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape == (1,):
        return np.array([[np.exp(2.0 * delta[0])]])
    if delta.shape != (3,):
        raise ValueError(f"expected 1 or 3 unconstrained coordinates, got {delta.shape}")
    s1 = np.exp(delta[0])
    s2 = np.exp(delta[1])
    rho = np.tanh(0.5 * delta[2])
    off = rho * s1 * s2
    return np.array([[s1 * s1, off], [off, s2 * s2]])


def cov_partials(delta: np.ndarray) -> list[np.ndarray]:
    """Partial derivatives dSigma/ddelta_j at the given unconstrained point.

    Used by the chain rule in the covariance-block score.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape == (1,):
        return [np.array([[2.0 * np.exp(2.0 * delta[0])]])]
    if delta.shape != (3,):
        raise ValueError(f"expected 1 or 3 unconstrained coordinates, got {delta.shape}")
    s1 = np.exp(delta[0])
    s2 = np.exp(delta[1])
    rho = np.tanh(0.5 * delta[2])
    off = rho * s1 * s2
    d_d1 = np.array([[2.0 * s1 * s1, off], [off, 0.0]])
    d_d2 = np.array([[0.0, off], [off, 2.0 * s2 * s2]])
    # drho/ddelta_rho = (1 - rho^2)/2
    doff = s1 * s2 * (1.0 - rho * rho) / 2.0
    d_dr = np.array([[0.0, doff], [doff, 0.0]])
    return [d_d1, d_d2, d_dr]


def dispersion_to_unconstrained(sigma2: float) -> float:
    """log sigma for a free dispersion sigma^2."""
    if sigma2 <= 0:
        raise ValueError("dispersion must be positive")
    return 0.5 * np.log(sigma2)


def unconstrained_to_dispersion(zeta: float) -> float:
    return float(np.exp(2.0 * zeta))
