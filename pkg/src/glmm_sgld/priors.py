"""Priors on the unconstrained parameter vector.

Fixed effects and dropout coefficients get mean-zero Gaussians. Random-effect
scales (and the dispersion scale) get half-t priors on sigma; the correlation
gets a uniform prior on (-1, 1). Densities are expressed on the unconstrained
coordinates, so the log-Jacobian of each transform is part of the prior term
and its gradient.

The sampler minimizes f(omega) = f0(omega) + sum_i f_i(omega) with
f0 = -log p(omega); prior_grad returns grad f0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GlmmModel

__all__ = ["PriorSpec", "prior_logpdf", "prior_grad"]


@dataclass
class PriorSpec:
    """Hyperparameters for the default prior blocks.

    beta_variance: variance of the N(0, v I) prior on beta.
    scale_df, scale_s: half-t(df, s) prior on each random-effect scale sigma_k
        and on the dispersion scale sigma.
    alpha_variance: variance of the N(0, v I) prior on alpha.
    """

    beta_variance: float = 100.0
    scale_df: float = 3.0
    scale_s: float = 2.0
    alpha_variance: float = 100.0


def _half_t_logpdf_unconstrained(zeta: float, df: float, s: float) -> float:
    # density of sigma ~ half-t(df, s) pushed through zeta = log sigma:
    # log p(zeta) = log p_sigma(e^zeta) + zeta, constants dropped
    sigma2 = np.exp(2.0 * zeta)
    return -0.5 * (df + 1.0) * np.log1p(sigma2 / (df * s * s)) + zeta


def _half_t_grad_unconstrained(zeta: float, df: float, s: float) -> float:
    # d/dzeta of the above
    sigma2 = np.exp(2.0 * zeta)
    return -(df + 1.0) * sigma2 / (df * s * s + sigma2) + 1.0


def prior_logpdf(prior: PriorSpec, model: GlmmModel, omega: np.ndarray) -> float:
    """log p(omega) in unconstrained coordinates, up to an additive constant."""
    beta = model.beta(omega)
    out = -0.5 * float(beta @ beta) / prior.beta_variance
    if model.dispersion_slice is not None:
        out += _half_t_logpdf_unconstrained(omega[model.dispersion_slice][0], prior.scale_df, prior.scale_s)
    if model.cov_slice is not None:
        delta = omega[model.cov_slice]
        for k in range(min(model.q, 2)):
            out += _half_t_logpdf_unconstrained(delta[k], prior.scale_df, prior.scale_s)
        if delta.shape[0] == 3:
            # uniform rho on (-1, 1): only the Jacobian log((1 - rho^2)/2) survives,
            # written via softplus so it stays finite for any delta_rho
            d = delta[2]
            out += float(np.log(2.0) - d - 2.0 * np.logaddexp(0.0, -d))
    if model.alpha_slice is not None:
        a = model.alpha(omega)
        out += -0.5 * float(a @ a) / prior.alpha_variance
    return out


def prior_grad(prior: PriorSpec, model: GlmmModel, omega: np.ndarray) -> np.ndarray:
    """Gradient of f0 = -log p(omega). Finite at every point of R^d."""
    g = np.zeros(model.dim)
    g[model.beta_slice] = model.beta(omega) / prior.beta_variance
    if model.dispersion_slice is not None:
        zeta = omega[model.dispersion_slice][0]
        g[model.dispersion_slice] = -_half_t_grad_unconstrained(zeta, prior.scale_df, prior.scale_s)
    if model.cov_slice is not None:
        delta = omega[model.cov_slice]
        start = model.cov_slice.start
        for k in range(min(model.q, 2)):
            g[start + k] = -_half_t_grad_unconstrained(delta[k], prior.scale_df, prior.scale_s)
        if delta.shape[0] == 3:
            g[start + 2] = np.tanh(0.5 * delta[2])
    if model.alpha_slice is not None:
        g[model.alpha_slice] = model.alpha(omega) / prior.alpha_variance
    return g
