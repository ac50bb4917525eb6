"""Post-hoc covariance correction for fixed-step Langevin chains.

At stationarity the chain's covariance Sigma and the injected-noise matrix

    Gamma = eps * n^2 * Psi / (2 S) + kappa * I

are tied together by the Lyapunov equation Sigma A + A Sigma = 2 Gamma,
where A is the (unknown) Hessian-like curvature whose inverse is the target
posterior covariance. Solving for A from the observed Sigma and estimated
Gamma, then mapping samples through

    Theta_k = G (Omega_k - Omega*) + Omega*,   G = (E' F)^{-1},

with Sigma = E'E and A = F'F (upper-triangular right factors), produces a
corrected chain whose covariance is exactly G Sigma G' = A^{-1}.

Everything here operates in unconstrained coordinates; constrained-scale
summaries are taken by transforming corrected samples afterward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradients import full_population_pass, population_covariance
from .rng import subject_stream
from .samplers import conditional_sampler

__all__ = [
    "IllConditionedError",
    "NotPositiveDefiniteError",
    "CorrectionResult",
    "compute_gamma",
    "solve_lyapunov",
    "predicted_inflation",
    "correct_samples",
    "correct_chain",
    "posthoc_correct",
    "write_correction_report",
]

# Iteration-domain offset for the post-hoc population pass, far above any
# realistic outer-iteration count so its streams never collide with in-run
# subject streams.
_POSTHOC_PASS_BASE = 2**31


class IllConditionedError(ValueError):
    """An input covariance is numerically singular for the requested solve."""


class NotPositiveDefiniteError(ValueError):
    """A matrix that must be PD has a materially negative eigenvalue."""


def _require_symmetric(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(mat, mat.T, rtol=1e-8, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (mat + mat.T)


def compute_gamma(psi: np.ndarray, eps: float, n: int, s: int, kappa: int) -> np.ndarray:
    """Injected-noise covariance Gamma = eps n^2 Psi / (2S) + kappa I."""
    psi = _require_symmetric(psi, "Psi")
    if eps <= 0 or n < 1 or s < 1:
        raise ValueError("eps, n, S must be positive")
    if kappa not in (0, 1):
        raise ValueError("kappa must be 0 or 1")
    return eps * n**2 * psi / (2.0 * s) + kappa * np.eye(psi.shape[0])


def solve_lyapunov(sigma: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Unique symmetric A with Sigma A + A Sigma = 2 Gamma.

    Solved in Sigma's eigenbasis: with Sigma = Q diag(lam) Q', the solution
    is A = Q M Q' where M_ij = 2 (Q' Gamma Q)_ij / (lam_i + lam_j). Requires
    Sigma SPD; an eigenvalue below 1e-12 * trace / d raises
    IllConditionedError naming the offending eigenvalue.
    """
    sigma = _require_symmetric(sigma, "Sigma")
    gamma = _require_symmetric(gamma, "Gamma")
    if sigma.shape != gamma.shape:
        raise ValueError("Sigma and Gamma must have matching shapes")
    lam, q = np.linalg.eigh(sigma)
    d = sigma.shape[0]
    threshold = 1e-12 * np.trace(sigma) / d
    if lam.min() <= threshold:
        raise IllConditionedError(
            f"Sigma eigenvalue {lam.min():.6e} is at or below the threshold "
            f"{threshold:.6e}; the Lyapunov solve is ill-conditioned"
        )
    m = 2.0 * (q.T @ gamma @ q) / (lam[:, None] + lam[None, :])
    a = q @ m @ q.T
    return 0.5 * (a + a.T)


def predicted_inflation(a: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Theory-predicted stationary covariance: solve A S + S A = 2 Gamma for S.

    The equation is symmetric in the two roles, so this is the same solver
    with A where Sigma usually sits. With Gamma = I it returns A^{-1}, the
    exact-gradient Langevin limit.
    """
    return solve_lyapunov(a, gamma)


def _cholesky_upper(mat: np.ndarray, name: str) -> np.ndarray:
    """Upper-triangular R with mat = R'R, after an eigenvalue hygiene pass.

    Negative eigenvalues below -1e-10 * trace abort; tiny ones are floored at
    1e-12 * trace so downstream Cholesky factors exist.
    """
    mat = _require_symmetric(mat, name)
    tr = float(np.trace(mat))
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -1e-10 * tr:
        raise NotPositiveDefiniteError(
            f"{name} has eigenvalue {vals.min():.6e}, below the -1e-10 * trace "
            "tolerance; refusing to correct with an indefinite matrix"
        )
    floor = 1e-12 * tr
    if vals.min() < floor:
        mat = (vecs * np.maximum(vals, floor)) @ vecs.T
    return np.linalg.cholesky(mat).T


@dataclass(frozen=True)
class CorrectionResult:
    """Outputs of one correction: factors, map, corrected draws, residual."""

    gamma: np.ndarray
    a: np.ndarray
    a_inv: np.ndarray
    g: np.ndarray
    center: np.ndarray
    corrected: np.ndarray
    residual: float
    sigma: np.ndarray
    psi: np.ndarray


def correct_samples(
    samples: np.ndarray,
    sigma: np.ndarray,
    psi: np.ndarray,
    eps: float,
    n: int,
    s: int,
    kappa: int,
    center: np.ndarray,
) -> CorrectionResult:
    """Apply the affine correction to an array of unconstrained samples."""
    samples = np.asarray(samples, dtype=float)
    center = np.asarray(center, dtype=float)
    gamma = compute_gamma(psi, eps, n, s, kappa)
    a = solve_lyapunov(sigma, gamma)
    residual = np.linalg.norm(sigma @ a + a @ sigma - 2.0 * gamma) / max(np.linalg.norm(gamma), 1e-300)
    if residual > 1e-8:
        raise RuntimeError(
            f"Lyapunov residual {residual:.3e} exceeds 1e-8; inputs are inconsistent"
        )
    e = _cholesky_upper(sigma, "Sigma")
    f = _cholesky_upper(a, "A")
    g = np.linalg.inv(e.T @ f)
    a_inv = np.linalg.inv(a)
    corrected = (samples - center) @ g.T + center
    return CorrectionResult(
        gamma=gamma,
        a=a,
        a_inv=0.5 * (a_inv + a_inv.T),
        g=g,
        center=center,
        corrected=corrected,
        residual=float(residual),
        sigma=sigma,
        psi=np.asarray(psi, dtype=float),
    )


def correct_chain(chain, psi: np.ndarray, *, center=None, sigma=None, minibatch_size=None, kappa=None) -> CorrectionResult:
    """Correct a Chain using its own mean/covariance unless overridden."""
    if chain.n_samples < chain.samples.shape[1] + 1:
        raise ValueError("chain has too few samples to estimate a covariance")
    center = chain.mean() if center is None else np.asarray(center, float)
    sigma = chain.cov() if sigma is None else np.asarray(sigma, float)
    if minibatch_size is None:
        minibatch_size = chain.config.minibatch_size
    if kappa is None:
        kappa = chain.config.kappa
    return correct_samples(
        chain.samples, sigma, psi, chain.step_size, chain.n_subjects,
        minibatch_size, kappa, center,
    )


def posthoc_correct(
    model,
    data,
    chain,
    *,
    sampler=None,
    n_draws: int | None = None,
    seed: int | None = None,
    pass_index: int = 0,
):
    """Full post-run pipeline: fresh Psi pass at the chain mean, then correct.

    The population pass re-estimates every subject's gradient at Omega* with
    dedicated streams (n_draws defaults to the chain's inner-draw count), so
    in-run gradients evaluated at scattered Omega_k never enter Psi. Returns
    (CorrectionResult, PopulationCovariance).
    """
    if n_draws is None:
        n_draws = chain.config.n_inner_draws
    if seed is None:
        seed = chain.config.seed
    if sampler is None:
        sampler = conditional_sampler(model, data, burn_in=chain.config.inner_burn_in)
    omega_star = chain.mean()
    members = full_population_pass(
        model, data, omega_star, n_draws, sampler,
        lambda i, occ: subject_stream(seed, _POSTHOC_PASS_BASE + pass_index, i, occ),
    )
    pop = population_covariance(members)
    result = correct_chain(chain, pop.psi, center=omega_star)
    return result, pop


def write_correction_report(result: CorrectionResult, path) -> None:
    """Structured plain-text report: Gamma, A, residual, eigenvalue spectra."""
    def block(title, mat):
        rows = "\n".join("  " + "  ".join(f"{v: .10e}" for v in row) for row in np.atleast_2d(mat))
        return f"{title}\n{rows}\n"

    with open(path, "w") as fh:
        fh.write("correction report\n=================\n\n")
        fh.write(f"residual (relative Lyapunov) : {result.residual:.6e}\n")
        fh.write(f"samples corrected            : {result.corrected.shape[0]}\n\n")
        fh.write(block("center (omega*)", result.center))
        fh.write("\n")
        fh.write(block("Gamma", result.gamma))
        fh.write("\n")
        fh.write(block("A", result.a))
        fh.write("\n")
        fh.write(block("corrected covariance A^-1", result.a_inv))
        fh.write("\n")
        fh.write(block("map G", result.g))
        fh.write("\n")
        fh.write(block("eigenvalues of Sigma", np.linalg.eigvalsh(result.sigma)))
        fh.write(block("eigenvalues of A", np.linalg.eigvalsh(result.a)))
        fh.write(block("eigenvalues of Gamma", np.linalg.eigvalsh(result.gamma)))
