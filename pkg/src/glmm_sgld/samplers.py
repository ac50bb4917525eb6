"""Per-subject conditional samplers for the random effects gamma_i | Y_i, Omega.

Each sampler exposes draw(i, omega, count, rng) -> (count, q) and reports
whether its draws come from a Markov chain (is_mcmc) so the gradient
estimator can pick the matching within-subject covariance estimator:
independent-draw samplers admit the plain sample-covariance form, while
MCMC-backed draws need batch means.

Samplers with internal chains keep a per-subject warm-start cache: the last
gamma_i state is reused to initialize the next call, which makes the default
burn-in conservative when the conditioning omega moves slowly.
"""
from __future__ import annotations

import math
import warnings
from abc import ABC, abstractmethod

import numpy as np
from numba import njit

from .model import Dataset, GlmmModel, joint_loglik
from .polya_gamma import _pg1_draw

__all__ = [
    "ConditionalSampler",
    "ExactGaussianSampler",
    "PolyaGammaGibbsSampler",
    "RandomWalkMetropolisSampler",
    "PriorMixtureSampler",
    "conditional_sampler",
]


class ConditionalSampler(ABC):
    """Base class: draws from p(gamma_i | Y_i, Omega) for one subject at a time."""

    mcmc_backed: bool = False

    def __init__(self, model: GlmmModel, data: Dataset):
        self.model = model
        self.data = data

    @abstractmethod
    def draw(self, i: int, omega: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
        """Return (count, q) draws from the conditional for subject index i."""

    def is_mcmc(self, i: int) -> bool:
        return self.mcmc_backed

    def reset(self) -> None:
        """Drop any warm-start state."""


class ExactGaussianSampler(ConditionalSampler):
    """Exact conjugate draws for the Gaussian-identity model.

    The conditional is N(m_i, V_i) with
        V_i = (Z_i' Z_i / sigma^2 + Sigma^{-1})^{-1}
        m_i = V_i Z_i' (y_i - X_i beta) / sigma^2.
    """

    mcmc_backed = False

    def __init__(self, model: GlmmModel, data: Dataset):
        super().__init__(model, data)
        if model.family.name != "gaussian":
            raise ValueError("exact conjugate sampler requires the gaussian family")

    def conditional_moments(self, i: int, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sigma2 = self.model.dispersion(omega)
        cov = self.model.cov_matrix(omega)
        z = self.data.z[i]
        resid = self.data.y[i] - self.data.x[i] @ self.model.beta(omega)
        prec = z.T @ z / sigma2 + np.linalg.inv(cov)
        v = np.linalg.inv(prec)
        v = 0.5 * (v + v.T)
        m = v @ (z.T @ resid) / sigma2
        return m, v

    def draw(self, i, omega, count, rng):
        m, v = self.conditional_moments(i, omega)
        chol = np.linalg.cholesky(v)
        return m + rng.standard_normal((count, self.model.q)) @ chol.T


@njit(cache=True)
def _pg_gibbs_sweeps(y, xbeta, z, prec0, gamma, n_sweeps, keep_from, out, gen):
    """Blocked Gibbs sweeps for one logistic subject, recording gamma in out.

    prec0 is the prior precision Sigma^{-1}; gamma is mutated in place and
    holds the final state on return. Sweeps with index >= keep_from are
    written to out. Supports q in {1, 2} with explicit linear algebra.
    """
    n_i = y.shape[0]
    q = z.shape[1]
    for sweep in range(n_sweeps):
        if q == 1:
            p00 = prec0[0, 0]
            l0 = 0.0
            for t in range(n_i):
                eta = xbeta[t] + z[t, 0] * gamma[0]
                w = _pg1_draw(eta, gen)
                kap = y[t] - 0.5 - w * xbeta[t]
                l0 += z[t, 0] * kap
                p00 += w * z[t, 0] * z[t, 0]
            v00 = 1.0 / p00
            gamma[0] = v00 * l0 + math.sqrt(v00) * gen.standard_normal()
        else:
            p00 = prec0[0, 0]
            p01 = prec0[0, 1]
            p11 = prec0[1, 1]
            l0 = 0.0
            l1 = 0.0
            for t in range(n_i):
                eta = xbeta[t] + z[t, 0] * gamma[0] + z[t, 1] * gamma[1]
                w = _pg1_draw(eta, gen)
                kap = y[t] - 0.5 - w * xbeta[t]
                l0 += z[t, 0] * kap
                l1 += z[t, 1] * kap
                p00 += w * z[t, 0] * z[t, 0]
                p01 += w * z[t, 0] * z[t, 1]
                p11 += w * z[t, 1] * z[t, 1]
            det = p00 * p11 - p01 * p01
            v00 = p11 / det
            v01 = -p01 / det
            v11 = p00 / det
            m0 = v00 * l0 + v01 * l1
            m1 = v01 * l0 + v11 * l1
            c00 = math.sqrt(v00)
            c10 = v01 / c00
            c11 = math.sqrt(v11 - c10 * c10)
            e0 = gen.standard_normal()
            e1 = gen.standard_normal()
            gamma[0] = m0 + c00 * e0
            gamma[1] = m1 + c10 * e0 + c11 * e1
        if sweep >= keep_from:
            for k in range(q):
                out[sweep - keep_from, k] = gamma[k]


class PolyaGammaGibbsSampler(ConditionalSampler):
    """Polya-Gamma augmented Gibbs chain for bernoulli-logit subjects.

    Alternates omega_t ~ PG(1, eta_t) with the conjugate Gaussian update
        gamma | omega ~ N(m, V),  V = (Z' diag(omega) Z + Sigma^{-1})^{-1},
        m = V Z' (y - 1/2 - diag(omega) X beta).
    Draws are a Markov chain, so is_mcmc is True and consumers should use
    batch means for within-subject uncertainty.
    """

    mcmc_backed = True

    def __init__(self, model: GlmmModel, data: Dataset, *, burn_in: int = 100, warm_start: bool = True):
        super().__init__(model, data)
        if model.family.name != "bernoulli-logit":
            raise ValueError("Polya-Gamma sampler requires the bernoulli-logit family")
        if model.q > 2:
            raise ValueError("Polya-Gamma subject chain supports q <= 2")
        if burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        self.burn_in = burn_in
        self.warm_start = warm_start
        self._state: dict[int, np.ndarray] = {}

    def draw(self, i, omega, count, rng):
        q = self.model.q
        gamma = self._state.get(i)
        if gamma is None or not self.warm_start:
            gamma = np.zeros(q)
        gamma = gamma.copy()
        prec0 = np.linalg.inv(self.model.cov_matrix(omega))
        xbeta = self.data.x[i] @ self.model.beta(omega)
        out = np.empty((count, q))
        _pg_gibbs_sweeps(
            self.data.y[i].astype(np.float64),
            np.ascontiguousarray(xbeta),
            np.ascontiguousarray(self.data.z[i]),
            np.ascontiguousarray(prec0),
            gamma,
            self.burn_in + count,
            self.burn_in,
            out,
            rng,
        )
        if self.warm_start:
            self._state[i] = gamma
        return out

    def reset(self):
        self._state.clear()


class RandomWalkMetropolisSampler(ConditionalSampler):
    """Gaussian random-walk Metropolis on gamma_i for any family.

    The proposal scale is adapted per subject toward a target acceptance rate
    with a Robbins-Monro recursion, but only while the inner chain is in its
    burn-in phase; retained draws always come from a fixed-scale chain. A
    warning is emitted when the retained-phase acceptance rate leaves
    [0.10, 0.60].
    """

    mcmc_backed = True

    def __init__(
        self,
        model: GlmmModel,
        data: Dataset,
        *,
        burn_in: int = 100,
        warm_start: bool = True,
        target_acceptance: float = 0.35,
        initial_scale: float = 0.5,
        adapt_exponent: float = 0.66,
    ):
        super().__init__(model, data)
        if burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        self.burn_in = burn_in
        self.warm_start = warm_start
        self.target_acceptance = target_acceptance
        self.adapt_exponent = adapt_exponent
        self._initial_log_scale = math.log(initial_scale)
        self._state: dict[int, np.ndarray] = {}
        self._log_scale: dict[int, float] = {}
        self._adapt_count: dict[int, int] = {}
        self._warned: set[int] = set()
        self.last_acceptance: dict[int, float] = {}

    def _loglik(self, i, omega, gamma):
        try:
            return joint_loglik(self.model, self.data, i, omega, gamma[None, :])[0]
        except FloatingPointError:
            return -np.inf

    def draw(self, i, omega, count, rng):
        q = self.model.q
        gamma = self._state.get(i)
        if gamma is None or not self.warm_start:
            gamma = np.zeros(q)
        gamma = gamma.copy()
        log_scale = self._log_scale.get(i, self._initial_log_scale)
        adapt_count = self._adapt_count.get(i, 0)
        current = self._loglik(i, omega, gamma)
        out = np.empty((count, q))
        accepted = 0
        for step in range(self.burn_in + count):
            prop = gamma + math.exp(log_scale) * rng.standard_normal(q)
            cand = self._loglik(i, omega, prop)
            accept = math.log(rng.random()) < cand - current
            if accept:
                gamma = prop
                current = cand
            if step < self.burn_in:
                adapt_count += 1
                gain = adapt_count ** (-self.adapt_exponent)
                log_scale += gain * ((1.0 if accept else 0.0) - self.target_acceptance)
            else:
                out[step - self.burn_in] = gamma
                accepted += accept
        if self.warm_start:
            self._state[i] = gamma.copy()
        self._log_scale[i] = log_scale
        self._adapt_count[i] = adapt_count
        rate = accepted / count if count else float("nan")
        self.last_acceptance[i] = rate
        if count >= 20 and not 0.10 <= rate <= 0.60 and i not in self._warned:
            self._warned.add(i)
            warnings.warn(
                f"random-walk acceptance rate {rate:.2f} for subject index {i} "
                "is outside [0.10, 0.60]; inner draws may mix poorly",
                RuntimeWarning,
                stacklevel=2,
            )
        return out

    def reset(self):
        self._state.clear()
        self._log_scale.clear()
        self._adapt_count.clear()
        self._warned.clear()
        self.last_acceptance.clear()


class PriorMixtureSampler(ConditionalSampler):
    """Missingness-aware wrapper: gated subjects draw gamma from its prior.

    When w_i = 1 the subject's outcomes are unobserved, the conditional for
    gamma_i reduces to N(0, Sigma(omega)), and exact draws are returned; when
    w_i = 0 the wrapped sampler is used unchanged.
    """

    def __init__(self, model: GlmmModel, data: Dataset, delegate: ConditionalSampler):
        super().__init__(model, data)
        if data.w is None:
            raise ValueError("prior-mixture sampler requires a dataset with a w column")
        self.delegate = delegate

    def draw(self, i, omega, count, rng):
        if self.data.w[i] == 1:
            cov = self.model.cov_matrix(omega)
            chol = np.linalg.cholesky(cov)
            return rng.standard_normal((count, self.model.q)) @ chol.T
        return self.delegate.draw(i, omega, count, rng)

    def is_mcmc(self, i):
        if self.data.w[i] == 1:
            return False
        return self.delegate.is_mcmc(i)

    def reset(self):
        self.delegate.reset()


def conditional_sampler(model: GlmmModel, data: Dataset, **kwargs) -> ConditionalSampler:
    """Pick the natural sampler for the model family.

    gaussian -> exact conjugate; bernoulli-logit -> Polya-Gamma Gibbs;
    anything else -> adaptive random-walk Metropolis. Models with a
    missingness block get the prior-mixture wrapper on top. Keyword
    arguments are forwarded to the chain-based samplers.
    """
    if model.family.name == "gaussian":
        base = ExactGaussianSampler(model, data)
    elif model.family.name == "bernoulli-logit":
        base = PolyaGammaGibbsSampler(model, data, **kwargs)
    else:
        base = RandomWalkMetropolisSampler(model, data, **kwargs)
    if model.missingness:
        return PriorMixtureSampler(model, data, base)
    return base
