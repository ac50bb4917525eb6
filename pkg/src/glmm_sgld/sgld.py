"""Fixed-step stochastic-gradient Langevin outer loop.

The update is

    omega_{k+1} = omega_k - eps * grad_fhat(omega_k) + kappa * sqrt(2 eps) * eta_k,

with eta_k ~ N(0, I_d), a constant step eps = S * n^{-(1+delta)}, and
kappa in {0, 1} (0 turns the kernel into plain SGD). The chain is run at
fixed step on purpose: the injected-noise covariance it equilibrates to is
corrected after the fact rather than driven to zero with a schedule.

Reproducibility contract: iteration k derives its Gaussian noise from the
(seed, k, "noise") stream and its minibatch indices from (seed, k,
"minibatch"); subject-level inner draws use (seed, k, subject, occurrence).
No generator state is carried across iterations, so a chain can be resumed
from a checkpoint and reproduce the uninterrupted run exactly whenever the
inner sampler is stateless (exact conjugate draws). MCMC-backed inner
samplers keep warm-start caches that a resume cannot restore; resumed chains
then re-burn inner chains from cold starts at the resume point.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gradients import RunningPsi, minibatch_gradient
from .model import Dataset, GlmmModel
from .priors import PriorSpec
from .rng import iteration_stream, subject_stream
from .samplers import conditional_sampler

__all__ = [
    "SgldConfig",
    "Chain",
    "DivergenceError",
    "step_size",
    "select_delta",
    "sgld_step",
    "run_chain",
    "glmm_gradient_source",
    "OnlineMoments",
]

_DELTA_GRID = [round(0.1 * k, 1) for k in range(1, 11)]


class DivergenceError(RuntimeError):
    """A proposed update left the finite/bounded region.

    Carries the last finite state and the iteration at which the chain broke
    so callers can inspect or restart.
    """

    def __init__(self, message: str, last_good: np.ndarray, iteration: int):
        super().__init__(message)
        self.last_good = last_good
        self.iteration = iteration


def step_size(n: int, s: int, delta: float) -> float:
    """eps = S * n^-(1+delta)."""
    if n < 1 or s < 1:
        raise ValueError("n and S must be positive")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    return s * float(n) ** (-(1.0 + delta))


def select_delta(n: int, s: int) -> float:
    """Midpoint rule on the grid {0.1, ..., 1.0}.

    delta_min is the smallest grid value whose step size falls below 1/n
    (equivalently n^delta > S); the returned delta is (delta_min + 1)/2.
    """
    if s > n:
        raise ValueError("minibatch size cannot exceed the number of subjects")
    for delta in _DELTA_GRID:
        if float(n) ** delta > s:
            return (delta + 1.0) / 2.0
    raise ValueError(
        f"no grid delta in (0, 1] gives a step size below 1/n for n={n}, S={s}; "
        "reduce the minibatch size"
    )


@dataclass
class SgldConfig:
    """Settings for one SGLD run.

    Exactly one of n_iterations, time_budget (continuous time T, so
    K = ceil(T/eps)), or budget_seconds (wall clock) must be set. delta=None
    selects the midpoint rule from (n, S) at run time. thin=None derives a
    stride so roughly target_samples samples are retained. omega0=None starts
    from zeros in unconstrained coordinates (the prior center) and, unless
    warmup_iterations says otherwise, prepends two SGD-only epochs (kappa=0)
    to move beta near the mode before noise is switched on.
    """

    minibatch_size: int
    delta: float | None = None
    kappa: int = 1
    n_inner_draws: int = 100
    n_iterations: int | None = None
    time_budget: float | None = None
    budget_seconds: float | None = None
    thin: int | None = None
    target_samples: int = 5000
    seed: int = 0
    omega0: np.ndarray | None = None
    warmup_iterations: int | None = None
    inner_burn_in: int = 100
    checkpoint_every: int | None = None
    checkpoint_path: str | None = None
    divergence_threshold: float = 1e6
    dynamic_interval: int | None = None

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be at least 1")
        if self.kappa not in (0, 1):
            raise ValueError("kappa must be 0 (SGD) or 1 (SGLD)")
        if self.n_inner_draws < 2:
            raise ValueError("n_inner_draws must be at least 2")
        budgets = sum(x is not None for x in (self.n_iterations, self.time_budget, self.budget_seconds))
        if budgets != 1:
            raise ValueError(
                "exactly one of n_iterations, time_budget, budget_seconds must be set"
            )
        if self.checkpoint_every is not None and self.checkpoint_path is None:
            raise ValueError("checkpoint_every requires checkpoint_path")
        if self.omega0 is not None:
            self.omega0 = np.asarray(self.omega0, dtype=float)


@dataclass(frozen=True)
class ResolvedSchedule:
    delta: float
    eps: float
    n_iterations: int | None
    stride: int
    warmup: int


def resolve_schedule(config: SgldConfig, n: int) -> ResolvedSchedule:
    """Fix delta, eps, K, thinning stride, and warmup length for n subjects."""
    s = config.minibatch_size
    delta = select_delta(n, s) if config.delta is None else float(config.delta)
    eps = step_size(n, s, delta)
    if eps >= 1.0 / n:
        warnings.warn(
            f"step size {eps:.3g} is not below 1/n = {1.0 / n:.3g} "
            f"(minibatch size {s} >= n^delta); the chain may be unstable",
            RuntimeWarning,
            stacklevel=2,
        )
    if config.n_iterations is not None:
        k_total = int(config.n_iterations)
    elif config.time_budget is not None:
        k_total = math.ceil(config.time_budget / eps)
    else:
        k_total = None
    if config.thin is not None:
        stride = int(config.thin)
        if stride < 1:
            raise ValueError("thin must be at least 1")
    elif k_total is not None:
        stride = max(1, k_total // config.target_samples)
    else:
        stride = 1
    if config.warmup_iterations is not None:
        warmup = int(config.warmup_iterations)
    elif config.omega0 is None:
        warmup = 2 * math.ceil(n / s)
    else:
        warmup = 0
    return ResolvedSchedule(delta=delta, eps=eps, n_iterations=k_total, stride=stride, warmup=warmup)


@dataclass
class Chain:
    """Thinned SGLD output plus everything needed to reproduce or extend it."""

    samples: np.ndarray
    iterations: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    step_size: float
    delta: float
    n_subjects: int
    labels: list
    config: SgldConfig | None = None
    diagnostics: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("chain contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.cov(self.samples.T).reshape(self.samples.shape[1], self.samples.shape[1])

    def tail(self, fraction: float = 0.75) -> np.ndarray:
        """Most recent fraction of retained samples (summary window)."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        start = self.n_samples - max(1, int(round(fraction * self.n_samples)))
        return self.samples[start:]


class OnlineMoments:
    """Welford running mean and covariance."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += np.outer(delta, x - self.mean)

    def cov(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("need at least two observations for a covariance")
        return self._m2 / (self.count - 1)


def glmm_gradient_source(
    model: GlmmModel,
    data: Dataset,
    prior: PriorSpec,
    config: SgldConfig,
    sampler,
) -> Callable:
    """Default gradient source: minibatch Fisher-identity estimate.

    Returns a callable (omega, k) -> (grad, MinibatchGradient) that draws the
    iteration's minibatch from the (seed, k, "minibatch") stream and one
    inner-draw stream per (k, subject, occurrence).
    """
    n = data.n_subjects

    def source(omega: np.ndarray, k: int):
        idx = iteration_stream(config.seed, k, "minibatch").integers(0, n, size=config.minibatch_size)
        mb = minibatch_gradient(
            model,
            data,
            prior,
            idx,
            omega,
            config.n_inner_draws,
            sampler,
            lambda i, occ: subject_stream(config.seed, k, i, occ),
        )
        return mb.full_grad, mb

    return source


def sgld_step(
    omega: np.ndarray,
    k: int,
    eps: float,
    kappa: int,
    seed: int,
    gradient_source: Callable,
    divergence_threshold: float = 1e6,
):
    """One update. Returns (omega_{k+1}, gradient info from the source)."""
    grad, info = gradient_source(omega, k)
    update = -eps * np.asarray(grad, dtype=float)
    if kappa:
        eta = iteration_stream(seed, k, "noise").standard_normal(omega.shape[0])
        update = update + math.sqrt(2.0 * eps) * eta
    if not np.all(np.isfinite(update)) or np.max(np.abs(update)) > divergence_threshold:
        raise DivergenceError(
            f"update magnitude exceeded {divergence_threshold:.1e} at iteration {k}; "
            "last finite state retained on the error",
            last_good=omega.copy(),
            iteration=k,
        )
    return omega + update, info


def _save_checkpoint(path, omega, k, samples, iterations):
    np.savez(
        path,
        omega=omega,
        iteration=np.asarray(k, dtype=np.int64),
        samples=np.asarray(samples) if samples else np.zeros((0, omega.shape[0])),
        sample_iterations=np.asarray(iterations, dtype=np.int64),
    )


def run_chain(
    model: GlmmModel,
    data: Dataset,
    prior: PriorSpec,
    config: SgldConfig,
    *,
    sampler=None,
    gradient_source: Callable | None = None,
    resume_from: str | None = None,
) -> Chain:
    """Run the outer loop and return the thinned chain.

    A custom gradient_source (omega, k) -> (grad, info) replaces the GLMM
    minibatch estimator entirely; this is how exact-gradient targets are
    driven through the same kernel. Warmup iterations (kappa forced to 0)
    precede the recorded portion; recorded iteration j in [1, K] is stored
    whenever j is a multiple of the thinning stride, so the sample count is
    floor(K/stride).
    """
    n = data.n_subjects
    d = model.dim
    sched = resolve_schedule(config, n)
    if gradient_source is None:
        if sampler is None:
            sampler = conditional_sampler(model, data, burn_in=config.inner_burn_in)
        gradient_source = glmm_gradient_source(model, data, prior, config, sampler)

    omega = np.zeros(d) if config.omega0 is None else config.omega0.copy()
    initial = omega.copy()
    k = 0
    samples: list[np.ndarray] = []
    sample_iters: list[int] = []
    if resume_from is not None:
        state = np.load(resume_from)
        omega = state["omega"].copy()
        if omega.shape[0] != d:
            raise ValueError("checkpoint dimension does not match the model")
        k = int(state["iteration"])
        samples = [row.copy() for row in state["samples"]]
        sample_iters = list(state["sample_iterations"])

    warmup = sched.warmup
    total = None if sched.n_iterations is None else warmup + sched.n_iterations
    moments = OnlineMoments(d)
    running_psi = RunningPsi() if config.dynamic_interval else None
    dynamic_log: list[dict] = []
    grad_norms: list[float] = []

    start = time.perf_counter()
    while True:
        if total is not None and k >= total:
            break
        if total is None and time.perf_counter() - start >= config.budget_seconds:
            break
        kappa_k = 0 if k < warmup else config.kappa
        try:
            omega, info = sgld_step(
                omega, k, sched.eps, kappa_k, config.seed, gradient_source,
                config.divergence_threshold,
            )
        except DivergenceError:
            if config.checkpoint_path is not None:
                _save_checkpoint(config.checkpoint_path, omega, k, samples, sample_iters)
            raise
        if k >= warmup:
            rec = k - warmup + 1
            moments.update(omega)
            if running_psi is not None and info is not None:
                running_psi.update(info.members)
            if rec % sched.stride == 0:
                samples.append(omega.copy())
                sample_iters.append(rec)
                grad_norms.append(0.0 if info is None else float(np.linalg.norm(info.full_grad)))
            if (
                running_psi is not None
                and rec % config.dynamic_interval == 0
                and moments.count > d
            ):
                dynamic_log.append(
                    _dynamic_correction_entry(
                        rec, moments, running_psi, sched.eps, n,
                        config.minibatch_size, config.kappa,
                    )
                )
        k += 1
        if config.checkpoint_every is not None and k % config.checkpoint_every == 0:
            _save_checkpoint(config.checkpoint_path, omega, k, samples, sample_iters)
    runtime = time.perf_counter() - start

    sample_arr = np.asarray(samples) if samples else np.zeros((0, d))
    diagnostics = {
        "gradient_norms": np.asarray(grad_norms),
        "warmup_iterations": warmup,
        "completed_iterations": k,
    }
    if dynamic_log:
        diagnostics["dynamic_corrections"] = dynamic_log
    return Chain(
        samples=sample_arr,
        iterations=np.asarray(sample_iters, dtype=np.int64),
        initial=initial,
        final=omega.copy(),
        step_size=sched.eps,
        delta=sched.delta,
        n_subjects=n,
        labels=model.coordinate_labels(),
        config=config,
        diagnostics=diagnostics,
        runtime_seconds=runtime,
    )


def _dynamic_correction_entry(rec, moments, running_psi, eps, n, s, kappa):
    """During-run correction snapshot from running moments; approximate."""
    from .correction import compute_gamma, solve_lyapunov

    entry = {"iteration": rec, "approximate": True}
    try:
        psi = running_psi.estimate(n)
        gamma = compute_gamma(psi, eps, n, s, kappa)
        a = solve_lyapunov(moments.cov(), gamma)
        entry["corrected_sd"] = np.sqrt(np.diag(np.linalg.inv(a)))
        entry["uncorrected_sd"] = np.sqrt(np.diag(moments.cov()))
    except (ValueError, np.linalg.LinAlgError) as exc:
        entry["skipped"] = str(exc)
    return entry
