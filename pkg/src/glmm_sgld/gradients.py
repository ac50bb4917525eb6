"""Monte Carlo gradient estimation for the subject-marginalized posterior.

The per-subject gradient of f_i = -log p(Y_i | Omega) is estimated through
the identity

    grad f_i(Omega) = -E[ grad_Omega log p(Y_i, gamma_i | Omega) | Y_i, Omega ],

so averaging joint-gradient evaluations over conditional draws of gamma_i is
unbiased whenever the draws are exact. Each estimate carries its own Monte
Carlo covariance: the plain sample-covariance-of-the-mean form for
independent draws, or a batch-means estimate when the draws come from an
inner Markov chain (sqrt(R) batches), since serial correlation invalidates
the independent-draw formula.

Minibatch estimates aggregate S subjects drawn uniformly with replacement;
the full-data gradient is grad f0 + n * hbar_S. The population covariance
Psi combines the between-subject spread of the per-subject estimates with
the averaged Monte Carlo covariances:

    Psi = (1/n) sum_i (g_i - h)(g_i - h)' + (1/n^2) sum_i Psi_i.

All aggregation uses a fixed summation order so results are bit-reproducible.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, GlmmModel, joint_gradient
from .priors import PriorSpec, prior_grad

__all__ = [
    "SubjectGradient",
    "MinibatchGradient",
    "PopulationCovariance",
    "EstimatorError",
    "omega_fingerprint",
    "estimate_subject_gradient",
    "minibatch_gradient",
    "population_covariance",
    "full_population_pass",
    "RunningPsi",
    "dump_gradient_diagnostics",
]


class EstimatorError(RuntimeError):
    """Raised when a gradient estimate cannot be formed; carries subject context."""


def omega_fingerprint(omega: np.ndarray) -> str:
    """Short stable hash of a parameter vector, used to detect mixed-state bugs."""
    payload = np.ascontiguousarray(omega, dtype=np.float64)
    return hashlib.blake2b(payload.tobytes(), digest_size=8).hexdigest()


@dataclass(frozen=True)
class SubjectGradient:
    """One subject's estimated gradient of f_i and its Monte Carlo covariance."""

    subject: int
    grad: np.ndarray
    cov: np.ndarray
    n_draws: int
    fingerprint: str
    mcmc_backed: bool = False


@dataclass(frozen=True)
class MinibatchGradient:
    """Aggregated minibatch estimate: hbar = mean of member gradients."""

    subjects: np.ndarray
    hbar: np.ndarray
    full_grad: np.ndarray
    members: tuple[SubjectGradient, ...]
    fingerprint: str


@dataclass(frozen=True)
class PopulationCovariance:
    """Lemma-style decomposition of the minibatch-noise covariance Psi."""

    psi: np.ndarray
    between: np.ndarray
    within: np.ndarray
    hbar: np.ndarray
    fingerprint: str


def _batch_means_cov(scores: np.ndarray) -> np.ndarray:
    """Covariance of the chain mean via batch means with floor(sqrt(R)) batches."""
    r = scores.shape[0]
    n_batches = math.isqrt(r)
    if n_batches < 2:
        raise EstimatorError(f"batch-means covariance needs at least 4 draws, got {r}")
    per = r // n_batches
    trimmed = scores[: n_batches * per].reshape(n_batches, per, scores.shape[1])
    means = trimmed.mean(axis=1)
    centered = means - means.mean(axis=0)
    return centered.T @ centered / (n_batches * (n_batches - 1))


def estimate_subject_gradient(
    model: GlmmModel,
    data: Dataset,
    i: int,
    omega: np.ndarray,
    n_draws: int,
    sampler,
    rng: np.random.Generator,
) -> SubjectGradient:
    """Estimate grad f_i(omega) from n_draws conditional draws of gamma_i.

    Returns the negated average of joint log-density gradients together with
    an estimate of its own covariance: the independent-draw form
    (1/(R(R-1))) sum (s_r - mean)(s_r - mean)' for exact samplers, batch
    means for MCMC-backed ones.
    """
    if n_draws < 2:
        raise ValueError("n_draws must be at least 2 to estimate a covariance")
    mcmc = bool(sampler.is_mcmc(i))
    if mcmc and n_draws < 4:
        raise ValueError("MCMC-backed estimates need n_draws >= 4 for batch means")
    try:
        gammas = sampler.draw(i, omega, n_draws, rng)
        scores = joint_gradient(model, data, i, omega, gammas)
    except Exception as exc:
        raise EstimatorError(
            f"conditional gradient failed for subject index {i}: {exc}"
        ) from exc
    grad = -scores.mean(axis=0)
    if mcmc:
        cov = _batch_means_cov(scores)
    else:
        centered = scores - scores.mean(axis=0)
        cov = centered.T @ centered / (n_draws * (n_draws - 1))
    cov = 0.5 * (cov + cov.T)
    return SubjectGradient(
        subject=int(i),
        grad=grad,
        cov=cov,
        n_draws=int(n_draws),
        fingerprint=omega_fingerprint(omega),
        mcmc_backed=mcmc,
    )


def minibatch_gradient(
    model: GlmmModel,
    data: Dataset,
    prior: PriorSpec,
    subjects: np.ndarray,
    omega: np.ndarray,
    n_draws: int,
    sampler,
    stream_for,
) -> MinibatchGradient:
    """Full-posterior gradient estimate from a with-replacement minibatch.

    stream_for(i, occurrence) must return the Generator for subject i's
    draws; the occurrence index separates repeated slots of the same subject
    so duplicates contribute independent Monte Carlo noise.
    """
    subjects = np.asarray(subjects, dtype=int)
    if subjects.size == 0:
        raise ValueError("minibatch must contain at least one subject")
    n = data.n_subjects
    if subjects.min() < 0 or subjects.max() >= n:
        raise ValueError("minibatch contains out-of-range subject indices")
    seen: dict[int, int] = {}
    members = []
    total = np.zeros(model.dim)
    for i in subjects:
        occurrence = seen.get(int(i), 0)
        seen[int(i)] = occurrence + 1
        member = estimate_subject_gradient(
            model, data, int(i), omega, n_draws, sampler, stream_for(int(i), occurrence)
        )
        members.append(member)
        total += member.grad
    hbar = total / subjects.size
    full_grad = prior_grad(prior, model, omega) + n * hbar
    return MinibatchGradient(
        subjects=subjects,
        hbar=hbar,
        full_grad=full_grad,
        members=tuple(members),
        fingerprint=members[0].fingerprint,
    )


def population_covariance(members) -> PopulationCovariance:
    """Combine per-subject gradients for all of [n] into the covariance Psi.

    Requires one SubjectGradient per subject index 0..n-1, all evaluated at
    the same omega (checked through the stored fingerprint).
    """
    members = list(members)
    if not members:
        raise ValueError("population covariance needs at least one subject gradient")
    fingerprints = {m.fingerprint for m in members}
    if len(fingerprints) != 1:
        raise ValueError(
            "subject gradients were evaluated at different omega values; "
            "refusing to mix iterations"
        )
    ordered = sorted(members, key=lambda m: m.subject)
    n = len(ordered)
    if [m.subject for m in ordered] != list(range(n)):
        raise ValueError("expected exactly one gradient per subject index 0..n-1")
    grads = np.stack([m.grad for m in ordered])
    hbar = grads.mean(axis=0)
    centered = grads - hbar
    between = centered.T @ centered / n
    within = sum(m.cov for m in ordered) / n**2
    psi = between + within
    psi = 0.5 * (psi + psi.T)
    return PopulationCovariance(
        psi=psi,
        between=between,
        within=np.asarray(within),
        hbar=hbar,
        fingerprint=ordered[0].fingerprint,
    )


def full_population_pass(
    model: GlmmModel,
    data: Dataset,
    omega: np.ndarray,
    n_draws: int,
    sampler,
    stream_for,
) -> list[SubjectGradient]:
    """Estimate every subject's gradient at a common omega (for Psi)."""
    return [
        estimate_subject_gradient(model, data, i, omega, n_draws, sampler, stream_for(i, 0))
        for i in range(data.n_subjects)
    ]


@dataclass
class RunningPsi:
    """Exponentially weighted running estimate of Psi from minibatch members.

    Mirrors the population formula with exponentially weighted in place of
    full-population averages, so it can track Psi along a moving chain. The
    result is approximate by construction (gradients enter at different
    omega values) and is flagged as such.
    """

    decay: float = 0.99
    _weight: float = field(default=0.0, init=False)
    _grad_sum: np.ndarray | None = field(default=None, init=False)
    _outer_sum: np.ndarray | None = field(default=None, init=False)
    _cov_sum: np.ndarray | None = field(default=None, init=False)
    _updates: int = field(default=0, init=False)

    approximate = True

    def update(self, members) -> None:
        members = list(members)
        if not members:
            return
        d = members[0].grad.shape[0]
        if self._grad_sum is None:
            self._grad_sum = np.zeros(d)
            self._outer_sum = np.zeros((d, d))
            self._cov_sum = np.zeros((d, d))
        self._weight *= self.decay
        self._grad_sum *= self.decay
        self._outer_sum *= self.decay
        self._cov_sum *= self.decay
        for m in members:
            self._weight += 1.0
            self._grad_sum += m.grad
            self._outer_sum += np.outer(m.grad, m.grad)
            self._cov_sum += m.cov
        self._updates += 1

    def estimate(self, n_subjects: int) -> np.ndarray:
        """Current Psi estimate for a population of n_subjects."""
        if self._updates < 2 or self._weight <= 1.0:
            raise ValueError("running Psi estimate needs at least two minibatch updates")
        mean = self._grad_sum / self._weight
        second = self._outer_sum / self._weight
        between = second - np.outer(mean, mean)
        within_mean = self._cov_sum / self._weight
        psi = between + within_mean / n_subjects
        psi = 0.5 * (psi + psi.T)
        # clip tiny negative curvature from the EW mean subtraction
        vals, vecs = np.linalg.eigh(psi)
        vals = np.maximum(vals, 0.0)
        return (vecs * vals) @ vecs.T


def dump_gradient_diagnostics(members, path, subject_ids=None) -> None:
    """Write per-subject diagnostics (subject_id, grad_norm, psi_trace) as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "grad_norm", "psi_trace"])
        for m in members:
            label = subject_ids[m.subject] if subject_ids is not None else m.subject
            writer.writerow([label, f"{np.linalg.norm(m.grad):.17g}", f"{np.trace(m.cov):.17g}"])
