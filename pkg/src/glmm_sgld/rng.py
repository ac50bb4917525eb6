"""Deterministic random-number streams.

Every random quantity in a run is drawn from a stream derived from one master
seed and an integer path, so reruns are bit-identical and any (iteration,
subject) pair can be replayed in isolation without simulating the rest of the
run.
"""
from __future__ import annotations

import numpy as np

__all__ = ["stream", "iteration_stream", "subject_stream"]

# Path codes. Subject streams occupy codes >= _SUBJECT_BASE so they can never
# collide with iteration-level bookkeeping streams.
_NOISE = 0
_MINIBATCH = 1
_SUBJECT_BASE = 16


def stream(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for the sub-stream identified by ``path`` under ``master_seed``.

    Uses SeedSequence spawn keys, so distinct paths give statistically
    independent streams and the mapping is stable across runs and platforms.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


def iteration_stream(master_seed: int, iteration: int, purpose: str = "noise") -> np.random.Generator:
    """Stream for iteration-level draws (minibatch indices, injected noise)."""
    code = {"noise": _NOISE, "minibatch": _MINIBATCH}[purpose]
    return stream(master_seed, iteration, code)


def subject_stream(
    master_seed: int, iteration: int, subject: int, occurrence: int = 0
) -> np.random.Generator:
    """Stream feeding subject ``subject``'s conditional sampler at one iteration.

    Minibatches are drawn with replacement, so the same subject can occupy
    several slots in one iteration; ``occurrence`` separates those slots so
    each contributes independent Monte Carlo noise.
    """
    return stream(master_seed, iteration, _SUBJECT_BASE + subject, occurrence)
