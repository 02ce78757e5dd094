"""Aggregation of experts that emit trajectory samples instead of GMMs.

The per-expert losses below are scalars, so the aggregate loss stays linear
in ``alpha`` and any learner from :mod:`moe_oco.learners` applies as is.
The mixture itself is represented by resampling: expert ``i`` contributes
``floor(M * alpha_i)`` draws, and the leftover draws go to the experts with
the largest fractional remainders.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gmm import _alpha_array, as_state_array
from .losses import LossEvaluation


@dataclass(frozen=True, eq=False)
class SampleSet:
    """``M`` sampled trajectories of ``K`` states, shape ``(M, K, 3)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 3 or s.shape[2] != 3 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"samples must have shape (M, K, 3) with M, K >= 1, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]


def _squared_first_step(samples: SampleSet, x_true) -> np.ndarray:
    x = as_state_array(x_true)
    d = samples.samples[:, 0, :2] - x[:2]
    return np.sum(d * d, axis=-1)


def sample_loss_mse(samples: SampleSet, x_true) -> float:
    return float(np.mean(_squared_first_step(samples, x_true)))


def sample_loss_topk(samples: SampleSet, x_true, k: int) -> float:
    """Mean of the ``k`` smallest squared first-step displacements."""
    if not 1 <= k <= samples.n_samples:
        raise ValueError(f"k={k} out of range for {samples.n_samples} samples")
    sq = _squared_first_step(samples, x_true)
    return float(np.mean(np.partition(sq, k - 1)[:k]))


def aggregate_sample_loss(per_expert: Sequence[SampleSet], alpha, x_true, mode: str = "mse",
                          k: int | None = None) -> LossEvaluation:
    a = _alpha_array(alpha)
    if len(per_expert) != a.size:
        raise ValueError(f"got {len(per_expert)} sample sets but {a.size} weights")
    if mode == "mse":
        losses = np.array([sample_loss_mse(s, x_true) for s in per_expert])
    elif mode == "topk":
        if k is None:
            raise ValueError("mode='topk' needs k")
        losses = np.array([sample_loss_topk(s, x_true, k) for s in per_expert])
    else:
        raise ValueError(f"unknown sample loss mode {mode!r}")
    return LossEvaluation(float(np.dot(a, losses)), losses, losses.copy())


def allocate_counts(alpha, m_out: int) -> np.ndarray:
    """Floor allocation ``floor(m_out * alpha_i)`` completed by largest remainder.

    Remainder ties go to the lower expert index.
    """
    a = _alpha_array(alpha)
    if m_out < 0:
        raise ValueError("m_out must be nonnegative")
    scaled = m_out * a
    counts = np.floor(scaled).astype(int)
    short = m_out - int(counts.sum())
    if short > 0:
        order = np.argsort(-(scaled - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def importance_sample_moe(per_expert: Sequence[SampleSet], alpha, m_out: int, rng_seed=None) -> SampleSet:
    """Resample ``m_out`` trajectories from the experts in proportion to ``alpha``."""
    a = _alpha_array(alpha)
    if len(per_expert) != a.size:
        raise ValueError(f"got {len(per_expert)} sample sets but {a.size} weights")
    if m_out < 1:
        raise ValueError("m_out must be at least 1")
    horizons = {s.horizon for s in per_expert}
    if len(horizons) != 1:
        raise ValueError(f"sample sets disagree on the horizon: {sorted(horizons)}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    counts = allocate_counts(a, m_out)
    parts = []
    for i, (s, c) in enumerate(zip(per_expert, counts)):
        if c == 0:
            continue
        if s.n_samples == 0:
            raise ValueError(f"expert {i} has no samples but is allocated {c}")
        parts.append(s.samples[rng.integers(0, s.n_samples, size=c)])
    return SampleSet(np.concatenate(parts))
