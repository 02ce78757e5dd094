"""Gaussian-mixture predictions and the mixture-of-experts distribution.

Every expert emits a categorical-normal prediction: ``L`` modes, each with a
mean trajectory of ``K`` states ``(x, y, theta)`` and a per-step diagonal
precision (reciprocal variances).  Internally a prediction is stored as
stacked arrays so that the experiment loop never iterates over modes in
Python; :class:`GaussianMode` is the per-mode view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
WEIGHT_ATOL = 1e-9


def wrap_angle(theta):
    """Wrap angles to the half-open interval (-pi, pi]."""
    if isinstance(theta, (float, int)):
        return math.pi - (math.pi - theta) % (2.0 * math.pi)
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class AgentState:
    """Planar pose of an agent: position in meters, heading in radians."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        vals = (float(self.x), float(self.y), float(self.theta))
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"AgentState coordinates must be finite, got {vals}")
        object.__setattr__(self, "x", vals[0])
        object.__setattr__(self, "y", vals[1])
        object.__setattr__(self, "theta", wrap_angle(vals[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, arr) -> "AgentState":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0], arr[1], arr[2])


def as_state_array(x) -> np.ndarray:
    """Coerce an AgentState or length-3 array-like to a finite float array."""
    if isinstance(x, AgentState):
        return x.as_array()
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"state must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state must be finite")
    return arr


def _as_trajectory(traj, name: str) -> np.ndarray:
    if isinstance(traj, AgentState):
        traj = [traj]
    if len(traj) and isinstance(traj[0], AgentState):
        traj = [s.as_array() for s in traj]
    arr = np.asarray(traj, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise ValueError(f"{name} must have shape (K, 3) with K >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class GaussianMode:
    """One mode: mean trajectory ``(K, 3)``, precision ``(K, 3)`` and weight."""

    mean: np.ndarray
    precision: np.ndarray | None
    weight: float

    def __post_init__(self):
        mean = _as_trajectory(self.mean, "mean")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mode mean must be finite")
        mean = mean.copy()
        mean[:, 2] = wrap_angle(mean[:, 2])
        prec = None
        if self.precision is not None:
            prec = _as_trajectory(self.precision, "precision").copy()
            if prec.shape != mean.shape:
                raise ValueError(
                    f"precision shape {prec.shape} does not match mean shape {mean.shape}"
                )
            if not (np.all(np.isfinite(prec)) and np.all(prec > 0)):
                raise ValueError("precision entries must be strictly positive and finite")
            prec.setflags(write=False)
        w = float(self.weight)
        if not (0.0 <= w <= 1.0):
            raise ValueError(f"mode weight must lie in [0, 1], got {w}")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "weight", w)

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class ExpertPrediction:
    """A GMM over future trajectories produced by one expert at one step.

    ``weights`` has shape ``(L,)``, ``means`` and ``precisions`` have shape
    ``(L, K, 3)``.  ``precisions`` may be ``None`` for experts that only emit
    means (such an expert cannot take part in density-based losses or NLL).
    """

    weights: np.ndarray
    means: np.ndarray
    precisions: np.ndarray | None = None
    expert_id: Any = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        if mu.ndim != 3 or mu.shape[2] != 3:
            raise ValueError(f"means must have shape (L, K, 3), got {mu.shape}")
        if mu.shape[0] < 1 or mu.shape[1] < 1:
            raise ValueError("need at least one mode and one horizon step")
        if w.shape != (mu.shape[0],):
            raise ValueError(f"weights shape {w.shape} does not match {mu.shape[0]} modes")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mode means must be finite")
        if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
            raise ValueError("mode weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > WEIGHT_ATOL:
            raise ValueError(f"mode weights must sum to 1, got {w.sum()!r}")
        mu[:, :, 2] = wrap_angle(mu[:, :, 2])
        h = None
        if self.precisions is not None:
            h = np.array(self.precisions, dtype=float)
            if h.shape != mu.shape:
                raise ValueError(f"precisions shape {h.shape} does not match means {mu.shape}")
            if not (np.all(np.isfinite(h)) and np.all(h > 0)):
                raise ValueError("precision entries must be strictly positive and finite")
            h.setflags(write=False)
        w.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "precisions", h)

    @classmethod
    def _trusted(cls, weights, means, precisions, expert_id=None) -> "ExpertPrediction":
        """Skip validation for arrays that are valid by construction."""
        obj = object.__new__(cls)
        for name, val in (("weights", weights), ("means", means), ("precisions", precisions)):
            if val is not None:
                val = np.asarray(val, dtype=float)
                val.setflags(write=False)
            object.__setattr__(obj, name, val)
        object.__setattr__(obj, "expert_id", expert_id)
        return obj

    @classmethod
    def from_modes(cls, modes: Sequence[GaussianMode], expert_id=None) -> "ExpertPrediction":
        if not modes:
            raise ValueError("an expert prediction needs at least one mode")
        horizons = {m.horizon for m in modes}
        if len(horizons) != 1:
            raise ValueError(f"all modes must share one horizon, got {sorted(horizons)}")
        has_prec = [m.precision is not None for m in modes]
        if any(has_prec) and not all(has_prec):
            raise ValueError("either every mode carries a precision or none does")
        prec = np.stack([m.precision for m in modes]) if all(has_prec) else None
        return cls(
            weights=np.array([m.weight for m in modes]),
            means=np.stack([m.mean for m in modes]),
            precisions=prec,
            expert_id=expert_id,
        )

    @property
    def n_modes(self) -> int:
        return self.means.shape[0]

    @property
    def horizon(self) -> int:
        return self.means.shape[1]

    @property
    def has_covariance(self) -> bool:
        return self.precisions is not None

    @property
    def modes(self) -> tuple[GaussianMode, ...]:
        prec = self.precisions
        return tuple(
            GaussianMode(self.means[j], None if prec is None else prec[j], self.weights[j])
            for j in range(self.n_modes)
        )


@dataclass(frozen=True, eq=False)
class WeightVector:
    """A probability vector over experts."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(-1)
        if a.size < 1:
            raise ValueError("weight vector must be non-empty")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(a.sum() - 1.0) > 1e-12 * max(1, a.size):
            raise ValueError(f"weights must sum to 1, got {a.sum()!r}")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def one_hot(cls, n: int, i: int) -> "WeightVector":
        a = np.zeros(n)
        a[i] = 1.0
        return cls(a)

    def __len__(self):
        return self.alpha.size


def _alpha_array(alpha) -> np.ndarray:
    if isinstance(alpha, WeightVector):
        return alpha.alpha
    return WeightVector(alpha).alpha


@dataclass(frozen=True, eq=False)
class MoeDistribution:
    """Flattened mixture of ``C = N * L`` weighted Gaussian modes.

    Components are ordered expert-major, mode-minor; ``source[c]`` holds the
    ``(expert, mode)`` pair of component ``c``.
    """

    weights: np.ndarray
    means: np.ndarray
    precisions: np.ndarray | None
    source: np.ndarray = field(repr=False)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def horizon(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[tuple[float, GaussianMode]]:
        prec = self.precisions
        out = []
        for c in range(self.n_components):
            mode = GaussianMode(self.means[c], None if prec is None else prec[c], min(1.0, self.weights[c]))
            out.append((float(self.weights[c]), mode))
        return out


def gaussian_log_pdf_first_step(means, precisions, x) -> np.ndarray:
    """Log-density of diagonal 3-D Gaussians at the first prediction step.

    ``means`` and ``precisions`` have shape ``(..., K, 3)``; the heading
    residual is wrapped before evaluation.
    """
    x = as_state_array(x)
    mu0 = np.asarray(means)[..., 0, :]
    h0 = np.asarray(precisions)[..., 0, :]
    resid = x - mu0
    resid[..., 2] = wrap_angle(resid[..., 2])
    quad = np.sum(h0 * resid * resid, axis=-1)
    return 0.5 * (np.sum(np.log(h0), axis=-1) - quad) - 1.5 * LOG_2PI


def gaussian_pdf_first_step(mode: GaussianMode, x) -> float:
    """Density of ``mode`` at its first step, evaluated at state ``x``."""
    if mode.precision is None:
        raise ValueError("mode has no precision; density is undefined")
    return float(np.exp(gaussian_log_pdf_first_step(mode.mean, mode.precision, x)))


def build_moe(predictions: Sequence[ExpertPrediction], alpha, allow_ragged: bool = False) -> MoeDistribution:
    """Scale every expert's mode weights by its entry of ``alpha`` and stack."""
    a = _alpha_array(alpha)
    if len(predictions) != a.size:
        raise ValueError(f"got {len(predictions)} predictions but {a.size} weights")
    horizons = {p.horizon for p in predictions}
    if len(horizons) != 1:
        raise ValueError(f"predictions disagree on the horizon: {sorted(horizons)}")
    n_modes = {p.n_modes for p in predictions}
    if len(n_modes) != 1 and not allow_ragged:
        raise ValueError(f"experts have different mode counts {sorted(n_modes)}; pass allow_ragged=True")
    weights = np.concatenate([a[i] * p.weights for i, p in enumerate(predictions)])
    means = np.concatenate([p.means for p in predictions])
    if all(p.has_covariance for p in predictions):
        precisions = np.concatenate([p.precisions for p in predictions])
    else:
        precisions = None
    source = np.array([(i, j) for i, p in enumerate(predictions) for j in range(p.n_modes)], dtype=int)
    for arr in (weights, means, source):
        arr.setflags(write=False)
    if precisions is not None:
        precisions.setflags(write=False)
    return MoeDistribution(weights, means, precisions, source)


def moe_pdf(moe: MoeDistribution, x) -> float:
    """Mixture density at the first prediction step."""
    if moe.precisions is None:
        raise ValueError("mixture contains modes without precision; density is undefined")
    logp = gaussian_log_pdf_first_step(moe.means, moe.precisions, x)
    return float(np.dot(moe.weights, np.exp(logp)))
