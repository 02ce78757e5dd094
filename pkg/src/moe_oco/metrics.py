"""Evaluation metrics over full prediction horizons.

These are never differentiated and never fed back to the learner.
Displacements are measured on ``(x, y)`` only.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .gmm import MoeDistribution, _as_trajectory, gaussian_log_pdf_first_step
from .losses import sliding_window_average

NLL_FLOOR = 1e-300
METRIC_NAMES = ("minADE", "minFDE", "NLL")


@dataclass(frozen=True, eq=False)
class GroundTruthFuture:
    states: np.ndarray

    def __post_init__(self):
        arr = _as_trajectory(self.states, "states")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ground-truth states must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "states", arr)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def _truth_array(truth) -> np.ndarray:
    return truth.states if isinstance(truth, GroundTruthFuture) else GroundTruthFuture(truth).states


def displacement_errors(means, truth) -> tuple[np.ndarray, np.ndarray]:
    """Average and final ``(x, y)`` displacement of every mode.

    ``means`` has shape ``(C, K, 3)``; returns two arrays of shape ``(C,)``.
    """
    truth = _truth_array(truth)
    means = np.asarray(means)
    if means.shape[1] != truth.shape[0]:
        raise ValueError(f"horizon mismatch: modes have {means.shape[1]} steps, truth has {truth.shape[0]}")
    dist = np.hypot(means[..., 0] - truth[:, 0], means[..., 1] - truth[:, 1])
    return dist.mean(axis=-1), dist[..., -1]


def select_topk(weights, k: int) -> np.ndarray:
    """Top-k component indices by weight, stable on ties.

    Zero-weight components are not part of the distribution and are never
    selected; when fewer than ``k`` components carry weight, all of them are.
    """
    w = np.asarray(weights, dtype=float)
    if not 1 <= k <= w.size:
        raise ValueError(f"k={k} out of range for {w.size} components")
    order = np.argsort(-w, kind="stable")
    n_pos = int(np.count_nonzero(w > 0))
    return order[: max(1, min(k, n_pos))]


def min_ade_k(moe: MoeDistribution, truth, k: int) -> float:
    ade, _ = displacement_errors(moe.means, truth)
    return float(ade[select_topk(moe.weights, k)].min())


def min_fde_k(moe: MoeDistribution, truth, k: int) -> float:
    _, fde = displacement_errors(moe.means, truth)
    return float(fde[select_topk(moe.weights, k)].min())


class FloorCounter:
    """Counts how often the NLL density floor was hit."""

    def __init__(self):
        self.count = 0


def nll_from_density(density: float, counter: FloorCounter | None = None) -> float:
    if not density >= NLL_FLOOR:
        if counter is not None:
            counter.count += 1
        density = NLL_FLOOR
    return -math.log(density)


def nll(moe: MoeDistribution, x_true, counter: FloorCounter | None = None) -> float:
    """Negative log-likelihood of the revealed first-step state."""
    if moe.precisions is None:
        raise ValueError("mixture contains modes without precision; NLL is undefined")
    dens = float(np.dot(moe.weights, np.exp(gaussian_log_pdf_first_step(moe.means, moe.precisions, x_true))))
    return nll_from_density(dens, counter)


@dataclass(eq=False)
class MetricSeries:
    name: str
    raw: np.ndarray
    window: int
    k: int | None = None
    subject: str = "moe"
    smoothed: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.name!r}")
        self.raw = np.asarray(self.raw, dtype=float)
        self.smoothed = sliding_window_average(self.raw, self.window)

    @property
    def label(self) -> str:
        return f"{self.name}_{self.subject}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "raw", "smoothed"])
        for t, (r, s) in enumerate(zip(self.raw, self.smoothed)):
            w.writerow([t, repr(float(r)), repr(float(s))])
        return buf.getvalue()

    def to_json(self) -> str:
        clean = lambda a: [None if not math.isfinite(v) else float(v) for v in a]  # noqa: E731
        return json.dumps({
            "name": self.name,
            "subject": self.subject,
            "k": self.k,
            "window": self.window,
            "raw": clean(self.raw),
            "smoothed": clean(self.smoothed),
        })
