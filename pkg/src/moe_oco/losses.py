"""Online losses over the expert weight vector.

Two families are provided.  The probability loss is linear in ``alpha`` and
its gradient entry ``i`` is the (negated) density expert ``i`` assigns to
the revealed state.  The minimum first-step displacement loss over the
top-k modes is piecewise constant in ``alpha``; its smoothed surrogate
relaxes top-k selection with a softsort permutation matrix and the min with
a log-sum-exp softmin, and carries an exact analytic gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .gmm import (
    ExpertPrediction,
    _alpha_array,
    as_state_array,
    build_moe,
    gaussian_log_pdf_first_step,
    wrap_angle,
)


@dataclass(frozen=True, eq=False)
class LossEvaluation:
    value: float
    gradient: np.ndarray
    per_expert_loss: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.gradient, dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("loss gradient contains non-finite entries")
        object.__setattr__(self, "gradient", g)


@dataclass(frozen=True)
class SmoothingConfig:
    """Temperatures for the smoothed top-k loss.

    ``softmin_beta`` sharpens the softmin over selected errors,
    ``softsort_tau`` sharpens the relaxed permutation and ``k`` is the number
    of top-weighted modes considered.
    """

    softmin_beta: float = 10.0
    softsort_tau: float = 0.1
    k: int = 10
    include_heading: bool = False

    def __post_init__(self):
        if not self.softmin_beta > 0:
            raise ValueError(f"softmin_beta must be positive, got {self.softmin_beta}")
        if not self.softsort_tau > 0:
            raise ValueError(f"softsort_tau must be positive, got {self.softsort_tau}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")

    def validate_for(self, n_components: int) -> None:
        if self.k > n_components:
            raise ValueError(f"k={self.k} exceeds the {n_components} mixture components")


def _check_dims(predictions, alpha):
    a = _alpha_array(alpha)
    if len(predictions) != a.size:
        raise ValueError(f"got {len(predictions)} predictions but {a.size} weights")
    if len({p.horizon for p in predictions}) != 1:
        raise ValueError("predictions disagree on the horizon")
    return a


def first_step_displacement(means, x, include_heading: bool = False) -> np.ndarray:
    """Euclidean first-step error per mode; heading enters only on request."""
    x = as_state_array(x)
    resid = x - np.asarray(means)[..., 0, :]
    if include_heading:
        resid[..., 2] = wrap_angle(resid[..., 2])
        return np.sqrt(np.sum(resid * resid, axis=-1))
    return np.hypot(resid[..., 0], resid[..., 1])


def topk_indices(weights, k: int) -> np.ndarray:
    """Indices of the ``k`` largest weights; ties go to the earlier index."""
    w = np.asarray(weights, dtype=float)
    if not 1 <= k <= w.size:
        raise ValueError(f"k={k} out of range for {w.size} components")
    return np.argsort(-w, kind="stable")[:k]


# -- probability loss ---------------------------------------------------------

def expert_densities(predictions: Sequence[ExpertPrediction], x) -> np.ndarray:
    """Density of the revealed state under each expert's GMM (length N)."""
    out = np.empty(len(predictions))
    for i, p in enumerate(predictions):
        if p.precisions is None:
            raise ValueError(f"expert {i} has no covariance; the probability loss needs densities")
        out[i] = np.dot(p.weights, np.exp(gaussian_log_pdf_first_step(p.means, p.precisions, x)))
    return out


def probability_loss(predictions: Sequence[ExpertPrediction], alpha, x_true) -> LossEvaluation:
    """Negative mixture density at the revealed state, with its gradient."""
    a = _check_dims(predictions, alpha)
    grad = -expert_densities(predictions, x_true)
    return LossEvaluation(float(np.dot(a, grad)), grad, grad.copy())


# -- top-k displacement losses -------------------------------------------------

def _component_arrays(predictions, alpha, x_true, include_heading):
    a = _check_dims(predictions, alpha)
    moe = build_moe(predictions, a, allow_ragged=True)
    p = np.concatenate([pr.weights for pr in predictions])
    disp = first_step_displacement(moe.means, x_true, include_heading)
    return a, moe, p, disp


def hard_min_frde(predictions, alpha, x_true, k: int, include_heading: bool = False) -> float:
    """Smallest first-step displacement among the ``k`` heaviest MoE modes."""
    _, moe, _, disp = _component_arrays(predictions, alpha, x_true, include_heading)
    return float(np.min(disp[topk_indices(moe.weights, k)]))


def soft_topk_min(w, d, k: int, beta: float, tau: float):
    """Softsort/softmin surrogate of ``min(d[topk(w)])`` and its gradient in ``w``.

    Returns ``(value, dvalue_dw)``.
    """
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    order = np.argsort(-w, kind="stable")[:k]
    s = w[order]
    diff = s[:, None] - w[None, :]
    sgn = np.sign(diff)
    logits = -np.abs(diff) / tau
    P = softmax(logits, axis=1)
    e = P @ d
    value = -logsumexp(-beta * e) / beta
    q = softmax(-beta * e)
    # dvalue/dlogits[r, c]
    G = q[:, None] * P * (d[None, :] - e[:, None])
    grad = (G * sgn).sum(axis=0) / tau
    # each sorted value s_r moves with the weight it was read from
    np.add.at(grad, order, -(G * sgn).sum(axis=1) / tau)
    return float(value), grad


def soft_min_frde(predictions, alpha, x_true, cfg: SmoothingConfig | None = None) -> LossEvaluation:
    """Smoothed top-k first-step displacement loss with its exact gradient."""
    cfg = cfg or SmoothingConfig()
    a, moe, p, disp = _component_arrays(predictions, alpha, x_true, cfg.include_heading)
    cfg.validate_for(moe.n_components)
    value, dw = soft_topk_min(moe.weights, disp, cfg.k, cfg.softmin_beta, cfg.softsort_tau)
    grad = np.bincount(moe.source[:, 0], weights=dw * p, minlength=a.size)
    return LossEvaluation(value, grad)


def sliding_window_average(values, window: int) -> np.ndarray:
    """Trailing mean over at most ``window`` entries (shorter at the start)."""
    if int(window) != window or window < 1:
        raise ValueError(f"window must be a positive integer, got {window}")
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        return v
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)
