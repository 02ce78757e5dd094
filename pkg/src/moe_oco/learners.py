"""Online learners over the probability simplex.

Both learners consume the raw (unbounded) gradient of a linear loss, rescale
it into ``[0, 1]`` with a running magnitude bound ``G`` and then reweight the
experts.  SQUINT reweights a prior by the evidence potential of each
expert's cumulative regret ``R`` and squared regret ``V``; exponentiated
gradient reweights by the exponentiated negative cumulative clipped loss.
A discount ``lambda < 1`` geometrically forgets old statistics.

State arrays may carry leading batch dimensions (``(..., N)``, with ``G`` of
shape ``(...)``) so that many independent learners can advance in one call.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .potential import squint_log_potential

SQUINT = "squint"
EG = "eg"


@dataclass(frozen=True, eq=False)
class LearnerState:
    prior: np.ndarray
    alpha: np.ndarray
    R: np.ndarray
    V: np.ndarray
    G: np.ndarray | float
    t: int = 0
    discount: float = 1.0
    kind: str = SQUINT
    update_order: str = "post"
    S: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")
        if self.kind not in (SQUINT, EG):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.update_order not in ("post", "pre"):
            raise ValueError(f"update_order must be 'post' or 'pre', got {self.update_order!r}")

    @property
    def n_experts(self) -> int:
        return self.alpha.shape[-1]

    def to_json(self) -> str:
        doc = {
            "prior": self.prior.tolist(),
            "alpha": self.alpha.tolist(),
            "R": self.R.tolist(),
            "V": self.V.tolist(),
            "G": np.asarray(self.G).tolist(),
            "t": self.t,
            "discount": self.discount,
            "kind": self.kind,
            "update_order": self.update_order,
        }
        if self.S is not None:
            doc["S"] = self.S.tolist()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "LearnerState":
        doc = json.loads(text)
        arr = lambda k: np.asarray(doc[k], dtype=float)  # noqa: E731
        G = np.asarray(doc["G"], dtype=float)
        return cls(
            prior=arr("prior"),
            alpha=arr("alpha"),
            R=arr("R"),
            V=arr("V"),
            G=float(G) if G.ndim == 0 else G,
            t=int(doc["t"]),
            discount=float(doc["discount"]),
            kind=doc.get("kind", SQUINT),
            update_order=doc.get("update_order", "post"),
            S=arr("S") if "S" in doc else None,
        )


def init_state(n_experts: int, kind: str = SQUINT, discount: float = 1.0, prior=None,
               update_order: str = "post", batch_shape: tuple = ()) -> LearnerState:
    """Fresh learner: zero regret statistics, ``alpha`` equal to the prior."""
    if n_experts < 1:
        raise ValueError("need at least one expert")
    if kind == EG and n_experts < 2:
        raise ValueError("exponentiated gradient needs at least two experts (ln N > 0)")
    shape = tuple(batch_shape) + (n_experts,)
    if prior is None:
        prior = np.full(shape, 1.0 / n_experts)
    else:
        prior = np.broadcast_to(np.asarray(prior, dtype=float), shape).copy()
        if np.any(prior <= 0) or np.any(np.abs(prior.sum(axis=-1) - 1) > 1e-12):
            raise ValueError("prior must be strictly positive and sum to 1")
    zeros = np.zeros(shape)
    G = np.zeros(tuple(batch_shape)) if batch_shape else 0.0
    return LearnerState(prior=prior, alpha=prior.copy(), R=zeros, V=zeros.copy(), G=G,
                        t=0, discount=float(discount), kind=kind, update_order=update_order,
                        S=zeros.copy() if kind == EG else None)


def clip_gradient(raw, state_or_G):
    """Rescale a raw gradient into ``[0, 1]^N`` with the running bound ``G``.

    Returns ``(clipped, G_new)``.  An all-zero history (``G_new == 0``) maps to
    ``0.5`` everywhere.
    """
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw gradient must be finite")
    G_prev = state_or_G.G if isinstance(state_or_G, LearnerState) else state_or_G
    G_new = np.maximum(np.max(np.abs(raw), axis=-1), G_prev)
    if np.ndim(G_new) == 0:
        G_new = float(G_new)
        if G_new == 0.0:
            return np.full(raw.shape, 0.5), G_new
        clipped = (raw / G_new + 1.0) / 2.0
    else:
        Gb = np.expand_dims(G_new, -1)
        safe = np.where(Gb > 0, Gb, 1.0)
        clipped = np.where(Gb > 0, (raw / safe + 1.0) / 2.0, 0.5)
    # guard the last ulp so the result is inside [0, 1] exactly
    return np.clip(clipped, 0.0, 1.0), G_new


_TINY = np.finfo(float).tiny


def _normalize_log(logw):
    w = np.exp(logw - np.max(logw, axis=-1, keepdims=True))
    # weights below the smallest normal double would underflow to exactly 0
    w = np.maximum(w, _TINY)
    return w / w.sum(axis=-1, keepdims=True)


def squint_weights(prior, R, V):
    """``alpha_i`` proportional to ``prior_i * xi(R_i, V_i)``, normalized in log space."""
    return _normalize_log(np.log(prior) + squint_log_potential(R, V))


def squint_step(state: LearnerState, raw_gradient) -> LearnerState:
    """One SQUINT round with Cutkosky clipping and optional discounting."""
    g, G = clip_gradient(raw_gradient, state)
    alpha = state.alpha
    r = np.sum(alpha * g, axis=-1, keepdims=True) - g
    lam = state.discount
    R = lam * state.R + r
    V = lam * lam * state.V + r * r
    if state.update_order == "post":
        new_alpha = squint_weights(state.prior, R, V)
    else:
        new_alpha = squint_weights(state.prior, state.R, state.V)
    if not np.all(np.isfinite(new_alpha)):
        raise FloatingPointError(f"non-finite weights at step {state.t + 1}")
    return replace(state, alpha=new_alpha, R=R, V=V, G=G, t=state.t + 1)


def eg_step(state: LearnerState, raw_gradient) -> LearnerState:
    """One exponentiated-gradient round on the clipped gradient."""
    n = state.n_experts
    if n < 2:
        raise ValueError("exponentiated gradient needs at least two experts (ln N > 0)")
    g, G = clip_gradient(raw_gradient, state)
    S0 = state.S if state.S is not None else np.zeros_like(state.alpha)
    S = state.discount * S0 + g
    t = state.t + 1
    logw = -S * math.sqrt(math.log(n)) / math.sqrt(t)
    new_alpha = _normalize_log(logw)
    if not np.all(np.isfinite(new_alpha)):
        raise FloatingPointError(f"non-finite weights at step {t}")
    return replace(state, alpha=new_alpha, S=S, G=G, t=t)


def step(state: LearnerState, raw_gradient) -> LearnerState:
    if state.kind == SQUINT:
        return squint_step(state, raw_gradient)
    return eg_step(state, raw_gradient)


@dataclass(frozen=True, eq=False)
class RegretRecord:
    per_step_mixture_loss: float
    per_step_expert_loss: np.ndarray
    cumulative_regret_vs_each: np.ndarray


def regret_records(alphas, losses) -> list[RegretRecord]:
    """Per-step records of ``alpha_t . g_t``, ``g_t`` and the running regret."""
    alphas = np.asarray(alphas, dtype=float)
    losses = np.asarray(losses, dtype=float)
    mix = np.einsum("tn,tn->t", alphas, losses)
    cum = np.cumsum(mix[:, None] - losses, axis=0)
    return [RegretRecord(float(mix[t]), losses[t], cum[t]) for t in range(len(mix))]


def cumulative_regret(alphas, losses) -> np.ndarray:
    """Regret of the played weights against every fixed expert.

    ``alphas[t]`` is the vector played at step ``t`` and ``losses[t]`` the
    unclipped linear loss vector revealed after it.
    """
    alphas = np.asarray(alphas, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if alphas.ndim != 2 or alphas.shape != losses.shape or alphas.shape[0] == 0:
        raise ValueError("need matching non-empty (T, N) histories")
    mix = np.einsum("tn,tn->t", alphas, losses)
    return (mix[:, None] - losses).sum(axis=0)
