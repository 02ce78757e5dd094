"""Synthetic expert streams, trace-file replay and the experiment loop.

A scenario is a sequence of regimes.  At every step a fresh agent is rolled
out with a noisy unicycle model; each expert predicts a GMM whose "true"
mode is the real future corrupted by noise proportional to that expert's
quality multiplier in the active regime, plus lane-change decoy modes.  The
precisions equal the generating noise, so sharper experts are also the
better calibrated ones.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import learners
from .gmm import ExpertPrediction, gaussian_log_pdf_first_step, wrap_angle
from .learners import clip_gradient, init_state
from .losses import first_step_displacement, soft_topk_min
from .metrics import (
    FloorCounter,
    MetricSeries,
    displacement_errors,
    nll_from_density,
    select_topk,
)
from .sampling import SampleSet, importance_sample_moe, sample_loss_mse, sample_loss_topk

log = logging.getLogger(__name__)


class TraceError(ValueError):
    """Malformed or inconsistent trace file."""

    def __init__(self, message: str, line: int | None = None, step: int | None = None):
        super().__init__(message)
        self.line = line
        self.step = step


@dataclass(frozen=True)
class TruthProcess:
    base_speed: float = 8.0
    speed_jitter: float = 0.2
    max_turn_rate: float = 0.3
    process_noise: float = 0.02
    dt: float = 0.5


@dataclass(frozen=True)
class RegimeSpec:
    start_step: int
    expert_quality: tuple[float, ...]
    truth_process: TruthProcess = TruthProcess()

    def __post_init__(self):
        q = tuple(float(v) for v in self.expert_quality)
        if not all(v > 0 and math.isfinite(v) for v in q):
            raise ValueError("expert quality multipliers must be positive")
        object.__setattr__(self, "expert_quality", q)


@dataclass(frozen=True)
class ScenarioSpec:
    n_experts: int
    n_modes: int
    horizon: int
    total_steps: int
    regimes: tuple[RegimeSpec, ...]
    rng_seed: int = 0
    output: str = "gmm"
    n_samples: int = 20
    position_noise: float = 0.5
    heading_noise: float = 0.05
    lane_offset: float = 3.5
    confidence_spread: float = 0.15
    no_covariance: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "no_covariance", tuple(self.no_covariance))
        if self.total_steps < 1 or self.horizon < 1 or self.n_modes < 1:
            raise ValueError("total_steps, horizon and n_modes must be >= 1")
        if self.n_experts < 1:
            raise ValueError("n_experts must be >= 1")
        if self.output not in ("gmm", "samples"):
            raise ValueError(f"output must be 'gmm' or 'samples', got {self.output!r}")
        if not self.regimes or self.regimes[0].start_step != 0:
            raise ValueError("the first regime must start at step 0")
        starts = [r.start_step for r in self.regimes]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("regime start steps must be strictly increasing")
        for r in self.regimes:
            if len(r.expert_quality) != self.n_experts:
                raise ValueError("every regime needs one quality multiplier per expert")

    def regime_at(self, t: int) -> RegimeSpec:
        active = self.regimes[0]
        for r in self.regimes:
            if r.start_step <= t:
                active = r
        return active

    def boundaries(self) -> list[int]:
        return [r.start_step for r in self.regimes[1:]]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        doc = dict(doc)
        regimes = []
        for r in doc.pop("regimes"):
            r = dict(r)
            tp = TruthProcess(**r.pop("truth_process", {}))
            regimes.append(RegimeSpec(truth_process=tp, **r))
        return cls(regimes=tuple(regimes), **doc)


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: int
    truth: np.ndarray
    future: np.ndarray
    experts: tuple

    @property
    def kind(self) -> str:
        return "samples" if isinstance(self.experts[0], SampleSet) else "gmm"

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        if self.t != other.t or len(self.experts) != len(other.experts):
            return False
        if not (np.array_equal(self.truth, other.truth) and np.array_equal(self.future, other.future)):
            return False
        for a, b in zip(self.experts, other.experts):
            if type(a) is not type(b):
                return False
            if isinstance(a, SampleSet):
                if not np.array_equal(a.samples, b.samples):
                    return False
            else:
                if not (np.array_equal(a.weights, b.weights) and np.array_equal(a.means, b.means)):
                    return False
                if (a.precisions is None) != (b.precisions is None):
                    return False
                if a.precisions is not None and not np.array_equal(a.precisions, b.precisions):
                    return False
        return True


# -- scenario generation -------------------------------------------------------

CHUNK = 1024


def _rollouts(rng, procs: list[TruthProcess], horizon: int) -> np.ndarray:
    """Noisy unicycle futures, one fresh agent per step: ``(T, K, 3)``."""
    T = len(procs)
    speed0 = np.array([tp.base_speed for tp in procs])
    jitter = np.array([tp.speed_jitter for tp in procs])
    max_turn = np.array([tp.max_turn_rate for tp in procs])
    pnoise = np.array([tp.process_noise for tp in procs])
    dt = np.array([tp.dt for tp in procs])[:, None]
    start = rng.uniform(-50.0, 50.0, size=(T, 2))
    theta = rng.uniform(-math.pi, math.pi, size=T)
    speed = speed0 * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=T))
    omega = rng.uniform(-1.0, 1.0, size=T) * max_turn
    noise = rng.standard_normal((T, horizon)) * pnoise[:, None]
    heading = theta[:, None] + np.cumsum(omega[:, None] * dt + noise, axis=1)
    step = speed[:, None] * dt
    xs = start[:, :1] + np.cumsum(step * np.cos(heading), axis=1)
    ys = start[:, 1:] + np.cumsum(step * np.sin(heading), axis=1)
    return np.stack([xs, ys, wrap_angle(heading)], axis=-1)


def _noise_scale(spec: ScenarioSpec, quality) -> np.ndarray:
    """Per-step standard deviation ``(..., K, 3)`` for experts of given quality."""
    growth = 1.0 + 0.25 * np.arange(spec.horizon)
    base = np.array([spec.position_noise, spec.position_noise, spec.heading_noise])
    return np.asarray(quality, dtype=float)[..., None, None] * (growth[:, None] * base[None, :])


def _expert_gmms(rng, spec: ScenarioSpec, future: np.ndarray, quality: np.ndarray):
    """Means ``(T, N, L, K, 3)``, weights ``(T, N, L)`` and sigmas ``(T, N, K, 3)``.

    The mode nearest the truth sits at a random slot; the other slots hold
    lane-change decoys whose lateral offset ramps in over the horizon.
    """
    T, K, _ = future.shape
    N, L = quality.shape[1], spec.n_modes
    # scene-dependent confidence: an expert widens or tightens all its modes together
    scale = quality * np.exp(spec.confidence_spread * rng.standard_normal((T, N)))
    sigma = _noise_scale(spec, scale)
    true_slot = rng.integers(L, size=(T, N))
    decoys = np.array([spec.lane_offset * (1 + j // 2) * (1 if j % 2 == 0 else -1) for j in range(L - 1)] or [0.0])
    j = np.arange(L)
    idx = np.clip(j - (j > true_slot[..., None]), 0, max(L - 2, 0))
    offsets = np.where(j == true_slot[..., None], 0.0, decoys[idx])
    ramp = (np.arange(K) + 1.0) / K
    heading = future[:, :, 2]
    lateral = np.stack([-np.sin(heading), np.cos(heading)], axis=-1) * ramp[None, :, None]
    means = np.broadcast_to(future[:, None, None], (T, N, L, K, 3)).copy()
    means[..., :2] += offsets[..., None, None] * lateral[:, None, None]
    means += rng.standard_normal((T, N, L, K, 3)) * sigma[:, :, None]
    means[..., 2] = wrap_angle(means[..., 2])
    p_true = rng.uniform(0.4, 0.8, size=(T, N))
    weights = np.empty((T, N, L))
    if L > 1:
        rest = rng.dirichlet(np.ones(L - 1), size=(T, N)) * (1.0 - p_true)[..., None]
        weights[j[None, None, :] != true_slot[..., None]] = rest.reshape(-1)
    np.put_along_axis(weights, true_slot[..., None], p_true[..., None], axis=-1)
    weights /= weights.sum(axis=-1, keepdims=True)
    return means, weights, sigma


def generate_scenario(spec: ScenarioSpec) -> Iterator[StepRecord]:
    """Deterministic stream of step records for ``spec``.

    Steps are generated in chunks; the stream depends only on ``spec``.
    """
    rng = np.random.default_rng(spec.rng_seed)
    L, K = spec.n_modes, spec.horizon
    for c0 in range(0, spec.total_steps, CHUNK):
        steps = range(c0, min(c0 + CHUNK, spec.total_steps))
        regimes = [spec.regime_at(t) for t in steps]
        quality = np.array([r.expert_quality for r in regimes])
        future = _rollouts(rng, [r.truth_process for r in regimes], K)
        means, weights, sigma = _expert_gmms(rng, spec, future, quality)
        prec = 1.0 / (sigma * sigma)
        if spec.output == "samples":
            M = spec.n_samples
            u = rng.random((len(steps), spec.n_experts, M, 1))
            modes = (u > np.cumsum(weights, axis=-1)[:, :, None, :]).sum(axis=-1)
            modes = np.minimum(modes, L - 1)
            picked = np.take_along_axis(means, modes[..., None, None], axis=2)
            samples = picked + rng.standard_normal(picked.shape) * sigma[:, :, None]
            samples[..., 2] = wrap_angle(samples[..., 2])
        for s, t in enumerate(steps):
            experts = []
            for i in range(spec.n_experts):
                if spec.output == "samples":
                    experts.append(SampleSet(samples[s, i]))
                else:
                    h = None if i in spec.no_covariance else np.broadcast_to(prec[s, i], (L, K, 3))
                    experts.append(ExpertPrediction._trusted(weights[s, i], means[s, i], h, i))
            yield StepRecord(t, future[s, 0].copy(), future[s], tuple(experts))


# -- trace files ---------------------------------------------------------------

def record_to_json(rec: StepRecord) -> str:
    experts = []
    for e in rec.experts:
        if isinstance(e, SampleSet):
            experts.append({"samples": e.samples.tolist()})
        else:
            modes = []
            for j in range(e.n_modes):
                m = {"p": float(e.weights[j]), "mean": e.means[j].tolist()}
                if e.precisions is not None:
                    m["prec"] = e.precisions[j].tolist()
                modes.append(m)
            experts.append({"gmm": {"modes": modes}})
    doc = {"t": int(rec.t), "truth": rec.truth.tolist(), "future": rec.future.tolist(), "experts": experts}
    return json.dumps(doc, separators=(",", ":"))


def write_trace(records: Iterable[StepRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_json(rec))
            fh.write("\n")
            n += 1
    return n


def _field_array(doc, key, shape_tail, lineno):
    if key not in doc:
        raise TraceError(f"line {lineno}: missing field '{key}'", line=lineno)
    try:
        arr = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise TraceError(f"line {lineno}: field '{key}' is not numeric ({exc})", line=lineno) from None
    if arr.shape[len(arr.shape) - len(shape_tail):] != shape_tail or not np.all(np.isfinite(arr)):
        raise TraceError(f"line {lineno}: field '{key}' has bad shape {arr.shape} or non-finite values",
                         line=lineno)
    return arr


def _parse_expert(obj, lineno: int, i: int):
    where = f"experts[{i}]"
    if not isinstance(obj, dict):
        raise TraceError(f"line {lineno}: field '{where}' must be an object", line=lineno)
    try:
        if "samples" in obj:
            return SampleSet(_field_array(obj, "samples", (3,), lineno))
        if "gmm" in obj:
            modes = obj["gmm"]["modes"]
            weights = [float(m["p"]) for m in modes]
            means = np.asarray([m["mean"] for m in modes], dtype=float)
            has_prec = ["prec" in m for m in modes]
            if any(has_prec) and not all(has_prec):
                raise ValueError("either every mode carries 'prec' or none does")
            prec = np.asarray([m["prec"] for m in modes], dtype=float) if all(has_prec) else None
            return ExpertPrediction(weights, means, prec, expert_id=i)
    except TraceError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"line {lineno}: field '{where}' is invalid: {exc}", line=lineno) from None
    raise TraceError(f"line {lineno}: field '{where}' needs 'gmm' or 'samples'", line=lineno)


def replay_trace(path) -> Iterator[StepRecord]:
    """Yield step records from a line-delimited JSON trace, validating as it goes."""
    horizon = n_experts = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {lineno}: malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(doc, dict):
                raise TraceError(f"line {lineno}: record must be an object", line=lineno)
            if not isinstance(doc.get("t"), int):
                raise TraceError(f"line {lineno}: field 't' must be an integer", line=lineno)
            t = doc["t"]
            truth = _field_array(doc, "truth", (3,), lineno)
            future = _field_array(doc, "future", (3,), lineno)
            if truth.shape != (3,) or future.ndim != 2:
                raise TraceError(f"line {lineno}: fields 'truth'/'future' have wrong rank", line=lineno)
            raw = doc.get("experts")
            if not isinstance(raw, list) or not raw:
                raise TraceError(f"line {lineno}: field 'experts' must be a non-empty array", line=lineno)
            experts = tuple(_parse_expert(e, lineno, i) for i, e in enumerate(raw))
            horizons = {future.shape[0]} | {e.horizon for e in experts}
            if len(horizons) != 1:
                raise TraceError(f"line {lineno}: step {t} mixes horizons {sorted(horizons)}",
                                 line=lineno, step=t)
            k = horizons.pop()
            if horizon is None:
                horizon, n_experts = k, len(experts)
            elif k != horizon:
                raise TraceError(f"line {lineno}: step {t} has horizon {k}, expected {horizon}",
                                 line=lineno, step=t)
            elif len(experts) != n_experts:
                raise TraceError(f"line {lineno}: step {t} has {len(experts)} experts, expected {n_experts}",
                                 line=lineno, step=t)
            yield StepRecord(t, truth, future, experts)


# -- experiment loop -----------------------------------------------------------

@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "squint"
    discount: float = 1.0
    prior: tuple[float, ...] | None = None
    update_order: str = "post"
    learning: bool = True
    fixed_alpha: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (learners.SQUINT, learners.EG):
            raise ValueError(f"learner must be 'squint' or 'eg', got {self.kind!r}")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "probability"
    beta: float = 10.0
    tau: float = 0.1
    k: int = 10
    include_heading: bool = False

    def __post_init__(self):
        if self.kind not in ("probability", "soft_min_frde", "sample_mse", "sample_topk"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"topk must be a positive integer, got {self.k}")


@dataclass(frozen=True)
class MetricConfig:
    k: int = 10
    window: int = 500
    nll_mask: tuple[int, ...] = ()
    moe_samples: int = 20

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window must be a positive integer, got {self.window}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "nll_mask", tuple(self.nll_mask))


@dataclass(eq=False)
class ExperimentResult:
    alpha: np.ndarray            # (T + 1, N): weights played at each step, then the final one
    raw_gradient: np.ndarray     # (T, N)
    clipped_gradient: np.ndarray  # (T, N)
    loss: np.ndarray             # (T,) loss value at the played alpha
    regret: np.ndarray           # (T, N) cumulative regret on raw linear losses
    metrics: dict[str, MetricSeries]
    floored: dict[str, int]
    hindsight_best: list[tuple[int, int, int]]
    config: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.raw_gradient.shape[0]

    @property
    def n_experts(self) -> int:
        return self.alpha.shape[1]

    def clipped_regret(self) -> np.ndarray:
        """Cumulative regret on the clipped losses, ``(T, N)``."""
        a = self.alpha[:-1]
        mix = np.einsum("tn,tn->t", a, self.clipped_gradient)
        return np.cumsum(mix[:, None] - self.clipped_gradient, axis=0)

    def write(self, outdir) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        n = self.n_experts
        _write_csv(out / "alpha.csv", ["step"] + [f"alpha_{i}" for i in range(n)], self.alpha)
        _write_csv(out / "regret.csv", ["step"] + [f"regret_{i}" for i in range(n)], self.regret)
        losses = np.column_stack([self.loss, self.raw_gradient, self.clipped_gradient])
        _write_csv(out / "losses.csv",
                   ["step", "loss"] + [f"grad_{i}" for i in range(n)] + [f"clipped_{i}" for i in range(n)],
                   losses)
        for label, series in self.metrics.items():
            (out / f"{label}.csv").write_text(series.to_csv(), encoding="utf-8")
        (out / "metrics.json").write_text(
            "[" + ",".join(s.to_json() for s in self.metrics.values()) + "]", encoding="utf-8")
        with open(out / "hindsight_best.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_start", "window_end", "best_expert"])
            w.writerows(self.hindsight_best)
        doc = dict(self.config)
        doc["floored_nll_steps"] = self.floored
        (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        return out


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t, row in enumerate(np.atleast_2d(rows) if np.ndim(rows) > 1 else np.asarray(rows)[:, None]):
        w.writerow([t] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _topk_min(vals, weights, k):
    """``min(vals)`` over the top-k weighted entries (zero weights excluded)."""
    if k >= weights.size and weights.min() > 0:
        return float(vals.min())
    return float(vals[select_topk(weights, min(k, weights.size))].min())


class _StepEvaluator:
    """Per-step metric and loss computation shared by every subject.

    MoE components are exactly the union of the experts' modes, so densities
    and displacements are computed once per step and re-weighted per subject.
    """

    def __init__(self, loss: LossConfig, metric: MetricConfig):
        self.loss = loss
        self.metric = metric

    def gmm_step(self, rec: StepRecord, alpha: np.ndarray):
        experts = rec.experts
        n = len(experts)
        counts = [e.n_modes for e in experts]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        src = np.repeat(np.arange(n), counts)
        p = np.concatenate([e.weights for e in experts])
        means = np.concatenate([e.means for e in experts])
        ade, fde = displacement_errors(means, rec.future)
        has_cov = np.array([e.precisions is not None for e in experts])
        if has_cov.all():
            prec = np.concatenate([e.precisions for e in experts])
            dens = np.exp(gaussian_log_pdf_first_step(means, prec, rec.truth))
        else:
            dens = np.zeros(p.size)
            for i, e in enumerate(experts):
                if has_cov[i]:
                    dens[offsets[i]:offsets[i + 1]] = np.exp(
                        gaussian_log_pdf_first_step(e.means, e.precisions, rec.truth))
        expert_density = np.add.reduceat(p * dens, offsets[:-1])
        expert_density[~has_cov] = np.nan
        w = alpha[src] * p
        k = self.metric.k

        ade_row = [_topk_min(ade, w, k)]
        fde_row = [_topk_min(fde, w, k)]
        for i in range(n):
            lo, hi = offsets[i], offsets[i + 1]
            ade_row.append(_topk_min(ade[lo:hi], p[lo:hi], k))
            fde_row.append(_topk_min(fde[lo:hi], p[lo:hi], k))

        nll_ok = has_cov.copy()
        nll_ok[list(self.metric.nll_mask)] = False
        dens_rows = [math.nan] + [float(d) if ok else math.nan for d, ok in zip(expert_density, nll_ok)]
        if nll_ok.all():
            dens_rows[0] = float(np.dot(alpha, expert_density))
        elif nll_ok.any() and alpha[nll_ok].sum() > 0:
            # mixture restricted to the experts that carry covariance
            a_nll = alpha[nll_ok]
            dens_rows[0] = float(np.dot(a_nll, expert_density[nll_ok]) / a_nll.sum())

        lk = self.loss.kind
        if lk == "probability":
            if not has_cov.all():
                raise ValueError(f"step {rec.t}: the probability loss needs every expert to carry covariance")
            grad = -expert_density
            value = float(np.dot(alpha, grad))
        elif lk == "soft_min_frde":
            disp = first_step_displacement(means, rec.truth, self.loss.include_heading)
            value, dw = soft_topk_min(w, disp, min(self.loss.k, w.size), self.loss.beta, self.loss.tau)
            grad = np.bincount(src, weights=dw * p, minlength=n)
        else:
            raise ValueError(f"loss {lk!r} needs sample-emitting experts")
        return value, grad, ade_row, fde_row, dens_rows

    def sample_step(self, rec: StepRecord, alpha: np.ndarray, seed):
        experts = rec.experts
        k = self.metric.k
        moe = importance_sample_moe(experts, alpha, self.metric.moe_samples, rng_seed=seed)
        subjects = [moe] + list(experts)
        ade_row, fde_row = [], []
        for s in subjects:
            ade, fde = displacement_errors(s.samples, rec.future)
            # samples carry equal weight: the first k draws form the top-k set
            kk = min(k, ade.size)
            ade_row.append(ade[:kk].min())
            fde_row.append(fde[:kk].min())
        if self.loss.kind == "sample_mse":
            grad = np.array([sample_loss_mse(s, rec.truth) for s in experts])
        elif self.loss.kind == "sample_topk":
            grad = np.array([sample_loss_topk(s, rec.truth, min(self.loss.k, s.n_samples)) for s in experts])
        else:
            raise ValueError(f"loss {self.loss.kind!r} needs GMM-emitting experts")
        dens_rows = [np.nan] * (len(experts) + 1)
        return float(np.dot(alpha, grad)), grad, ade_row, fde_row, dens_rows


def run_experiment(stream: Iterable[StepRecord], learner: LearnerConfig = LearnerConfig(),
                   loss: LossConfig = LossConfig(), metric: MetricConfig = MetricConfig(),
                   seed: int = 0, config_echo: dict | None = None) -> ExperimentResult:
    """Play the learner against a stream and record losses, weights and metrics.

    At every step the current weights form the mixture, metrics are recorded
    for the mixture and for each expert alone, the configured loss and its
    gradient are computed at the played weights and the learner advances.
    """
    evaluator = _StepEvaluator(loss, metric)
    state = None
    alphas, raws, clips, values = [], [], [], []
    ade_rows, fde_rows, dens_rows = [], [], []
    counter_t = 0
    for rec in stream:
        n = len(rec.experts)
        if state is None:
            state = init_state(n, kind=learner.kind, discount=learner.discount, prior=learner.prior,
                               update_order=learner.update_order)
            if learner.fixed_alpha is not None:
                fixed = np.asarray(learner.fixed_alpha, dtype=float)
                if fixed.shape != (n,):
                    raise ValueError(f"fixed_alpha has {fixed.size} entries for {n} experts")
                state = replace(state, alpha=fixed)
            alphas.append(state.alpha.copy())
        elif n != state.n_experts:
            raise ValueError(f"step {rec.t}: expected {state.n_experts} experts, got {n}")
        alpha = state.alpha
        try:
            if rec.kind == "gmm":
                value, grad, a_row, f_row, d_row = evaluator.gmm_step(rec, alpha)
            else:
                value, grad, a_row, f_row, d_row = evaluator.sample_step(rec, alpha, (seed, counter_t))
        except ValueError as exc:
            raise ValueError(f"step {rec.t}: {exc}") from exc
        g, _ = clip_gradient(grad, state)
        if learner.learning and learner.fixed_alpha is None:
            state = learners.step(state, grad)
        else:
            state = replace(state, G=max(state.G, float(np.max(np.abs(grad)))), t=state.t + 1)
        if not np.all(np.isfinite(state.alpha)):
            raise FloatingPointError(f"non-finite learner state at step {rec.t}")
        alphas.append(state.alpha.copy())
        raws.append(grad)
        clips.append(g)
        values.append(value)
        ade_rows.append(a_row)
        fde_rows.append(f_row)
        dens_rows.append(d_row)
        counter_t += 1

    if state is None:
        raise ValueError("empty stream")
    alpha_arr = np.asarray(alphas)
    raw_arr = np.asarray(raws)
    subjects = ["moe"] + [f"expert{i}" for i in range(raw_arr.shape[1])]
    metrics = {}
    floored = {}
    dens_arr = np.asarray(dens_rows, dtype=float)
    for j, subj in enumerate(subjects):
        for name, rows in (("minADE", ade_rows), ("minFDE", fde_rows)):
            s = MetricSeries(name, np.asarray(rows)[:, j], metric.window, k=metric.k, subject=subj)
            metrics[s.label] = s
        col = dens_arr[:, j]
        if np.all(np.isnan(col)):
            continue
        counter = FloorCounter()
        vals = np.array([nll_from_density(d, counter) if not math.isnan(d) else math.nan for d in col])
        s = MetricSeries("NLL", vals, metric.window, subject=subj)
        metrics[s.label] = s
        floored[subj] = counter.count
    mix = np.einsum("tn,tn->t", alpha_arr[:-1], raw_arr)
    regret = np.cumsum(mix[:, None] - raw_arr, axis=0)
    best = []
    for start in range(0, raw_arr.shape[0], metric.window):
        end = min(start + metric.window, raw_arr.shape[0])
        best.append((start, end, int(np.argmin(raw_arr[start:end].sum(axis=0)))))
    config = {
        "learner": asdict(learner),
        "loss": asdict(loss),
        "metric": asdict(metric),
        "seed": seed,
    }
    if config_echo:
        config.update(config_echo)
    return ExperimentResult(alpha_arr, raw_arr, np.asarray(clips), np.asarray(values), regret,
                            metrics, floored, best, config)
