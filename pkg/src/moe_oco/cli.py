"""Command line: ``moe-oco run|compare|validate-trace``.

A run is described by one JSON document with the sections ``scenario`` (or
``trace``), ``learner``, ``loss`` and ``metric`` plus ``seed``.  Presets fill
in every section; a ``--config`` file is merged over the preset and explicit
flags win over both.  The resolved document is echoed to ``config.json`` so
that ``run --config out/config.json`` repeats the run bit for bit.

Exit codes: 0 success, 1 invalid configuration, 2 trace I/O or format
error, 3 numerical failure in the learner.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .presets import PRESET_NAMES, get_preset
from .simulation import (
    LearnerConfig,
    LossConfig,
    MetricConfig,
    ScenarioSpec,
    TraceError,
    generate_scenario,
    replay_trace,
    run_experiment,
)
from .sampling import SampleSet

log = logging.getLogger("moe_oco")

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_NUMERIC = 0, 1, 2, 3
THRESHOLD = 0.9
_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
_IGNORED_KEYS = {"floored_nll_steps", "preset"}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"invalid {field}: {message}")
        self.field = field


def _setup_logging() -> None:
    name = os.environ.get("MOE_OCO_LOG", "error").lower()
    if name not in _LOG_LEVELS:
        raise ConfigError("MOE_OCO_LOG", f"expected one of {sorted(_LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=_LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _build(cls, doc, field):
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(field, str(exc)) from None
    except ValueError as exc:
        raise ConfigError(field, str(exc)) from None


def _section(base, doc, key, cls):
    merged = asdict(base)
    extra = doc.get(key, {})
    if not isinstance(extra, dict):
        raise ConfigError(key, "must be a JSON object")
    merged.update(extra)
    for name in ("prior", "fixed_alpha", "nll_mask"):
        if isinstance(merged.get(name), list):
            merged[name] = tuple(merged[name])
    return _build(cls, merged, key)


def _flag_field(field, fn):
    try:
        return fn()
    except ValueError as exc:
        raise ConfigError(field, str(exc)) from None


def resolve_config(args) -> dict:
    """Merge preset, config file and flags into validated config objects."""
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{args.config} is not valid JSON ({exc.msg})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config", "top level must be a JSON object")
        unknown = set(doc) - {"scenario", "trace", "learner", "loss", "metric", "seed"} - _IGNORED_KEYS
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")

    preset_name = args.preset or doc.get("preset") or args.default_preset
    try:
        preset = get_preset(preset_name)
    except KeyError:
        raise ConfigError("preset", f"unknown preset {preset_name!r}; choose from {', '.join(PRESET_NAMES)}") \
            from None

    seed = args.seed if args.seed is not None else doc.get("seed")
    if "scenario" in doc:
        if not isinstance(doc["scenario"], dict):
            raise ConfigError("scenario", "must be a JSON object")
        try:
            scenario = ScenarioSpec.from_dict(doc["scenario"])
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError("scenario", str(exc)) from None
    else:
        scenario = preset.scenario
    if seed is None:
        seed = scenario.rng_seed
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"must be a nonnegative integer, got {seed!r}")
    scenario = replace(scenario, rng_seed=seed)
    trace = args.trace if args.trace is not None else doc.get("trace")

    learner = _section(preset.learner, doc, "learner", LearnerConfig)
    loss = _section(preset.loss, doc, "loss", LossConfig)
    metric = _section(preset.metric, doc, "metric", MetricConfig)
    if args.learner is not None:
        learner = _flag_field("learner", lambda: replace(learner, kind=args.learner))
    if args.discount is not None:
        learner = _flag_field("discount", lambda: replace(learner, discount=args.discount))
    if args.loss is not None:
        loss = _flag_field("loss", lambda: replace(loss, kind=args.loss))
    if args.beta is not None:
        loss = _flag_field("beta", lambda: replace(loss, beta=args.beta))
    if args.tau is not None:
        loss = _flag_field("tau", lambda: replace(loss, tau=args.tau))
    if args.topk is not None:
        loss = _flag_field("topk", lambda: replace(loss, k=args.topk))
        metric = _flag_field("topk", lambda: replace(metric, k=args.topk))
    if args.window is not None:
        metric = _flag_field("window", lambda: replace(metric, window=args.window))

    if trace is None:
        wants_samples = loss.kind.startswith("sample_")
        if wants_samples != (scenario.output == "samples"):
            raise ConfigError("loss", f"loss {loss.kind!r} does not fit a scenario emitting {scenario.output!r}")
    return {"preset": preset_name, "scenario": scenario, "trace": trace, "learner": learner,
            "loss": loss, "metric": metric, "seed": seed}


def _stream(cfg):
    if cfg["trace"] is not None:
        return replay_trace(cfg["trace"])
    return generate_scenario(cfg["scenario"])


def _echo(cfg) -> dict:
    echo = {"preset": cfg["preset"]}
    if cfg["trace"] is not None:
        echo["trace"] = str(cfg["trace"])
    else:
        echo["scenario"] = cfg["scenario"].to_dict()
    return echo


def _run_one(cfg, learner=None):
    return run_experiment(_stream(cfg), learner or cfg["learner"], cfg["loss"], cfg["metric"],
                          seed=cfg["seed"], config_echo=_echo(cfg))


def steps_to_threshold(alpha: np.ndarray, expert: int, threshold: float = THRESHOLD) -> int | None:
    """Number of updates until ``alpha[expert]`` first reaches ``threshold``."""
    hit = np.flatnonzero(alpha[:, expert] >= threshold)
    return int(hit[0]) if hit.size else None


def cmd_run(cfg, out) -> int:
    result = _run_one(cfg)
    path = result.write(out)
    print(f"wrote {path} ({result.n_steps} steps, {result.n_experts} experts, "
          f"final alpha {np.array2string(result.alpha[-1], precision=4)})")
    return EXIT_OK


def _count_experts(cfg) -> int:
    if cfg["trace"] is None:
        return cfg["scenario"].n_experts
    for rec in replay_trace(cfg["trace"]):
        return len(rec.experts)
    raise TraceError(f"{cfg['trace']}: trace is empty")


def cmd_compare(cfg, out) -> int:
    n = _count_experts(cfg)
    if n < 2:
        raise ConfigError("n_experts", "compare needs at least 2 experts (EG uses ln N > 0)")
    runs = {kind: _run_one(cfg, replace(cfg["learner"], kind=kind)) for kind in ("squint", "eg")}
    best = int(np.argmin(runs["squint"].raw_gradient.sum(axis=0)))
    report = {"best_expert": best, "threshold": THRESHOLD, "steps": runs["squint"].n_steps}
    for kind, res in runs.items():
        report[f"{kind}_steps_to_threshold"] = steps_to_threshold(res.alpha, best)
    s, e = report["squint_steps_to_threshold"], report["eg_steps_to_threshold"]
    report["ratio"] = (e / s) if (s and e) else None
    for kind in ("squint", "eg"):
        v = report[f"{kind}_steps_to_threshold"]
        print(f"{kind:>6}: steps to alpha[{best}] >= {THRESHOLD}: {v if v is not None else 'not reached'}")
    print(f" ratio: {report['ratio'] if report['ratio'] is not None else 'undefined'}")
    if out is not None:
        base = Path(out)
        for kind, res in runs.items():
            res.write(base / kind)
        (base / "compare.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    return EXIT_OK


def cmd_validate_trace(path) -> int:
    count = 0
    n = modes = horizon = samples = None
    for rec in replay_trace(path):
        count += 1
        n, horizon = len(rec.experts), rec.future.shape[0]
        for e in rec.experts:
            if isinstance(e, SampleSet):
                samples = e.n_samples if samples is None else max(samples, e.n_samples)
            else:
                modes = e.n_modes if modes is None else max(modes, e.n_modes)
    fmt = lambda v: "-" if v is None else str(v)  # noqa: E731
    print(f"steps={count} N={fmt(n)} L={fmt(modes)} K={fmt(horizon)} M={fmt(samples)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moe-oco", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_preset):
        p.set_defaults(default_preset=default_preset)
        p.add_argument("--preset", choices=PRESET_NAMES, help=f"named configuration (default {default_preset})")
        p.add_argument("--config", help="JSON configuration document; flags override its values")
        p.add_argument("--seed", type=int, help="scenario and sampling seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--learner", help="squint or eg")
        p.add_argument("--loss", help="probability, soft_min_frde, sample_mse or sample_topk")
        p.add_argument("--discount", type=float, help="regret discount lambda in (0, 1]")
        p.add_argument("--beta", type=float, help="softmin inverse temperature")
        p.add_argument("--tau", type=float, help="softsort temperature")
        p.add_argument("--topk", type=int, help="k for the top-k loss and the metrics")
        p.add_argument("--window", type=int, help="metric smoothing window")
        p.add_argument("--trace", help="replay this line-delimited JSON trace instead of simulating")

    common(sub.add_parser("run", help="run one experiment and write result files"), "stationary-convex")
    common(sub.add_parser("compare", help="SQUINT against EG on the same stream"), "squint-vs-eg")
    v = sub.add_parser("validate-trace", help="check a trace file and print its dimensions")
    v.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.command == "validate-trace":
            return cmd_validate_trace(args.path)
        cfg = resolve_config(args)
        log.info("resolved configuration: %s", _echo(cfg))
        if args.command == "run":
            return cmd_run(cfg, args.out or "results")
        return cmd_compare(cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except OSError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
