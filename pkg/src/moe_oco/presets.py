"""Named scenario/learner/loss bundles used by the command line and the demos."""
from __future__ import annotations

from dataclasses import dataclass

from .simulation import LearnerConfig, LossConfig, MetricConfig, RegimeSpec, ScenarioSpec

STATIONARY_QUALITY = (0.1, 1.0, 3.0)
N_MODES = 5
HORIZON = 12

# Four regimes over 20k steps; the best expert changes at every boundary.
NONSTATIONARY_STARTS = (0, 5_000, 9_000, 15_000)
NONSTATIONARY_QUALITY = (
    (0.1, 1.0, 3.0),
    (1.0, 0.1, 3.0),
    (3.0, 1.0, 0.1),
    (1.0, 0.1, 3.0),
)


@dataclass(frozen=True)
class Preset:
    scenario: ScenarioSpec
    learner: LearnerConfig
    loss: LossConfig
    metric: MetricConfig


def stationary_scenario(seed: int = 0, total_steps: int = 5_000, quality=STATIONARY_QUALITY,
                        output: str = "gmm") -> ScenarioSpec:
    return ScenarioSpec(
        n_experts=len(quality), n_modes=N_MODES, horizon=HORIZON, total_steps=total_steps,
        regimes=(RegimeSpec(0, tuple(quality)),), rng_seed=seed, output=output,
    )


def nonstationary_scenario(seed: int = 0, total_steps: int = 20_000) -> ScenarioSpec:
    regimes = tuple(RegimeSpec(s, q) for s, q in zip(NONSTATIONARY_STARTS, NONSTATIONARY_QUALITY))
    return ScenarioSpec(
        n_experts=3, n_modes=N_MODES, horizon=HORIZON, total_steps=total_steps,
        regimes=regimes, rng_seed=seed,
    )


def get_preset(name: str, seed: int = 0) -> Preset:
    metric = MetricConfig(k=10, window=500)
    if name == "stationary-convex":
        return Preset(stationary_scenario(seed), LearnerConfig(), LossConfig("probability"), metric)
    if name == "stationary-nonconvex":
        return Preset(stationary_scenario(seed), LearnerConfig(), LossConfig("soft_min_frde"), metric)
    if name == "nonstationary-convex":
        return Preset(nonstationary_scenario(seed), LearnerConfig(discount=0.9999),
                      LossConfig("probability"), metric)
    if name == "nonstationary-nonconvex":
        return Preset(nonstationary_scenario(seed), LearnerConfig(discount=0.9999),
                      LossConfig("soft_min_frde"), metric)
    if name == "squint-vs-eg":
        return Preset(stationary_scenario(seed), LearnerConfig(), LossConfig("probability"), metric)
    if name == "stationary-samples":
        return Preset(stationary_scenario(seed, output="samples"), LearnerConfig(),
                      LossConfig("sample_mse"), metric)
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


PRESET_NAMES = (
    "stationary-convex",
    "stationary-nonconvex",
    "nonstationary-convex",
    "nonstationary-nonconvex",
    "squint-vs-eg",
    "stationary-samples",
)
