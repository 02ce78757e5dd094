"""Online aggregation of probabilistic trajectory predictors.

Each expert emits a Gaussian mixture over future agent states.  A learner
keeps a probability vector over the experts and the weighted union of their
mixtures is the mixture-of-experts prediction.
"""
from .gmm import (
    AgentState,
    ExpertPrediction,
    GaussianMode,
    MoeDistribution,
    WeightVector,
    build_moe,
    moe_pdf,
)
from .learners import LearnerState, clip_gradient, init_state, squint_step, eg_step, step
from .losses import (
    LossEvaluation,
    SmoothingConfig,
    hard_min_frde,
    probability_loss,
    soft_min_frde,
    sliding_window_average,
)
from .metrics import GroundTruthFuture, MetricSeries, min_ade_k, min_fde_k, nll
from .potential import squint_log_potential, squint_potential
from .sampling import SampleSet, aggregate_sample_loss, importance_sample_moe
from .simulation import (
    ExperimentResult,
    LearnerConfig,
    LossConfig,
    MetricConfig,
    RegimeSpec,
    ScenarioSpec,
    StepRecord,
    TraceError,
    generate_scenario,
    replay_trace,
    run_experiment,
    write_trace,
)

__version__ = "0.1.0"
