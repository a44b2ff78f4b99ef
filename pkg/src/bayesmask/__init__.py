"""Score-based sparse black-box adversarial attack via Bayesian mask search."""

from .attack import (AttackConfig, AttackResult, LearningMode, SchedulerKind,
                     generate, initialize, run_attack, run_baseline_uniform,
                     schedule, update_step)
from .bayes import BeliefState, SamplerSeed, sample_keep, sample_new
from .core import (Image, LossMode, LossSpec, PixelMask, ScoreVector,
                   apply_mask, goal_met, loss, predicted_label, sparsity)
from .errors import (BayesmaskError, BudgetExhaustedError, ConfigError,
                     DimensionError, DomainError, ProtocolError, TransportError)
from .harness import (EvalPair, EvalReport, build_eval_set, evaluate,
                      export_results)
from .oracle import (LinearSoftmaxOracle, QueryBudget, QueryCounter,
                     RemoteOracle, ScoreOracle, wrap_rnd)
from .synth import (DissimilarityMap, SynthKind, SynthScheme,
                    dissimilarity_map, generate_synthetic)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "LearningMode", "SchedulerKind",
    "generate", "initialize", "run_attack", "run_baseline_uniform",
    "schedule", "update_step",
    "BeliefState", "SamplerSeed", "sample_keep", "sample_new",
    "Image", "LossMode", "LossSpec", "PixelMask", "ScoreVector",
    "apply_mask", "goal_met", "loss", "predicted_label", "sparsity",
    "BayesmaskError", "BudgetExhaustedError", "ConfigError",
    "DimensionError", "DomainError", "ProtocolError", "TransportError",
    "EvalPair", "EvalReport", "build_eval_set", "evaluate", "export_results",
    "LinearSoftmaxOracle", "QueryBudget", "QueryCounter", "RemoteOracle",
    "ScoreOracle", "wrap_rnd",
    "DissimilarityMap", "SynthKind", "SynthScheme", "dissimilarity_map",
    "generate_synthetic",
    "__version__",
]
