"""CgNN: graph-attention instrumental-variable estimation of network causal effects.

The graph structure serves as the instrument: stage 1 predicts treatment
from features and structure, stage 2 predicts outcome from features plus
the stage-1 propensities and their peer exposure, and effects come from
counterfactual queries against the trained outcome model. A semi-synthetic
generator with a noiseless counterfactual oracle provides ground truth for
PEHE/MSE evaluation.
"""

from .estimator import (
    EffectReport,
    IvDiagnostics,
    StageOneModel,
    StageTwoModel,
    TrainConfig,
    estimate_effects,
    iv_diagnostics,
    load_stage1,
    load_stage2,
    predict_counterfactual,
    save_stage1,
    save_stage2,
    train_stage1,
    train_stage2,
)
from .experiment import (
    ExperimentConfig,
    load_config,
    run_flip_experiment,
    run_pipeline,
    run_single,
)
from .exposure import (
    NodeDistributions,
    PeerWeights,
    compute_peer_weights,
    exposure,
    feature_to_distribution,
    kl_divergence,
    peer_weight,
)
from .graph import (
    FeatureMatrix,
    Network,
    ObservationalDataset,
    generate_random_network,
    split_nodes,
)
from .metrics import MetricResult, mse, pehe
from .simulate import (
    GroundTruthEffects,
    SimulatedInstance,
    SimulationConfig,
    SimulationParams,
    flip_treatments,
    generate_instance,
    ground_truth_effects,
    load_instance,
    oracle_outcome,
    save_instance,
)

__version__ = "0.1.0"

__all__ = [
    "EffectReport",
    "ExperimentConfig",
    "FeatureMatrix",
    "GroundTruthEffects",
    "IvDiagnostics",
    "MetricResult",
    "Network",
    "NodeDistributions",
    "ObservationalDataset",
    "PeerWeights",
    "SimulatedInstance",
    "SimulationConfig",
    "SimulationParams",
    "StageOneModel",
    "StageTwoModel",
    "TrainConfig",
    "compute_peer_weights",
    "estimate_effects",
    "exposure",
    "feature_to_distribution",
    "flip_treatments",
    "generate_instance",
    "generate_random_network",
    "ground_truth_effects",
    "iv_diagnostics",
    "kl_divergence",
    "load_config",
    "load_instance",
    "load_stage1",
    "load_stage2",
    "mse",
    "oracle_outcome",
    "peer_weight",
    "pehe",
    "predict_counterfactual",
    "run_flip_experiment",
    "run_pipeline",
    "run_single",
    "save_instance",
    "save_stage1",
    "save_stage2",
    "split_nodes",
    "train_stage1",
    "train_stage2",
]
