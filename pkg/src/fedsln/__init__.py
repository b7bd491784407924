"""Deterministic federated link prediction for social learning networks.

Clients are classrooms holding interaction graphs. Each builds labeled
pair examples from a temporal snapshot split, trains a small forward
network on six neighborhood features, and cooperates through weighted
parameter averaging with optional personalization (fine-tuning,
model-agnostic meta-learning with Hessian-free correction, or adaptive
layer-wise blending). Every stochastic choice is derived from named
seed streams, so runs are reproducible bit for bit.
"""

from .analysis import (
    FairnessReport,
    ShapleyExplanation,
    fairness_report,
    global_importance,
    make_predictor,
    paired_t_test,
    shapley_values,
    significant,
    t_critical,
)
from .config import (
    ConfigError,
    EdgeListSpec,
    ExperimentConfig,
    ExplainOptions,
    METHOD_NAMES,
    SplitOptions,
    SyntheticSpec,
    build_experiment_config,
    config_to_manifest,
    load_config,
    manifest_to_config,
)
from .experiment import (
    ClientDataset,
    MethodOutcome,
    RunReport,
    StageError,
    build_client_datasets,
    emit_reports,
    run_experiment,
    run_method,
)
from .features import (
    FEATURE_NAMES,
    N_FEATURES,
    PairExample,
    Standardizer,
    build_examples,
    compute_features,
    ks_statistic,
    to_arrays,
)
from .federation import (
    ClientState,
    RoundRecord,
    aggregate,
    make_clients,
    run_fedavg,
)
from .graphs import (
    EdgeListError,
    GraphError,
    SlnGraph,
    SplitSpec,
    TemporalPair,
    generate_synthetic,
    load_edge_list,
    round_half_up,
    sample_pair_universe,
    temporal_split,
    to_edge_list,
    train_test_split,
)
from .neural import (
    MetricsReport,
    ModelParams,
    TrainConfig,
    UndefinedAucError,
    auc,
    evaluate,
    forward,
    gradient,
    init_params,
    load_checkpoint,
    mean_loss,
    params_checksum,
    save_checkpoint,
    train_steps,
)
from .personalization import (
    AlaWeights,
    PersonalizedOutcome,
    ala_init,
    fine_tune,
    learn_ala_weights,
    perfedavg_hf_step,
    run_fedala,
    run_fedavg_ft,
    run_perfedavg_hf,
)
from .rng import derive_rng, derive_seed, seed_sequence

__version__ = "0.1.0"

__all__ = [
    "AlaWeights",
    "ClientDataset",
    "ClientState",
    "ConfigError",
    "EdgeListError",
    "EdgeListSpec",
    "ExperimentConfig",
    "ExplainOptions",
    "FEATURE_NAMES",
    "FairnessReport",
    "GraphError",
    "METHOD_NAMES",
    "MethodOutcome",
    "MetricsReport",
    "ModelParams",
    "N_FEATURES",
    "PairExample",
    "PersonalizedOutcome",
    "RoundRecord",
    "RunReport",
    "ShapleyExplanation",
    "SlnGraph",
    "SplitOptions",
    "SplitSpec",
    "StageError",
    "Standardizer",
    "SyntheticSpec",
    "TemporalPair",
    "TrainConfig",
    "UndefinedAucError",
    "__version__",
    "aggregate",
    "ala_init",
    "auc",
    "build_client_datasets",
    "build_examples",
    "build_experiment_config",
    "compute_features",
    "config_to_manifest",
    "derive_rng",
    "derive_seed",
    "emit_reports",
    "evaluate",
    "fairness_report",
    "fine_tune",
    "forward",
    "generate_synthetic",
    "global_importance",
    "gradient",
    "init_params",
    "ks_statistic",
    "learn_ala_weights",
    "load_checkpoint",
    "load_config",
    "load_edge_list",
    "make_clients",
    "make_predictor",
    "manifest_to_config",
    "mean_loss",
    "paired_t_test",
    "params_checksum",
    "perfedavg_hf_step",
    "round_half_up",
    "run_experiment",
    "run_fedala",
    "run_fedavg",
    "run_fedavg_ft",
    "run_method",
    "run_perfedavg_hf",
    "sample_pair_universe",
    "save_checkpoint",
    "seed_sequence",
    "shapley_values",
    "significant",
    "t_critical",
    "temporal_split",
    "to_arrays",
    "to_edge_list",
    "train_steps",
    "train_test_split",
]
