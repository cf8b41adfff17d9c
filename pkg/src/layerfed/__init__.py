"""Desk-scale simulator for layer-wise federated learning.

Modules cover the full pipeline: layered models (`models`), synthetic
federated data (`datasets`), round orchestration (`federation`),
small-model collaboration (`collaboration`), upload anomaly screening
(`anomaly`), additively homomorphic parameter transport (`crypto`),
cloud-edge task placement (`placement`), and experiment orchestration
(`config`, `experiments`, `cli`).  All entry points are deterministic
under their seeds.
"""

from .anomaly import (
    AnomalyReport,
    AttackSpec,
    UploadBatch,
    detection_margin,
    flag_suspicious,
    inject_param_attack,
    layer_divergence_trace,
    loo_benchmark,
    run_detection,
    variance_distances,
)
from .collaboration import (
    ModelProfile,
    ResilienceParams,
    adaptability,
    compatibility,
    knowledge_share,
    learning_enhancement,
    negotiate_decision,
    resilience,
)
from .config import ExperimentConfig, load_config, parse_config, save_config, serialize_config
from .crypto import FixedPointCodec, KeyPair, hom_aggregate, keygen, sec_trans, security_metric
from .datasets import FederatedDataset, generate, load_dataset, poison_partition, save_dataset
from .errors import (
    ConfigError,
    EncodingError,
    InputError,
    LayerfedError,
    NumericError,
    ProtocolError,
    StructureError,
)
from .federation import (
    FederationConfig,
    RoundMetrics,
    check_convergence,
    federated_average,
    run_round,
    run_training,
)
from .models import (
    LayerSpec,
    LayeredModel,
    ParamView,
    extract_params,
    forward,
    init_layered_model,
    load_checkpoint,
    loss_and_gradient,
    save_checkpoint,
    sgd_step,
)
from .placement import PlacementPlan, PlacementProblem, Task, evaluate_plan, solve_exact, solve_greedy

__version__ = "0.1.0"

__all__ = [
    "AnomalyReport",
    "AttackSpec",
    "ConfigError",
    "EncodingError",
    "ExperimentConfig",
    "FederatedDataset",
    "FederationConfig",
    "FixedPointCodec",
    "InputError",
    "KeyPair",
    "LayerSpec",
    "LayeredModel",
    "LayerfedError",
    "ModelProfile",
    "NumericError",
    "ParamView",
    "PlacementPlan",
    "PlacementProblem",
    "ProtocolError",
    "ResilienceParams",
    "RoundMetrics",
    "StructureError",
    "Task",
    "UploadBatch",
    "adaptability",
    "check_convergence",
    "compatibility",
    "detection_margin",
    "evaluate_plan",
    "extract_params",
    "federated_average",
    "flag_suspicious",
    "forward",
    "generate",
    "hom_aggregate",
    "init_layered_model",
    "inject_param_attack",
    "keygen",
    "knowledge_share",
    "layer_divergence_trace",
    "learning_enhancement",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "loo_benchmark",
    "loss_and_gradient",
    "negotiate_decision",
    "parse_config",
    "poison_partition",
    "resilience",
    "run_detection",
    "run_round",
    "run_training",
    "save_checkpoint",
    "save_config",
    "save_dataset",
    "sec_trans",
    "security_metric",
    "serialize_config",
    "sgd_step",
    "solve_exact",
    "solve_greedy",
    "variance_distances",
    "__version__",
]
