"""Experiment configuration: JSON in, validated dataclasses out.

Every experiment is fully determined by its config plus the code version;
``parse_config(serialize_config(cfg))`` round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .anomaly import ATTACK_KINDS, FLAG_MODES, AttackSpec
from .errors import ConfigError
from .federation import FederationConfig
from .models import ACTIVATIONS, VISIBILITIES, LayerSpec, validate_specs


@dataclass
class DatasetConfig:
    num_clients: int = 10
    num_classes: int = 4
    samples_per_client: int = 500
    dirichlet_alpha: float = 0.3
    detection_size: int = 50
    feature_dim: int = 16
    test_size: int = 1000
    num_edge_nodes: int = 1
    cluster_std: float = 1.0
    cluster_spread: float = 3.0


@dataclass
class LayerConfig:
    name: str
    output_dim: int
    activation: str
    visibility: str


@dataclass
class CollaborationConfig:
    alpha_exp: float = 0.5
    beta_expertise: float = 0.5
    beta_resilience: float = 0.5
    ensemble_sizes: list[int] = field(default_factory=lambda: [1, 2, 3, 4])


@dataclass
class AttackConfig:
    kind: str = "param_noise"
    delta_scale: float = 5.0
    targets: list[int] = field(default_factory=list)
    flip_fraction: float = 1.0

    def to_spec(self) -> AttackSpec:
        return AttackSpec(self.kind, self.delta_scale, frozenset(self.targets), self.flip_fraction)


@dataclass
class AnomalyConfig:
    theta: float = 2.0
    beta_poison: float = 0.2
    mode: str = "loo"
    z_threshold: float = 2.0
    attack: AttackConfig = field(default_factory=AttackConfig)


@dataclass
class EncryptionConfig:
    enabled: bool = False
    key_bits: int = 512
    scale_bits: int = 16
    clamp_range: float = 8.0
    gamma: float = 0.5


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    collaboration: CollaborationConfig = field(default_factory=CollaborationConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    encryption: EncryptionConfig = field(default_factory=EncryptionConfig)
    layers: list[LayerConfig] = field(default_factory=list)
    placement_path: str | None = None
    out_dir: str = "runs"

    def layer_specs(self) -> list[LayerSpec]:
        """Resolve configured layers against the dataset dimensions."""
        if not self.layers:
            from .models import default_layer_specs

            return default_layer_specs(self.dataset.feature_dim, self.dataset.num_classes)
        specs = []
        prev = self.dataset.feature_dim
        for lc in self.layers:
            specs.append(LayerSpec(lc.name, prev, lc.output_dim, lc.activation, lc.visibility))
            prev = lc.output_dim
        validate_specs(specs)
        return specs


def _build(cls, data, path: str):
    """Recursively build a dataclass from a dict, naming the offending field on error."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        sub_path = f"{path + '.' if path else ''}{name}"
        target = f.type if isinstance(f.type, type) else None
        if name == "dataset":
            kwargs[name] = _build(DatasetConfig, value, sub_path)
        elif name == "federation":
            kwargs[name] = _build(FederationConfig, value, sub_path)
        elif name == "collaboration":
            kwargs[name] = _build(CollaborationConfig, value, sub_path)
        elif name == "anomaly":
            kwargs[name] = _build(AnomalyConfig, value, sub_path)
        elif name == "attack":
            kwargs[name] = _build(AttackConfig, value, sub_path)
        elif name == "encryption":
            kwargs[name] = _build(EncryptionConfig, value, sub_path)
        elif name == "layers":
            if not isinstance(value, list):
                raise ConfigError(f"{sub_path}: expected a list")
            kwargs[name] = [_build(LayerConfig, item, f"{sub_path}[{i}]") for i, item in enumerate(value)]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    ds, an, enc, coll = cfg.dataset, cfg.anomaly, cfg.encryption, cfg.collaboration
    checks = [
        ("dataset.num_clients", ds.num_clients >= 2, "must be >= 2"),
        ("dataset.num_classes", ds.num_classes >= 2, "must be >= 2"),
        (
            "dataset.samples_per_client",
            ds.samples_per_client >= 10 * ds.num_classes,
            f"must be >= 10 * num_classes = {10 * ds.num_classes}",
        ),
        ("dataset.dirichlet_alpha", ds.dirichlet_alpha > 0, "must be positive"),
        ("anomaly.theta", an.theta > 0, "must be positive"),
        ("anomaly.beta_poison", an.beta_poison > 0, "must be positive"),
        ("anomaly.mode", an.mode in FLAG_MODES, f"must be one of {FLAG_MODES}"),
        ("anomaly.attack.kind", an.attack.kind in ATTACK_KINDS, f"must be one of {ATTACK_KINDS}"),
        ("encryption.key_bits", enc.key_bits >= 512, "must be >= 512"),
        ("encryption.scale_bits", enc.scale_bits >= 1, "must be >= 1"),
        ("encryption.gamma", 0.0 <= enc.gamma <= 1.0, "must be in [0, 1]"),
        (
            "collaboration.alpha_exp",
            abs(coll.alpha_exp + coll.beta_expertise - 1.0) <= 1e-12,
            "alpha_exp + beta_expertise must equal 1",
        ),
        (
            "collaboration.ensemble_sizes",
            all(1 <= k <= ds.num_clients for k in coll.ensemble_sizes),
            "every ensemble size must be in [1, num_clients]",
        ),
    ]
    if an.attack.kind in ("param_noise", "param_scale"):
        checks.append(("anomaly.attack.delta_scale", an.attack.delta_scale > 0, "must be positive for parameter attacks"))
    for name, ok, message in checks:
        if not ok:
            raise ConfigError(f"{name}: {message}")
    for lc in cfg.layers:
        if lc.activation not in ACTIVATIONS:
            raise ConfigError(f"layers.{lc.name}.activation: must be one of {ACTIVATIONS}")
        if lc.visibility not in VISIBILITIES:
            raise ConfigError(f"layers.{lc.name}.visibility: must be one of {VISIBILITIES}")
    cfg.layer_specs()  # raises ConfigError on a broken chain
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return _validate(_build(ExperimentConfig, data, ""))


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))
