"""Round orchestration for layer-wise federated training.

Each round: every client overwrites its shared layers from the global
model (private layers are retained), takes a fixed number of full-batch
gradient steps on its own partition, and uploads the shared layers; the
new global model is the exact element-wise mean of the uploads, summed in
ascending client order so results are independent of scheduling.  A
``classical`` mode aggregates all layers instead, for side-by-side runs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datasets import FederatedDataset
from .errors import ConfigError, InputError, StructureError
from .models import (
    ALL,
    COMMON,
    PRIVATE,
    LayerSpec,
    LayeredModel,
    ParamView,
    accuracy,
    apply_param_views,
    default_layer_specs,
    extract_params,
    flat_params,
    init_layered_model,
    loss_and_gradient,
    sgd_step,
)

CONVERGING = "converging"
STALLED = "stalled"
DIVERGING = "diverging"


@dataclass
class FederationConfig:
    num_clients: int = 10
    epochs: int = 100
    lr_min: float = 0.01
    lr_max: float = 0.01
    adapt_min: float = 0.0
    adapt_max: float = 1.0
    comp_min: float = 0.0
    comp_max: float = 1.0
    comp_threshold: float = 0.5
    local_steps_per_round: int = 5
    aggregate_all_layers: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.local_steps_per_round < 0:
            raise ConfigError("local_steps_per_round must be nonnegative")
        for lo, hi, name in (
            (self.lr_min, self.lr_max, "lr"),
            (self.adapt_min, self.adapt_max, "adapt"),
            (self.comp_min, self.comp_max, "comp"),
        ):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigError(f"{name} bounds must be finite")
            if lo > hi:
                raise ConfigError(f"{name}_min {lo} exceeds {name}_max {hi}")
        if self.lr_min <= 0:
            raise ConfigError(f"lr_min must be positive, got {self.lr_min}")


@dataclass
class RoundMetrics:
    round: int
    per_client_loss: np.ndarray
    global_test_accuracy: float
    lyapunov_value: float
    aggregate_update_norm: float

    def __post_init__(self) -> None:
        total = float(np.sum(self.per_client_loss))
        if abs(total - self.lyapunov_value) > 1e-9:
            raise InputError("lyapunov_value must equal the summed per-client losses")


@dataclass
class RoundResult:
    global_model: LayeredModel
    client_models: list[LayeredModel]
    metrics: RoundMetrics
    uploaded_models: list[LayeredModel] = field(repr=False, default_factory=list)


@dataclass
class RoundUploads:
    """Post-training parameter snapshots for one round, per client.

    ``update_shared`` is the uploaded shared representation minus the global
    sync point of the round: common layers in layered mode, all layers in
    classical mode.
    """

    common: list[np.ndarray]
    private: list[np.ndarray]
    full: list[np.ndarray]
    update_shared: list[np.ndarray]


@dataclass
class FederationResult:
    metrics: list[RoundMetrics]
    global_model: LayeredModel
    client_models: list[LayeredModel]
    learning_rates: np.ndarray
    adapt_coeffs: np.ndarray
    comp_coeffs: np.ndarray
    trace: list[RoundUploads] = field(default_factory=list, repr=False)

    def loss_history(self) -> list[float]:
        return [m.lyapunov_value for m in self.metrics]


def _check_same_specs(models: Sequence[LayeredModel]) -> None:
    first = models[0].specs
    for m in models[1:]:
        if m.specs != first:
            raise StructureError("models carry heterogeneous layer specs")


def federated_average(models: Sequence[LayeredModel], visibility: str = COMMON) -> list[ParamView]:
    """Exact element-wise mean of the selected layers across models.

    Sums run in ascending list order, so the result is reproducible bit for
    bit regardless of scheduling.
    """
    if not models:
        raise InputError("cannot average an empty model list")
    _check_same_specs(models)
    n = len(models)
    per_model = [extract_params(m, visibility) for m in models]
    averaged = []
    for layer_idx, template in enumerate(per_model[0]):
        acc = np.zeros_like(template.values)
        for views in per_model:
            acc = acc + views[layer_idx].values
        averaged.append(ParamView(template.layer_name, acc / n, template.visibility))
    return averaged


def run_round(
    global_model: LayeredModel,
    clients: Sequence[tuple[LayeredModel, tuple[np.ndarray, np.ndarray]]],
    learning_rates: Sequence[float],
    local_steps: int,
    test: tuple[np.ndarray, np.ndarray] | None = None,
    round_index: int = 0,
    aggregate_all: bool = False,
    skip_training: frozenset[int] = frozenset(),
    upload_transform: Callable[[int, LayeredModel, Sequence[LayeredModel]], LayeredModel] | None = None,
) -> RoundResult:
    """One federated round: sync shared layers, train locally, aggregate.

    Per-client losses are measured on the full partition right after the
    sync, so the lyapunov value tracks the aggregated model.  A client in
    ``skip_training`` keeps its synced parameters.  ``upload_transform``
    runs after all clients finish training and may replace what a client
    contributes to aggregation without touching its local state; it
    receives ``(client_id, trained_model, all_trained_models)`` so attack
    simulations can calibrate against the cohort.
    """
    if len(clients) != len(learning_rates):
        raise InputError("one learning rate per client required")
    _check_same_specs([global_model] + [m for m, _ in clients])
    selection = ALL if aggregate_all else COMMON

    shared_views = extract_params(global_model, selection)
    losses = np.zeros(len(clients))
    new_locals: list[LayeredModel] = []
    for i, ((model, (features, labels)), lr) in enumerate(zip(clients, learning_rates)):
        synced = apply_param_views(model, shared_views)
        loss, grads = loss_and_gradient(synced, features, labels)
        losses[i] = loss
        trained = synced
        if i not in skip_training:
            for _ in range(local_steps):
                _, grads = loss_and_gradient(trained, features, labels)
                trained = sgd_step(trained, grads, lr)
        new_locals.append(trained)
    if upload_transform is None:
        uploaded = list(new_locals)
    else:
        uploaded = [upload_transform(i, m, new_locals) for i, m in enumerate(new_locals)]

    new_global = apply_param_views(global_model, federated_average(uploaded, selection))
    update_norm = float(
        np.linalg.norm(flat_params(new_global, selection) - flat_params(global_model, selection))
    )
    test_acc = float("nan")
    if test is not None:
        test_acc = float(np.mean([accuracy(m, test[0], test[1]) for m in new_locals]))
    metrics = RoundMetrics(
        round=round_index,
        per_client_loss=losses,
        global_test_accuracy=test_acc,
        lyapunov_value=float(np.sum(losses)),
        aggregate_update_norm=update_norm,
    )
    return RoundResult(new_global, new_locals, metrics, uploaded)


def run_training(
    config: FederationConfig,
    dataset: FederatedDataset,
    specs: Sequence[LayerSpec] | None = None,
    skip_training: frozenset[int] = frozenset(),
    upload_transform: Callable[..., LayeredModel] | None = None,
    record_uploads: bool = False,
) -> FederationResult:
    """Train for ``config.epochs`` rounds over the dataset's clients.

    All clients and the global model start from the same seeded
    initialization.  Per-client learning rates and per-layer adaptability
    and compatibility coefficients are sampled once up front.  When
    ``record_uploads`` is set, the result carries per-round common, private
    and full parameter snapshots of every client's upload.
    ``upload_transform`` here takes ``(round, client_id, model, cohort)``.
    """
    if dataset.num_clients != config.num_clients:
        raise ConfigError(
            f"dataset has {dataset.num_clients} clients, config expects {config.num_clients}"
        )
    if specs is None:
        specs = default_layer_specs(dataset.feature_dim, dataset.num_classes)

    global_model = init_layered_model(specs, config.seed)
    client_models = [global_model.copy(model_id=i) for i in range(config.num_clients)]

    rng = np.random.default_rng([config.seed, 0xFED])
    lrs = rng.uniform(config.lr_min, config.lr_max, size=config.num_clients)
    adapt = rng.uniform(config.adapt_min, config.adapt_max, size=(config.num_clients, len(specs)))
    comp = rng.uniform(config.comp_min, config.comp_max, size=(config.num_clients, len(specs)))

    selection = ALL if config.aggregate_all_layers else COMMON
    metrics: list[RoundMetrics] = []
    trace: list[RoundUploads] = []
    for epoch in range(1, config.epochs + 1):
        transform = None
        if upload_transform is not None:
            transform = lambda cid, model, cohort, _e=epoch: upload_transform(_e, cid, model, cohort)
        sync_shared = flat_params(global_model, selection)
        result = run_round(
            global_model,
            list(zip(client_models, dataset.client_partitions)),
            lrs,
            config.local_steps_per_round,
            test=dataset.shared_test,
            round_index=epoch,
            aggregate_all=config.aggregate_all_layers,
            skip_training=skip_training,
            upload_transform=transform,
        )
        if record_uploads:
            ups = result.uploaded_models
            trace.append(
                RoundUploads(
                    common=[flat_params(m, COMMON) for m in ups],
                    private=[flat_params(m, PRIVATE) for m in ups],
                    full=[flat_params(m, ALL) for m in ups],
                    update_shared=[flat_params(m, selection) - sync_shared for m in ups],
                )
            )
        global_model = result.global_model
        client_models = result.client_models
        metrics.append(result.metrics)

    return FederationResult(
        metrics=metrics,
        global_model=global_model,
        client_models=client_models,
        learning_rates=lrs,
        adapt_coeffs=adapt,
        comp_coeffs=comp,
        trace=trace,
    )


def check_convergence(loss_history: Sequence[float], epsilon: float, window: int) -> str:
    """Classify the tail of a lyapunov history as converging, stalled or diverging.

    Converging: the relative per-step decrease meets ``epsilon`` on at least
    80% of the last ``window`` steps.  Diverging: the value grew by more than
    10% over the window.
    """
    if len(loss_history) == 0:
        raise InputError("empty loss history")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if len(loss_history) < window + 1:
        raise InputError(f"need at least window+1={window + 1} entries, got {len(loss_history)}")
    tail = np.asarray(loss_history[-(window + 1):], dtype=np.float64)
    if tail[-1] > 1.1 * tail[0]:
        return DIVERGING
    drops = tail[:-1] - tail[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(tail[:-1] != 0, drops / tail[:-1], 0.0)
    if np.count_nonzero(ratios >= epsilon) >= 0.8 * window:
        return CONVERGING
    return STALLED


METRIC_COLUMNS = ["round", "client_id", "loss", "test_accuracy", "lyapunov_value", "update_norm"]


def metrics_rows(metrics: Sequence[RoundMetrics]) -> list[dict]:
    """Flatten RoundMetrics into per-client plus GLOBAL csv rows."""
    rows = []
    for m in metrics:
        for cid, loss in enumerate(m.per_client_loss):
            rows.append(
                {
                    "round": m.round,
                    "client_id": cid,
                    "loss": repr(float(loss)),
                    "test_accuracy": "",
                    "lyapunov_value": "",
                    "update_norm": "",
                }
            )
        rows.append(
            {
                "round": m.round,
                "client_id": "GLOBAL",
                "loss": "",
                "test_accuracy": repr(float(m.global_test_accuracy)),
                "lyapunov_value": repr(float(m.lyapunov_value)),
                "update_norm": repr(float(m.aggregate_update_norm)),
            }
        )
    return rows


def format_metrics_csv(metrics: Sequence[RoundMetrics], extra_columns: Sequence[str] = (), extra_rows=None) -> str:
    """Render the round metrics stream; optional collaboration columns get merged in."""
    columns = METRIC_COLUMNS + [c for c in extra_columns if c not in METRIC_COLUMNS]
    rows = metrics_rows(metrics)
    if extra_rows:
        by_key = {(r["round"], str(r["client_id"])): r for r in rows}
        for extra in extra_rows:
            key = (extra["round"], str(extra["client_id"]))
            if key in by_key:
                by_key[key].update({k: v for k, v in extra.items() if k not in ("round", "client_id")})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, restval="", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_metrics_csv(path, metrics: Sequence[RoundMetrics], extra_columns: Sequence[str] = (), extra_rows=None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_metrics_csv(metrics, extra_columns, extra_rows))
