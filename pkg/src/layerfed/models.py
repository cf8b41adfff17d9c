"""Layered feed-forward classifiers with exact forward/backward passes.

A model is an ordered stack of dense layers, each tagged ``common`` or
``private``.  Common layers are the unit of cross-client aggregation in
federated training; private layers never leave their owner.  All arithmetic
is float64, and updates return fresh models, so instances behave as
immutable values and are safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, NumericError, StructureError

IDENTITY = "identity"
RELU = "relu"
SOFTMAX_OUTPUT = "softmax-output"
ACTIVATIONS = (IDENTITY, RELU, SOFTMAX_OUTPUT)

COMMON = "common"
PRIVATE = "private"
VISIBILITIES = (COMMON, PRIVATE)
ALL = "all"
VISIBILITY_FILTERS = (COMMON, PRIVATE, ALL)

CHECKPOINT_HEADER = "layered-model v1"


@dataclass(frozen=True)
class LayerSpec:
    """Shape, activation and sharing tag of one dense layer."""

    name: str
    input_dim: int
    output_dim: int
    activation: str
    visibility: str

    def __post_init__(self) -> None:
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ConfigError(f"layer {self.name!r}: dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"layer {self.name!r}: unknown activation {self.activation!r}")
        if self.visibility not in VISIBILITIES:
            raise ConfigError(f"layer {self.name!r}: unknown visibility {self.visibility!r}")

    @property
    def num_params(self) -> int:
        return self.output_dim * self.input_dim + self.output_dim


@dataclass(frozen=True)
class ParamView:
    """Flattened parameters of one layer: weights row-major, then bias."""

    layer_name: str
    values: np.ndarray
    visibility: str

    def __len__(self) -> int:
        return self.values.size


def validate_specs(specs: Sequence[LayerSpec]) -> None:
    """Check that layer specs chain dimensionally and end in one softmax layer."""
    if not specs:
        raise ConfigError("a model needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.output_dim != b.input_dim:
            raise ConfigError(
                f"dimension chain mismatch: {a.name!r} outputs {a.output_dim} "
                f"but {b.name!r} expects {b.input_dim}"
            )
    softmax_positions = [i for i, s in enumerate(specs) if s.activation == SOFTMAX_OUTPUT]
    if softmax_positions != [len(specs) - 1]:
        raise ConfigError("exactly one softmax-output layer is required, and it must be last")


class LayeredModel:
    """Ordered stack of dense layers with per-layer weights and biases.

    ``weights[i]`` has shape ``(output_dim, input_dim)`` and ``biases[i]``
    has length ``output_dim``.  Construction validates shapes, the
    dimension chain and finiteness.
    """

    __slots__ = ("specs", "weights", "biases", "model_id")

    def __init__(
        self,
        specs: Sequence[LayerSpec],
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
        model_id: int = 0,
    ):
        validate_specs(specs)
        if len(weights) != len(specs) or len(biases) != len(specs):
            raise StructureError("one weight matrix and one bias vector per layer required")
        for spec, w, b in zip(specs, weights, biases):
            if w.shape != (spec.output_dim, spec.input_dim):
                raise StructureError(
                    f"layer {spec.name!r}: weight shape {w.shape} != "
                    f"({spec.output_dim}, {spec.input_dim})"
                )
            if b.shape != (spec.output_dim,):
                raise StructureError(f"layer {spec.name!r}: bias shape {b.shape} != ({spec.output_dim},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {spec.name!r}: non-finite parameter values")
        self.specs = tuple(specs)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.model_id = model_id

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def num_classes(self) -> int:
        return self.specs[-1].output_dim

    @property
    def num_params(self) -> int:
        return sum(s.num_params for s in self.specs)

    def copy(self, model_id: int | None = None) -> "LayeredModel":
        return LayeredModel(
            self.specs,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.model_id if model_id is None else model_id,
        )


def init_layered_model(specs: Sequence[LayerSpec], seed: int, model_id: int = 0) -> LayeredModel:
    """Build a model with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights and zero biases.

    Identical ``(specs, seed)`` yield bit-identical parameters.
    """
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for spec in specs:
        bound = 1.0 / np.sqrt(spec.input_dim)
        weights.append(rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim)))
        biases.append(np.zeros(spec.output_dim))
    return LayeredModel(specs, weights, biases, model_id=model_id)


def _check_inputs(model: LayeredModel, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"inputs must be a 2-d matrix, got ndim={x.ndim}")
    if x.shape[1] != model.input_dim:
        raise InputError(f"inputs have {x.shape[1]} columns, model expects {model.input_dim}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite input values")
    return x


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(model: LayeredModel, x: np.ndarray):
    """Return (per-layer input activations, logits, probabilities)."""
    layer_inputs = []
    a = x
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        layer_inputs.append(a)
        z = a @ w.T + b
        if spec.activation == RELU:
            a = np.maximum(z, 0.0)
        elif spec.activation == IDENTITY:
            a = z
        else:  # softmax-output, always last
            return layer_inputs, z, _softmax(z)
    raise AssertionError("unreachable: validated specs end with softmax-output")


def forward(model: LayeredModel, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, shape (batch, num_classes); rows sum to 1."""
    x = _check_inputs(model, inputs)
    _, _, probs = _forward_cached(model, x)
    return probs


def loss_and_gradient(model: LayeredModel, inputs: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and exact parameter gradients.

    Returns ``(loss, grads)`` where ``grads`` is a list of ``(dW, db)``
    pairs shaped like the model parameters.
    """
    x = _check_inputs(model, inputs)
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise InputError("empty batch")
    if y.shape != (x.shape[0],):
        raise InputError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")
    if not np.issubdtype(y.dtype, np.integer):
        raise InputError("labels must be integer class indices")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise InputError("label out of range")

    batch = x.shape[0]
    layer_inputs, logits, probs = _forward_cached(model, x)

    # loss via log-softmax for stability under extreme logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(batch), y].mean())

    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.specs)  # type: ignore[list-item]
    for i in range(len(model.specs) - 1, -1, -1):
        a_in = layer_inputs[i]
        grads[i] = (delta.T @ a_in, delta.sum(axis=0))
        if i > 0:
            upstream = delta @ model.weights[i]
            prev = model.specs[i - 1]
            if prev.activation == RELU:
                # mask from the cached post-activation: zero where the unit was clipped
                upstream = upstream * (layer_inputs[i] > 0.0)
            delta = upstream
    return loss, grads


def sgd_step(model: LayeredModel, grads, lr: float) -> LayeredModel:
    """Return a new model with every parameter p replaced by p - lr * g."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(grads) != len(model.specs):
        raise StructureError("gradient count does not match layer count")
    weights = []
    biases = []
    for spec, w, b, (dw, db) in zip(model.specs, model.weights, model.biases, grads):
        if dw.shape != w.shape or db.shape != b.shape:
            raise StructureError(f"layer {spec.name!r}: gradient shape mismatch")
        weights.append(w - lr * dw)
        biases.append(b - lr * db)
    return LayeredModel(model.specs, weights, biases, model.model_id)


def predict(model: LayeredModel, inputs: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, inputs), axis=1)


def accuracy(model: LayeredModel, inputs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, inputs) == np.asarray(labels)))


def _flatten_layer(w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([w.ravel(), b])


def extract_params(model: LayeredModel, visibility: str = ALL) -> list[ParamView]:
    """Flatten selected layers into ParamViews, in layer order."""
    if visibility not in VISIBILITY_FILTERS:
        raise ConfigError(f"unknown visibility filter {visibility!r}")
    views = []
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        if visibility != ALL and spec.visibility != visibility:
            continue
        views.append(ParamView(spec.name, _flatten_layer(w, b), spec.visibility))
    return views


def flat_params(model: LayeredModel, visibility: str = ALL) -> np.ndarray:
    """Single concatenated parameter vector over the selected layers."""
    views = extract_params(model, visibility)
    if not views:
        return np.zeros(0)
    return np.concatenate([v.values for v in views])


def split_flat_params(flat: np.ndarray, model: LayeredModel, visibility: str = ALL) -> list[ParamView]:
    """Slice a concatenated parameter vector back into per-layer ParamViews."""
    views = []
    offset = 0
    for template in extract_params(model, visibility):
        n = template.values.size
        views.append(ParamView(template.layer_name, flat[offset : offset + n].copy(), template.visibility))
        offset += n
    if offset != flat.size:
        raise StructureError(f"flat vector has {flat.size} values, selection expects {offset}")
    return views


def apply_param_views(model: LayeredModel, views: Sequence[ParamView]) -> LayeredModel:
    """Return a new model with the named layers replaced from flat values."""
    by_name = {spec.name: i for i, spec in enumerate(model.specs)}
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    for view in views:
        if view.layer_name not in by_name:
            raise StructureError(f"model has no layer named {view.layer_name!r}")
        i = by_name[view.layer_name]
        spec = model.specs[i]
        if view.values.size != spec.num_params:
            raise StructureError(
                f"layer {spec.name!r}: expected {spec.num_params} values, got {view.values.size}"
            )
        n_w = spec.output_dim * spec.input_dim
        weights[i] = view.values[:n_w].reshape(spec.output_dim, spec.input_dim).copy()
        biases[i] = view.values[n_w:].copy()
    return LayeredModel(model.specs, weights, biases, model.model_id)


def default_layer_specs(
    input_dim: int,
    num_classes: int,
    hidden_dims: Sequence[int] = (32, 32),
) -> list[LayerSpec]:
    """Default topology: relu common feature layers, one private softmax head."""
    specs = []
    prev = input_dim
    for i, width in enumerate(hidden_dims):
        specs.append(LayerSpec(f"hidden{i + 1}", prev, width, RELU, COMMON))
        prev = width
    specs.append(LayerSpec("head", prev, num_classes, SOFTMAX_OUTPUT, PRIVATE))
    return specs


def convex_specs(input_dim: int, num_classes: int, visibility: str = COMMON) -> list[LayerSpec]:
    """Single linear softmax layer: the convex full-batch training configuration."""
    return [LayerSpec("output", input_dim, num_classes, SOFTMAX_OUTPUT, visibility)]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_checkpoint(model: LayeredModel) -> str:
    """Serialize a model as structured text, lossless for float64."""
    lines = [CHECKPOINT_HEADER, f"model_id {model.model_id}", f"layers {len(model.specs)}"]
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        lines.append(
            f"layer {spec.name} {spec.input_dim} {spec.output_dim} "
            f"{spec.activation} {spec.visibility}"
        )
        lines.append("weights " + " ".join(_fmt(v) for v in w.ravel()))
        lines.append("bias " + " ".join(_fmt(v) for v in b))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> LayeredModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise InputError("not a layered-model checkpoint")
    model_id = int(lines[1].split()[1])
    n_layers = int(lines[2].split()[1])
    specs, weights, biases = [], [], []
    pos = 3
    for _ in range(n_layers):
        _, name, in_d, out_d, act, vis = lines[pos].split()
        spec = LayerSpec(name, int(in_d), int(out_d), act, vis)
        w_vals = np.array([float(v) for v in lines[pos + 1].split()[1:]])
        b_vals = np.array([float(v) for v in lines[pos + 2].split()[1:]])
        if w_vals.size != spec.output_dim * spec.input_dim or b_vals.size != spec.output_dim:
            raise InputError(f"layer {name!r}: wrong parameter count in checkpoint")
        specs.append(spec)
        weights.append(w_vals.reshape(spec.output_dim, spec.input_dim))
        biases.append(b_vals)
        pos += 3
    return LayeredModel(specs, weights, biases, model_id=model_id)


def save_checkpoint(model: LayeredModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_checkpoint(model))


def load_checkpoint(path) -> LayeredModel:
    with open(path) as fh:
        return parse_checkpoint(fh.read())
