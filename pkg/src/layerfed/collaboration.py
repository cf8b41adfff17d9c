"""Small-model collaboration: knowledge sharing, consensus, layer health.

Knowledge flowing to a model from a peer is a weighted blend of the peer's
experience (training volume, normalized over the cohort) and expertise
(shared-test accuracy).  Consensus decisions average the members' class
probabilities.  Layer health combines an update-rate adaptability term
with an inverse-loss-variance stability term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .models import LayeredModel, ParamView, forward

LOSS_WINDOW = 5


@dataclass(frozen=True)
class ModelProfile:
    """Collaboration-relevant summary of one model."""

    model_id: int
    experience: float
    expertise: float
    alpha_exp: float = 0.5
    beta_expertise: float = 0.5

    def __post_init__(self) -> None:
        if self.experience < 0:
            raise InputError(f"experience must be nonnegative, got {self.experience}")
        if not 0.0 <= self.expertise <= 1.0:
            raise InputError(f"expertise must be in [0, 1], got {self.expertise}")
        if not 0.0 <= self.alpha_exp <= 1.0 or not 0.0 <= self.beta_expertise <= 1.0:
            raise InputError("weights must be in [0, 1]")
        if abs(self.alpha_exp + self.beta_expertise - 1.0) > 1e-12:
            raise InputError("alpha_exp + beta_expertise must equal 1")


@dataclass(frozen=True)
class ResilienceParams:
    """Trade-off weight between stability and adaptability for one layer."""

    beta_resilience: float
    loss_window: int = LOSS_WINDOW

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta_resilience <= 1.0:
            raise InputError(f"beta_resilience must be in [0, 1], got {self.beta_resilience}")
        if self.loss_window < 1:
            raise InputError("loss_window must be >= 1")


def knowledge_share(receiver: ModelProfile, donor: ModelProfile) -> float:
    """Knowledge transferred to the receiver: its weights applied to the donor's profile."""
    if receiver.model_id == donor.model_id:
        raise InputError("a model cannot share knowledge with itself")
    return receiver.alpha_exp * donor.experience + receiver.beta_expertise * donor.expertise


def learning_enhancement(receiver: ModelProfile, peers: Sequence[ModelProfile]) -> float:
    """Total knowledge accumulated from the peer set; empty peers give 0."""
    return float(sum(knowledge_share(receiver, peer) for peer in peers))


def negotiate_decision(models: Sequence[LayeredModel], inputs: np.ndarray):
    """Consensus over an ensemble for one feature row.

    Returns ``(class_index, consensus_probabilities)`` where the consensus is
    the arithmetic mean of the members' probability rows and ties break
    toward the lowest class index.
    """
    if not models:
        raise InputError("need at least one model")
    row = np.asarray(inputs, dtype=np.float64)
    if row.ndim == 1:
        row = row[None, :]
    if row.shape[0] != 1:
        raise InputError("negotiate_decision expects a single feature row")
    acc = np.zeros(models[0].num_classes)
    for model in models:
        acc = acc + forward(model, row)[0]
    consensus = acc / len(models)
    return int(np.argmax(consensus)), consensus


def consensus_predict(models: Sequence[LayeredModel], inputs: np.ndarray) -> np.ndarray:
    """Batch version of the consensus decision: argmax of mean probabilities."""
    if not models:
        raise InputError("need at least one model")
    acc = np.zeros((np.asarray(inputs).shape[0], models[0].num_classes))
    for model in models:
        acc = acc + forward(model, inputs)
    return np.argmax(acc / len(models), axis=1)


def consensus_accuracy(models: Sequence[LayeredModel], inputs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(consensus_predict(models, inputs) == np.asarray(labels)))


def compatibility(layer_a: ParamView, layer_b: ParamView) -> float:
    """Cosine similarity between two layers' flat parameters; 0 for zero-norm input."""
    if layer_a.layer_name != layer_b.layer_name:
        raise InputError(
            f"layer names differ: {layer_a.layer_name!r} vs {layer_b.layer_name!r}"
        )
    a, b = layer_a.values, layer_b.values
    if a.size != b.size:
        raise InputError(f"layer sizes differ: {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def update_rate(history: Sequence[np.ndarray]) -> float:
    """Mean element-wise absolute change per round between consecutive snapshots."""
    if len(history) < 2:
        raise InputError(f"need at least 2 snapshots, got {len(history)}")
    deltas = [float(np.mean(np.abs(b - a))) for a, b in zip(history, history[1:])]
    return float(np.mean(deltas))


def adaptability(history: Sequence[np.ndarray], compat: float) -> float:
    """Layer adaptability: update rate scaled by compatibility."""
    return update_rate(history) * compat


def learning_stability(losses: Sequence[float], window: int = LOSS_WINDOW) -> float:
    """Inverse variance of the recent losses, bounded to (0, 1]."""
    if len(losses) < 2:
        raise InputError(f"need at least 2 recorded losses, got {len(losses)}")
    recent = np.asarray(losses[-window:], dtype=np.float64)
    return float(1.0 / (1.0 + np.var(recent)))


def resilience(
    history: Sequence[np.ndarray],
    losses: Sequence[float],
    params: ResilienceParams,
    compat: float,
) -> float:
    """Blend of learning stability and adaptability for one layer."""
    lear = learning_stability(losses, params.loss_window)
    adap = adaptability(history, compat)
    return params.beta_resilience * lear + (1.0 - params.beta_resilience) * adap


def experience_profile(samples_consumed: Sequence[int]) -> list[float]:
    """Experience per model: samples consumed normalized by the cohort maximum."""
    top = max(samples_consumed) if samples_consumed else 0
    if top <= 0:
        return [0.0 for _ in samples_consumed]
    return [s / top for s in samples_consumed]
