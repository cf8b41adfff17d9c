"""Screening of parameter uploads via leave-one-out benchmarks.

For each device the benchmark is the mean of every other device's upload,
computed through the closed form  (mean - p_j / M) * M / (M - 1).  The
Euclidean distance from a device's upload to its benchmark is its variance
distance v; a device is flagged when v exceeds a threshold multiple of
either the cohort mean of v (``paper_mean`` mode) or its own leave-one-out
mean of v (``loo`` mode, the default).  Flagged devices are then verified
by comparing per-category accuracy of two assembled models on a trusted
detection set: benchmark-common plus the device's private layers, against
uploaded-common plus the same private layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError
from .models import (
    COMMON,
    LayeredModel,
    ParamView,
    apply_param_views,
    predict,
    split_flat_params,
)

PARAM_NOISE = "param_noise"
PARAM_SCALE = "param_scale"
LABEL_FLIP = "label_flip"
ATTACK_KINDS = (PARAM_NOISE, PARAM_SCALE, LABEL_FLIP)

FLAG_LOO = "loo"
FLAG_PAPER_MEAN = "paper_mean"
FLAG_MODES = (FLAG_LOO, FLAG_PAPER_MEAN)


@dataclass(frozen=True)
class AttackSpec:
    """What a malicious device does to its upload or its training data."""

    kind: str
    delta_scale: float = 0.0
    targets: frozenset = frozenset()
    flip_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.delta_scale < 0:
            raise ConfigError(f"delta_scale must be nonnegative, got {self.delta_scale}")
        if self.kind == LABEL_FLIP and not 0.0 < self.flip_fraction <= 1.0:
            raise ConfigError(f"flip_fraction must be in (0, 1], got {self.flip_fraction}")


@dataclass
class UploadBatch:
    """One edge node's view of a round: per-device common and private uploads."""

    node_id: int
    device_ids: list[int]
    common_views: list[list[ParamView]]
    private_views: list[list[ParamView]]

    def __post_init__(self) -> None:
        m = len(self.device_ids)
        if len(self.common_views) != m or len(self.private_views) != m:
            raise InputError("device_ids, common_views and private_views must align")
        lengths = {sum(v.values.size for v in views) for views in self.common_views}
        if len(lengths) > 1:
            raise InputError("common uploads differ in length across devices")

    @property
    def num_devices(self) -> int:
        return len(self.device_ids)

    def common_flat(self) -> list[np.ndarray]:
        return [np.concatenate([v.values for v in views]) for views in self.common_views]


@dataclass
class AnomalyReport:
    """Outcome of screening one UploadBatch."""

    node_id: int
    device_ids: list[int]
    benchmarks: list[np.ndarray]
    v: np.ndarray
    v_mean: float
    v_loo: np.ndarray
    theta: float
    mode: str
    flagged: set[int]
    verified_poisoners: set[int]
    accuracy_diffs: dict[int, float] = field(default_factory=dict)


def _check_equal_lengths(params: Sequence[np.ndarray]) -> None:
    sizes = {p.shape for p in params}
    if len(sizes) > 1:
        raise InputError(f"uploads differ in shape: {sorted(sizes)}")


def loo_benchmark(params: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Leave-one-out mean for each entry, via the closed form.

    Output j equals the element-wise mean of all inputs except j.
    """
    m = len(params)
    if m < 2:
        raise InputError(f"need at least 2 uploads, got {m}")
    _check_equal_lengths(params)
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in params])
    mean = stacked.mean(axis=0)
    factor = m / (m - 1)
    return [(mean - stacked[j] / m) * factor for j in range(m)]


def variance_distances(params: Sequence[np.ndarray], benchmarks: Sequence[np.ndarray]):
    """Euclidean distances to benchmarks, their mean, and the leave-one-out means.

    Returns ``(v, v_mean, v_loo)`` where ``v_loo[j]`` is the mean of the other
    devices' distances, via the same closed form used for the benchmarks.
    """
    if len(params) != len(benchmarks):
        raise InputError("params and benchmarks must align")
    m = len(params)
    v = np.array(
        [float(np.linalg.norm(np.asarray(p, dtype=np.float64) - b)) for p, b in zip(params, benchmarks)]
    )
    v_mean = float(v.mean())
    if m >= 2:
        v_loo = (v_mean - v / m) * (m / (m - 1))
    else:
        v_loo = v.copy()
    return v, v_mean, v_loo


def flag_suspicious(
    v: np.ndarray,
    v_mean: float,
    v_loo: np.ndarray,
    theta: float,
    mode: str = FLAG_LOO,
) -> set[int]:
    """Indices whose distance exceeds theta times the reference level."""
    if theta <= 0:
        raise ConfigError(f"theta must be positive, got {theta}")
    if mode not in FLAG_MODES:
        raise ConfigError(f"unknown flag mode {mode!r}")
    v = np.asarray(v, dtype=np.float64)
    if mode == FLAG_PAPER_MEAN:
        return {int(j) for j in np.flatnonzero(v > theta * v_mean)}
    return {int(j) for j in np.flatnonzero(v > theta * np.asarray(v_loo, dtype=np.float64))}


def split_flat_common(flat: np.ndarray, template: LayeredModel) -> list[ParamView]:
    """Slice a flat common-parameter vector back into per-layer ParamViews."""
    return split_flat_params(flat, template, COMMON)


def _per_category_accuracy(model: LayeredModel, features: np.ndarray, labels: np.ndarray) -> dict[int, float]:
    preds = predict(model, features)
    out = {}
    for c in np.unique(labels):
        mask = labels == c
        out[int(c)] = float(np.mean(preds[mask] == c))
    return out


def accuracy_verification(
    batch: UploadBatch,
    flagged: set[int],
    detection_features: np.ndarray,
    detection_labels: np.ndarray,
    beta_poison: float,
    template: LayeredModel,
):
    """Verify flagged devices by the per-category accuracy drop e.

    For each flagged device two full models are assembled: benchmark common
    layers plus the device's private layers, and the uploaded common layers
    plus the same private layers.  e is the maximum relative per-category
    accuracy drop, with the benchmark accuracy floored at 1/|detection set|
    to avoid division by near-zero.  Returns ``(verified, accuracy_diffs)``.
    """
    if detection_features.shape[0] == 0:
        raise InputError("empty detection set")
    if not flagged <= set(range(batch.num_devices)):
        raise InputError("flagged indices outside the batch")
    if len(np.unique(detection_labels)) == 0:
        raise InputError("detection set has no labeled categories")
    if beta_poison <= 0:
        raise ConfigError(f"beta_poison must be positive, got {beta_poison}")

    flats = batch.common_flat()
    benchmarks = loo_benchmark(flats)
    floor = 1.0 / detection_features.shape[0]

    verified: set[int] = set()
    diffs: dict[int, float] = {}
    for j in sorted(flagged):
        private = batch.private_views[j]
        bench_model = apply_param_views(template, split_flat_common(benchmarks[j], template) + list(private))
        upload_model = apply_param_views(template, list(batch.common_views[j]) + list(private))
        phi_bench = _per_category_accuracy(bench_model, detection_features, detection_labels)
        phi_upload = _per_category_accuracy(upload_model, detection_features, detection_labels)
        e = max(
            (phi_bench[c] - phi_upload[c]) / max(phi_bench[c], floor) for c in phi_bench
        )
        diffs[j] = float(e)
        if e > beta_poison:
            verified.add(j)
    return verified, diffs


def run_detection(
    batch: UploadBatch,
    template: LayeredModel,
    detection_features: np.ndarray,
    detection_labels: np.ndarray,
    theta: float = 2.0,
    beta_poison: float = 0.2,
    mode: str = FLAG_LOO,
) -> AnomalyReport:
    """Full screening pipeline for one batch: benchmark, flag, verify."""
    if batch.num_devices < 3:
        raise InputError(f"detection needs at least 3 devices, got {batch.num_devices}")
    flats = batch.common_flat()
    benchmarks = loo_benchmark(flats)
    v, v_mean, v_loo = variance_distances(flats, benchmarks)
    flagged = flag_suspicious(v, v_mean, v_loo, theta, mode)
    verified, diffs = accuracy_verification(
        batch, flagged, detection_features, detection_labels, beta_poison, template
    )
    return AnomalyReport(
        node_id=batch.node_id,
        device_ids=list(batch.device_ids),
        benchmarks=benchmarks,
        v=v,
        v_mean=v_mean,
        v_loo=v_loo,
        theta=theta,
        mode=mode,
        flagged={batch.device_ids[j] for j in flagged},
        verified_poisoners={batch.device_ids[j] for j in verified},
        accuracy_diffs={batch.device_ids[j]: e for j, e in diffs.items()},
    )


def inject_param_attack(params: np.ndarray, spec: AttackSpec, benign_std: float, seed: int) -> np.ndarray:
    """Perturb a flat parameter array according to the attack spec.

    ``param_noise`` adds Gaussian noise with per-element standard deviation
    delta_scale * benign_std; ``param_scale`` multiplies all elements by
    (1 + delta_scale).  Deterministic under the seed.
    """
    if benign_std < 0:
        raise InputError(f"benign_std must be nonnegative, got {benign_std}")
    arr = np.asarray(params, dtype=np.float64)
    if spec.kind == PARAM_NOISE:
        rng = np.random.default_rng([seed, 0xA77C])
        return arr + rng.normal(0.0, 1.0, size=arr.shape) * (spec.delta_scale * benign_std)
    if spec.kind == PARAM_SCALE:
        return arr * (1.0 + spec.delta_scale)
    raise ConfigError(f"{spec.kind!r} is not a parameter attack")


def benign_spread(uploads: Sequence[np.ndarray]) -> float:
    """Scalar deviation scale of a cohort: RMS of per-element std across devices."""
    stacked = np.stack(uploads)
    return float(np.sqrt(np.mean(np.var(stacked, axis=0))))


def zscore_flags(params: Sequence[np.ndarray], z_threshold: float = 2.0) -> set[int]:
    """Control detector: z-score of distances from the plain cohort mean."""
    if len(params) < 2:
        raise InputError("need at least 2 uploads")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in params])
    center = stacked.mean(axis=0)
    dist = np.linalg.norm(stacked - center, axis=1)
    std = dist.std()
    if std == 0.0:
        return set()
    z = (dist - dist.mean()) / std
    return {int(j) for j in np.flatnonzero(z > z_threshold)}


def _round_dispersion(uploads: Sequence[np.ndarray]) -> float:
    """Mean variance distance of a cohort of uploads."""
    v, _, _ = variance_distances(uploads, loo_benchmark(uploads))
    return float(v.mean())


def layer_divergence_trace(
    common_rounds: Sequence[Sequence[np.ndarray]],
    full_rounds: Sequence[Sequence[np.ndarray]],
    private_rounds: Sequence[Sequence[np.ndarray]],
) -> list[tuple[float, float, float]]:
    """Per-round mean benchmark distances (d_c, d_ce, d_p).

    d_c uses common-layer uploads from the layered run, d_ce uses full-model
    uploads from the all-layer run, d_p uses the layered run's private layers.
    All three sequences must hold the same number of rounds and devices.
    """
    if not (len(common_rounds) == len(full_rounds) == len(private_rounds)):
        raise InputError("the three runs hold different round counts")
    trace = []
    for c, f, p in zip(common_rounds, full_rounds, private_rounds):
        if not (len(c) == len(f) == len(p)):
            raise InputError("device counts differ across runs")
        trace.append((_round_dispersion(c), _round_dispersion(f), _round_dispersion(p)))
    return trace


def detection_margin(
    common_rounds: Sequence[Sequence[np.ndarray]],
    full_rounds: Sequence[Sequence[np.ndarray]],
    private_rounds: Sequence[Sequence[np.ndarray]],
    malicious_index: int | None,
) -> list[tuple[float, float, float]]:
    """Per-round relative deviation of the malicious device in each representation.

    Each entry is v[malicious] / mean(v[honest]) for common, full and private
    uploads; an all-zero honest cohort yields inf.
    """
    if malicious_index is None:
        raise InputError("no malicious device marked")
    if not (len(common_rounds) == len(full_rounds) == len(private_rounds)):
        raise InputError("the three runs hold different round counts")

    def ratio(uploads: Sequence[np.ndarray]) -> float:
        if not 0 <= malicious_index < len(uploads):
            raise InputError(f"malicious index {malicious_index} outside cohort")
        v, _, _ = variance_distances(uploads, loo_benchmark(uploads))
        honest = np.delete(v, malicious_index)
        denom = float(honest.mean())
        if denom == 0.0:
            return float("inf") if v[malicious_index] > 0 else float("nan")
        return float(v[malicious_index] / denom)

    return [(ratio(c), ratio(f), ratio(p)) for c, f, p in zip(common_rounds, full_rounds, private_rounds)]


def report_text(report: AnomalyReport) -> str:
    """Serialize an AnomalyReport as structured text."""
    lines = [
        "anomaly-report v1",
        f"node_id {report.node_id}",
        f"theta {format(report.theta, '.17g')}",
        f"mode {report.mode}",
        f"v_mean {format(report.v_mean, '.17g')}",
        "device v v_loo flagged e verified",
    ]
    for pos, device in enumerate(report.device_ids):
        e = report.accuracy_diffs.get(device)
        lines.append(
            " ".join(
                [
                    str(device),
                    format(report.v[pos], ".17g"),
                    format(report.v_loo[pos], ".17g"),
                    "1" if device in report.flagged else "0",
                    "-" if e is None else format(e, ".17g"),
                    "1" if device in report.verified_poisoners else "0",
                ]
            )
        )
    return "\n".join(lines) + "\n"
