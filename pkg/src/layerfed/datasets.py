"""Synthetic federated classification data.

Clients draw from shared class-conditional Gaussian clusters, so their
distributions differ only through Dirichlet-skewed label proportions:
different, but similar.  The shared test set follows the global label
mixture, and each edge node holds a small trusted detection set that is
disjoint from every training partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anomaly import AttackSpec, LABEL_FLIP
from .errors import ConfigError, InputError

DATASET_HEADER = "federated-dataset v1"

Partition = tuple[np.ndarray, np.ndarray]


@dataclass
class FederatedDataset:
    client_partitions: list[Partition]
    shared_test: Partition
    detection_sets: list[Partition]
    num_classes: int
    dirichlet_alpha: float
    class_means: np.ndarray = field(repr=False)

    @property
    def num_clients(self) -> int:
        return len(self.client_partitions)

    @property
    def feature_dim(self) -> int:
        return self.client_partitions[0][0].shape[1]


def _apportion(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of `total` samples proportional to `counts`."""
    weights = counts / counts.sum()
    raw = weights * total
    alloc = np.floor(raw).astype(int)
    remainder = total - alloc.sum()
    order = np.argsort(-(raw - alloc), kind="stable")
    alloc[order[:remainder]] += 1
    return alloc


def _sample_class(rng, mean: np.ndarray, n: int, std: float) -> np.ndarray:
    return mean + rng.normal(0.0, std, size=(n, mean.size))


def generate(
    num_clients: int,
    num_classes: int,
    samples_per_client: int,
    dirichlet_alpha: float,
    detection_size: int,
    seed: int,
    feature_dim: int = 16,
    test_size: int = 1000,
    num_edge_nodes: int = 1,
    cluster_std: float = 1.0,
    cluster_spread: float = 3.0,
    world_seed: int | None = None,
) -> FederatedDataset:
    """Generate a deterministic non-IID federated dataset.

    Per-client class proportions come from Dirichlet(alpha * 1); features are
    class-conditioned Gaussians whose means are shared globally.  Test labels
    follow the union label distribution of the training partitions.

    ``world_seed`` fixes the class geometry separately from the partition
    draw, so several cohorts can share one underlying distribution; it
    defaults to ``seed``.
    """
    if num_clients < 2:
        raise ConfigError(f"num_clients must be >= 2, got {num_clients}")
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if samples_per_client < 10 * num_classes:
        raise ConfigError(
            f"samples_per_client must be >= 10 * num_classes = {10 * num_classes}, "
            f"got {samples_per_client}"
        )
    if dirichlet_alpha <= 0:
        raise ConfigError(f"dirichlet_alpha must be positive, got {dirichlet_alpha}")
    if detection_size <= 0 or test_size <= 0 or num_edge_nodes <= 0 or feature_dim <= 0:
        raise ConfigError("detection_size, test_size, num_edge_nodes, feature_dim must be positive")

    world_rng = np.random.default_rng([seed if world_seed is None else world_seed, 0x3A9D])
    rng = np.random.default_rng([seed, 0xDA7A])
    # class centers scaled so typical center separation stays O(cluster_spread)
    class_means = world_rng.normal(0.0, 1.0, size=(num_classes, feature_dim))
    class_means *= cluster_spread / np.sqrt(feature_dim)

    partitions: list[Partition] = []
    union_counts = np.zeros(num_classes, dtype=int)
    for _ in range(num_clients):
        proportions = rng.dirichlet(np.full(num_classes, dirichlet_alpha))
        counts = rng.multinomial(samples_per_client, proportions)
        union_counts += counts
        labels = np.repeat(np.arange(num_classes), counts)
        features = np.vstack(
            [_sample_class(rng, class_means[c], counts[c], cluster_std) for c in range(num_classes)]
        )
        order = rng.permutation(samples_per_client)
        partitions.append((features[order], labels[order]))

    test_counts = _apportion(union_counts, test_size)
    test_labels = np.repeat(np.arange(num_classes), test_counts)
    test_features = np.vstack(
        [_sample_class(rng, class_means[c], test_counts[c], cluster_std) for c in range(num_classes)]
    )
    order = rng.permutation(test_size)
    shared_test = (test_features[order], test_labels[order])

    detection_sets: list[Partition] = []
    for _ in range(num_edge_nodes):
        # balanced trusted set so every category is verifiable
        det_labels = np.arange(detection_size) % num_classes
        det_counts = np.bincount(det_labels, minlength=num_classes)
        det_features = np.vstack(
            [_sample_class(rng, class_means[c], det_counts[c], cluster_std) for c in range(num_classes)]
        )
        det_labels = np.repeat(np.arange(num_classes), det_counts)
        detection_sets.append((det_features, det_labels))

    return FederatedDataset(
        client_partitions=partitions,
        shared_test=shared_test,
        detection_sets=detection_sets,
        num_classes=num_classes,
        dirichlet_alpha=dirichlet_alpha,
        class_means=class_means,
    )


def poison_partition(partition: Partition, attack: AttackSpec, seed: int, num_classes: int | None = None) -> Partition:
    """Label-flip attack: remap exactly ceil(f * n) labels by a fixed permutation.

    The permutation is c -> (c + 1) mod num_classes, so for two classes a
    second flip restores the original labels.  Features are untouched.
    """
    if attack.kind != LABEL_FLIP:
        raise ConfigError(f"poison_partition handles label_flip attacks, got {attack.kind!r}")
    f = attack.flip_fraction
    if not 0.0 < f <= 1.0:
        raise ConfigError(f"flip fraction must be in (0, 1], got {f}")
    features, labels = partition
    n = labels.shape[0]
    if n == 0:
        raise InputError("empty partition")
    k = int(np.ceil(f * n))
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    rng = np.random.default_rng([seed, 0xF11B])
    idx = rng.permutation(n)[:k]
    flipped = labels.copy()
    flipped[idx] = (flipped[idx] + 1) % c
    return features, flipped


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _dump_partition(lines: list[str], tag: str, part: Partition) -> None:
    features, labels = part
    lines.append(f"{tag} {features.shape[0]}")
    for row, label in zip(features, labels):
        lines.append(str(int(label)) + " " + " ".join(_fmt(v) for v in row))


def dump_dataset(ds: FederatedDataset) -> str:
    """Serialize to structured text, lossless for float64 features."""
    lines = [
        DATASET_HEADER,
        f"num_classes {ds.num_classes}",
        f"dirichlet_alpha {_fmt(ds.dirichlet_alpha)}",
        f"feature_dim {ds.feature_dim}",
        f"clients {ds.num_clients}",
        f"edge_nodes {len(ds.detection_sets)}",
    ]
    lines.append("class_means")
    for row in ds.class_means:
        lines.append(" ".join(_fmt(v) for v in row))
    for i, part in enumerate(ds.client_partitions):
        _dump_partition(lines, f"partition {i}", part)
    _dump_partition(lines, "test", ds.shared_test)
    for i, part in enumerate(ds.detection_sets):
        _dump_partition(lines, f"detection {i}", part)
    return "\n".join(lines) + "\n"


def _read_partition(lines: list[str], pos: int, feature_dim: int) -> tuple[Partition, int]:
    n = int(lines[pos].split()[-1])
    features = np.zeros((n, feature_dim))
    labels = np.zeros(n, dtype=int)
    for i in range(n):
        parts = lines[pos + 1 + i].split()
        labels[i] = int(parts[0])
        features[i] = [float(v) for v in parts[1:]]
    return (features, labels), pos + 1 + n


def parse_dataset(text: str) -> FederatedDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != DATASET_HEADER:
        raise InputError("not a federated-dataset file")
    num_classes = int(lines[1].split()[1])
    alpha = float(lines[2].split()[1])
    feature_dim = int(lines[3].split()[1])
    num_clients = int(lines[4].split()[1])
    num_edges = int(lines[5].split()[1])
    pos = 7  # past "class_means"
    class_means = np.array([[float(v) for v in lines[pos + i].split()] for i in range(num_classes)])
    pos += num_classes
    partitions = []
    for _ in range(num_clients):
        part, pos = _read_partition(lines, pos, feature_dim)
        partitions.append(part)
    shared_test, pos = _read_partition(lines, pos, feature_dim)
    detection_sets = []
    for _ in range(num_edges):
        part, pos = _read_partition(lines, pos, feature_dim)
        detection_sets.append(part)
    return FederatedDataset(
        client_partitions=partitions,
        shared_test=shared_test,
        detection_sets=detection_sets,
        num_classes=num_classes,
        dirichlet_alpha=alpha,
        class_means=class_means,
    )


def save_dataset(ds: FederatedDataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_dataset(ds))


def load_dataset(path) -> FederatedDataset:
    with open(path) as fh:
        return parse_dataset(fh.read())
