import numpy as np
import pytest

from layerfed.anomaly import AttackSpec
from layerfed.datasets import (
    dump_dataset,
    generate,
    load_dataset,
    parse_dataset,
    poison_partition,
    save_dataset,
)
from layerfed.errors import ConfigError, InputError


def small_dataset(seed=0, alpha=0.5, clients=4, classes=3):
    return generate(
        num_clients=clients,
        num_classes=classes,
        samples_per_client=60,
        dirichlet_alpha=alpha,
        detection_size=30,
        seed=seed,
        feature_dim=5,
        test_size=300,
    )


def test_sizes_and_label_ranges():
    ds = small_dataset()
    assert ds.num_clients == 4
    for features, labels in ds.client_partitions:
        assert features.shape == (60, 5)
        assert labels.shape == (60,)
        assert labels.min() >= 0 and labels.max() < 3
    assert ds.shared_test[0].shape == (300, 5)
    assert ds.detection_sets[0][0].shape == (30, 5)


def test_determinism_under_seed():
    a = small_dataset(seed=3)
    b = small_dataset(seed=3)
    for (fa, la), (fb, lb) in zip(a.client_partitions, b.client_partitions):
        assert (fa == fb).all() and (la == lb).all()
    assert (a.shared_test[0] == b.shared_test[0]).all()
    c = small_dataset(seed=4)
    assert (a.client_partitions[0][0] != c.client_partitions[0][0]).any()


def test_total_training_size():
    ds = generate(10, 4, 500, 0.5, 50, seed=1)
    assert sum(labels.size for _, labels in ds.client_partitions) == 5000


def test_huge_alpha_gives_near_uniform_proportions():
    ds = generate(6, 4, 400, 1e6, 50, seed=2)
    for _, labels in ds.client_partitions:
        freqs = np.bincount(labels, minlength=4) / labels.size
        assert np.abs(freqs - 0.25).max() < 0.02 + 3 * np.sqrt(0.25 * 0.75 / 400)


def test_small_alpha_gives_heavy_skew_in_median_seed():
    # over 20 seeds, the median run has a client dominated by one class
    hits = 0
    for seed in range(20):
        ds = generate(6, 4, 200, 0.1, 50, seed=seed)
        top = max(np.bincount(labels, minlength=4).max() / labels.size for _, labels in ds.client_partitions)
        hits += top > 0.6
    assert hits >= 10


def test_union_matches_test_distribution():
    # identically-distributed train and test label mixtures, within 3% TV
    for seed in range(3):
        ds = generate(8, 4, 400, 0.5, 50, seed=seed, test_size=1000)
        union = np.concatenate([labels for _, labels in ds.client_partitions])
        p = np.bincount(union, minlength=4) / union.size
        q = np.bincount(ds.shared_test[1], minlength=4) / ds.shared_test[1].size
        assert 0.5 * np.abs(p - q).sum() <= 0.03


def test_detection_sets_disjoint_from_training():
    ds = small_dataset(seed=5)
    train_rows = {row.tobytes() for features, _ in ds.client_partitions for row in features}
    for features, _ in ds.detection_sets:
        for row in features:
            assert row.tobytes() not in train_rows


def test_shared_world_seed_fixes_class_means():
    a = generate(4, 3, 60, 0.5, 30, seed=1, feature_dim=5, world_seed=99)
    b = generate(4, 3, 60, 0.5, 30, seed=2, feature_dim=5, world_seed=99)
    assert (a.class_means == b.class_means).all()
    assert (a.client_partitions[0][0] != b.client_partitions[0][0]).any()


def test_degenerate_sizes_rejected():
    with pytest.raises(ConfigError):
        generate(1, 4, 500, 0.5, 50, seed=0)
    with pytest.raises(ConfigError):
        generate(10, 1, 500, 0.5, 50, seed=0)
    with pytest.raises(ConfigError):
        generate(10, 4, 20, 0.5, 50, seed=0)
    with pytest.raises(ConfigError):
        generate(10, 4, 500, 0.0, 50, seed=0)


def test_poison_full_flip_two_classes_swaps_all():
    labels = np.array([0, 1, 0, 1, 1])
    features = np.zeros((5, 2))
    attack = AttackSpec("label_flip", flip_fraction=1.0)
    _, flipped = poison_partition((features, labels), attack, seed=0, num_classes=2)
    assert (flipped == 1 - labels).all()


def test_poison_exact_count():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=100)
    attack = AttackSpec("label_flip", flip_fraction=0.5)
    _, flipped = poison_partition((np.zeros((100, 2)), labels), attack, seed=1, num_classes=4)
    assert (flipped != labels).sum() == 50


def test_poison_involution_for_two_classes():
    labels = np.array([0, 1, 1, 0, 1, 0])
    attack = AttackSpec("label_flip", flip_fraction=1.0)
    part = (np.zeros((6, 2)), labels)
    once = poison_partition(part, attack, seed=2, num_classes=2)
    twice = poison_partition(once, attack, seed=2, num_classes=2)
    assert (twice[1] == labels).all()


def test_poison_features_untouched():
    features = np.random.default_rng(1).normal(size=(40, 3))
    labels = np.zeros(40, dtype=int)
    attack = AttackSpec("label_flip", flip_fraction=0.25)
    out_features, _ = poison_partition((features, labels), attack, seed=3, num_classes=2)
    assert (out_features == features).all()


def test_poison_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        AttackSpec("label_flip", flip_fraction=0.0)
    with pytest.raises(ConfigError):
        AttackSpec("label_flip", flip_fraction=1.5)


def test_poison_rejects_param_attack():
    attack = AttackSpec("param_scale", delta_scale=1.0)
    with pytest.raises(ConfigError):
        poison_partition((np.zeros((4, 2)), np.zeros(4, dtype=int)), attack, seed=0)


def test_export_import_roundtrip(tmp_path):
    ds = small_dataset(seed=7)
    path = tmp_path / "data.txt"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.num_classes == ds.num_classes
    assert loaded.dirichlet_alpha == ds.dirichlet_alpha
    for (fa, la), (fb, lb) in zip(ds.client_partitions, loaded.client_partitions):
        assert (fa == fb).all() and (la == lb).all()
    assert (ds.shared_test[0] == loaded.shared_test[0]).all()
    assert (ds.shared_test[1] == loaded.shared_test[1]).all()
    for (fa, la), (fb, lb) in zip(ds.detection_sets, loaded.detection_sets):
        assert (fa == fb).all() and (la == lb).all()
    assert (ds.class_means == loaded.class_means).all()


def test_parse_rejects_garbage():
    with pytest.raises(InputError):
        parse_dataset("nope\n")


def test_dump_is_deterministic():
    assert dump_dataset(small_dataset(seed=9)) == dump_dataset(small_dataset(seed=9))
