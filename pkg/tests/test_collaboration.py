import numpy as np
import pytest

from layerfed.collaboration import (
    ModelProfile,
    ResilienceParams,
    adaptability,
    compatibility,
    consensus_accuracy,
    experience_profile,
    knowledge_share,
    learning_enhancement,
    learning_stability,
    negotiate_decision,
    resilience,
    update_rate,
)
from layerfed.errors import InputError
from layerfed.models import LayerSpec, LayeredModel, ParamView, convex_specs, init_layered_model


def profile(mid, experience, expertise, alpha=0.5, beta=0.5):
    return ModelProfile(mid, experience, expertise, alpha, beta)


class TestKnowledgeShare:
    def test_weighted_average(self):
        k = knowledge_share(profile(0, 0, 0), profile(1, 0.8, 0.6))
        assert k == pytest.approx(0.7)

    def test_degenerate_weights(self):
        k = knowledge_share(profile(0, 0, 0, alpha=1.0, beta=0.0), profile(1, 0.8, 0.6))
        assert k == 0.8

    def test_direct_formula(self):
        k = knowledge_share(profile(0, 0, 0, alpha=0.3, beta=0.7), profile(1, 2.0, 0.5))
        assert k == pytest.approx(0.95)

    def test_self_share_rejected(self):
        with pytest.raises(InputError):
            knowledge_share(profile(3, 1, 1), profile(3, 1, 1))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InputError):
            ModelProfile(0, 1.0, 0.5, alpha_exp=0.5, beta_expertise=0.6)


class TestLearningEnhancement:
    def test_sum(self):
        receiver = profile(0, 0, 0)
        peers = [profile(1, 0.8, 0.6), profile(2, 0.4, 0.6)]
        assert learning_enhancement(receiver, peers) == pytest.approx(0.7 + 0.5)

    def test_empty_peers(self):
        assert learning_enhancement(profile(0, 0, 0), []) == 0.0

    def test_three_equal_peers(self):
        receiver = profile(0, 0, 0)
        peers = [profile(i, 0.4, 0.4) for i in (1, 2, 3)]
        assert learning_enhancement(receiver, peers) == pytest.approx(1.2)

    def test_monotone_in_peer_set(self):
        rng = np.random.default_rng(0)
        receiver = profile(0, 0, 0)
        peers = []
        last = 0.0
        for i in range(1, 8):
            peers.append(profile(i, float(rng.uniform(0, 2)), float(rng.uniform(0, 1))))
            value = learning_enhancement(receiver, peers)
            assert value >= last
            last = value


def constant_output_model(probs, input_dim=3, model_id=0):
    """Zero weights with biases = log(p) emit the same probability row everywhere."""
    specs = convex_specs(input_dim, len(probs))
    w = np.zeros((len(probs), input_dim))
    b = np.log(np.asarray(probs))
    return LayeredModel(specs, [w], [b], model_id=model_id)


class TestNegotiateDecision:
    def test_single_model_argmax(self):
        model = constant_output_model([0.2, 0.8])
        decision, consensus = negotiate_decision([model], np.zeros(3))
        assert decision == 1
        np.testing.assert_allclose(consensus, [0.2, 0.8], atol=1e-12)

    def test_tie_breaks_to_lowest_class(self):
        a = constant_output_model([0.25, 0.75])
        b = constant_output_model([0.75, 0.25])
        decision, consensus = negotiate_decision([a, b], np.zeros(3))
        np.testing.assert_allclose(consensus, [0.5, 0.5], atol=1e-12)
        assert decision == 0

    def test_consensus_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        specs = [LayerSpec("h", 4, 5, "relu", "common"), LayerSpec("o", 5, 3, "softmax-output", "private")]
        models = [init_layered_model(specs, seed=s) for s in range(5)]
        _, consensus = negotiate_decision(models, rng.normal(size=4))
        assert consensus.sum() == pytest.approx(1.0, abs=1e-9)

    def test_permutation_invariant(self):
        specs = [LayerSpec("h", 4, 5, "relu", "common"), LayerSpec("o", 5, 3, "softmax-output", "private")]
        models = [init_layered_model(specs, seed=s) for s in range(4)]
        x = np.random.default_rng(1).normal(size=4)
        d1, c1 = negotiate_decision(models, x)
        d2, c2 = negotiate_decision(models[::-1], x)
        assert d1 == d2
        np.testing.assert_allclose(c1, c2, atol=1e-12)

    def test_consensus_is_convex_combination(self):
        members = [
            constant_output_model([0.1, 0.9]),
            constant_output_model([0.5, 0.5]),
            constant_output_model([0.7, 0.3]),
        ]
        _, consensus = negotiate_decision(members, np.zeros(3))
        rows = np.array([[0.1, 0.9], [0.5, 0.5], [0.7, 0.3]])
        assert (consensus >= rows.min(axis=0) - 1e-12).all()
        assert (consensus <= rows.max(axis=0) + 1e-12).all()

    def test_empty_ensemble_rejected(self):
        with pytest.raises(InputError):
            negotiate_decision([], np.zeros(3))


class TestCompatibility:
    def view(self, values, name="h"):
        return ParamView(name, np.asarray(values, dtype=float), "common")

    def test_identical_is_one(self):
        v = self.view([1.0, 2.0, -3.0])
        assert compatibility(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_negated_is_minus_one(self):
        v = self.view([1.0, 2.0, -3.0])
        w = self.view([-1.0, -2.0, 3.0])
        assert compatibility(v, w) == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert compatibility(self.view([1.0, 0.0]), self.view([0.0, 1.0])) == 0.0

    def test_zero_norm_convention(self):
        assert compatibility(self.view([0.0, 0.0]), self.view([1.0, 1.0])) == 0.0

    def test_symmetric_to_the_last_bit(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a = self.view(rng.normal(size=20))
            b = self.view(rng.normal(size=20))
            assert compatibility(a, b) == compatibility(b, a)

    def test_name_and_size_mismatch_rejected(self):
        with pytest.raises(InputError):
            compatibility(self.view([1.0], "a"), self.view([1.0], "b"))
        with pytest.raises(InputError):
            compatibility(self.view([1.0, 2.0]), self.view([1.0]))


class TestAdaptabilityResilience:
    def test_frozen_layer_zero_update(self):
        snaps = [np.ones(4), np.ones(4), np.ones(4)]
        assert update_rate(snaps) == 0.0
        assert adaptability(snaps, compat=1.0) == 0.0

    def test_unit_change(self):
        snaps = [np.zeros(2), np.ones(2)]
        assert adaptability(snaps, compat=1.0) == pytest.approx(1.0)

    def test_zero_compat_annihilates(self):
        snaps = [np.zeros(2), np.full(2, 9.0)]
        assert adaptability(snaps, compat=0.0) == 0.0

    def test_needs_two_snapshots(self):
        with pytest.raises(InputError):
            adaptability([np.zeros(2)], compat=1.0)

    def test_resilience_degenerate_weights(self):
        snaps = [np.zeros(2), np.ones(2)]
        losses = [0.5, 0.4, 0.45]
        full_lear = resilience(snaps, losses, ResilienceParams(1.0), compat=0.7)
        assert full_lear == pytest.approx(learning_stability(losses))
        full_adap = resilience(snaps, losses, ResilienceParams(0.0), compat=0.7)
        assert full_adap == pytest.approx(adaptability(snaps, 0.7))

    def test_resilience_constant_losses(self):
        snaps = [np.zeros(2), np.full(2, 0.5)]
        value = resilience(snaps, [1.0, 1.0, 1.0], ResilienceParams(0.5), compat=1.0)
        # Lear = 1 (zero variance), Adap = 0.5
        assert value == pytest.approx(0.75)

    def test_resilience_needs_two_losses(self):
        with pytest.raises(InputError):
            resilience([np.zeros(2), np.ones(2)], [0.5], ResilienceParams(0.5), compat=1.0)

    def test_stability_window_uses_recent_losses(self):
        wild = [100.0, 0.0] * 5
        calm = wild + [0.3] * 5
        assert learning_stability(calm) == pytest.approx(1.0)


def test_experience_profile_normalized():
    assert experience_profile([100, 50, 0]) == [1.0, 0.5, 0.0]
    assert experience_profile([0, 0]) == [0.0, 0.0]


def test_consensus_accuracy_on_constant_models():
    data = np.zeros((10, 3))
    labels = np.array([1] * 10)
    good = constant_output_model([0.1, 0.9])
    assert consensus_accuracy([good], data, labels) == 1.0


def test_single_member_consensus_equals_model_accuracy():
    from layerfed.models import accuracy

    specs = [LayerSpec("h", 4, 5, "relu", "common"), LayerSpec("o", 5, 3, "softmax-output", "private")]
    model = init_layered_model(specs, seed=3)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4))
    y = rng.integers(0, 3, size=50)
    assert consensus_accuracy([model], x, y) == accuracy(model, x, y)
