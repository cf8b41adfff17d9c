import numpy as np
import pytest

from layerfed.errors import ConfigError, InputError, NumericError
from layerfed.models import (
    COMMON,
    PRIVATE,
    LayerSpec,
    LayeredModel,
    accuracy,
    apply_param_views,
    convex_specs,
    dump_checkpoint,
    extract_params,
    flat_params,
    forward,
    init_layered_model,
    load_checkpoint,
    loss_and_gradient,
    parse_checkpoint,
    save_checkpoint,
    sgd_step,
    split_flat_params,
    validate_specs,
)
from oracles import finite_difference_gradients, random_small_model

SPECS_4_3_2 = [
    LayerSpec("h1", 4, 3, "relu", COMMON),
    LayerSpec("head", 3, 2, "softmax-output", PRIVATE),
]


def test_init_shapes_and_zero_bias():
    model = init_layered_model(SPECS_4_3_2, seed=7)
    assert model.num_params == 15 + 8 == 23
    for b in model.biases:
        assert (b == 0.0).all()


def test_init_deterministic():
    a = init_layered_model(SPECS_4_3_2, seed=7)
    b = init_layered_model(SPECS_4_3_2, seed=7)
    for wa, wb in zip(a.weights, b.weights):
        assert (wa == wb).all()
    c = init_layered_model(SPECS_4_3_2, seed=8)
    assert any((wa != wc).any() for wa, wc in zip(a.weights, c.weights))


def test_init_weight_scale():
    model = init_layered_model(SPECS_4_3_2, seed=3)
    assert np.abs(model.weights[0]).max() <= 1 / np.sqrt(4)
    assert np.abs(model.weights[1]).max() <= 1 / np.sqrt(3)


def test_chain_mismatch_rejected():
    bad = [
        LayerSpec("a", 3, 2, "relu", COMMON),
        LayerSpec("b", 4, 2, "softmax-output", PRIVATE),
    ]
    with pytest.raises(ConfigError):
        validate_specs(bad)


def test_softmax_layer_must_be_last_and_unique():
    with pytest.raises(ConfigError):
        validate_specs([LayerSpec("a", 3, 2, "softmax-output", COMMON), LayerSpec("b", 2, 2, "relu", COMMON)])
    with pytest.raises(ConfigError):
        validate_specs([LayerSpec("a", 3, 2, "relu", COMMON)])


def test_forward_uniform_with_zero_weights():
    model = init_layered_model(SPECS_4_3_2, seed=0)
    zeroed = LayeredModel(model.specs, [np.zeros_like(w) for w in model.weights], model.biases)
    probs = forward(zeroed, np.ones((3, 4)))
    np.testing.assert_allclose(probs, 0.5, atol=1e-12)


def test_forward_matches_hand_matrix_product():
    # 2x2 identity hidden layer, hand computed logits
    specs = [LayerSpec("lin", 2, 2, "identity", COMMON), LayerSpec("out", 2, 2, "softmax-output", PRIVATE)]
    w1 = np.array([[1.0, 2.0], [0.5, -1.0]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([[1.0, 0.0], [0.0, 1.0]])
    b2 = np.zeros(2)
    model = LayeredModel(specs, [w1, w2], [b1, b2])
    x = np.array([[0.3, -0.7]])
    hidden = x @ w1.T + b1
    logits = hidden @ w2.T + b2
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    np.testing.assert_allclose(forward(model, x), expected, rtol=1e-12)


def test_forward_rows_sum_to_one():
    rng = np.random.default_rng(11)
    for _ in range(20):
        model, x, _ = random_small_model(rng)
        probs = forward(model, x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_forward_rejects_nonfinite_input():
    model = init_layered_model(SPECS_4_3_2, seed=0)
    with pytest.raises(NumericError):
        forward(model, np.array([[1.0, np.nan, 0.0, 0.0]]))


def test_forward_rejects_bad_width():
    model = init_layered_model(SPECS_4_3_2, seed=0)
    with pytest.raises(InputError):
        forward(model, np.ones((2, 5)))


def test_loss_perfect_prediction_near_zero():
    # huge margin logits make the softmax effectively one-hot
    specs = convex_specs(2, 2)
    w = np.array([[40.0, 0.0], [-40.0, 0.0]])
    model = LayeredModel(specs, [w], [np.zeros(2)])
    loss, _ = loss_and_gradient(model, np.array([[1.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-9)


def test_loss_uniform_two_classes_is_ln2():
    specs = convex_specs(3, 2)
    model = LayeredModel(specs, [np.zeros((2, 3))], [np.zeros(2)])
    loss, _ = loss_and_gradient(model, np.ones((4, 3)), np.array([0, 1, 0, 1]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_empty_batch_rejected():
    model = init_layered_model(SPECS_4_3_2, seed=0)
    with pytest.raises(InputError):
        loss_and_gradient(model, np.zeros((0, 4)), np.zeros(0, dtype=int))


def test_label_out_of_range_rejected():
    model = init_layered_model(SPECS_4_3_2, seed=0)
    with pytest.raises(InputError):
        loss_and_gradient(model, np.ones((1, 4)), np.array([2]))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1234)
    checked = 0
    while checked < 10:
        model, x, y = random_small_model(rng)
        _, grads = loss_and_gradient(model, x, y)
        fd = finite_difference_gradients(model, x, y)
        for (aw, ab), (nw, nb) in zip(grads, fd):
            np.testing.assert_allclose(aw, nw, rtol=1e-5, atol=1e-7)
            np.testing.assert_allclose(ab, nb, rtol=1e-5, atol=1e-7)
        checked += 1


def test_sgd_step_arithmetic():
    specs = convex_specs(1, 2)
    model = LayeredModel(specs, [np.array([[1.0], [0.0]])], [np.zeros(2)])
    grads = [(np.array([[0.5], [0.0]]), np.zeros(2))]
    stepped = sgd_step(model, grads, lr=0.01)
    assert stepped.weights[0][0, 0] == pytest.approx(0.995)


def test_sgd_zero_gradient_is_identity():
    model = init_layered_model(SPECS_4_3_2, seed=5)
    grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]
    stepped = sgd_step(model, grads, lr=0.3)
    for wa, wb in zip(model.weights, stepped.weights):
        assert (wa == wb).all()


def test_sgd_two_steps_equal_summed_gradients_on_dyadic_values():
    # dyadic rationals keep float arithmetic exact
    specs = convex_specs(1, 2)
    model = LayeredModel(specs, [np.array([[1.0], [2.0]])], [np.array([0.5, -0.5])])
    g1 = [(np.array([[0.25], [0.5]]), np.array([0.125, 0.25]))]
    g2 = [(np.array([[0.5], [0.25]]), np.array([0.25, 0.125]))]
    gsum = [(g1[0][0] + g2[0][0], g1[0][1] + g2[0][1])]
    a = sgd_step(sgd_step(model, g1, 0.5), g2, 0.5)
    b = sgd_step(model, gsum, 0.5)
    for wa, wb in zip(a.weights, b.weights):
        assert (wa == wb).all()
    for ba, bb in zip(a.biases, b.biases):
        assert (ba == bb).all()


def test_sgd_rejects_nonpositive_lr():
    model = init_layered_model(SPECS_4_3_2, seed=0)
    grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]
    with pytest.raises(ConfigError):
        sgd_step(model, grads, lr=0.0)


def test_extract_params_filtering_and_lengths():
    model = init_layered_model(SPECS_4_3_2, seed=2)
    common = extract_params(model, COMMON)
    assert len(common) == 1 and common[0].layer_name == "h1"
    expected = np.concatenate([model.weights[0].ravel(), model.biases[0]])
    assert (common[0].values == expected).all()
    everything = extract_params(model, "all")
    assert sum(len(v) for v in everything) == model.num_params


def test_param_view_roundtrip_is_identity():
    model = init_layered_model(SPECS_4_3_2, seed=9)
    rebuilt = apply_param_views(model, extract_params(model, "all"))
    for wa, wb in zip(model.weights, rebuilt.weights):
        assert (wa == wb).all()
    for ba, bb in zip(model.biases, rebuilt.biases):
        assert (ba == bb).all()


def test_split_flat_roundtrip():
    model = init_layered_model(SPECS_4_3_2, seed=9)
    flat = flat_params(model, "all")
    views = split_flat_params(flat, model, "all")
    rebuilt = apply_param_views(model, views)
    assert (flat_params(rebuilt, "all") == flat).all()


def test_checkpoint_roundtrip_exact(tmp_path):
    model = init_layered_model(SPECS_4_3_2, seed=42)
    path = tmp_path / "model.txt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.model_id == model.model_id
    assert loaded.specs == model.specs
    for wa, wb in zip(model.weights, loaded.weights):
        assert (wa == wb).all()


def test_checkpoint_rejects_garbage():
    with pytest.raises(InputError):
        parse_checkpoint("not a checkpoint\n")


def test_convex_mode_loss_nonincreasing():
    rng = np.random.default_rng(77)
    x = rng.normal(size=(64, 5))
    y = rng.integers(0, 3, size=64)
    model = init_layered_model(convex_specs(5, 3), seed=1)
    prev = np.inf
    for _ in range(200):
        loss, grads = loss_and_gradient(model, x, y)
        assert loss <= prev
        prev = loss
        model = sgd_step(model, grads, 0.01)


def test_determinism_after_training_steps():
    def run():
        rng = np.random.default_rng(5)
        x = rng.normal(size=(32, 4))
        y = rng.integers(0, 2, size=32)
        model = init_layered_model(SPECS_4_3_2, seed=3)
        for _ in range(10):
            _, grads = loss_and_gradient(model, x, y)
            model = sgd_step(model, grads, 0.05)
        return dump_checkpoint(model)

    assert run() == run()


def test_accuracy_on_separable_data():
    rng = np.random.default_rng(8)
    x = np.vstack([rng.normal(-3, 0.3, size=(50, 4)), rng.normal(3, 0.3, size=(50, 4))])
    y = np.array([0] * 50 + [1] * 50)
    model = init_layered_model(convex_specs(4, 2), seed=0)
    for _ in range(200):
        _, grads = loss_and_gradient(model, x, y)
        model = sgd_step(model, grads, 0.1)
    assert accuracy(model, x, y) == 1.0
