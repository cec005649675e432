import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrattrib.attribution import (AttributionTensor, BackgroundSample, LrpConfig, ShapConfig,
                                   attribute_windows, build_background, compute_lrp, compute_saliency,
                                   compute_shap, exact_shapley, letter_windows, load_tensor_json,
                                   lrp_relevances, sample_shapley, save_tensor_csv, save_tensor_json,
                                   shap_estimate)
from asrattrib.errors import EmptyInput, TooManyFeatures
from asrattrib.model import Dense, ModelParams, forward_trace, input_gradient, logits_batch
from conftest import linear_model, random_model


def brute_shapley(v, f):
    """Shapley values straight from the permutation definition (f! orders)."""
    phi = np.zeros(f)
    orders = list(itertools.permutations(range(f)))
    for order in orders:
        members = set()
        for p in order:
            before = v(frozenset(members))
            members.add(p)
            phi[p] += v(frozenset(members)) - before
    return phi / len(orders)


def _mask_game(v):
    return lambda mask: v(frozenset(np.flatnonzero(mask)))


# --- saliency -------------------------------------------------------------

def test_saliency_linear(rng):
    model = linear_model(rng)
    np.testing.assert_array_equal(compute_saliency(model, rng.normal(size=(19, 26)), 4),
                                  np.abs(model.layers[0].weight[4]).reshape(19, 26))


def test_saliency_is_abs_gradient(rng):
    model = random_model(rng)
    x = rng.normal(size=(19, 26))
    s = compute_saliency(model, x, 11)
    assert np.all(s >= 0)
    np.testing.assert_array_equal(s, np.abs(input_gradient(model, x, 11)))


def test_saliency_matches_fd(rng):
    model = random_model(rng)
    x = rng.normal(size=(19, 26)).reshape(-1)
    s = compute_saliency(model, x, 2).reshape(-1)
    for p in rng.choice(494, 30, replace=False):
        up, down = x.copy(), x.copy()
        up[p] += 1e-5
        down[p] -= 1e-5
        fd = abs(forward_trace(model, up).logits[2] - forward_trace(model, down).logits[2]) / 2e-5
        if s[p] > 1e-8:
            assert abs(s[p] - fd) / s[p] < 1e-5


# --- LRP ------------------------------------------------------------------

def test_lrp_single_layer(rng):
    model = random_model(rng, hidden=(), bias_scale=0)
    x = rng.normal(size=(19, 26))
    r = compute_lrp(model, x, 6, LrpConfig(0.0))
    np.testing.assert_allclose(r, (model.layers[0].weight[6] * x.reshape(-1)).reshape(19, 26), rtol=1e-12, atol=1e-15)


def test_lrp_single_layer_with_bias_hand_computed():
    w = np.zeros((28, 494))
    w[0, :3] = [1.0, 2.0, -1.0]
    model = ModelParams((Dense(w, np.full(28, 1.0)),))
    x = np.zeros(494)
    x[:3] = [1.0, 1.0, 1.0]
    # z = (1, 2, -1), sum z + b = 3, logit = 3
    r = compute_lrp(model, x, 0, LrpConfig(0.0)).reshape(-1)
    np.testing.assert_allclose(r[:3], [1.0, 2.0, -1.0], rtol=1e-15)
    r = compute_lrp(model, x, 0, LrpConfig(1e-4)).reshape(-1)
    np.testing.assert_allclose(r[:3], np.array([1.0, 2.0, -1.0]) / 1.0001, rtol=1e-15)


@pytest.mark.parametrize("hidden", [(), (64,), (128, 128), (32, 16, 8)])
def test_lrp_conservation(rng, hidden):
    model = random_model(rng, hidden=hidden, bias_scale=0)
    x = rng.normal(size=(19, 26))
    c = 9
    logit = forward_trace(model, x).logits[c]
    layers = lrp_relevances(model, x, c, LrpConfig(0.0))
    assert abs(layers[0].sum() - logit) <= 1e-9 * abs(logit)
    for lo, hi in zip(layers, layers[1:]):
        assert abs(lo.sum() - hi.sum()) <= 1e-9 * abs(hi.sum())


def test_lrp_epsilon_absorption(rng):
    model = random_model(rng, hidden=(128, 128), bias_scale=0)
    x = rng.normal(size=(19, 26))
    eps = 1e-4
    logit = forward_trace(model, x).logits[0]
    layers = lrp_relevances(model, x, 0, LrpConfig(eps))
    for lo, hi in zip(layers, layers[1:]):
        assert abs(lo.sum() - hi.sum() / (1 + eps)) <= 1e-9 * abs(hi.sum())
    assert abs(layers[0].sum() - logit / (1 + eps) ** 3) <= 1e-9 * abs(logit)


def test_lrp_guarded_division():
    # the only hidden unit has exactly zero net input, so no relevance can pass
    w1 = np.zeros((1, 494))
    w2 = np.ones((28, 1))
    model = ModelParams((Dense(w1, np.zeros(1)), Dense(w2, np.full(28, 2.0))))
    r = compute_lrp(model, np.ones(494), 0, LrpConfig(0.0))
    assert np.all(r == 0) and np.all(np.isfinite(r))


def test_lrp_ignores_zero_inputs(rng):
    model = random_model(rng)
    x = rng.normal(size=(19, 26))
    x[:4] = 0.0
    assert not compute_lrp(model, x, 3)[:4].any()


def test_lrp_default_epsilon():
    assert LrpConfig().epsilon == 1e-4
    with pytest.raises(ValueError):
        LrpConfig(-1.0)


# --- background -----------------------------------------------------------

def test_background_single():
    w = np.arange(494.0).reshape(19, 26)
    np.testing.assert_array_equal(build_background([w]).values, w)


def test_background_odd_median():
    ws = [np.full((19, 26), v) for v in (9.0, 1.0, 5.0)]
    assert np.all(build_background(ws).values == 5.0)


def test_background_lower_median():
    ws = [np.full((19, 26), v) for v in (4.0, 1.0, 3.0, 2.0)]
    assert np.all(build_background(ws).values == 2.0)


def test_background_empty():
    with pytest.raises(EmptyInput):
        build_background([])


def test_letter_windows_excludes_space(rng):
    w = np.zeros((28, 494))
    w[26, 0] = 1.0  # space wins when feature 0 is positive
    w[0, 0] = -1.0
    model = ModelParams((Dense(w, np.zeros(28)),))
    windows = np.zeros((3, 19, 26))
    windows[0, 0, 0] = 1.0
    windows[1, 0, 0] = -1.0
    windows[2, 0, 0] = -2.0
    picked = letter_windows(model, windows)
    assert len(picked) == 2 and np.all(picked[:, 0, 0] < 0)


# --- exact Shapley --------------------------------------------------------

def test_exact_product_game():
    phi = exact_shapley(lambda m: float(m[0] and m[1]), 2)
    assert phi.tolist() == [0.5, 0.5]


def test_exact_dummy():
    phi = exact_shapley(lambda m: 3.0 * m[0] + 2.0 * (m[1] and m[2]), 5)
    assert phi[3] == 0.0 and phi[4] == 0.0
    assert phi[1] == phi[2]
    np.testing.assert_allclose(phi[:3], [3.0, 1.0, 1.0], rtol=1e-14)


def test_exact_too_many():
    with pytest.raises(TooManyFeatures):
        exact_shapley(lambda m: 0.0, 21)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_exact_matches_permutation_definition(f, seed):
    payoff = np.random.default_rng(seed).integers(-50, 50, 2 ** f).astype(float)
    v = lambda members: payoff[sum(1 << p for p in members)]
    phi = exact_shapley(_mask_game(v), f)
    np.testing.assert_allclose(phi, brute_shapley(v, f), atol=1e-10)
    assert abs(phi.sum() - (payoff[-1] - payoff[0])) < 1e-10


def test_exact_batched_equals_scalar(rng):
    payoff = rng.normal(size=2 ** 7)
    codes = lambda masks: masks @ (1 << np.arange(7))
    np.testing.assert_array_equal(exact_shapley(lambda m: payoff[codes(m)], 7, batched=True),
                                  exact_shapley(lambda m: payoff[int(codes(m))], 7))


# --- sampled SHAP ---------------------------------------------------------

def test_shap_additive_model(rng):
    w = np.zeros((28, 494))
    w[1] = 1.0
    model = ModelParams((Dense(w, np.zeros(28)),))
    x = rng.normal(size=(19, 26))
    for m in (1, 7):
        phi = compute_shap(model, x, 1, ShapConfig(m, seed=3))
        np.testing.assert_allclose(phi, x, rtol=0, atol=1e-12)


def _and_model(p, q):
    # hidden unit relu(x_p + x_q - 1) equals x_p * x_q on {0, 1}^2
    w1 = np.zeros((1, 494))
    w1[0, [p, q]] = 1.0
    w2 = np.zeros((28, 1))
    w2[0, 0] = 1.0
    return ModelParams((Dense(w1, np.array([-1.0])), Dense(w2, np.zeros(28))))


def test_shap_product_game():
    model = _and_model(10, 200)
    x = np.zeros(494)
    x[[10, 200]] = 1.0
    est = shap_estimate(model, x, 0, ShapConfig(2000, seed=5))
    flat, se = est.values.reshape(-1), est.stderr.reshape(-1)
    for p in (10, 200):
        assert abs(flat[p] - 0.5) <= 3 * se[p]
    assert flat[10] + flat[200] == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(flat) == 2


def test_shap_matches_exact_on_restricted_model(rng):
    model = random_model(rng, hidden=(32, 32))
    bg = rng.normal(size=494)
    x = bg.copy()
    active = rng.choice(494, 8, replace=False)
    x[active] += rng.normal(size=8) * 3

    def game(masks):
        inputs = np.repeat(bg[None], len(masks), axis=0)
        for col, p in enumerate(active):
            inputs[masks[:, col], p] = x[p]
        return logits_batch(model, inputs)[:, 4]

    exact = exact_shapley(game, 8, batched=True)
    est = shap_estimate(model, x, 4, ShapConfig(2000, 17, BackgroundSample(bg.reshape(19, 26))))
    got, se = est.values.reshape(-1)[active], est.stderr.reshape(-1)[active]
    assert np.mean(np.abs(got - exact) <= 3 * se) >= 0.95


def test_shap_efficiency_and_determinism(rng):
    model = random_model(rng)
    x = rng.normal(size=(19, 26))
    bg = BackgroundSample(rng.normal(size=(19, 26)))
    config = ShapConfig(30, 99, bg)
    a = compute_shap(model, x, 8, config)
    b = compute_shap(model, x, 8, config)
    assert a.tobytes() == b.tobytes()
    gap = logits_batch(model, x)[0, 8] - logits_batch(model, bg.values)[0, 8]
    assert abs(a.sum() - gap) < 1e-9
    assert compute_shap(model, x, 8, ShapConfig(30, 100, bg)).tobytes() != a.tobytes()


def test_fast_walk_agrees_with_generic_sampler(rng):
    model = random_model(rng, hidden=(16,))
    x = rng.normal(size=494)
    bg = rng.normal(size=494)
    fast = shap_estimate(model, x, 2, ShapConfig(12, 4, BackgroundSample(bg.reshape(19, 26))))
    slow = sample_shapley(lambda h: logits_batch(model, h)[:, 2], x, bg, 12, 4)
    np.testing.assert_allclose(fast.values.reshape(-1), slow.values, atol=1e-10)


def test_shap_seed_depends_on_window_index(rng):
    model = random_model(rng, hidden=(16,))
    x = rng.normal(size=(19, 26))
    config = ShapConfig(5, 42)
    assert compute_shap(model, x, 0, config, window_index=0).tobytes() == compute_shap(model, x, 0, config).tobytes()
    assert compute_shap(model, x, 0, config, window_index=3).tobytes() != compute_shap(model, x, 0, config).tobytes()


def test_shap_config_validation():
    assert ShapConfig().num_permutations == 2000
    with pytest.raises(ValueError):
        ShapConfig(0)


# --- tensors --------------------------------------------------------------

@pytest.mark.parametrize("method", ["saliency", "lrp", "shap"])
def test_attribute_windows_shape_and_targets(rng, method):
    model = random_model(rng, hidden=(16,))
    windows = rng.normal(size=(6, 19, 26))
    tensor = attribute_windows(model, windows, method, shap_config=ShapConfig(3, 1))
    assert tensor.values.shape == (6, 19, 26)
    np.testing.assert_array_equal(tensor.targets, np.argmax(logits_batch(model, windows), axis=1))
    assert np.all(np.isfinite(tensor.values))


def test_attribute_windows_threads_are_invisible(rng):
    model = random_model(rng, hidden=(16,))
    windows = rng.normal(size=(9, 19, 26))
    config = ShapConfig(4, 7)
    one = attribute_windows(model, windows, "shap", shap_config=config, threads=1)
    many = attribute_windows(model, windows, "shap", shap_config=config, threads=8)
    assert one.values.tobytes() == many.values.tobytes()


def test_attribute_windows_unknown_method(rng):
    with pytest.raises(ValueError):
        attribute_windows(random_model(rng, hidden=(4,)), np.zeros((1, 19, 26)), "occlusion")


def test_tensor_json_round_trip(tmp_path, rng):
    tensor = AttributionTensor(rng.normal(size=(3, 19, 26)), "lrp", [1, 2, 3], {"epsilon": 1e-4})
    save_tensor_json(tensor, tmp_path / "a.json")
    back = load_tensor_json(tmp_path / "a.json")
    assert back.values.tobytes() == tensor.values.tobytes()
    assert back.method == "lrp" and back.targets.tolist() == [1, 2, 3] and back.config == {"epsilon": 1e-4}


def test_tensor_csv_layout(tmp_path, rng):
    tensor = AttributionTensor(rng.normal(size=(2, 19, 26)), "saliency", [0, 0])
    save_tensor_csv(tensor, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 19
    assert lines[0].split(",")[:3] == ["window", "position", "mfcc_0"]
    row = lines[1 + 19 + 4].split(",")
    assert row[:2] == ["1", "4"]
    np.testing.assert_allclose([float(v) for v in row[2:]], tensor.values[1, 4], rtol=1e-8)
