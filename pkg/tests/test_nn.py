import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sigforge.errors import DegenerateLabels, NonFiniteGradient, ShapeMismatch
from sigforge.nn import (
    ArchConfig,
    Hyper,
    TrainState,
    adam_step,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    init_params,
    load_params,
    loss_and_grads,
    lstm_forward,
    model_forward,
    model_logits,
    param_shapes,
    relu_backward,
    relu_forward,
    save_params,
    sigmoid,
    sigmoid_bce,
    train_model,
)
from sigforge.nn import gradcheck as gc
from sigforge.nn.model import ModelParams


def rng_for(i):
    return np.random.default_rng([2024, i])


# --- conv1d ----------------------------------------------------------------------

def test_conv_identity_kernel():
    x = rng_for(0).normal(size=(2, 9, 1))
    w = np.array([0, 0, 1, 0, 0], dtype=float).reshape(1, 1, 5)
    out, _ = conv1d_forward(x, w, np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_conv_ones_hand_arithmetic():
    out, _ = conv1d_forward(np.ones((1, 8, 1)), np.ones((1, 1, 3)), np.zeros(1))
    np.testing.assert_array_equal(out[0, :, 0], [2, 3, 3, 3, 3, 3, 3, 2])


def test_conv_matches_definition():
    rng = rng_for(1)
    x = rng.normal(size=(2, 7, 3))
    w = rng.normal(size=(4, 3, 5))
    b = rng.normal(size=4)
    out, _ = conv1d_forward(x, w, b)
    B, L, C = x.shape
    for n in range(B):
        for t in range(L):
            for f in range(4):
                acc = b[f]
                for c in range(C):
                    for j in range(5):
                        s = t + j - 2
                        if 0 <= s < L:
                            acc += x[n, s, c] * w[f, c, j]
                assert out[n, t, f] == pytest.approx(acc, rel=1e-12, abs=1e-12)


def test_conv_gradients():
    errs = gc.check_conv1d(rng_for(2))
    assert max(errs.values()) <= 1e-6, errs


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        conv1d_forward(np.zeros((1, 5, 2)), np.zeros((1, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeMismatch):
        conv1d_forward(np.zeros((1, 5, 1)), np.zeros((1, 1, 4)), np.zeros(1))


# --- batch norm --------------------------------------------------------------------

def test_batchnorm_train_moments():
    # output variance is var/(var+eps), so the 1e-6 bound needs batch variance >= 10
    x = rng_for(3).normal(size=(5, 11, 4)) * 5 + 7
    out, _, _ = batchnorm_forward(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), True)
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=(0, 1)), 1, atol=1e-6)


def test_batchnorm_affine():
    x = rng_for(4).normal(size=(6, 3))
    base, _, _ = batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), True)
    out, _, _ = batchnorm_forward(x, np.full(3, 2.0), np.full(3, 3.0), np.zeros(3), np.ones(3), True)
    np.testing.assert_allclose(out, 2 * base + 3, rtol=1e-14, atol=1e-14)


def test_batchnorm_running_stats_and_eval():
    x = rng_for(5).normal(size=(8, 2)) + 4
    rm, rv = np.zeros(2), np.ones(2)
    _, _, (nm, nv) = batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, True)
    np.testing.assert_allclose(nm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(nv, 0.9 + 0.1 * x.var(axis=0))
    assert np.array_equal(rm, [0, 0]) and np.array_equal(rv, [1, 1])
    out, _, stats = batchnorm_forward(x, np.ones(2), np.zeros(2), nm, nv, False)
    np.testing.assert_allclose(out, (x - nm) / np.sqrt(nv + 1e-5))
    assert stats[0] is nm and stats[1] is nv


def test_batchnorm_single_value_falls_back():
    x = np.array([[3.0, -1.0]])
    out, _, (nm, _) = batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), True)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5))
    assert np.all(np.isfinite(out)) and not np.array_equal(nm, [0, 0])


def test_batchnorm_gradients():
    errs = gc.check_batchnorm(rng_for(6))
    assert max(errs.values()) <= 1e-6, errs


# --- relu / sigmoid / bce ----------------------------------------------------------

def test_relu_examples():
    out, mask = relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0, 0, 2])
    np.testing.assert_array_equal(relu_backward(np.ones(3), mask), [0, 0, 1])
    neg = -np.abs(rng_for(7).normal(size=10)) - 0.1
    out, mask = relu_forward(neg)
    assert np.all(out == 0) and np.all(relu_backward(np.ones(10), mask) == 0)


def test_relu_gradients():
    assert max(gc.check_relu(rng_for(8)).values()) <= 1e-6


def test_sigmoid_bce_examples():
    p, loss, grad = sigmoid_bce(0.0, 1.0)
    assert p == 0.5 and loss == pytest.approx(math.log(2), abs=1e-12) and grad == -0.5
    _, loss, _ = sigmoid_bce(700.0, 1.0)
    assert 0 <= loss < 1e-300
    p, loss, grad = sigmoid_bce(2.0, 0.0)
    assert float(loss) == pytest.approx(2.126928, abs=1e-6)
    assert float(grad) == pytest.approx(0.880797, abs=1e-6) and grad == p


@given(st.floats(-700, 700), st.sampled_from([0.0, 1.0]))
def test_bce_nonnegative_and_probability_open(z, y):
    p, loss, grad = sigmoid_bce(z, y)
    assert loss >= 0 and np.isfinite(loss)
    assert 0 <= p <= 1 and grad == p - y
    if abs(z) < 30:
        assert 0 < p < 1


def test_sigmoid_bce_gradients():
    assert max(gc.check_sigmoid_bce(rng_for(9)).values()) <= 1e-7


def test_sigmoid_extremes():
    np.testing.assert_array_equal(sigmoid(np.array([-1000.0, 1000.0])), [0.0, 1.0])


# --- dense / dropout ----------------------------------------------------------------

def test_dense_examples():
    x = rng_for(10).normal(size=(3, 4))
    np.testing.assert_array_equal(dense_forward(x, np.eye(4), np.zeros(4))[0], x)
    out, _ = dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
    np.testing.assert_array_equal(out, [[3.0, 3.0]])
    with pytest.raises(ShapeMismatch):
        dense_forward(x, np.eye(3), np.zeros(3))


def test_dense_gradients():
    assert max(gc.check_dense(rng_for(11)).values()) <= 1e-7


def test_dropout_identities():
    x = rng_for(12).normal(size=(4, 5))
    for train in (True, False):
        out, mask = dropout_forward(x, 0.0, train, np.random.default_rng(0))
        assert out is x and mask is None
    out, _ = dropout_forward(x, 0.9, False, None)
    assert out is x
    with pytest.raises(ValueError):
        dropout_forward(x, 1.0, True, np.random.default_rng(0))


def test_dropout_law_of_large_numbers():
    out, mask = dropout_forward(np.ones(10**5), 0.5, True, np.random.default_rng(13))
    assert 0.99 <= out.mean() <= 1.01
    assert set(np.unique(out).tolist()) <= {0.0, 2.0}
    np.testing.assert_array_equal(dropout_backward(np.ones(10**5), mask), out)


def test_dropout_seeded():
    a, _ = dropout_forward(np.ones(50), 0.3, True, np.random.default_rng(4))
    b, _ = dropout_forward(np.ones(50), 0.3, True, np.random.default_rng(4))
    assert np.array_equal(a, b)


# --- LSTM ----------------------------------------------------------------------------

def test_lstm_zero_dynamics():
    H = 5
    x = rng_for(14).normal(size=(2, 6, 3))
    hs, _ = lstm_forward(x, np.zeros((4 * H, 3)), np.zeros((4 * H, H)), np.zeros(4 * H))
    assert np.all(hs == 0)


def _sig(a):
    return 1 / (1 + math.exp(-a))


def test_lstm_single_step_oracle():
    rng = rng_for(15)
    C, H = 3, 4
    x = rng.normal(size=(1, 1, C))
    w, u, b = rng.normal(size=(4 * H, C)), rng.normal(size=(4 * H, H)), rng.normal(size=4 * H)
    hs, _ = lstm_forward(x, w, u, b)
    for j in range(H):
        pre = [sum(w[q * H + j, c] * x[0, 0, c] for c in range(C)) + b[q * H + j] for q in range(4)]
        i, g, o = _sig(pre[0]), math.tanh(pre[2]), _sig(pre[3])
        c = i * g  # forget gate multiplies c0 = 0
        assert hs[0, 0, j] == pytest.approx(o * math.tanh(c), rel=1e-12, abs=1e-15)


def test_lstm_two_steps_recurrence():
    rng = rng_for(16)
    C, H = 2, 3
    x = rng.normal(size=(1, 2, C))
    w, u, b = rng.normal(size=(4 * H, C)), rng.normal(size=(4 * H, H)), rng.normal(size=4 * H)
    hs, _ = lstm_forward(x, w, u, b)
    h, c = np.zeros(H), np.zeros(H)
    for t in range(2):
        a = w @ x[0, t] + u @ h + b
        i, f, g, o = (1 / (1 + np.exp(-a[:H])), 1 / (1 + np.exp(-a[H:2 * H])), np.tanh(a[2 * H:3 * H]),
                      1 / (1 + np.exp(-a[3 * H:])))
        c = f * c + i * g
        h = o * np.tanh(c)
        np.testing.assert_allclose(hs[0, t], h, rtol=1e-12, atol=1e-15)


def test_lstm_gradients():
    errs = gc.check_lstm(rng_for(17))
    assert max(errs.values()) <= 1e-5, errs


def test_lstm_shape_error():
    with pytest.raises(ShapeMismatch):
        lstm_forward(np.zeros((1, 3, 2)), np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))


# --- model ------------------------------------------------------------------------------

def test_param_count_closed_form():
    params = init_params(ArchConfig(input_len=80), 0)
    sizes = {}
    for name, arr in params.arrays.items():
        block = name.split(".")[0]
        sizes[block] = sizes.get(block, 0) + (0 if ".running_" in name else arr.size)
    assert sizes == {"conv1": 192, "bn1": 64, "conv2": 6208, "bn2": 128, "lstm": 12416,
                     "fc1": 81952, "fc2": 1056, "bn3": 64, "out": 33}
    assert params.count() == 102113
    assert params.count(include_state=True) == 102113 + 256
    assert ArchConfig(input_len=80).flatten_width == 2560


def test_arch_config_errors():
    with pytest.raises(ShapeMismatch):
        ArchConfig(input_len=4)
    with pytest.raises(ShapeMismatch):
        ArchConfig(input_len=12, conv2_kernel=4)
    with pytest.raises(ValueError):
        ArchConfig(input_len=12, dropout_rate=1.0)


def test_zero_params_give_half():
    cfg = ArchConfig(input_len=12)
    zero = ModelParams(cfg, {n: np.zeros(s) for n, s in param_shapes(cfg).items()})
    x = rng_for(18).normal(size=(5, 12)) * 10
    np.testing.assert_array_equal(model_forward(zero, x), np.full(5, 0.5))


def test_eval_is_pure_and_bit_stable():
    params = init_params(ArchConfig(input_len=12), 3)
    before = params.copy()
    x = rng_for(19).normal(size=(4, 12))
    a, b = model_forward(params, x), model_forward(params, x)
    assert a.tobytes() == b.tobytes()
    assert params.equals(before)
    assert np.all((a > 0) & (a < 1))
    single = model_forward(params, x[0])
    assert single.shape == (1,)
    np.testing.assert_allclose(single, a[:1], rtol=1e-12)


def test_model_shape_error():
    params = init_params(ArchConfig(input_len=12), 0)
    with pytest.raises(ShapeMismatch):
        model_logits(params, np.zeros((2, 11)))


def test_init_seeded_and_forget_bias():
    cfg = ArchConfig(input_len=12)
    a, b, c = init_params(cfg, 5), init_params(cfg, 5), init_params(cfg, 6)
    assert a.equals(b) and not a.equals(c)
    H = cfg.lstm_hidden
    assert np.all(a["lstm.b"][H:2 * H] == 1) and np.all(a["lstm.b"][:H] == 0)
    lim = math.sqrt(6 / (5 + 32 * 5))
    assert np.all(np.abs(a["conv1.W"]) <= lim)


def test_full_model_gradient_gate():
    for mode, errs in (("train", gc.check_model(rng_for(20))), ("eval", gc.check_model(rng_for(21), train=False))):
        assert max(errs.values()) <= 1e-4, (mode, errs)


def test_loss_returns_state_without_mutation():
    params = init_params(ArchConfig(input_len=12), 1)
    before = params.copy()
    x = rng_for(22).normal(size=(4, 12))
    loss, grads, state = loss_and_grads(params, x, np.array([1, 0, 1, 0]), np.random.default_rng(0))
    assert loss > 0 and params.equals(before)
    assert set(grads) == set(params.trainable())
    assert set(state) == {f"{bn}.running_{s}" for bn in ("bn1", "bn2", "bn3") for s in ("mean", "var")}


# --- Adam ---------------------------------------------------------------------------------

def _tiny_state():
    params = init_params(ArchConfig(input_len=5, conv1_filters=1, conv2_filters=1, lstm_hidden=1,
                                    fc1_units=1, fc2_units=1), 0)
    return TrainState.fresh(params)


def test_adam_first_step_value():
    state = _tiny_state()
    grads = {n: np.full(state.params[n].shape, 0.3) for n in state.params.trainable()}
    new = adam_step(state, grads)
    delta = new.params["out.b"] - state.params["out.b"]
    want = -1e-3 * 0.3 / (0.3 + 1e-8)
    assert delta[0] == pytest.approx(want, rel=1e-9)
    assert delta[0] == pytest.approx(-9.99997e-4, abs=5e-9)
    assert new.step == 1 and state.step == 0


def test_adam_zero_gradient_keeps_params():
    state = _tiny_state()
    zeros = {n: np.zeros(state.params[n].shape) for n in state.params.trainable()}
    cur = state
    for _ in range(5):
        cur = adam_step(cur, zeros)
    assert cur.params.equals(state.params) and cur.step == 5


def test_adam_deterministic_and_views():
    state = _tiny_state()
    rng = rng_for(23)
    grads = {n: rng.normal(size=state.params[n].shape) for n in state.params.trainable()}
    a, b = adam_step(state, grads), adam_step(state, grads)
    assert a.params.equals(b.params) and a.m.tobytes() == b.m.tobytes() and a.v.tobytes() == b.v.tobytes()
    np.testing.assert_allclose(a.adam_m["out.W"], 0.1 * grads["out.W"])
    np.testing.assert_allclose(a.adam_v["fc1.b"], 0.001 * grads["fc1.b"] ** 2)


def test_adam_non_finite():
    state = _tiny_state()
    grads = {n: np.zeros(state.params[n].shape) for n in state.params.trainable()}
    grads["lstm.U"] = np.full(grads["lstm.U"].shape, np.nan)
    with pytest.raises(NonFiniteGradient, match="lstm.U"):
        adam_step(state, grads)


# --- training -----------------------------------------------------------------------------

def toy_set(seed=0):
    rng = np.random.default_rng(seed)
    y = np.array([1.0, 0.0] * 10)
    x = rng.normal(size=(20, 12)) * 0.5 + np.where(y[:, None] > 0, 1.0, -1.0)
    return x, y


@pytest.fixture(scope="module")
def toy_run():
    x, y = toy_set()
    return train_model(x, y, ArchConfig(input_len=12), seed=7, hyper=Hyper(epochs=200))


def test_training_overfits_toy_set(toy_run):
    _, hist = toy_run
    assert len(hist.train_loss) == 200
    assert hist.train_loss[-1] < 0.05
    assert np.mean(hist.train_loss[-10:]) < np.mean(hist.train_loss[:10])
    assert hist.best_epoch == 199 and hist.val_loss == []


def test_training_deterministic(toy_run):
    x, y = toy_set()
    again, hist = train_model(x, y, ArchConfig(input_len=12), seed=7, hyper=Hyper(epochs=200))
    assert again.equals(toy_run[0]) and hist.train_loss == toy_run[1].train_loss


def test_training_with_validation_returns_best():
    x, y = toy_set(1)
    vx, vy = toy_set(2)
    params, hist = train_model(x, y, ArchConfig(input_len=12), seed=0, val=(vx, vy), hyper=Hyper(epochs=15))
    assert len(hist.val_loss) == 15
    assert hist.best_epoch == int(np.argmin(hist.val_loss))
    from sigforge.nn.train import eval_loss
    assert eval_loss(params, vx, vy) == pytest.approx(min(hist.val_loss), rel=1e-12)


def test_training_errors():
    x, _ = toy_set()
    with pytest.raises(DegenerateLabels):
        train_model(x, np.ones(20), ArchConfig(input_len=12), seed=0, hyper=Hyper(epochs=1))
    with pytest.raises(ShapeMismatch):
        train_model(x[:, :10], np.arange(20) % 2, ArchConfig(input_len=12), seed=0, hyper=Hyper(epochs=1))


def test_batch_of_one_trains():
    x = rng_for(24).normal(size=(2, 12))
    params, hist = train_model(x, np.array([1.0, 0.0]), ArchConfig(input_len=12), seed=0,
                               hyper=Hyper(epochs=3, batch_size=1))
    assert all(np.isfinite(hist.train_loss))
    assert np.all(np.isfinite(model_forward(params, x)))


# --- persistence --------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, toy_run):
    params = toy_run[0]
    bin_path, man_path = save_params(params, tmp_path / "w001", seed=9, extra={"g": 10})
    assert bin_path.stat().st_size == 8 * params.count(include_state=True)
    text = man_path.read_text()
    assert text.startswith("#MODEL seed=9 ") and "#echo g=10" in text
    back = load_params(tmp_path / "w001")
    assert back.equals(params)
    x, _ = toy_set()
    assert model_forward(back, x).tobytes() == model_forward(params, x).tobytes()


def test_load_truncated_blob(tmp_path):
    from sigforge.errors import DataError
    params = init_params(ArchConfig(input_len=12), 0)
    bin_path, _ = save_params(params, tmp_path / "m")
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(DataError):
        load_params(tmp_path / "m")


def test_train_state_step_counts_calls():
    state = _tiny_state()
    grads = {n: np.ones(state.params[n].shape) for n in state.params.trainable()}
    for i in range(3):
        state = adam_step(state, grads)
    assert state.step == 3
    assert replace(state, step=0).step == 0
