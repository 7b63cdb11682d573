import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import central_difference

from ugsv.nncore import (NONE, SIGMOID, AdamState, DenseLayer, LstmCell, ShapeError, Tape, adam_update,
                         clip_by_global_norm, fc_apply, fc_backward, grad_check, load_checkpoint, lstm_run,
                         lstm_run_backward, lstm_step, save_checkpoint, softmax, softmax_ce, softmax_ce_grad)

# -log softmax((0.3, -0.2))[0] = log(1 + exp(-0.5)), evaluated with mpmath at 40 digits
SOFTMAX_EXAMPLE = 0.47407698418010668
# 100 Adam steps on w**2 from w=1 (alpha 1e-3), simulated with plain Python floats
ADAM_W100 = 0.901743598078609


# ----------------------------------------------------------------- dense --

def test_identity_layer_passes_input_through():
    layer = DenseLayer(np.eye(4), np.zeros(4), NONE)
    x = np.array([1.0, -2.0, 3.5, 0.0])
    np.testing.assert_array_equal(fc_apply(layer, x), x)


def test_zero_sigmoid_layer_outputs_half():
    layer = DenseLayer(np.zeros((5, 3)), np.zeros(3), SIGMOID)
    np.testing.assert_array_equal(fc_apply(layer, np.arange(5.0)), np.full(3, 0.5))


def test_fc1_shape_for_joint_plus_holistic_model():
    layer = DenseLayer.init(492, 400, SIGMOID, np.random.default_rng(0))
    assert fc_apply(layer, np.ones(492)).shape == (400,)


def test_fc_shape_mismatch():
    with pytest.raises(ShapeError):
        fc_apply(DenseLayer(np.zeros((3, 2)), np.zeros(2)), np.ones(4))


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_fc_is_linear_without_bias_and_activation(seed, a, b):
    rng = np.random.default_rng(seed)
    layer = DenseLayer(rng.normal(size=(6, 4)), np.zeros(4), NONE)
    x, y = rng.normal(size=6), rng.normal(size=6)
    np.testing.assert_allclose(fc_apply(layer, a * x + b * y), a * fc_apply(layer, x) + b * fc_apply(layer, y),
                               rtol=0, atol=1e-10)


# ------------------------------------------------------------------ LSTM --

def test_zero_cell_gives_zero_state():
    cell = LstmCell.zeros(7, 5)
    h, c = lstm_step(cell, np.random.default_rng(0).normal(size=7), cell.zero_state())
    assert np.all(h == 0) and np.all(c == 0)


def test_lstm_step_is_deterministic_from_reset():
    cell = LstmCell.init(4, 3, np.random.default_rng(1))
    x = np.array([0.1, 0.2, -0.3, 0.4])
    h1, _ = lstm_step(cell, x, cell.zero_state())
    h2, _ = lstm_step(cell, x, cell.zero_state())
    np.testing.assert_array_equal(h1, h2)


def test_lstm_j_shape():
    cell = LstmCell.init(90, 90, np.random.default_rng(0))
    h, c = lstm_step(cell, np.ones(90), cell.zero_state())
    assert h.shape == (90,) and c.shape == (90,)
    assert cell.W.shape == (180, 360)


def test_lstm_step_shape_errors():
    cell = LstmCell.zeros(3, 2)
    with pytest.raises(ShapeError):
        lstm_step(cell, np.ones(4), cell.zero_state())
    with pytest.raises(ShapeError):
        lstm_step(cell, np.ones(3), (np.zeros(3), np.zeros(2)))


def test_forget_bias_initialised_to_one():
    cell = LstmCell.init(3, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(cell.b[4:8], 1.0)
    np.testing.assert_array_equal(np.delete(cell.b, np.s_[4:8]), 0.0)


def test_lstm_run_matches_repeated_steps():
    rng = np.random.default_rng(2)
    cell = LstmCell.init(3, 4, rng)
    X = rng.normal(size=(6, 2, 3))
    Hs = lstm_run(cell, X)
    state = cell.zero_state(2)
    for s in range(6):
        state = lstm_step(cell, X[s], state)
        np.testing.assert_allclose(Hs[s], state[0], rtol=0, atol=1e-14)


def test_masked_steps_freeze_state():
    rng = np.random.default_rng(3)
    cell = LstmCell.init(3, 4, rng)
    X = rng.normal(size=(5, 2, 3))
    mask = np.ones((5, 2))
    mask[3:, 1] = 0.0
    Hs = lstm_run(cell, X, mask)
    short = lstm_run(cell, X[:3, 1:2])
    np.testing.assert_allclose(Hs[-1, 1], short[-1, 0], rtol=0, atol=1e-14)


# ------------------------------------------------------------------ loss --

def test_equal_logits_give_ln2():
    for label in (0, 1):
        loss, probs = softmax_ce(np.array([0.7, 0.7]), label)
        assert loss == pytest.approx(math.log(2), abs=1e-15)
        np.testing.assert_allclose(probs, [0.5, 0.5])


def test_extreme_logits_do_not_overflow():
    loss, probs = softmax_ce(np.array([1000.0, -1000.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-300)
    assert np.all(np.isfinite(probs))


def test_softmax_example_against_high_precision_oracle():
    loss, _ = softmax_ce(np.array([0.3, -0.2]), 0)
    assert loss == pytest.approx(SOFTMAX_EXAMPLE, abs=1e-15)
    assert round(loss, 4) == 0.4741


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_softmax_is_a_distribution(logits):
    p = softmax(np.array(logits))
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0) and np.all(p <= 1)


def test_softmax_strictly_inside_unit_interval_for_moderate_logits():
    p = softmax(np.array([3.0, -4.0]))
    assert np.all((p > 0) & (p < 1))


def test_batched_loss_is_sum_of_rows():
    logits = np.array([[0.3, -0.2], [1.0, 2.0], [0.0, 0.0]])
    target = np.array([0, 1, 1])
    total, _ = softmax_ce(logits, target)
    assert total == pytest.approx(sum(softmax_ce(r, t)[0] for r, t in zip(logits, target)), abs=1e-14)


# ------------------------------------------------------------------ Adam --

def test_adam_first_step_is_alpha_sign():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -7.0, 1e-3])}
    before = params["w"].copy()
    adam_update(AdamState(alpha=0.001), params, grads)
    np.testing.assert_allclose(params["w"] - before, -0.001 * np.sign(grads["w"]), rtol=1e-4)


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, 2.0])}
    adam_update(AdamState(), params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_adam_on_quadratic_matches_scalar_simulation():
    state = AdamState(alpha=0.001)
    params = {"w": np.array([1.0])}
    trace = [1.0]
    for _ in range(100):
        adam_update(state, params, {"w": 2.0 * params["w"]})
        trace.append(float(params["w"][0]))
    assert all(abs(b) < abs(a) for a, b in zip(trace, trace[1:]))
    assert trace[-1] == pytest.approx(ADAM_W100, abs=1e-12)


def test_adam_is_deterministic():
    def run():
        state = AdamState()
        p = {"a": np.array([0.3, -0.1])}
        for k in range(5):
            adam_update(state, p, {"a": np.array([0.1 * k, -0.2])})
        return p["a"]
    np.testing.assert_array_equal(run(), run())


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_update(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(grads, 1.0) == pytest.approx(5.0)
    assert math.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0)
    small = {"a": np.array([0.3])}
    clip_by_global_norm(small, 1.0)
    assert small["a"][0] == 0.3


# ------------------------------------------------------- gradient checks --

def _dense_problem(seed):
    rng = np.random.default_rng(seed)
    layer = DenseLayer.init(5, 2, NONE, rng)
    layer.b = rng.normal(size=2)
    x = rng.normal(size=(4, 5))
    y = rng.integers(0, 2, size=4)

    def loss():
        return softmax_ce(fc_apply(layer, x), y)[0]

    tape = Tape()
    _, probs = softmax_ce(fc_apply(layer, x, tape, "fc"), y)
    _, dW, db = fc_backward(layer, softmax_ce_grad(probs, y), tape["fc"])
    return loss, {"W": layer.W, "b": layer.b}, {"W": dW, "b": db}


def _lstm_problem(seed, steps=5):
    rng = np.random.default_rng(seed)
    cell = LstmCell.init(3, 4, rng)
    cell.b += rng.normal(scale=0.3, size=cell.b.shape)
    head = DenseLayer.init(4, 2, SIGMOID, rng)
    X = rng.normal(size=(steps, 1, 3))
    target = np.array([1])

    def loss():
        return softmax_ce(fc_apply(head, lstm_run(cell, X)[-1]), target)[0]

    tape = Tape()
    Hs = lstm_run(cell, X, tape=tape)
    _, probs = softmax_ce(fc_apply(head, Hs[-1], tape, "head"), target)
    dh, dWh, dbh = fc_backward(head, softmax_ce_grad(probs, target), tape["head"])
    dHs = np.zeros_like(Hs)
    dHs[-1] = dh
    dX, dW, db = lstm_run_backward(cell, dHs, tape["lstm"])
    return loss, {"cell.W": cell.W, "cell.b": cell.b, "head.W": head.W, "head.b": head.b, "X": X}, \
        {"cell.W": dW, "cell.b": db, "head.W": dWh, "head.b": dbh, "X": dX}


@pytest.mark.parametrize("seed", range(10))
def test_dense_softmax_gradients(seed):
    loss, params, grads = _dense_problem(seed)
    assert grad_check(loss, params, grads, tolerance=1e-4).passed


@pytest.mark.parametrize("seed", range(10))
def test_lstm_unrolled_gradients(seed):
    loss, params, grads = _lstm_problem(seed)
    report = grad_check(loss, params, grads, tolerance=1e-4)
    assert report.passed, report.summary()


def test_grad_check_agrees_with_independent_central_difference():
    loss, params, grads = _lstm_problem(11)
    W = params["cell.W"]
    flat = W.reshape(-1)

    def f(vals):
        saved = flat[:6].copy()
        flat[:6] = vals
        out = loss()
        flat[:6] = saved
        return out

    numeric = central_difference(f, [float(v) for v in flat[:6]])
    np.testing.assert_allclose(grads["cell.W"].reshape(-1)[:6], numeric, rtol=1e-6, atol=1e-9)


def test_corrupted_gradient_is_reported_by_block():
    loss, params, grads = _lstm_problem(4)
    grads["cell.b"] = grads["cell.b"] * 1.01 + 0.01
    report = grad_check(loss, params, grads)
    assert not report.passed
    assert report.failing == ["cell.b"]
    assert "cell.b" in report.summary() and "FAIL" in report.summary()


def test_max_coords_samples_deterministically():
    loss, params, grads = _lstm_problem(5)
    a = grad_check(loss, params, grads, max_coords=7, seed=3)
    b = grad_check(loss, params, grads, max_coords=7, seed=3)
    assert a.per_param == b.per_param
    assert a.checked == 7 * 4 + 2  # every block but head.b (2 values) is capped at 7


# ----------------------------------------------------------- checkpoints --

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"z.W": rng.normal(size=(3, 4)), "a.b": rng.normal(size=4)}
    save_checkpoint(tmp_path / "m.ckpt", params, "toy", seed=42)
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == ["z.W", "a.b"]
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
    assert meta["seed"] == 42 and meta["topology"] == "toy"
    save_checkpoint(tmp_path / "m2.ckpt", params, "toy", seed=42)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
