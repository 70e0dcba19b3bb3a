"""Primitive-level forward checks and finite-difference gradient oracles."""

import numpy as np
import pytest

from deeptransport.autodiff import (
    AdamState,
    ParamSet,
    Tape,
    Tensor,
    adam_step,
    glorot_bound,
    init_params,
)
from deeptransport.errors import NumericalError
from deeptransport.persist import load_checkpoint, save_checkpoint

from util import check_gradients, numeric_grad, rel_err

N_POINTS = 20


def _rng(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- primitives


@pytest.mark.parametrize("point", range(N_POINTS))
def test_affine_gradients(point):
    rng = _rng(100 + point)
    x = Tensor(rng.normal(size=(5, 4)))
    W = Tensor(rng.normal(size=(4, 3)))
    b = Tensor(rng.normal(size=3))
    target = rng.normal(size=(5, 3))

    def build():
        t = Tape()
        return t, t.squared_error(t.affine(x, W, b), Tensor(target))

    check_gradients(build, [x, W, b])


@pytest.mark.parametrize("point", range(N_POINTS))
def test_conv1d_gradients(point):
    rng = _rng(200 + point)
    x = Tensor(rng.normal(size=(4, 6)))
    W = Tensor(rng.normal(size=(2, 3)))
    b = Tensor(rng.normal(size=3))
    target = rng.normal(size=(4, 3, 3))

    def build():
        t = Tape()
        return t, t.squared_error(t.conv1d_nonoverlap(x, W, b), Tensor(target))

    check_gradients(build, [x, W, b])


def test_conv1d_degenerates_to_affine():
    rng = _rng(7)
    x, W, b = rng.normal(size=(5, 6)), rng.normal(size=(6, 1)), rng.normal(size=1)
    t = Tape()
    conv = t.conv1d_nonoverlap(Tensor(x), Tensor(W), Tensor(b))
    aff = t.affine(Tensor(x), Tensor(W), Tensor(b))
    assert conv.data.shape == (5, 1, 1)
    np.testing.assert_allclose(conv.data[:, 0, :], aff.data, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "softmax"])
@pytest.mark.parametrize("point", range(N_POINTS))
def test_elementwise_gradients(op, point):
    rng = _rng(300 + point)
    x = Tensor(rng.normal(size=(4, 5)))
    target = rng.normal(size=(4, 5))

    def build():
        t = Tape()
        return t, t.squared_error(getattr(t, op)(x), Tensor(target))

    check_gradients(build, [x])


def test_softmax_rows_sum_to_one():
    rng = _rng(11)
    t = Tape()
    y = t.softmax(Tensor(rng.normal(size=(6, 9)) * 10))
    np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(6), atol=1e-12)
    assert (y.data >= 0).all()


@pytest.mark.parametrize("point", range(N_POINTS))
def test_add_mul_scale_concat_take_gradients(point):
    rng = _rng(400 + point)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(3, 4)))
    s = Tensor(rng.normal(size=3))
    target = rng.normal(size=(3, 4))

    def build():
        t = Tape()
        y = t.add(t.mul(a, b), t.scale_rows(b, s))
        y = t.concat([y, a], axis=1)
        col = t.take_index(y, 2, axis=1)
        z = t.scale_rows(a, col)
        return t, t.squared_error(z, Tensor(target))

    check_gradients(build, [a, b, s])


@pytest.mark.parametrize("point", range(N_POINTS))
def test_gather_rows_gradients(point):
    rng = _rng(500 + point)
    table = Tensor(rng.normal(size=(7, 3)))
    idx = rng.integers(0, 7, size=10)
    target = rng.normal(size=(10, 3))

    def build():
        t = Tape()
        return t, t.squared_error(t.gather_rows(table, idx), Tensor(target))

    check_gradients(build, [table])


@pytest.mark.parametrize("point", range(N_POINTS))
def test_masked_max_pool_gradients(point):
    rng = _rng(600 + point)
    x = Tensor(rng.normal(size=(3, 4, 5)))
    mask = rng.random(size=(3, 4)) < 0.7
    mask[0] = [True, False, False, False]  # single valid row
    target = rng.normal(size=(3, 5))

    def build():
        t = Tape()
        return t, t.squared_error(t.masked_max_pool(x, mask), Tensor(target))

    check_gradients(build, [x])


def test_masked_max_pool_all_invalid_is_neutral():
    rng = _rng(21)
    x = Tensor(rng.normal(size=(2, 3, 4)))
    mask = np.zeros((2, 3), dtype=bool)
    mask[1, 2] = True
    t = Tape()
    y = t.masked_max_pool(x, mask)
    np.testing.assert_array_equal(y.data[0], np.zeros(4))
    np.testing.assert_array_equal(y.data[1], x.data[1, 2])
    grads = t.backward(t.squared_error(y, Tensor(np.ones((2, 4)))))
    np.testing.assert_array_equal(grads[x][0], np.zeros((3, 4)))
    assert np.abs(grads[x][1, 2]).sum() > 0


def test_masked_max_pool_breaks_ties_to_lowest_index():
    data = np.zeros((1, 3, 2))
    data[0, :, 0] = [5.0, 5.0, 1.0]
    data[0, :, 1] = [1.0, 7.0, 7.0]
    x = Tensor(data)
    t = Tape()
    y = t.masked_max_pool(x, np.ones((1, 3), dtype=bool))
    grads = t.backward(t.squared_error(y, Tensor(np.zeros((1, 2)))))
    dx = grads[x]
    assert dx[0, 0, 0] != 0 and dx[0, 1, 0] == 0  # first of the tied rows wins
    assert dx[0, 1, 1] != 0 and dx[0, 2, 1] == 0


@pytest.mark.parametrize("point", range(N_POINTS))
def test_squared_error_gradients(point):
    rng = _rng(700 + point)
    pred = Tensor(rng.normal(size=(4, 3)))
    target = Tensor(rng.normal(size=(4, 3)))
    mask = rng.random(size=(4, 3)) < 0.6

    def build():
        t = Tape()
        return t, t.squared_error(pred, target, mask)

    check_gradients(build, [pred, target])


def test_squared_error_masked_entries_zero_gradient():
    rng = _rng(3)
    pred = Tensor(rng.normal(size=(2, 3)))
    target = Tensor(rng.normal(size=(2, 3)))
    mask = np.array([[1, 0, 1], [0, 0, 1]], dtype=bool)
    t = Tape()
    grads = t.backward(t.squared_error(pred, target, mask))
    np.testing.assert_array_equal(grads[pred][~mask], 0.0)


def test_squared_error_of_identical_tensor_has_zero_gradient():
    x = Tensor(np.array([1.0, -2.0, 3.0]))
    t = Tape()
    loss = t.squared_error(x, x)
    assert loss.data == 0.0
    np.testing.assert_array_equal(t.backward(loss)[x], np.zeros(3))


@pytest.mark.parametrize("point", range(N_POINTS))
def test_embed_affine_gradients(point):
    rng = _rng(800 + point)
    e_a = Tensor(rng.normal(size=(5, 3)))
    e_b = Tensor(rng.normal(size=(4, 3)))
    W = Tensor(rng.normal(size=(9, 2)))
    b = Tensor(rng.normal(size=2))
    idx = np.column_stack([
        rng.integers(0, 5, size=6),
        rng.integers(0, 5, size=6),
        rng.integers(0, 4, size=6),
    ])
    target = rng.normal(size=(6, 2))

    def build():
        t = Tape()
        out = t.embed_affine([e_a, e_b], (0, 0, 1), W, b, idx)
        return t, t.squared_error(out, Tensor(target))

    check_gradients(build, [e_a, e_b, W, b])


def test_embed_affine_matches_gather_concat_affine():
    rng = _rng(31)
    e_a = Tensor(rng.normal(size=(5, 3)))
    e_b = Tensor(rng.normal(size=(4, 3)))
    W = Tensor(rng.normal(size=(9, 2)))
    b = Tensor(rng.normal(size=2))
    idx = np.column_stack([
        rng.integers(0, 5, size=8),
        rng.integers(0, 5, size=8),
        rng.integers(0, 4, size=8),
    ])
    t = Tape()
    fused = t.embed_affine([e_a, e_b], (0, 0, 1), W, b, idx)
    cells = t.concat(
        [t.gather_rows(e_a, idx[:, 0]), t.gather_rows(e_a, idx[:, 1]),
         t.gather_rows(e_b, idx[:, 2])],
        axis=1,
    )
    composed = t.affine(cells, W, b)
    np.testing.assert_allclose(fused.data, composed.data, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("point", range(N_POINTS))
def test_lstm_cell_gradients_two_step_chain(point):
    rng = _rng(900 + point)
    d = 4
    x1 = Tensor(rng.normal(size=(3, 2)))
    x2 = Tensor(rng.normal(size=(3, 2)))
    W = Tensor(rng.normal(size=(4 * d, 2 + d)) * 0.5)
    b = Tensor(rng.normal(size=4 * d) * 0.5)
    target = rng.normal(size=(3, d))

    def build():
        t = Tape()
        h0 = Tensor(np.zeros((3, d)))
        c0 = Tensor(np.zeros((3, d)))
        h1, c1 = t.lstm_cell(x1, h0, c0, W, b)
        h2, _ = t.lstm_cell(x2, h1, c1, W, b)
        return t, t.squared_error(h2, Tensor(target))

    check_gradients(build, [x1, x2, W, b])


def test_chain_affine_tanh_against_finite_differences():
    rng = _rng(5)
    x = Tensor(rng.normal(size=(6, 3)))
    W1 = Tensor(rng.normal(size=(3, 4)))
    b1 = Tensor(rng.normal(size=4))
    W2 = Tensor(rng.normal(size=(4, 2)))
    b2 = Tensor(rng.normal(size=2))
    target = rng.normal(size=(6, 2))

    def build():
        t = Tape()
        h = t.tanh(t.affine(x, W1, b1))
        return t, t.squared_error(t.affine(h, W2, b2), Tensor(target))

    check_gradients(build, [x, W1, b1, W2, b2])


@pytest.mark.parametrize("depth", [3, 4, 5, 6])
def test_random_composite_graphs(depth):
    """Random op chains up to depth 6 agree with finite differences."""
    rng = _rng(1000 + depth)
    x = Tensor(rng.normal(size=(3, 4)))
    aux = Tensor(rng.normal(size=(3, 4)))
    target = rng.normal(size=(3, 4))
    ops = ["tanh", "sigmoid", "softmax", "mul_aux", "add_aux"]
    chain = [ops[int(rng.integers(len(ops)))] for _ in range(depth)]

    def build():
        t = Tape()
        y = x
        for name in chain:
            if name == "mul_aux":
                y = t.mul(y, aux)
            elif name == "add_aux":
                y = t.add(y, aux)
            else:
                y = getattr(t, name)(y)
        return t, t.squared_error(y, Tensor(target))

    check_gradients(build, [x, aux])


# ------------------------------------------------------------------- engine


def test_backward_requires_scalar_loss():
    t = Tape()
    y = t.tanh(Tensor(np.ones((2, 2))))
    with pytest.raises(ValueError):
        t.backward(y)


def test_unreached_parameters_get_zero():
    params = ParamSet()
    used = params.add("used", np.ones(3))
    unused = params.add("unused", np.ones(2))
    t = Tape()
    loss = t.squared_error(t.tanh(used), Tensor(np.zeros(3)))
    named = t.backward(loss).named(params)
    assert np.abs(named["used"]).sum() > 0
    np.testing.assert_array_equal(named["unused"], np.zeros(2))


def test_non_finite_forward_raises():
    t = Tape()
    big = Tensor(np.full((2, 2), 1e200))
    with pytest.raises(NumericalError):
        t.mul(big, big)


def test_tape_replay_is_bit_deterministic():
    rng = _rng(9)
    x_data = rng.normal(size=(4, 3))
    W_data = rng.normal(size=(3, 3))

    def run():
        t = Tape()
        x, W, b = Tensor(x_data.copy()), Tensor(W_data.copy()), Tensor(np.zeros(3))
        y = t.softmax(t.tanh(t.affine(x, W, b)))
        loss = t.squared_error(y, Tensor(np.ones((4, 3))))
        g = t.backward(loss)
        return loss.data.copy(), g[W].copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(g1, g2)


# --------------------------------------------------------------------- adam


def test_adam_zero_gradient_leaves_params_unchanged():
    params = ParamSet()
    params.add("w", np.array([1.0, -2.0]))
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_is_minus_lr_for_unit_gradient():
    """Hand-evaluated recurrence: m-hat = v-hat = 1 at step 1, so the
    update is -lr/(1 + eps) regardless of beta values."""
    params = ParamSet()
    params.add("w", np.array([0.5]))
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.array([1.0])}, state)
    expected = 0.5 - 0.1 * 1.0 / (1.0 + state.eps)
    np.testing.assert_allclose(params["w"].data, [expected], rtol=0, atol=1e-15)
    assert abs(params["w"].data[0] - 0.4) < 1e-8


def test_adam_parameters_update_independently():
    params = ParamSet()
    params.add("a", np.array([1.0]))
    params.add("b", np.array([1.0]))
    state = AdamState(lr=0.05)
    adam_step(params, {"a": np.array([2.0]), "b": np.array([0.0])}, state)
    assert params["a"].data[0] != 1.0
    assert params["b"].data[0] == 1.0


def test_adam_rejects_non_finite_gradient():
    params = ParamSet()
    params.add("w", np.array([1.0]))
    with pytest.raises(NumericalError):
        adam_step(params, {"w": np.array([np.nan])}, AdamState())


def test_adam_matches_scalar_recurrence_over_steps():
    params = ParamSet()
    params.add("w", np.array([0.0]))
    state = AdamState(lr=0.01)
    m = v = 0.0
    w = 0.0
    for step in range(1, 6):
        g = float(step)
        adam_step(params, {"w": np.array([g])}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9**step)
        vh = v / (1 - 0.999**step)
        w -= 0.01 * mh / (np.sqrt(vh) + 1e-8)
    np.testing.assert_allclose(params["w"].data, [w], rtol=1e-12)


# --------------------------------------------------------------------- init


def test_init_params_seed_repeatable():
    a = init_params((4, 5), seed=42)
    b = init_params((4, 5), seed=42)
    np.testing.assert_array_equal(a.data, b.data)
    c = init_params((4, 5), seed=43)
    assert not np.array_equal(a.data, c.data)


def test_init_params_respects_bounds():
    draws = init_params((100_000,), scheme=("uniform", -0.25, 0.25), seed=1).data
    assert draws.min() >= -0.25 and draws.max() <= 0.25
    assert draws.min() < -0.24 and draws.max() > 0.24  # actually fills the range


def test_init_params_glorot_bound():
    b = glorot_bound((4, 8))
    np.testing.assert_allclose(b, np.sqrt(6 / 12))
    draws = init_params((50, 50), scheme="glorot", seed=2).data
    assert np.abs(draws).max() <= glorot_bound((50, 50))


def test_init_params_zero_extent():
    assert init_params((0,), seed=0).data.size == 0


# --------------------------------------------------------------- checkpoint


def test_checkpoint_roundtrip_is_bit_identical(tmp_path):
    rng = _rng(13)
    params = ParamSet()
    params.add("layer.W", rng.normal(size=(3, 4)))
    params.add("layer.b", rng.normal(size=4))
    state = AdamState(lr=0.01, step=7)
    state.ensure(params)
    state.m["layer.W"] += 0.5
    path = tmp_path / "ckpt.zip"
    save_checkpoint(path, params, state, meta={"config_hash": "abc"})
    loaded, adam, meta = load_checkpoint(path)
    assert meta["config_hash"] == "abc"
    assert adam.step == 7 and adam.lr == 0.01
    for name in params.names():
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
        np.testing.assert_array_equal(adam.m[name], state.m[name])


def test_checkpoint_bytes_are_reproducible(tmp_path):
    params = ParamSet()
    params.add("w", np.arange(6, dtype=float).reshape(2, 3))
    p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
    save_checkpoint(p1, params)
    save_checkpoint(p2, params)
    assert p1.read_bytes() == p2.read_bytes()
