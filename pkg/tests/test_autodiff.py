"""Gradient checks and contracts for the reverse-mode engine."""
import numpy as np
import pytest

import adaptgot.autodiff as ad
from helpers import max_rel_err, numeric_gradient

TRIALS = 50
TOL = 1e-4


def _rand_shape(rng, ndim):
    if ndim == 1:
        return (int(rng.integers(1, 9)),)
    return (int(rng.integers(1, 9)), int(rng.integers(1, 9)))


def _check_op(rng, build, arrays):
    """build(tensors) -> output tensor; reduce with total_sum and compare."""

    def run(arrs):
        tape = ad.Tape()
        leaves = [tape.leaf(a) for a in arrs]
        out = build(leaves)
        loss = out if out.data.size == 1 else ad.total_sum(out)
        return loss.item()

    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in arrays]
    out = build(leaves)
    loss = out if out.data.size == 1 else ad.total_sum(out)
    grads = ad.backward(loss)
    analytic = [grads.get(leaf, np.zeros_like(a)) for leaf, a in zip(leaves, arrays)]
    numeric = numeric_gradient(run, arrays)
    worst = max(max_rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < TOL, f"rel err {worst:.3e}"


def test_affine_gradients():
    rng = np.random.default_rng(101)
    for _ in range(TRIALS):
        n, din, dout = (int(rng.integers(1, 9)) for _ in range(3))
        x = rng.normal(size=(n, din))
        w = rng.normal(size=(din, dout))
        b = rng.normal(size=dout)
        _check_op(rng, lambda t: ad.affine(t[0], t[1], t[2]), [x, w, b])


def test_matmul_mul_add_sub_gradients():
    rng = np.random.default_rng(102)
    for _ in range(TRIALS):
        n, d = _rand_shape(rng, 2)
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        _check_op(rng, lambda t: ad.add(t[0], t[1]), [a.copy(), b.copy()])
        _check_op(rng, lambda t: ad.sub(t[0], t[1]), [a.copy(), b.copy()])
        _check_op(rng, lambda t: ad.mul(t[0], t[1]), [a.copy(), b.copy()])
        m = int(rng.integers(1, 9))
        w = rng.normal(size=(d, m))
        _check_op(rng, lambda t: ad.matmul(t[0], t[1]), [a.copy(), w])


def test_unary_gradients():
    rng = np.random.default_rng(103)
    for _ in range(TRIALS):
        shape = _rand_shape(rng, 2)
        x = rng.normal(size=shape) * 2.0
        _check_op(rng, lambda t: ad.sigmoid(t[0]), [x.copy()])
        _check_op(rng, lambda t: ad.tanh(t[0]), [x.copy()])
        _check_op(rng, lambda t: ad.softplus(t[0]), [x.copy()])
        pos = np.abs(rng.normal(size=shape)) + 0.5
        _check_op(rng, lambda t: ad.log(t[0]), [pos])
        _check_op(rng, lambda t: ad.scale(t[0], 1.7), [x.copy()])


def test_softmax_and_layernorm_gradients():
    rng = np.random.default_rng(104)
    for _ in range(TRIALS):
        n, d = _rand_shape(rng, 2)
        x = rng.normal(size=(n, d)) * 1.5

        def build_sm_then_pick(t):
            # weighting breaks the symmetry that makes softmax grads vanish
            w = rng.normal(size=(n, d))
            return ad.total_sum(ad.mul(ad.softmax_rows(t[0]), ad.const(w)))

        weights = rng.normal(size=(n, d))
        _check_op(rng, lambda t: ad.total_sum(ad.mul(ad.softmax_rows(t[0]), ad.const(weights))), [x.copy()])
        v = rng.normal(size=d)
        wv = rng.normal(size=d)
        _check_op(rng, lambda t: ad.total_sum(ad.mul(ad.softmax_vec(t[0]), ad.const(wv))), [v.copy()])
        gain = rng.normal(size=d) + 1.0
        bias = rng.normal(size=d)
        wl = rng.normal(size=(n, d))
        _check_op(
            rng,
            lambda t: ad.total_sum(ad.mul(ad.layernorm_rows(t[0], t[1], t[2], 1e-12), ad.const(wl))),
            [x.copy(), gain, bias],
        )


def test_gather_segment_gradients():
    rng = np.random.default_rng(105)
    for _ in range(TRIALS):
        n, d = _rand_shape(rng, 2)
        x = rng.normal(size=(n, d))
        idx = rng.integers(0, n, size=int(rng.integers(1, 9)))
        _check_op(rng, lambda t: ad.gather_rows(t[0], idx), [x.copy()])
        groups = rng.integers(0, 4, size=n)
        _check_op(rng, lambda t: ad.segment_sum(t[0], groups, 4), [x.copy()])
        s = rng.normal(size=n)
        w = rng.normal(size=n)
        _check_op(
            rng,
            lambda t: ad.total_sum(ad.mul(ad.segment_softmax(t[0], groups, 4), ad.const(w))),
            [s.copy()],
        )


def test_structural_op_gradients():
    rng = np.random.default_rng(106)
    for _ in range(TRIALS):
        n, d = _rand_shape(rng, 2)
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        s = rng.normal(size=n)
        v = rng.normal(size=d)
        _check_op(rng, lambda t: ad.scale_rows(t[0], t[1]), [a.copy(), s.copy()])
        _check_op(rng, lambda t: ad.broadcast_row(t[0], n), [v.copy()])
        _check_op(rng, lambda t: ad.col(t[0], d - 1), [a.copy()])
        _check_op(rng, lambda t: ad.rowsum(t[0]), [a.copy()])
        _check_op(rng, lambda t: ad.sum0(t[0]), [a.copy()])
        _check_op(rng, lambda t: ad.mean0(t[0]), [a.copy()])
        _check_op(rng, lambda t: ad.mean_all(t[0]), [a.copy()])
        _check_op(rng, lambda t: ad.concat_cols([t[0], t[1]]), [a.copy(), b.copy()])
        _check_op(rng, lambda t: ad.concat_rows([t[0], t[1]]), [a.copy(), b.copy()])
        _check_op(rng, lambda t: ad.concat_vec([t[0], t[1]]), [s.copy(), v.copy()])


def test_loss_op_gradients():
    rng = np.random.default_rng(107)
    for _ in range(TRIALS):
        n, d = _rand_shape(rng, 2)
        pred = rng.normal(size=(n, d))
        tgt = rng.normal(size=(n, d))
        _check_op(rng, lambda t: ad.mse(t[0], tgt), [pred.copy()])
        bits = (rng.random(size=(n, d)) < 0.4).astype(float)
        _check_op(rng, lambda t: ad.bce_logits(t[0], bits), [pred.copy()])
        x = np.abs(rng.normal(size=n)) + 0.5
        _check_op(rng, lambda t: ad.cv_squared(t[0]), [x.copy()])


def test_masked_softmax_gradients():
    rng = np.random.default_rng(108)
    for _ in range(TRIALS):
        n = int(rng.integers(1, 9))
        e = int(rng.integers(2, 9))
        x = rng.normal(size=(n, e))
        keep = np.zeros((n, e), dtype=bool)
        for i in range(n):
            kcount = int(rng.integers(1, e + 1))
            keep[i, rng.choice(e, size=kcount, replace=False)] = True
        w = rng.normal(size=(n, e))
        _check_op(
            rng,
            lambda t: ad.total_sum(ad.mul(ad.masked_softmax_rows(t[0], keep), ad.const(w))),
            [x.copy()],
        )


def test_dropout_gradient_reuses_mask():
    rng = np.random.default_rng(109)
    x = rng.normal(size=(6, 5))
    mask = (rng.random(size=(6, 5)) > 0.3).astype(float)
    p = 0.3

    def run(arrs):
        tape = ad.Tape()
        leaf = tape.leaf(arrs[0])
        return ad.total_sum(ad.dropout(leaf, mask, p)).item()

    tape = ad.Tape()
    leaf = tape.leaf(x)
    out = ad.dropout(leaf, mask, p)
    assert np.array_equal(out.data, x * (mask / (1 - p)))
    assert np.all(out.data[mask == 0] == 0.0)
    grads = ad.backward(ad.total_sum(out))
    numeric = numeric_gradient(run, [x.copy()])
    assert max_rel_err(grads[leaf], numeric[0]) < TOL


def test_softmax_constant_row_is_uniform():
    tape = ad.Tape()
    x = tape.leaf(np.full((1, 5), 3.25))
    out = ad.softmax_rows(x)
    assert np.allclose(out.data, 0.2, atol=1e-15)


def test_layernorm_on_standardized_rows_is_near_identity():
    rng = np.random.default_rng(110)
    x = rng.normal(size=(4, 64))
    x = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, keepdims=True)
    out = ad.layernorm_rows(ad.const(x), ad.const(np.ones(64)), ad.const(np.zeros(64)), 1e-12)
    assert np.allclose(out.data, x, atol=1e-9)


def test_shape_mismatch_raises_with_both_shapes():
    a = ad.const(np.zeros((2, 3)))
    b = ad.const(np.zeros((2, 4)))
    with pytest.raises(ad.ShapeError) as err:
        ad.add(a, b)
    assert "(2, 3)" in str(err.value) and "(2, 4)" in str(err.value)


def test_non_finite_result_raises():
    with pytest.raises(ad.NonFiniteError):
        ad.const(np.array([np.nan]))
    with pytest.raises(ad.NonFiniteError):
        ad.log(ad.const(np.array([0.0])))


def test_double_backward_raises():
    tape = ad.Tape()
    x = tape.leaf(np.array([2.0]))
    loss = ad.total_sum(ad.mul(x, x))
    ad.backward(loss)
    with pytest.raises(ad.TapeError):
        ad.backward(loss)


def test_mixed_tapes_raise():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(np.ones(3))
    b = t2.leaf(np.ones(3))
    with pytest.raises(ad.TapeError):
        ad.add(a, b)


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        tape = ad.Tape()
        x = tape.leaf(rng.normal(size=(5, 4)))
        w = tape.leaf(rng.normal(size=(4, 3)))
        b = tape.leaf(rng.normal(size=3))
        loss = ad.mse(ad.tanh(ad.affine(x, w, b)), np.zeros((5, 3)))
        grads = ad.backward(loss)
        return loss.item(), grads[w].copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_adam_on_quadratic_bowl():
    params = {"x": np.array([1.0])}
    state = ad.AdamState(params)
    for _ in range(2000):
        tape = ad.Tape()
        x = tape.leaf(params["x"])
        loss = ad.total_sum(ad.mul(x, x))
        grads = ad.backward(loss)
        ad.adam_step(params, {"x": grads[x]}, state, lr=0.01)
        if abs(params["x"][0]) < 1e-3:
            break
    assert abs(params["x"][0]) < 1e-3


def test_adam_zero_gradient_keeps_params():
    params = {"x": np.array([3.0, -1.0])}
    state = ad.AdamState(params)
    before = params["x"].copy()
    ad.adam_step(params, {}, state, lr=0.5)
    assert np.array_equal(params["x"], before)
    assert state.step == 1


def test_adam_first_step_matches_hand_update():
    # one step from zero moments: m_hat = g, v_hat = g^2, delta = lr*g/(|g|+eps)
    params = {"x": np.array([2.0])}
    state = ad.AdamState(params)
    g = np.array([0.5])
    ad.adam_step(params, {"x": g}, state, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8)
    expected = 2.0 - 0.001 * 0.5 / (0.5 + 1e-8)
    assert abs(params["x"][0] - expected) < 1e-15
