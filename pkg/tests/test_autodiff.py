"""Reverse-mode sweep behaviour: accumulation, tape life cycle, finite
differences on composite graphs, and a negative control proving the checker
can catch a wrong gradient."""

import numpy as np
import pytest

from jdx.numerics import ops
from jdx.numerics.gradcheck import grad_check
from jdx.numerics.tensor import (Tensor, ShapeError, TapeError, backward,
                                 pause_recording)
from jdx.rng import Rng


def _leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def test_single_op_gradient():
    x = _leaf([2.0, -3.0])
    loss = ops.sum_all(ops.mul(x, x))
    backward(loss)
    assert np.allclose(x.grad, [4.0, -6.0], atol=1e-12)


def test_reuse_accumulates():
    # y = x*x + x: dy/dx = 2x + 1, exercised through two separate uses of x.
    x = _leaf([1.5])
    loss = ops.sum_all(ops.add(ops.mul(x, x), x))
    backward(loss)
    assert np.allclose(x.grad, [4.0], atol=1e-12)


def test_grad_accumulates_across_backward_calls():
    x = _leaf([1.0])
    for _ in range(3):
        backward(ops.sum_all(ops.scale(x, 2.0)))
    assert np.allclose(x.grad, [6.0], atol=1e-12)
    x.zero_grad()
    assert np.all(x.grad == 0.0)


def test_backward_requires_scalar_and_fresh_tape():
    x = _leaf([1.0, 2.0])
    y = ops.mul(x, x)
    with pytest.raises(ShapeError):
        backward(y)
    loss = ops.sum_all(y)
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_backward_rejects_off_tape_loss():
    with pytest.raises(TapeError):
        backward(Tensor(np.asarray(1.0)))


def test_pause_recording_blocks_graph():
    x = _leaf([1.0])
    with pause_recording():
        y = ops.scale(x, 3.0)
    assert not y.requires_grad
    with pytest.raises(TapeError):
        backward(ops.sum_all(y))


def test_constant_inputs_get_no_gradient():
    x = _leaf([2.0])
    c = Tensor(np.asarray([5.0]))
    backward(ops.sum_all(ops.mul(x, c)))
    assert np.allclose(x.grad, [5.0])
    assert c.grad is None or np.all(c.grad == 0.0)


def test_composite_mlp_gradient_matches_finite_differences():
    r = Rng(10)
    w1 = _leaf(r.normal(shape=(4, 6)))
    b1 = _leaf(r.normal(shape=(1, 6)))
    w2 = _leaf(r.normal(shape=(6, 3)))
    x = Tensor(r.normal(shape=(5, 4)))
    targets = [0, 2, 1, 1, 0]

    def fn():
        h = ops.tanh(ops.add(ops.matmul(x, w1), ops.mul(Tensor(np.ones((5, 1))), b1)))
        probs = ops.vector_softmax(ops.matmul(h, w2))
        return ops.scale(ops.masked_cross_entropy(probs, targets), 0.2)

    report = grad_check(fn, {"w1": w1, "b1": b1, "w2": w2}, tol=1e-6)
    assert report.ok, report.failures()


def test_conv_pool_chain_gradient_matches_finite_differences():
    r = Rng(11)
    x = _leaf(r.normal(shape=(2, 2, 6, 6)))
    w = _leaf(r.normal(shape=(3, 2, 3, 3)) * 0.8)

    def fn():
        y = ops.max_pool2d(ops.relu(ops.conv2d(x, w, padding="same")))
        a = ops.spatial_softmax(y)
        # channel 0 of the softmax acts as a (2,1,3,3) attention map
        m = ops.reshape(ops.slice_cols(ops.reshape(a, (2, 3 * 9)), 0, 9), (2, 1, 3, 3))
        return ops.sum_all(ops.mul(ops.broadcast_spatial_scale(y, m), y))

    report = grad_check(fn, {"x": x, "w": w}, tol=1e-5)
    assert report.ok, report.failures()


def test_lstm_style_recurrence_gradient():
    r = Rng(12)
    wx = _leaf(r.normal(shape=(3, 8)) * 0.5)
    wh = _leaf(r.normal(shape=(2, 8)) * 0.5)
    x = Tensor(r.normal(shape=(4, 3)))

    def fn():
        h = Tensor(np.zeros((4, 2)))
        c = Tensor(np.zeros((4, 2)))
        for _ in range(3):
            z = ops.add(ops.matmul(x, wx), ops.matmul(h, wh))
            i = ops.sigmoid(ops.slice_cols(z, 0, 2))
            f = ops.sigmoid(ops.slice_cols(z, 2, 4))
            g = ops.tanh(ops.slice_cols(z, 4, 6))
            o = ops.sigmoid(ops.slice_cols(z, 6, 8))
            c = ops.add(ops.mul(f, c), ops.mul(i, g))
            h = ops.mul(o, ops.tanh(c))
        return ops.sum_all(ops.mul(h, h))

    report = grad_check(fn, {"wx": wx, "wh": wh}, tol=1e-5)
    assert report.ok, report.failures()


def test_grad_check_catches_injected_gradient_bug():
    # Negative control: corrupt tanh's vjp through the dispatch table and the
    # checker must flag the mismatch, otherwise it proves nothing.
    original = ops.OPS["tanh"]

    def bad_tanh(x):
        y = np.tanh(x.data)

        def vjp(g):
            return ((1.0 - 0.9 * y * y) * g,)

        return ops._node("tanh", y, (x,), vjp)

    w = _leaf(Rng(13).normal(shape=(3, 3)))

    def fn():
        return ops.sum_all(ops.forward_op("tanh", (w,)))

    ops.OPS["tanh"] = bad_tanh
    try:
        report = grad_check(fn, {"w": w}, tol=1e-4)
    finally:
        ops.OPS["tanh"] = original
    assert not report.ok
    assert "w" in report.failures()


def test_grad_check_report_lines_format():
    w = _leaf([[0.3]])

    def fn():
        return ops.sum_all(ops.sigmoid(w))

    report = grad_check(fn, {"w": w}, tol=1e-4)
    lines = report.lines()
    assert len(lines) == 1 and lines[0].startswith("w") and "PASS" in lines[0]
