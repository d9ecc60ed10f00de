#!/usr/bin/env python3
"""
Tests for the tensor ops and the reverse-mode tape.
"""

import os
import sys
import threading

import numpy as np
import pytest

# Add the src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from twinformer.errors import ConfigError, DegenerateRowError, NumericError, ShapeError, TapeError
from twinformer.gradcheck import check_gradients
from twinformer.numerics import (
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    concat_last_axis,
    layer_norm,
    matmul,
    mean_all,
    mean_axis,
    mul,
    one_minus,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_axis,
    softmax_rows,
    square,
    sub,
    sum_all,
    tanh,
    topk_mask_rows,
    transpose_last,
)


def _away_from_zero(rng, shape, margin=0.1):
    values = rng.uniform(margin, 1.5, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


def _weighted_sum(out, weights):
    return sum_all(mul(out, Tensor(weights)))


# ---------------------------------------------------------------------------
# Forward examples
# ---------------------------------------------------------------------------


def test_matmul_layouts():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, Tensor([[5.0], [6.0]])).data, [[17.0], [39.0]])
    assert np.array_equal(matmul(a, Tensor([1.0, 1.0])).data, [3.0, 7.0])
    assert np.array_equal(matmul(Tensor([1.0, 1.0]), a).data, [4.0, 6.0])
    batch = Tensor(np.stack([np.eye(2), 2 * np.eye(2)]))
    assert np.array_equal(matmul(batch, a).data, [[[1, 2], [3, 4]], [[2, 4], [6, 8]]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError, match="matmul"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_associativity(rng):
    for _ in range(10):
        a, b, c, d = (Tensor(rng.normal(size=(4, 4))) for _ in range(4))
        left = matmul(matmul(matmul(a, b), c), d).data
        right = matmul(a, matmul(b, matmul(c, d))).data
        assert np.max(np.abs(left - right)) <= 1e-9


def test_elementwise_examples():
    assert sigmoid(Tensor([0.0])).item() == 0.5
    assert tanh(Tensor([0.0])).item() == 0.0
    rows = Tensor(np.tile([1.0, -2.0, 3.5], (4, 1)))
    assert np.array_equal(mean_axis(rows, axis=0).data, [1.0, -2.0, 3.5])
    assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert np.array_equal(scale(Tensor([1.0, -2.0]), 3.0).data, [3.0, -6.0])
    joined = concat_last_axis([Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 2)))])
    assert joined.shape == (2, 3)
    assert np.array_equal(slice_axis(Tensor(np.arange(6.0)), 0, 2, 4).data, [2.0, 3.0])


def test_sigmoid_saturates_without_overflow():
    out = sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.array_equal(out, [0.0, 1.0])


def test_add_accepts_only_bias_broadcast():
    out = add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
    assert np.array_equal(out.data, [[1, 2, 3], [1, 2, 3]])
    with pytest.raises(ShapeError):
        add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0]))
    with pytest.raises(ShapeError):
        mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_zero_size_tensor_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_overflow_is_reported():
    with pytest.raises(NumericError, match="square"):
        square(Tensor([1e200]))


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    assert np.array_equal(layer_norm(Tensor([2.0, 2.0, 2.0, 2.0]), one, zero).data, np.zeros(4))
    out = layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [1.0, -1.0], atol=1e-9)
    shifted = layer_norm(Tensor([0.0, 0.0]), Tensor(np.ones(2)), Tensor([5.0, 5.0]))
    assert np.array_equal(shifted.data, [5.0, 5.0])


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ConfigError):
        layer_norm(Tensor([1.0, 2.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


# ---------------------------------------------------------------------------
# Top-k and softmax
# ---------------------------------------------------------------------------


def test_topk_examples():
    out = topk_mask_rows(Tensor([[3.0, 1.0, 2.0, 0.0]]), 2).data
    assert out[0, 0] == 3.0 and out[0, 2] == 2.0
    assert np.isneginf(out[0, 1]) and np.isneginf(out[0, 3])

    row = Tensor([[0.3, -1.2, 4.0]])
    assert np.array_equal(topk_mask_rows(row, 3).data, row.data)
    assert np.array_equal(topk_mask_rows(row, 10).data, row.data)

    tied = topk_mask_rows(Tensor([[5.0, 5.0, 5.0]]), 1).data
    assert tied[0, 0] == 5.0 and np.isneginf(tied[0, 1:]).all()


def test_topk_rejects_k_below_one():
    with pytest.raises(ConfigError):
        topk_mask_rows(Tensor([[1.0, 2.0]]), 0)


def test_topk_keeps_exact_inputs(rng):
    for n in (1, 3, 7, 12):
        x = rng.normal(size=(20, n))
        for k in (1, 2, 5):
            out = topk_mask_rows(Tensor(x), k).data
            finite = np.isfinite(out)
            assert (finite.sum(axis=1) == min(k, n)).all()
            assert np.array_equal(out[finite], x[finite])


def test_softmax_rows_sum_to_one(rng):
    x = rng.normal(scale=5.0, size=(50, 9))
    out = softmax_rows(Tensor(x)).data
    assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-12


def test_softmax_masked_entries_get_zero_weight():
    out = softmax_rows(topk_mask_rows(Tensor([[3.0, 1.0, 2.0, 0.0]]), 2)).data
    assert out[0, 1] == 0.0 and out[0, 3] == 0.0
    assert np.isclose(out[0, 0], np.exp(1.0) / (np.exp(1.0) + 1.0))


def test_softmax_shift_invariance(rng):
    x = rng.normal(size=(10, 6))
    base = softmax_rows(Tensor(x)).data
    for c in (-50.0, 3.0, 200.0):
        assert np.max(np.abs(softmax_rows(Tensor(x + c)).data - base)) <= 1e-12


def test_softmax_examples():
    large = softmax_rows(Tensor([[1000.0, 999.0]])).data
    assert np.allclose(large, [[0.7310585786300049, 0.2689414213699951]], rtol=0.0, atol=1e-12)

    e = np.e
    masked = softmax_rows(Tensor([[3.0, -np.inf, 2.0, -np.inf]])).data
    assert np.allclose(masked, [[e / (e + 1.0), 0.0, 1.0 / (e + 1.0), 0.0]], rtol=0.0, atol=1e-12)
    assert masked[0, 1] == 0.0 and masked[0, 3] == 0.0


def test_softmax_degenerate_and_invalid_rows():
    with pytest.raises(DegenerateRowError):
        softmax_rows(Tensor([[-np.inf, -np.inf]]))
    with pytest.raises(NumericError):
        softmax_rows(Tensor([[np.nan, 1.0]]))
    with pytest.raises(NumericError):
        softmax_rows(Tensor([[np.inf, 1.0]]))


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def test_backward_examples():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((2, 3)))

    y = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(square(y))
    backward(loss, tape)
    assert np.array_equal(y.grad, [2.0, 4.0, 6.0])


def test_backward_accumulates_over_reuse():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(add(x, x))
    backward(loss, tape)
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_backward_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        vector = square(x)
    with pytest.raises(TapeError, match="scalar"):
        backward(vector, tape)

    with Tape() as tape:
        loss = sum_all(x)
    backward(loss, tape)
    with pytest.raises(TapeError, match="already"):
        backward(loss, tape)
    tape.reset()
    assert len(tape) == 0 and not tape.consumed

    detached = sum_all(x)
    with pytest.raises(TapeError, match="detached"):
        backward(detached, Tape())


def test_nothing_recorded_without_trainable_inputs():
    with Tape() as tape:
        sum_all(square(Tensor([1.0, 2.0])))
    assert len(tape) == 0


def test_tape_is_thread_local():
    seen = []
    with Tape():
        worker = threading.Thread(target=lambda: seen.append(active_tape()))
        worker.start()
        worker.join()
        assert active_tape() is not None
    assert seen == [None]
    assert active_tape() is None


@pytest.mark.parametrize(
    "name,build,shape",
    [
        ("matmul", lambda t, rng: matmul(t, Tensor(rng.normal(size=(4, 3)))), (5, 4)),
        ("matmul_batched", lambda t, rng: matmul(t, transpose_last(t)), (2, 3, 4)),
        ("matvec", lambda t, rng: matmul(Tensor(rng.normal(size=(3, 4))), reshape(t, (4,))), (2, 2)),
        ("add_bias", lambda t, rng: add(Tensor(rng.normal(size=(3, 4))), reshape(t, (4,))), (4,)),
        ("sub", lambda t, rng: sub(t, square(t)), (3, 3)),
        ("one_minus", lambda t, rng: mul(one_minus(t), t), (3, 2)),
        ("sigmoid", lambda t, rng: sigmoid(t), (3, 4)),
        ("tanh", lambda t, rng: tanh(t), (3, 4)),
        ("relu", lambda t, rng: relu(t), (3, 4)),
        ("mean_axis", lambda t, rng: mean_axis(t, axis=1), (2, 5, 3)),
        ("slice", lambda t, rng: slice_axis(t, -1, 1, 3), (3, 4)),
        ("concat", lambda t, rng: concat_last_axis([t, scale(t, -0.5)]), (3, 2)),
        ("softmax", lambda t, rng: softmax_rows(t), (4, 5)),
        ("softmax_topk", lambda t, rng: softmax_rows(topk_mask_rows(t, 2)), (4, 5)),
        ("mean_all", lambda t, rng: mean_all(square(t)), (3, 3)),
    ],
)
def test_op_gradients_match_finite_differences(rng, name, build, shape):
    x = Tensor(_away_from_zero(rng, shape), requires_grad=True, name=name)
    out_shape = build(x, np.random.default_rng(7)).shape
    weights = rng.normal(size=out_shape)

    def loss_fn():
        return _weighted_sum(build(x, np.random.default_rng(7)), weights)

    report = check_gradients(loss_fn, {name: x}, samples_per_tensor=50)
    assert report.passed, report.failures()


def test_layer_norm_gradients(rng):
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    gamma = Tensor(rng.normal(size=5), requires_grad=True)
    beta = Tensor(rng.normal(size=5), requires_grad=True)
    weights = rng.normal(size=(3, 5))

    report = check_gradients(
        lambda: _weighted_sum(layer_norm(x, gamma, beta), weights),
        {"x": x, "gamma": gamma, "beta": beta},
    )
    assert report.passed, report.failures()
