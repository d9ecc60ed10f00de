"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the forecaster needs are provided. Each op computes its
result with numpy, checks it for non-finite values and, when a Tape is
active on the current thread and any input requires a gradient, records a
closure that maps the output gradient to input gradients.

Usage:
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(matmul(x, w))
    backward(loss, tape)
    w.grad  # dloss/dw
"""

import logging
import threading
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DegenerateRowError, NumericError, ShapeError, TapeError

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_local = threading.local()


class Tensor:
    """A dense row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        copy: bool = True,
    ):
        array = np.array(data, dtype=np.float64, copy=True) if copy else data
        if any(dim < 1 for dim in array.shape):
            raise ShapeError("tensor", array.shape, detail="dimensions must be positive")
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad, name=name, copy=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


class TapeNode(NamedTuple):
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: GradFn


class Tape:
    """Ordered record of differentiable ops executed while the tape is active."""

    def __init__(self):
        self._nodes: List[TapeNode] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> Tuple[TapeNode, ...]:
        return tuple(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, op: str, output: Tensor, inputs: Tuple[Tensor, ...], grad_fn: GradFn) -> None:
        self._nodes.append(TapeNode(op, output, inputs, grad_fn))

    def reset(self) -> None:
        self._nodes.clear()
        self._consumed = False


def active_tape() -> Optional[Tape]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _check_finite(op: str, array: np.ndarray, allow_neg_inf: bool = False) -> None:
    if allow_neg_inf:
        bad = np.isnan(array).any() or np.isposinf(array).any()
    else:
        bad = not np.isfinite(array).all()
    if bad:
        raise NumericError(f"{op} produced non-finite values")


def _result(
    op: str,
    array: np.ndarray,
    inputs: Tuple[Tensor, ...],
    grad_fn: GradFn,
    allow_neg_inf: bool = False,
) -> Tensor:
    _check_finite(op, array, allow_neg_inf)
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(array, requires_grad=tracked, copy=False)
    if tracked:
        tape.record(op, out, inputs, grad_fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported operand layouts: [m, p] x [p, n]; [..., m, p] x [p, n] with
    the right operand shared across leading axes; [..., m, p] x [..., p, n]
    with equal leading axes; [m, p] x [p] and [p] x [p, n].
    """
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError("matmul", a.shape, b.shape)
    if bd.ndim == 1:
        if ad.ndim != 2 or ad.shape[1] != bd.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        mode = "matrix-vector"
    elif ad.ndim == 1:
        if bd.ndim != 2 or ad.shape[0] != bd.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        mode = "vector-matrix"
    elif bd.ndim == 2:
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        mode = "shared"
    else:
        if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
            raise ShapeError("matmul", a.shape, b.shape)
        mode = "batched"

    def grad_fn(g: np.ndarray):
        if mode == "matrix-vector":
            return np.outer(g, bd), ad.T @ g
        if mode == "vector-matrix":
            return bd @ g, np.outer(ad, g)
        if mode == "shared":
            flat_a = ad.reshape(-1, ad.shape[-1])
            flat_g = g.reshape(-1, g.shape[-1])
            return g @ bd.T, flat_a.T @ flat_g
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result("matmul", ad @ bd, (a, b), grad_fn)


def transpose_last(x: Tensor) -> Tensor:
    """Swap the two trailing axes."""
    if x.ndim < 2:
        raise ShapeError("transpose_last", x.shape, detail="needs at least two axes")
    return _result(
        "transpose_last",
        np.swapaxes(x.data, -1, -2).copy(),
        (x,),
        lambda g: (np.swapaxes(g, -1, -2),),
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError("reshape", x.shape, shape)
    original = x.shape
    return _result("reshape", x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(original),))


# ---------------------------------------------------------------------------
# Elementwise suite
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may also be a bias vector over the last axis of `a`."""
    if a.shape == b.shape:
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        width = b.shape[0]
        return _result(
            "add",
            a.data + b.data,
            (a, b),
            lambda g: (g, g.reshape(-1, width).sum(axis=0)),
        )
    raise ShapeError("add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result("scale", x.data * factor, (x,), lambda g: (g * factor,))


def one_minus(x: Tensor) -> Tensor:
    return _result("one_minus", 1.0 - x.data, (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _result("square", xd * xd, (x,), lambda g: (2.0 * xd * g,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0.0
    return _result("relu", np.where(positive, x.data, 0.0), (x,), lambda g: (np.where(positive, g, 0.0),))


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_last_axis", (), detail="nothing to concatenate")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat_last_axis", tensors[0].shape, t.shape)
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]

    def grad_fn(g: np.ndarray):
        return tuple(np.split(g, cuts, axis=-1))

    return _result(
        "concat_last_axis",
        np.concatenate([t.data for t in tensors], axis=-1),
        tuple(tensors),
        grad_fn,
    )


def mean_axis(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError("mean_axis", x.shape, detail=f"axis {axis} out of range")
    axis = axis % x.ndim
    count = x.shape[axis]
    if x.ndim == 1:
        raise ShapeError("mean_axis", x.shape, detail="use mean_all on vectors")
    shape = x.shape

    def grad_fn(g: np.ndarray):
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return _result("mean_axis", x.data.mean(axis=axis), (x,), grad_fn)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous sub-range [start, stop) along one axis."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError("slice_axis", x.shape, detail=f"axis {axis} out of range")
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError("slice_axis", x.shape, detail=f"range [{start}, {stop}) on axis {axis}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def grad_fn(g: np.ndarray):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result("slice_axis", x.data[index].copy(), (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result("sum_all", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, count = x.shape, x.size
    return _result("mean_all", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / count),))


# ---------------------------------------------------------------------------
# Attention and normalization primitives
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis; -inf entries receive weight exactly 0."""
    xd = x.data
    if np.isnan(xd).any() or np.isposinf(xd).any():
        raise NumericError("softmax_rows received NaN or +inf logits")
    row_max = xd.max(axis=-1, keepdims=True)
    if np.isneginf(row_max).any():
        raise DegenerateRowError("softmax_rows: a row is entirely -inf and has no valid distribution")
    weights = np.exp(xd - row_max)
    y = weights / weights.sum(axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("softmax_rows", y, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each position over the last axis, then apply gamma/beta."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    width = x.shape[-1]
    if gamma.shape != (width,):
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    if beta.shape != (width,):
        raise ShapeError("layer_norm", x.shape, beta.shape)
    xd, gd = x.data, gamma.data
    centered = xd - xd.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std

    def grad_fn(g: np.ndarray):
        d_hat = g * gd
        dx = inv_std * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        d_gamma = (g * x_hat).reshape(-1, width).sum(axis=0)
        d_beta = g.reshape(-1, width).sum(axis=0)
        return dx, d_gamma, d_beta

    return _result("layer_norm", x_hat * gd + beta.data, (x, gamma, beta), grad_fn)


def topk_mask_rows(x: Tensor, k: int) -> Tensor:
    """Keep the k largest entries of each last-axis row, set the rest to -inf.

    Ties at the k-th value go to the lowest column index. When k covers the
    whole row the input passes through unchanged.
    """
    if k < 1:
        raise ConfigError(f"top-k retention count must be at least 1, got {k}")
    xd = x.data
    if k >= xd.shape[-1]:
        return _result("topk_mask_rows", xd.copy(), (x,), lambda g: (g,), allow_neg_inf=True)
    # stable sort on negated values keeps lower indices first among equals
    order = np.argsort(-xd, axis=-1, kind="stable")[..., :k]
    keep = np.zeros(xd.shape, dtype=bool)
    np.put_along_axis(keep, order, True, axis=-1)
    masked = np.where(keep, xd, -np.inf)
    return _result(
        "topk_mask_rows",
        masked,
        (x,),
        lambda g: (np.where(keep, g, 0.0),),
        allow_neg_inf=True,
    )


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if grad.shape != tensor.shape:
        grad = grad.reshape(tensor.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad += grad


def backward(loss: Tensor, tape: Tape) -> None:
    """Replay the tape in reverse from a scalar loss, accumulating grads."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape was already replayed; call reset() before reusing it")
    if not any(node.output is loss for node in reversed(tape.nodes)):
        raise TapeError("loss was not produced under this tape (detached tensor)")

    _accumulate(loss, np.ones(loss.shape))
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(g)):
            if grad is not None and tensor.requires_grad:
                _accumulate(tensor, grad)
    tape._consumed = True
    logger.debug("backward replayed %d ops", len(tape))
