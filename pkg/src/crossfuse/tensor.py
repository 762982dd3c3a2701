"""Minimal deterministic reverse-mode automatic differentiation.

Tensors are contiguous row-major float buffers (float32 for training; a
float64 shadow mode exists for the numeric-check harness). Every operation
executes eagerly and, when any input tracks gradients, records its parents
and a local backward rule. ``backward`` replays the recorded graph in
reverse construction order, which is a valid topological order because a
node is always created after its parents.

Structural operations (reshape, transpose, concat) copy; no two tensors
ever alias the same buffer.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import GraphError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_node_ids = itertools.count()

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """N-dimensional float array with optional gradient accumulation.

    ``grad`` is populated (and accumulated across repeated ``backward``
    calls) only on leaf tensors with ``requires_grad=True``; reset it with
    ``zero_grad`` between optimizer steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = np.float32
        elif np.dtype(dtype) not in FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {dtype!r}; use float32 or float64")
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"
        self._seq = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> int:
        return backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op!r})"

    # Operator sugar; all dispatch to the module-level ops below.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    """Wrap an op result, recording graph links only when gradients are needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    out._op = op
    out._seq = next(_node_ids)
    return out


def _check_same_dtype(op: str, *tensors: Tensor) -> np.dtype:
    dtype = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dtype:
            raise TypeError(f"{op}: mixed dtypes {dtype} and {t.data.dtype}")
    return dtype


def _normalize_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def backward(loss: Tensor) -> int:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    The loss must be a single-element tensor connected to a graph. Returns
    the number of graph nodes visited; each node is visited exactly once.
    Repeated calls without ``zero_grad`` accumulate into leaf gradients.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any gradient-tracked tensor")

    # Reverse construction order is a topological order: children always
    # have a larger sequence id than their parents.
    nodes: list[Tensor] = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    nodes.sort(key=lambda n: n._seq, reverse=True)

    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    visited = 0
    for node in nodes:
        grad = flows.pop(id(node))
        visited += 1
        if node._backward_fn is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, pgrad in zip(node._parents, node._backward_fn(grad)):
            if pgrad is None or not parent.requires_grad:
                continue
            held = flows.get(id(parent))
            flows[id(parent)] = pgrad if held is None else held + pgrad
    return visited


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("sub", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(x.data * s, (x,), lambda g: (g * s,), "scale")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),), "relu")


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = xd * cdf

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (cdf + xd * pdf),)

    return _result(out, (x,), bw, "gelu")


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        da = g @ bd.T if a.requires_grad else None
        db = ad.T @ g if b.requires_grad else None
        return da, db

    return _result(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map rows(x) @ w + b for x of shape (S, F), w (F, D), b (D,)."""
    _check_same_dtype("linear", x, w, b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear: bad ranks x{x.shape} w{w.shape} b{b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear: shape mismatch x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data

    def bw(g):
        dx = g @ wd.T if x.requires_grad else None
        dw = xd.T @ g if w.requires_grad else None
        db = g.sum(axis=0) if b.requires_grad else None
        return dx, dw, db

    return _result(xd @ wd + b.data, (x, w, b), bw, "linear")


# ---------------------------------------------------------------------------
# Reductions and structure


def sum_all(x: Tensor) -> Tensor:
    xd = x.data
    out = np.asarray(xd.sum(), dtype=xd.dtype)
    return _result(out, (x,), lambda g: (g * np.ones_like(xd),), "sum")


def mean(x: Tensor, axis: int) -> Tensor:
    axis = _normalize_axis(axis, x.ndim, "mean")
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def bw(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis) * (1.0 / n),)

    return _result(out, (x,), bw, "mean")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    _check_same_dtype("concat", *tensors)
    ndim = tensors[0].ndim
    axis = _normalize_axis(axis, ndim, "concat")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if t.ndim != ndim or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(np.ascontiguousarray(p) for p in pieces)

    return _result(out, tuple(tensors), bw, "concat")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    out = x.data.reshape(shape).copy()
    return _result(out, (x,), lambda g: (g.reshape(old),), "reshape")


def flatten_last_two(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"flatten_last_two: needs >= 2 dims, got {x.shape}")
    new_shape = x.shape[:-2] + (x.shape[-2] * x.shape[-1],)
    old = x.shape
    out = x.data.reshape(new_shape).copy()
    return _result(out, (x,), lambda g: (g.reshape(old),), "flatten_last_two")


def transpose_last_two(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"transpose_last_two: needs >= 2 dims, got {x.shape}")
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _result(out, (x,), lambda g: (np.ascontiguousarray(np.swapaxes(g, -1, -2)),), "transpose_last_two")


# ---------------------------------------------------------------------------
# Normalization and softmax family


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis, stabilized by max subtraction."""
    if x.shape[-1] < 1:
        raise ShapeError(f"softmax: last dimension must be >= 1, got {x.shape}")
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _result(y, (x,), bw, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    if x.shape[-1] < 1:
        raise ShapeError(f"log_softmax: last dimension must be >= 1, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def bw(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization of a (S, N) tensor to zero mean / unit variance,
    followed by an elementwise affine with gain and bias of shape (N,)."""
    _check_same_dtype("layer_norm", x, gain, bias)
    if eps <= 0:
        raise ShapeError(f"layer_norm: eps must be positive, got {eps}")
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm: shape mismatch x{x.shape} gain{gain.shape} bias{bias.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd = gain.data

    def bw(g):
        dgain = (g * xhat).sum(axis=0) if gain.requires_grad else None
        dbias = g.sum(axis=0) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gd
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return dx, dgain, dbias

    return _result(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------------------
# Convolutions (backbone stand-ins)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution of x (C_in, H, W) with w (C_out, C_in, kh, kw) and bias (C_out,)."""
    _check_same_dtype("conv2d", x, w, b)
    if x.ndim != 3 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"conv2d: bad ranks x{x.shape} w{w.shape} b{b.shape}")
    c_in, h, wd_ = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in_w != c_in or b.shape[0] != c_out:
        raise ShapeError(f"conv2d: channel mismatch x{x.shape} w{w.shape} b{b.shape}")
    hp, wp = h + 2 * padding, wd_ + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c_in, kh, kw, h_out, w_out), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
    cols2 = cols.reshape(c_in * kh * kw, h_out * w_out)
    w2 = w.data.reshape(c_out, c_in * kh * kw)
    out = (w2 @ cols2).reshape(c_out, h_out, w_out) + b.data[:, None, None]

    def bw(g):
        gm = g.reshape(c_out, h_out * w_out)
        dw = (gm @ cols2.T).reshape(w.shape) if w.requires_grad else None
        db = g.sum(axis=(1, 2)) if b.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (w2.T @ gm).reshape(c_in, kh, kw, h_out, w_out)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += dcols[:, i, j]
            dx = np.ascontiguousarray(dxp[:, padding:padding + h, padding:padding + wd_])
        return dx, dw, db

    return _result(out, (x, w, b), bw, "conv2d")


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """1-d convolution of x (C_in, L) with w (C_out, C_in, k) and bias (C_out,)."""
    _check_same_dtype("conv1d", x, w, b)
    if x.ndim != 2 or w.ndim != 3 or b.ndim != 1:
        raise ShapeError(f"conv1d: bad ranks x{x.shape} w{w.shape} b{b.shape}")
    c_in, length = x.shape
    c_out, c_in_w, k = w.shape
    if c_in_w != c_in or b.shape[0] != c_out:
        raise ShapeError(f"conv1d: channel mismatch x{x.shape} w{w.shape} b{b.shape}")
    if length < k:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel {k}")
    l_out = (length - k) // stride + 1

    xd = x.data
    cols = np.empty((c_in, k, l_out), dtype=xd.dtype)
    for i in range(k):
        cols[:, i] = xd[:, i:i + stride * l_out:stride]
    cols2 = cols.reshape(c_in * k, l_out)
    w2 = w.data.reshape(c_out, c_in * k)
    out = w2 @ cols2 + b.data[:, None]

    def bw(g):
        dw = (g @ cols2.T).reshape(w.shape) if w.requires_grad else None
        db = g.sum(axis=1) if b.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (w2.T @ g).reshape(c_in, k, l_out)
            dxd = np.zeros_like(xd)
            for i in range(k):
                dxd[:, i:i + stride * l_out:stride] += dcols[:, i]
            dx = dxd
        return dx, dw, db

    return _result(out, (x, w, b), bw, "conv1d")
