"""Reverse-mode automatic differentiation over numpy arrays.

Design notes, enforced throughout:

* Every tensor produced while grad mode is on records its parents and a
  backward closure, plus a process-wide monotonically increasing node id.
  ``backward()`` visits reachable nodes in descending id order, which is the
  exact reverse of execution order, so no explicit topological sort is needed.
* Gradients accumulate additively into ``.grad`` (numpy arrays, same shape
  and dtype as ``.data``); leaves created with ``requires_grad=False`` are
  skipped entirely.
* Broadcasting in binary ops is restricted to the trailing-suffix case: the
  two shapes must be equal, or one must be a trailing suffix of the other
  (a scalar counts). Anything fancier must be materialized explicitly by the
  caller, which keeps the backward's reduction rule trivially correct.
* ``backward()`` only accepts scalar outputs; losses are reduced before the
  call. This removes a whole class of silent-shape bugs.
* Default dtype is float32; tests that compare against finite differences
  build float64 graphs by constructing leaves with ``dtype=np.float64``
  (every op preserves the widest input dtype via numpy promotion).
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import DimensionError, DomainError

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, EMA swaps...)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


_debug_nan = False


def debug_nan(enabled: bool = True) -> None:
    """When on, every op forward asserts its output is finite. Slow; for tests."""
    global _debug_nan
    _debug_nan = enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_nid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        target = dtype if dtype is not None else DEFAULT_DTYPE
        if arr.dtype != target:
            arr = arr.astype(target)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._nid = next(_ids)

    # -- introspection -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- backward pass -------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError(
                f"backward() requires a scalar output, got shape {self.shape}"
            )
        if not self.requires_grad:
            raise DomainError("backward() on a tensor that does not require grad")
        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._nid in nodes:
                continue
            nodes[node._nid] = node
            stack.extend(node._parents)
        self.grad = np.ones_like(self.data)
        for nid in sorted(nodes, reverse=True):
            node = nodes[nid]
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        # copy: incoming grads are often views into other buffers
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _ensure(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_ensure(other)))

    def __rsub__(self, other):
        return add(_ensure(other), neg(self))

    def __mul__(self, other):
        return mul(self, _ensure(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, _ensure(1.0 / other))
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swap(self, ax1: int, ax2: int):
        return swap(self, ax1, ax2)

    @property
    def T(self):
        if self.ndim != 2:
            raise DimensionError(f".T needs a 2-d tensor, got shape {self.shape}")
        return swap(self, 0, 1)


def _ensure(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    # scalars become float32 so they never widen a float32 graph; inside a
    # float64 graph numpy promotion keeps the result float64 anyway
    return Tensor(value)


def make_op(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap a computed array as a graph node with a custom backward closure."""
    if _debug_nan and not np.all(np.isfinite(data)):
        raise DomainError("non-finite values produced in forward pass")
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_suffix(a_shape, b_shape) -> None:
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if len(small) and big[len(big) - len(small):] != small:
        raise DimensionError(
            f"shapes {a_shape} and {b_shape} are not suffix-broadcastable"
        )


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    # gradient of a trailing-suffix broadcast: sum out the leading axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad.reshape(shape)


# -- elementwise binary ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.shape, b.shape)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.shape, b.shape)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.shape, b.shape)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return make_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return make_op(-a.data, (a,), backward)


# -- elementwise unary -------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return make_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return make_op(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return make_op(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return make_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return make_op(out, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        a._accumulate(g * (cdf + x * pdf))

    return make_op(out, (a,), backward)


# -- reductions --------------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            expand = list(out.shape)
            for ax in sorted(axes):
                expand.insert(ax, 1)
            gg = g.reshape(expand)
        a._accumulate(np.broadcast_to(gg, a.shape))

    return make_op(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    s = sum_(a, axis=axis, keepdims=keepdims)
    return s * (1.0 / count)


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return make_op(out, (a,), backward)


def swap(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        a._accumulate(np.swapaxes(g, ax1, ax2))

    return make_op(out, (a,), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                p._accumulate(g[tuple(index)])
            offset += size

    return make_op(out, tuple(parts), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} "
            f"of shape {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)

    return make_op(out, (a,), backward)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad one axis; gradient is the matching slice."""
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    index = [slice(None)] * a.ndim
    index[axis] = slice(before, before + a.shape[axis])
    index = tuple(index)

    def backward(g):
        a._accumulate(g[index])

    return make_op(out, (a,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul mismatch: {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise DimensionError(f"matmul mismatch: {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ np.swapaxes(b.data, 1, 2))
            if b.requires_grad:
                b._accumulate(np.swapaxes(a.data, 1, 2) @ g)

    elif a.ndim == 3 and b.ndim == 2:
        if a.shape[2] != b.shape[0]:
            raise DimensionError(f"matmul mismatch: {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                k, n = b.shape
                b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, n))

    else:
        raise DimensionError(f"unsupported matmul ranks: {a.shape} @ {b.shape}")

    return make_op(out, (a, b), backward)


# -- normalization and attention helpers -------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate((g - dot) * out)

    return make_op(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        soft = np.exp(out)
        a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return make_op(out, (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (a.data - mu) / sigma

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        a._accumulate((g - gm - xhat * gx) / sigma)

    return make_op(xhat, (a,), backward)


# -- indexing ----------------------------------------------------------------


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError(f"embedding ids must be 1-d, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"[{ids.min()}, {ids.max()}]"
        )
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)

    return make_op(out, (table,), backward)


# -- convolutions (time-major layouts: input (T, C)) -------------------------


def conv1d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """(T, Cin) x (K, Cin, Cout) -> (T', Cout), T' = (T + 2p - K)//s + 1."""
    t, cin = x.shape
    k, wcin, cout = weight.shape
    if cin != wcin:
        raise DimensionError(f"conv1d channels mismatch: input {cin}, weight {wcin}")
    xp = np.pad(x.data, ((padding, padding), (0, 0)))
    t_out = (t + 2 * padding - k) // stride + 1
    if t_out <= 0:
        raise DimensionError(f"conv1d output length {t_out} for input length {t}")
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride]
    # windows: (T', Cin, K) -> contract (Cin, K) against weight (K, Cin, Cout)
    out = np.tensordot(windows, weight.data, axes=([2, 1], [0, 1]))

    def backward(g):
        if weight.requires_grad:
            dw = np.tensordot(windows, g, axes=([0], [0]))  # (Cin, K, Cout)
            weight._accumulate(np.swapaxes(dw, 0, 1))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            gk = np.tensordot(g, weight.data, axes=([1], [2]))  # (T', K, Cin)
            starts = np.arange(t_out) * stride
            for kk in range(k):
                np.add.at(dxp, starts + kk, gk[:, kk, :])
            x._accumulate(dxp[padding:padding + t] if padding else dxp)

    return make_op(out, (x, weight), backward)


def conv1d_transpose(x: Tensor, weight: Tensor, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """(T, Cin) x (K, Cin, Cout) -> ((T-1)*s - 2p + K, Cout) upsampling."""
    t, cin = x.shape
    k, wcin, cout = weight.shape
    if cin != wcin:
        raise DimensionError(
            f"conv1d_transpose channels mismatch: input {cin}, weight {wcin}"
        )
    t_full = (t - 1) * stride + k
    t_out = t_full - 2 * padding
    if t_out <= 0:
        raise DimensionError(f"conv1d_transpose output length {t_out}")
    full = np.zeros((t_full, cout), dtype=x.data.dtype)
    starts = np.arange(t) * stride
    for kk in range(k):
        np.add.at(full, starts + kk, x.data @ weight.data[kk])
    out = full[padding:padding + t_out]

    def backward(g):
        gf = np.zeros((t_full,) + g.shape[1:], dtype=g.dtype)
        gf[padding:padding + t_out] = g
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for kk in range(k):
                dx += gf[starts + kk] @ weight.data[kk].T
            x._accumulate(dx)
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
            for kk in range(k):
                dw[kk] = x.data.T @ gf[starts + kk]
            weight._accumulate(dw)

    return make_op(out, (x, weight), backward)


def dwconv1d(x: Tensor, weight: Tensor) -> Tensor:
    """Depthwise conv, same-length output: (T, C) x (K, C) -> (T, C), K odd."""
    t, c = x.shape
    k, wc = weight.shape
    if c != wc:
        raise DimensionError(f"dwconv1d channels mismatch: input {c}, weight {wc}")
    if k % 2 == 0:
        raise DimensionError(f"dwconv1d kernel must be odd, got {k}")
    pad = k // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, C, K)
    out = np.einsum("tck,kc->tc", windows, weight.data)

    def backward(g):
        if weight.requires_grad:
            weight._accumulate(np.einsum("tck,tc->kc", windows, g))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for kk in range(k):
                dxp[kk:kk + t] += g * weight.data[kk]
            x._accumulate(dxp[pad:pad + t])

    return make_op(out, (x, weight), backward)
