"""Neural-network building blocks over the autodiff tensor type.

Modules are plain classes holding `Tensor` parameters as attributes. The
`Module` base walks attributes (and lists of sub-modules) to produce a flat
name -> tensor dict whose keys double as checkpoint tensor names. All
sequence tensors are time-major: (T, dim) per utterance, no batch axis;
training batches are handled by gradient accumulation outside the model.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DimensionError, FormatError
from .rng import Rng
from .tensor import Tensor


class Module:
    def params(self) -> dict:
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[name] = value
            elif isinstance(value, Module):
                for key, p in value.params().items():
                    out[f"{name}.{key}"] = p
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for key, p in item.params().items():
                            out[f"{name}.{i}.{key}"] = p
        return out

    def load(self, tensors: dict) -> None:
        params = self.params()
        missing = set(params) - set(tensors)
        if missing:
            raise FormatError(f"checkpoint missing tensors: {sorted(missing)[:5]}...")
        for name, p in params.items():
            arr = np.asarray(tensors[name])
            if arr.shape != p.data.shape:
                raise FormatError(
                    f"tensor {name}: shape {arr.shape} != expected {p.data.shape}"
                )
            p.data[...] = arr.astype(p.data.dtype)

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params().values())


def _param(rng: Rng, shape, std: float) -> Tensor:
    if std == 0.0:
        return Tensor(np.zeros(shape), requires_grad=True)
    return Tensor(rng.normal(shape, std=std), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True,
                 zero_init: bool = False):
        std = 0.0 if zero_init else 1.0 / math.sqrt(d_in)
        self.w = _param(rng.split("w"), (d_in, d_out), std)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, affine: bool = True):
        self.g = Tensor(np.ones(dim), requires_grad=True) if affine else None
        self.b = Tensor(np.zeros(dim), requires_grad=True) if affine else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.layer_norm(x)
        if self.g is not None:
            out = out * self.g + self.b
        return out


class Embedding(Module):
    def __init__(self, rng: Rng, n: int, dim: int, std: float = 0.02):
        self.table = _param(rng.split("table"), (n, dim), std)

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


class FeedForward(Module):
    def __init__(self, rng: Rng, dim: int, hidden: int):
        self.up = Linear(rng.split("up"), dim, hidden)
        self.down = Linear(rng.split("down"), hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.gelu(self.up(x)))


class MultiHeadAttention(Module):
    """Full (unmasked) attention; with `kv` given it attends cross-sequence."""

    def __init__(self, rng: Rng, dim: int, heads: int, kv_dim: int | None = None):
        if dim % heads:
            raise DimensionError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        kv_dim = kv_dim if kv_dim is not None else dim
        self.wq = Linear(rng.split("wq"), dim, dim, bias=False)
        self.wk = Linear(rng.split("wk"), kv_dim, dim, bias=False)
        self.wv = Linear(rng.split("wv"), kv_dim, dim, bias=False)
        self.wo = Linear(rng.split("wo"), dim, dim)

    def _split_heads(self, x: Tensor) -> Tensor:
        t = x.shape[0]
        return x.reshape(t, self.heads, self.head_dim).swap(0, 1)

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        source = kv if kv is not None else x
        q = self._split_heads(self.wq(x))          # (H, Tq, dh)
        k = self._split_heads(self.wk(source))     # (H, Tk, dh)
        v = self._split_heads(self.wv(source))
        scores = (q @ k.swap(1, 2)) * (1.0 / math.sqrt(self.head_dim))
        attn = T.softmax(scores, axis=-1)
        out = (attn @ v).swap(0, 1)                # (Tq, H, dh)
        t = out.shape[0]
        return self.wo(out.reshape(t, self.heads * self.head_dim))


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """(length, dim) standard interleaved sin/cos absolute position table."""
    if dim % 2:
        raise DimensionError(f"position dim must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10_000.0) * np.arange(dim // 2, dtype=np.float64)
                  / (dim // 2))
    angles = pos * freq[None, :]
    table = np.empty((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """(dim,) sinusoidal features of a scalar flow time in [0, 1]."""
    if dim % 2:
        raise DimensionError(f"time embedding dim must be even, got {dim}")
    freq = np.exp(-math.log(10_000.0) * np.arange(dim // 2, dtype=np.float64)
                  / (dim // 2))
    angles = 1_000.0 * float(t) * freq
    return np.concatenate([np.sin(angles), np.cos(angles)])
