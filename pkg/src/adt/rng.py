"""Counter-based splittable random numbers.

A single generator design is the only randomness source in the repo: every
consumer derives its own stream via :meth:`Rng.split`, so runs are
bit-reproducible for a fixed root seed no matter what order unrelated code
draws in. The core is the splitmix64 finalizer applied to key + counter,
which is stateless per draw (counter-based) and cheap to vectorize.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_U64 = np.uint64


def _finalize(z: np.ndarray) -> np.ndarray:
    """splitmix64 output mix on a uint64 array (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def _finalize_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _hash_label(label) -> int:
    """FNV-1a over the label's text form; stable across runs and platforms."""
    data = str(label).encode("utf-8")
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class Rng:
    """Splittable counter-based generator with 64-bit key and counter."""

    def __init__(self, seed: int, _key: int | None = None):
        if _key is None:
            self.key = _finalize_int((int(seed) & _MASK) ^ _GOLDEN)
        else:
            self.key = _key & _MASK
        self.counter = 0

    def split(self, label) -> "Rng":
        """Derive an independent child stream named by `label`."""
        child = _finalize_int(self.key ^ _finalize_int(_hash_label(label) + _GOLDEN))
        return Rng(0, _key=child)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            mixed = _finalize((idx * _U64(_GOLDEN)) ^ _U64(self.key))
        return mixed

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        """Uniform floats in [low, high) with 53-bit resolution."""
        n = 1 if shape is None else int(np.prod(shape, dtype=np.int64))
        u = (self._raw(n) >> _U64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + (high - low) * u
        if shape is None:
            return float(out[0])
        return out.reshape(shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0):
        """Gaussian draws via Box-Muller on paired uniforms."""
        n = 1 if shape is None else int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        raw = self._raw(2 * m)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1)
        u1 = ((raw[:m] >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = (raw[m:] >> _U64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = mean + std * z
        if shape is None:
            return float(out[0])
        return out.reshape(shape)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        n = 1 if shape is None else int(np.prod(shape, dtype=np.int64))
        u = (self._raw(n) >> _U64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + np.floor(u * (high - low)).astype(np.int64)
        if shape is None:
            return int(out[0])
        return out.reshape(shape)

    def state(self) -> tuple[int, int]:
        return (self.key, self.counter)
