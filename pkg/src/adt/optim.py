"""Optimization: AdamW, a warmup/decay schedule, parameter averaging, clipping.

All of these operate on a flat ``dict[str, Tensor]`` of named parameters,
which is also the unit of checkpointing, so state dicts and parameter dicts
share key structure everywhere.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .tensor import Tensor


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


class WarmupDecaySchedule:
    """Linear ramp 0 -> peak over `warmup_steps`, then linear decay to 0."""

    def __init__(self, peak_lr: float, warmup_steps: int, total_steps: int):
        if warmup_steps >= total_steps:
            raise ValueError("warmup must be shorter than the total schedule")
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps

    def lr(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.peak_lr * (step + 1) / self.warmup_steps
        remaining = self.total_steps - step
        return self.peak_lr * max(remaining, 0) / (self.total_steps - self.warmup_steps)


class Ema:
    """Exponential moving average of parameters, swappable for inference."""

    def __init__(self, params: dict, decay: float = 0.999):
        self.params = params
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in params.items()}
        self._stashed = None

    def update(self) -> None:
        d = self.decay
        for name, p in self.params.items():
            s = self.shadow[name]
            s *= d
            s += (1.0 - d) * p.data

    @contextmanager
    def averaged(self):
        """Temporarily replace live parameters with their averages."""
        stash = {k: p.data.copy() for k, p in self.params.items()}
        for name, p in self.params.items():
            p.data[...] = self.shadow[name]
        try:
            yield
        finally:
            for name, p in self.params.items():
                p.data[...] = stash[name]

    def load_shadow(self, tensors: dict) -> None:
        for name in self.shadow:
            self.shadow[name] = np.asarray(tensors[name], dtype=self.shadow[name].dtype)
