"""Condition-stream encoders.

Video: lip features arrive at 25 fps while mel frames run at 100 Hz, so the
encoder upsamples by 4 (two stride-2 transposed convolutions), adds absolute
sinusoidal positions, and refines with lightweight conformer blocks.

Text: character embeddings refined by ConvNeXt-style blocks. Deliberately no
positional encoding — the stack stays translation-equivariant, which the
prefix conditioning route relies on (character features describe content,
not absolute location).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import (FeedForward, LayerNorm, Linear, Module, MultiHeadAttention,
                 Embedding, sinusoidal_positions, _param)
from .rng import Rng
from .tensor import Tensor

UPSAMPLE = 4  # mel frame rate / video frame rate


class ConformerBlock(Module):
    """Half-step feed-forwards around attention and a depthwise conv module."""

    def __init__(self, rng: Rng, dim: int, heads: int, ff_hidden: int,
                 conv_kernel: int = 3):
        self.ln_ff1 = LayerNorm(dim)
        self.ff1 = FeedForward(rng.split("ff1"), dim, ff_hidden)
        self.ln_attn = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng.split("attn"), dim, heads)
        self.ln_conv = LayerNorm(dim)
        self.conv_in = Linear(rng.split("conv_in"), dim, dim)
        self.dw = _param(rng.split("dw"), (conv_kernel, dim),
                         1.0 / math.sqrt(conv_kernel))
        self.conv_out = Linear(rng.split("conv_out"), dim, dim)
        self.ln_ff2 = LayerNorm(dim)
        self.ff2 = FeedForward(rng.split("ff2"), dim, ff_hidden)
        self.ln_out = LayerNorm(dim)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.ff1(self.ln_ff1(x)) * 0.5
        x = x + self.attn(self.ln_attn(x))
        h = T.gelu(self.conv_in(self.ln_conv(x)))
        x = x + self.conv_out(T.dwconv1d(h, self.dw))
        x = x + self.ff2(self.ln_ff2(x)) * 0.5
        return self.ln_out(x)


class VideoEncoder(Module):
    """(Tv, video_dim) 25 fps features -> mel-rate features.

    The upsampled stream has exactly 4*Tv rows; when the paired mel length
    is passed it is trimmed to that length, which is legal whenever
    Tv == ceil(t_frames / 4), i.e. at most 3 tail rows go.
    """

    def __init__(self, rng: Rng, video_dim: int, dim: int, n_blocks: int = 2,
                 heads: int = 2, ff_hidden: int = 128):
        self.up1_w = _param(rng.split("up1"), (4, video_dim, dim),
                            1.0 / math.sqrt(4 * video_dim))
        self.up1_b = Tensor(np.zeros(dim), requires_grad=True)
        self.up2_w = _param(rng.split("up2"), (4, dim, dim),
                            1.0 / math.sqrt(4 * dim))
        self.up2_b = Tensor(np.zeros(dim), requires_grad=True)
        self.blocks = [
            ConformerBlock(rng.split(f"block{i}"), dim, heads, ff_hidden)
            for i in range(n_blocks)
        ]
        self.dim = dim

    def __call__(self, video: Tensor, t_frames: int | None = None) -> Tensor:
        if video.ndim != 2:
            raise DimensionError(f"video features must be (Tv, C), got {video.shape}")
        if t_frames is not None:
            full = UPSAMPLE * video.shape[0]
            if not full - UPSAMPLE < t_frames <= full:
                raise DimensionError(
                    f"{video.shape[0]} video frames cover {full} mel frames, "
                    f"cannot trim to {t_frames}"
                )
        # stride 2, kernel 4, padding 1 doubles the length exactly
        h = T.conv1d_transpose(video, self.up1_w, stride=2, padding=1) + self.up1_b
        h = T.gelu(h)
        h = T.conv1d_transpose(h, self.up2_w, stride=2, padding=1) + self.up2_b
        h = T.gelu(h)
        pos = Tensor(sinusoidal_positions(h.shape[0], self.dim), dtype=h.dtype)
        h = h + pos
        for block in self.blocks:
            h = block(h)
        if t_frames is not None and t_frames != h.shape[0]:
            h = T.narrow(h, 0, 0, t_frames)
        return h


class ConvNeXtBlock(Module):
    def __init__(self, rng: Rng, dim: int, kernel: int = 7, expand: int = 4):
        self.dw = _param(rng.split("dw"), (kernel, dim), 1.0 / math.sqrt(kernel))
        self.ln = LayerNorm(dim)
        self.up = Linear(rng.split("up"), dim, expand * dim)
        self.down = Linear(rng.split("down"), expand * dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.dwconv1d(x, self.dw)
        h = self.ln(h)
        h = self.down(T.gelu(self.up(h)))
        return x + h


class TextEncoder(Module):
    """(L,) character ids -> (L, dim) content features, shift-equivariant."""

    def __init__(self, rng: Rng, vocab: int, dim: int, n_blocks: int = 4,
                 kernel: int = 7):
        self.embed = Embedding(rng.split("embed"), vocab, dim)
        self.blocks = [
            ConvNeXtBlock(rng.split(f"block{i}"), dim, kernel=kernel)
            for i in range(n_blocks)
        ]

    def __call__(self, ids) -> Tensor:
        h = self.embed(ids)
        for block in self.blocks:
            h = block(h)
        return h
