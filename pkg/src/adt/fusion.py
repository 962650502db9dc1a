"""Masking and multimodal fusion ahead of the transformer backbone.

The per-frame binary mask M marks frames to be generated (1) versus acoustic
context to keep (0). Fusion concatenates, along the feature axis,

    [(1 - M) * project(mel_context) ; M * video_features]

giving a (T, 2*dim) stream whose audio half is exactly zero on masked rows
and whose video half is exactly zero on context rows — masking happens after
the affine projection so biases cannot leak through.

Text joins by one of three strategies:

* ``early``  — per-frame text features (filler-padded to length T) are
  concatenated on the feature axis and reduced (T, 3*dim) -> (T, dim);
* ``prefix`` — text features are lifted to 2*dim, prepended on the time
  axis, and the whole (L+T, 2*dim) sequence reduced to width dim; the L
  prefix rows are dropped again after the backbone;
* ``xattn``  — the fused stream alone is reduced to width dim and text
  features are handed to the backbone as cross-attention memory.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError
from .nn import Linear, Module, sinusoidal_positions
from .rng import Rng
from .tensor import Tensor

EARLY = "early"
PREFIX = "prefix"
XATTN = "xattn"
VARIANTS = (EARLY, PREFIX, XATTN)

MASK_FRAC_MIN = 0.7
MASK_FRAC_MAX = 1.0


def sample_mask(rng: Rng, t: int) -> np.ndarray:
    """Contiguous training mask covering a U(0.7, 1.0) fraction of frames."""
    if t < 1:
        raise InputError(f"cannot mask a {t}-frame utterance")
    frac = rng.uniform(low=MASK_FRAC_MIN, high=MASK_FRAC_MAX)
    length = max(1, int(round(frac * t)))
    start = rng.integers(0, t - length + 1)
    mask = np.zeros(t, dtype=np.float32)
    mask[start:start + length] = 1.0
    return mask


def span_mask(t: int, start: int, end: int) -> np.ndarray:
    """Explicit [start, end) mask for inference."""
    if not 0 <= start < end <= t:
        raise InputError(f"bad mask span [{start}, {end}) for {t} frames")
    mask = np.zeros(t, dtype=np.float32)
    mask[start:end] = 1.0
    return mask


class MaskedFusion(Module):
    """Projects mel context and fuses it with video features under a mask."""

    def __init__(self, rng: Rng, n_mels: int, dim: int):
        self.audio_proj = Linear(rng.split("audio_proj"), n_mels, dim)
        self.dim = dim

    def __call__(self, mel_ctx: Tensor, h_video: Tensor, mask: np.ndarray) -> Tensor:
        t = mel_ctx.shape[0]
        if h_video.shape != (t, self.dim):
            raise DimensionError(
                f"video features {h_video.shape} do not match "
                f"{t} frames x dim {self.dim}"
            )
        mask = np.asarray(mask, dtype=mel_ctx.data.dtype)
        if mask.shape != (t,):
            raise DimensionError(f"mask shape {mask.shape} != ({t},)")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise InputError("mask must be binary")
        keep = Tensor(np.repeat((1.0 - mask)[:, None], self.dim, axis=1),
                      dtype=mel_ctx.data.dtype)
        gen = Tensor(np.repeat(mask[:, None], self.dim, axis=1),
                     dtype=mel_ctx.data.dtype)
        h_audio = self.audio_proj(mel_ctx) * keep
        h_vid = h_video * gen
        return T.concat([h_audio, h_vid], axis=1)


class Conditioner(Module):
    """Applies one of the three text-conditioning strategies.

    The cross-attention route adds absolute sinusoidal positions to the
    text memory here, after the shared (shift-equivariant) text encoder:
    queries carry frame positions from the video stream, so giving keys
    character indices lets attention learn the monotonic frame-to-
    character map directly instead of recovering order from context.
    """

    def __init__(self, rng: Rng, dim: int, variant: str):
        if variant not in VARIANTS:
            raise InputError(f"unknown conditioning variant {variant!r}")
        self.variant = variant
        self.dim = dim
        if variant == EARLY:
            self.reduce = Linear(rng.split("reduce"), 3 * dim, dim)
        elif variant == PREFIX:
            self.lift = Linear(rng.split("lift"), dim, 2 * dim)
            self.reduce = Linear(rng.split("reduce"), 2 * dim, dim)
        else:
            self.reduce = Linear(rng.split("reduce"), 2 * dim, dim)

    def __call__(self, h_av: Tensor, text_feats: Tensor):
        """-> (sequence (T or L+T, dim), cross memory or None, prefix length)."""
        t = h_av.shape[0]
        if self.variant == EARLY:
            if text_feats.shape[0] != t:
                raise DimensionError(
                    f"early fusion needs per-frame text: {text_feats.shape[0]} != {t}"
                )
            seq = self.reduce(T.concat([h_av, text_feats], axis=1))
            return seq, None, 0
        if self.variant == PREFIX:
            lifted = self.lift(text_feats)
            seq = self.reduce(T.concat([lifted, h_av], axis=0))
            return seq, None, text_feats.shape[0]
        seq = self.reduce(h_av)
        pos = Tensor(sinusoidal_positions(text_feats.shape[0], self.dim),
                     dtype=text_feats.data.dtype)
        return seq, text_feats + pos, 0
