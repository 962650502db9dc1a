"""Velocity-field transformer for mel inpainting.

Blocks use adaptive layer norm with zero-initialized modulation (scale,
shift, gate per sub-layer, all produced from the flow-time embedding), so
every block is the identity at initialization and the output head — also
zero-initialized — makes the initial velocity field exactly zero. In the
cross-attention conditioning variant each block additionally attends to the
text memory through a zero-initialized per-channel gate, keeping the
identity-at-init property. Gating the branch output (rather than zeroing
the projection inside it) leaves the attention weights full-rank, so the
query/key/value projections and the text encoder behind them receive
gradient from the first step and the conditioning path actually trains.

Character-alignment (CTC) projections tap the hidden stream after blocks
n/3 and 2n/3, predicting per-frame log-probabilities over the alphabet plus
blank; they are trained jointly with the flow objective and reused at
evaluation time for transcription checks.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoders import TextEncoder, VideoEncoder
from .errors import DimensionError, DomainError, InputError
from .fusion import EARLY, XATTN, Conditioner, MaskedFusion
from .nn import (FeedForward, LayerNorm, Linear, Module, MultiHeadAttention,
                 timestep_embedding)
from .rng import Rng
from .tensor import Tensor


class DiTBlock(Module):
    def __init__(self, rng: Rng, dim: int, heads: int, ff_hidden: int,
                 cross: bool = False):
        self.dim = dim
        self.ln1 = LayerNorm(dim, affine=False)
        self.attn = MultiHeadAttention(rng.split("attn"), dim, heads)
        self.ln2 = LayerNorm(dim, affine=False)
        self.ff = FeedForward(rng.split("ff"), dim, ff_hidden)
        # 6 modulation vectors: (scale, shift, gate) for attention and mlp
        self.mod = Linear(rng.split("mod"), dim, 6 * dim, zero_init=True)
        if cross:
            self.ln_cross = LayerNorm(dim, affine=False)
            self.cross_attn = MultiHeadAttention(rng.split("cross"), dim, heads)
            # zero gate => identity at init, while wq/wk/wv/wo stay full-rank
            self.cross_gate = Tensor(np.zeros(dim), requires_grad=True)
        else:
            self.ln_cross = None
            self.cross_attn = None

    def __call__(self, x: Tensor, temb: Tensor, memory: Tensor | None = None) -> Tensor:
        d = self.dim
        mod = self.mod(temb).reshape(6 * d)
        scale1, shift1, gate1, scale2, shift2, gate2 = (
            T.narrow(mod, 0, i * d, d) for i in range(6)
        )
        h = self.ln1(x) * (scale1 + 1.0) + shift1
        x = x + self.attn(h) * gate1
        if self.cross_attn is not None and memory is not None:
            x = x + self.cross_attn(self.ln_cross(x), memory) * self.cross_gate
        h = self.ln2(x) * (scale2 + 1.0) + shift2
        return x + self.ff(h) * gate2


class MelInpainter(Module):
    """Full conditional model: encoders + fusion + transformer + heads."""

    def __init__(self, rng: Rng, vocab: int, video_dim: int, variant: str,
                 dim: int = 64, heads: int = 4, n_blocks: int = 6,
                 ff_hidden: int = 192, n_mels: int = 80,
                 text_blocks: int = 4, video_blocks: int = 2):
        if n_blocks < 3:
            raise InputError("need at least 3 blocks for alignment taps")
        self.variant = variant
        self.vocab = vocab
        self.n_mels = n_mels
        self.dim = dim
        self.filler_id = vocab  # one extra embedding row pads early-fusion text
        self.video_enc = VideoEncoder(rng.split("video_enc"), video_dim, dim,
                                      n_blocks=video_blocks)
        self.text_enc = TextEncoder(rng.split("text_enc"), vocab + 1, dim,
                                    n_blocks=text_blocks)
        self.fusion = MaskedFusion(rng.split("fusion"), n_mels, dim)
        self.conditioner = Conditioner(rng.split("conditioner"), dim, variant)
        self.x_proj = Linear(rng.split("x_proj"), n_mels, dim)
        self.time_fc1 = Linear(rng.split("time_fc1"), dim, dim)
        self.time_fc2 = Linear(rng.split("time_fc2"), dim, dim)
        self.blocks = [
            DiTBlock(rng.split(f"block{i}"), dim, heads, ff_hidden,
                     cross=(variant == XATTN))
            for i in range(n_blocks)
        ]
        self.ctc_taps = (n_blocks // 3, 2 * n_blocks // 3)
        self.ctc_heads = [
            Linear(rng.split(f"ctc_head{i}"), dim, vocab)
            for i in range(len(self.ctc_taps))
        ]
        self.ln_final = LayerNorm(dim, affine=False)
        self.final_mod = Linear(rng.split("final_mod"), dim, 2 * dim,
                                zero_init=True)
        self.out_head = Linear(rng.split("out_head"), dim, n_mels,
                               zero_init=True)
        # learned stand-ins for dropped condition streams
        self.null_text = Tensor(rng.split("null_text").normal((dim,), std=0.02),
                                requires_grad=True)
        self.null_video = Tensor(rng.split("null_video").normal((dim,), std=0.02),
                                 requires_grad=True)

    def _text_features(self, text_ids, t_frames: int) -> Tensor:
        if text_ids is None:
            rows = t_frames if self.variant == EARLY else 1
            base = Tensor(np.zeros((rows, self.dim)))
            return base + self.null_text
        ids = np.asarray(text_ids, dtype=np.int64)
        if ids.size == 0:
            raise InputError("empty text; pass None to drop the text stream")
        if np.any(ids == 0) or np.any(ids >= self.filler_id):
            raise DomainError("text ids must lie in [1, vocab)")
        if self.variant == EARLY:
            if ids.size > t_frames:
                raise InputError(
                    f"text length {ids.size} exceeds {t_frames} frames; "
                    "early fusion cannot fit it"
                )
            padded = np.full(t_frames, self.filler_id, dtype=np.int64)
            padded[:ids.size] = ids
            return self.text_enc(padded)
        return self.text_enc(ids)

    def _video_features(self, video, t_frames: int) -> Tensor:
        if video is None:
            base = Tensor(np.zeros((t_frames, self.dim)))
            return base + self.null_video
        video = video if isinstance(video, Tensor) else Tensor(video)
        return self.video_enc(video, t_frames)

    def __call__(self, x_t, t: float, mel_ctx, mask, video=None, text_ids=None,
                 want_ctc: bool = False):
        """-> (velocity (T, n_mels), list of per-frame log-prob tensors)."""
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        mel_ctx = mel_ctx if isinstance(mel_ctx, Tensor) else Tensor(mel_ctx)
        t_frames = x_t.shape[0]
        if x_t.shape != (t_frames, self.n_mels):
            raise DimensionError(f"x_t must be (T, {self.n_mels}), got {x_t.shape}")
        if mel_ctx.shape != x_t.shape:
            raise DimensionError(
                f"context {mel_ctx.shape} does not match x_t {x_t.shape}"
            )
        if not 0.0 <= float(t) <= 1.0:
            raise DomainError(f"flow time {t} outside [0, 1]")

        hv = self._video_features(video, t_frames)
        tf = self._text_features(text_ids, t_frames)
        h_av = self.fusion(mel_ctx, hv, mask)
        seq, memory, prefix = self.conditioner(h_av, tf)

        xh = self.x_proj(x_t)
        if prefix:
            xh = T.pad_axis(xh, 0, prefix, 0)
        seq = seq + xh

        emb = Tensor(timestep_embedding(float(t), self.dim).reshape(1, self.dim))
        temb = self.time_fc2(T.gelu(self.time_fc1(emb)))

        ctc_logprobs = []
        for k, block in enumerate(self.blocks, start=1):
            seq = block(seq, temb, memory)
            if want_ctc and k in self.ctc_taps:
                head = self.ctc_heads[self.ctc_taps.index(k)]
                rows = T.narrow(seq, 0, prefix, t_frames) if prefix else seq
                ctc_logprobs.append(T.log_softmax(head(rows), axis=-1))

        fm = self.final_mod(temb).reshape(2 * self.dim)
        scale = T.narrow(fm, 0, 0, self.dim)
        shift = T.narrow(fm, 0, self.dim, self.dim)
        h = self.ln_final(seq) * (scale + 1.0) + shift
        v = self.out_head(h)
        if prefix:
            v = T.narrow(v, 0, prefix, t_frames)
        return v, ctc_logprobs
