"""Inference-time ODE sampling with multimodal guidance.

Integration is plain Euler over a swayed time grid: uniform grid points u
are warped by t = u + s * (cos(pi*u/2) - 1 + u), which for negative s packs
steps near t = 0 where the velocity field changes fastest. s = 0 recovers
the uniform grid; endpoints stay exactly 0 and 1 for any s.

Guidance runs up to three conditioning branches per step,

    v = v_full + s_video * (v_full - v_text)  + s_text * (v_text - v_uncond),

where v_full sees text+video, v_text sees text only, and v_uncond sees
neither. When s_text == s_video the middle branch cancels algebraically and
the combination is computed directly in its single-scale form

    v = v_full + s * (v_full - v_uncond),

skipping the text-only forward. Branches that coincide because a modality
is absent (or because a scale is zero) are likewise computed once and
reused, so the forward count per step is 1, 2, or 3 depending on the scales
and available streams. The acoustic context (unmasked mel frames and the
mask itself) stays in every branch: guidance steers the condition streams,
not the inpainting task.

During sampling, context rows are clamped to their known straight path
after every step, so the generated region is integrated while the context
region stays exact; at t = 1 context rows equal the reference mel bitwise.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .tensor import no_grad

SWAY_COEFF = -1.0


def sway_times(n_steps: int, coeff: float = SWAY_COEFF) -> np.ndarray:
    """n_steps + 1 strictly increasing times from 0 to 1."""
    if n_steps < 1:
        raise DomainError(f"need at least one step, got {n_steps}")
    u = np.linspace(0.0, 1.0, n_steps + 1)
    t = u + coeff * (np.cos(np.pi * u / 2.0) - 1.0 + u)
    if not (abs(t[0]) < 1e-12 and abs(t[-1] - 1.0) < 1e-12):
        raise DomainError(f"sway coefficient {coeff} breaks the endpoints")
    # analytically t(0)=0 and t(1)=1 for every coefficient; the float
    # cosine leaves ~6e-17 at pi/2, so pin the endpoints to the true values
    t[0] = 0.0
    t[-1] = 1.0
    if np.any(np.diff(t) <= 0):
        raise DomainError(f"sway coefficient {coeff} is not monotone")
    return t


def integrate(field_fn, x0: np.ndarray, n_steps: int, sway: float = SWAY_COEFF,
              post_step=None) -> np.ndarray:
    """Euler solve of dx/dt = field_fn(x, t) from t=0 to t=1."""
    times = sway_times(n_steps, sway)
    x = np.array(x0)
    for k in range(n_steps):
        v = field_fn(x, float(times[k]))
        x = x + (times[k + 1] - times[k]) * v
        if post_step is not None:
            x = post_step(x, float(times[k + 1]))
    return x


def guided_velocity(model, x_t, t, mel_ctx, mask, video, text_ids,
                    s_text: float, s_video: float):
    """Combine conditioning branches; returns (velocity, forwards used)."""
    def run(with_video: bool, with_text: bool) -> np.ndarray:
        v, _ = model(x_t, t, mel_ctx, mask,
                     video=video if with_video else None,
                     text_ids=text_ids if with_text else None)
        return v.data

    have_video = video is not None
    have_text = text_ids is not None
    forwards = 1
    v_full = run(have_video, have_text)
    if s_video == 0.0 and s_text == 0.0:
        return v_full, forwards

    if s_video == s_text:
        # text-only branch cancels; classic single-scale guidance
        if have_video or have_text:
            v_uncond = run(False, False)
            forwards += 1
        else:
            v_uncond = v_full
        return v_full + s_text * (v_full - v_uncond), forwards

    if have_video:
        v_text = run(False, have_text)
        forwards += 1
    else:
        v_text = v_full  # no video stream: the branches coincide
    out = v_full + s_video * (v_full - v_text)

    if s_text != 0.0:
        if have_text:
            v_uncond = run(False, False)
            forwards += 1
        else:
            v_uncond = v_text
        out = out + s_text * (v_text - v_uncond)
    return out, forwards


def sample(model, rng, mel_ctx: np.ndarray, mask: np.ndarray, *,
           video=None, text_ids=None, n_steps: int = 32,
           s_text: float = 0.0, s_video: float = 0.0,
           sway: float = SWAY_COEFF) -> np.ndarray:
    """Inpaint the masked rows of `mel_ctx`; returns a full (T, n_mels) mel."""
    mel_ctx = np.asarray(mel_ctx, dtype=np.float32)
    t_frames, n_mels = mel_ctx.shape
    mask = np.asarray(mask, dtype=np.float32)
    x0 = rng.split("noise").normal((t_frames, n_mels)).astype(np.float32)
    ctx_rows = mask == 0.0
    col_mask = mask[:, None]

    def field(x, t):
        with no_grad():
            v, _ = guided_velocity(model, x, t, mel_ctx, mask, video, text_ids,
                                   s_text, s_video)
        return v

    def clamp(x, t):
        # context rows follow their known path exactly instead of the solver
        x[ctx_rows] = ((1.0 - t) * x0 + t * mel_ctx)[ctx_rows]
        return x

    out = integrate(field, x0, n_steps, sway=sway, post_step=clamp)
    out[ctx_rows] = mel_ctx[ctx_rows]
    return (out * col_mask + mel_ctx * (1.0 - col_mask)).astype(np.float32)
