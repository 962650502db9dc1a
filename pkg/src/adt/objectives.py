"""Training objectives: conditional flow matching and frame-to-character
alignment (CTC), plus the Viterbi alignment used at evaluation time.

The flow path is the straight (optimal-transport) interpolation

    x_t = (1 - t) * x0 + t * x1,      u_t = x1 - x0,

so the regression target is constant along each path. The flow loss is the
mean squared velocity error over masked frames only — context frames are
given to the model and carry no training signal.

The alignment loss is the standard blank-augmented forward algorithm, run
in log space in float64 for stability. It is implemented as a single custom
op: the backward pass uses the alpha/beta decomposition of the path
posterior instead of differentiating through the recursion, which is exact
and cheap. Here beta excludes the emission at its own timestep, so
log p = logsumexp_s(alpha[t, s] + beta[t, s]) at every t, and

    d(-log p) / d log_probs[t, k] = -sum_{s: z_s = k} exp(alpha + beta - log p).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import AlignmentInfeasibleError, DimensionError, DomainError
from .tensor import Tensor
from .text import BLANK, count_adjacent_repeats

CTC_WEIGHT = 0.1  # relative weight of the alignment loss in the total

_NEG_INF = -1e30


def flow_interpolate(x0: np.ndarray, x1: np.ndarray, t: float):
    """Point on the straight path and its (constant) velocity target."""
    if x0.shape != x1.shape:
        raise DimensionError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"flow time {t} outside [0, 1]")
    x_t = (1.0 - t) * x0 + t * x1
    return x_t, x1 - x0


def cfm_loss(v: Tensor, u_t: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared velocity error over masked frames (all mel channels)."""
    t_frames, n_mels = v.shape
    mask = np.asarray(mask, dtype=v.data.dtype)
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise DomainError("flow loss needs at least one masked frame")
    weights = Tensor(np.repeat(mask[:, None], n_mels, axis=1), dtype=v.data.dtype)
    diff = v - Tensor(np.asarray(u_t), dtype=v.data.dtype)
    return (diff * diff * weights).sum() * (1.0 / (n_masked * n_mels))


def _extend(labels: np.ndarray) -> np.ndarray:
    """Blank-augmented state sequence [_, l1, _, l2, ..., lL, _]."""
    ext = np.full(2 * labels.size + 1, BLANK, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _check_ctc_inputs(log_probs_shape, labels: np.ndarray) -> None:
    t_frames, vocab = log_probs_shape
    if labels.ndim != 1 or labels.size == 0:
        raise DimensionError("labels must be a non-empty 1-d sequence")
    if labels.min() < 1 or labels.max() >= vocab:
        raise DomainError(f"labels must lie in [1, {vocab})")
    needed = labels.size + count_adjacent_repeats(labels)
    if t_frames < needed:
        raise AlignmentInfeasibleError(
            f"{t_frames} frames cannot realize {labels.size} labels "
            f"({needed} needed counting repeat separators)"
        )


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """allowed[s]: may transition s-2 -> s (skip the blank between labels)."""
    s = ext.size
    allowed = np.zeros(s, dtype=bool)
    if s > 2:
        allowed[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return allowed


def _shift(arr: np.ndarray, by: int) -> np.ndarray:
    out = np.full_like(arr, _NEG_INF)
    out[by:] = arr[:-by] if by else arr
    return out


def ctc_loss(log_probs: Tensor, labels) -> Tensor:
    """Negative log-likelihood of `labels` under per-frame log-probs (T, V)."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_ctc_inputs(log_probs.shape, labels)
    lp = log_probs.data.astype(np.float64)
    t_frames = lp.shape[0]
    ext = _extend(labels)
    s = ext.size
    skip_ok = _skip_allowed(ext)

    alpha = np.full((t_frames, s), _NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if s > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, t_frames):
        prev = alpha[t - 1]
        stay = prev
        step = _shift(prev, 1)
        skip = np.where(skip_ok, _shift(prev, 2), _NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + lp[t, ext]

    final = alpha[-1, -1]
    if s > 1:
        final = np.logaddexp(final, alpha[-1, -2])
    log_p = float(final)

    def backward(g):
        # beta excludes its own timestep's emission; see module docstring
        beta = np.full((t_frames, s), _NEG_INF)
        beta[-1, -1] = 0.0
        if s > 1:
            beta[-1, -2] = 0.0
        for t in range(t_frames - 2, -1, -1):
            nxt = beta[t + 1] + lp[t + 1, ext]
            stay = nxt
            step = np.full(s, _NEG_INF)
            step[:-1] = nxt[1:]
            skip = np.full(s, _NEG_INF)
            skip[:-2] = np.where(skip_ok[2:], nxt[2:], _NEG_INF)
            beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)
        posterior = np.exp(alpha + beta - log_p)  # (T, S)
        grad = np.zeros_like(lp)
        for idx in range(s):
            grad[:, ext[idx]] -= posterior[:, idx]
        log_probs._accumulate((float(g) * grad).astype(log_probs.data.dtype))

    out_data = np.asarray(-log_p, dtype=log_probs.data.dtype)
    return T.make_op(out_data, (log_probs,), backward)


def ctc_multi_loss(head_log_probs, labels) -> Tensor:
    """Mean alignment loss across the intermediate projection heads."""
    if not head_log_probs:
        raise DimensionError("no alignment heads given")
    total = ctc_loss(head_log_probs[0], labels)
    for lp in head_log_probs[1:]:
        total = total + ctc_loss(lp, labels)
    return total * (1.0 / len(head_log_probs))


def ctc_viterbi_align(log_probs: np.ndarray, labels) -> list:
    """Best-path frame span [start, end) for each label, via Viterbi.

    Spans are disjoint and ordered but need not tile [0, T): blank frames
    between characters belong to no span.
    """
    labels = np.asarray(labels, dtype=np.int64)
    log_probs = np.asarray(log_probs, dtype=np.float64)
    _check_ctc_inputs(log_probs.shape, labels)
    t_frames = log_probs.shape[0]
    ext = _extend(labels)
    s = ext.size
    skip_ok = _skip_allowed(ext)

    delta = np.full((t_frames, s), _NEG_INF)
    back = np.zeros((t_frames, s), dtype=np.int64)
    delta[0, 0] = log_probs[0, ext[0]]
    if s > 1:
        delta[0, 1] = log_probs[0, ext[1]]
    back[0] = np.arange(s)
    for t in range(1, t_frames):
        prev = delta[t - 1]
        cand = np.stack([
            prev,
            _shift(prev, 1),
            np.where(skip_ok, _shift(prev, 2), _NEG_INF),
        ])
        choice = np.argmax(cand, axis=0)
        delta[t] = cand[choice, np.arange(s)] + log_probs[t, ext]
        back[t] = np.arange(s) - choice

    state = s - 1
    if s > 1 and delta[-1, s - 2] > delta[-1, s - 1]:
        state = s - 2
    path = np.empty(t_frames, dtype=np.int64)
    path[-1] = state
    for t in range(t_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]

    spans = []
    for i in range(labels.size):
        frames = np.flatnonzero(path == 2 * i + 1)
        spans.append((int(frames[0]), int(frames[-1]) + 1))
    return spans
