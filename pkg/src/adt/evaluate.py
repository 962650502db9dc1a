"""Held-out evaluation of an inpainting checkpoint.

Each held-out utterance is regenerated from a same-speaker reference
prompt: the reference mel stays as unmasked context, the target's video
fixes the duration, and the model inpaints the target region under
classifier-free guidance. The generated region is then scored against the
known ground truth:

* ``cer_template``  — nearest-template decoding over the gold spans
  (speaker tilt removed), against the gold text;
* ``cer_ctc``       — the model transcribing its own output: deepest
  alignment head at flow time 1.0 with no text or video given, greedy
  collapse;
* ``align_mae_ms``  — CTC Viterbi forced alignment of a frozen framewise
  classifier's log-probs, span boundaries vs gold, in milliseconds;
* ``sync``          — Pearson correlation between generated and gold
  frame-energy envelopes (timing proxy);
* ``tilt_err``      — |least-squares spectral slope of the residual minus
  the speaker's true tilt| (voice-identity proxy).

The framewise classifier is a small convolutional net trained on the train
split's gold mels; it is deliberately independent of the generator so the
alignment score cannot be gamed by the model's own heads. Character error
rates are pooled over the split (total edits / total reference length).

Utterances are independent, so evaluation parallelizes over them; the
ADT_THREADS environment variable caps the worker count (default 1, serial
and bit-reproducible; results are order-stable for any worker count).
"""

from __future__ import annotations

import multiprocessing
import os

import numpy as np

from . import tensor as T
from .config import Config
from .corpus import Corpus, N_MELS, Utterance, decode_by_template, \
    make_reference_pair
from .errors import InputError
from .nn import Module, _param
from .objectives import ctc_viterbi_align
from .optim import AdamW
from .rng import Rng
from .sampler import sample
from .tensor import Tensor, no_grad
from .text import edit_distance

MODALITY_MODES = ("both", "text", "video")

_RAMP = np.linspace(-1.0, 1.0, N_MELS)


def worker_count() -> int:
    """Worker cap from ADT_THREADS (default 1)."""
    raw = os.environ.get("ADT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"ADT_THREADS={raw!r} is not an integer") from None
    return max(1, n)


class FrameClassifier(Module):
    """Per-frame character posteriors from mel, for forced alignment."""

    def __init__(self, rng: Rng, vocab: int, n_mels: int = N_MELS,
                 hidden: int = 64, kernel: int = 5):
        pad = kernel // 2
        self.w1 = _param(rng.split("w1"), (kernel, n_mels, hidden),
                         1.0 / np.sqrt(kernel * n_mels))
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = _param(rng.split("w2"), (kernel, hidden, vocab),
                         1.0 / np.sqrt(kernel * hidden))
        self.b2 = Tensor(np.zeros(vocab), requires_grad=True)
        self.pad = pad

    def __call__(self, mel) -> Tensor:
        x = mel if isinstance(mel, Tensor) else Tensor(mel)
        h = T.gelu(T.conv1d(x, self.w1, padding=self.pad) + self.b1)
        logits = T.conv1d(h, self.w2, padding=self.pad) + self.b2
        return T.log_softmax(logits, axis=-1)


def frame_labels(utt: Utterance) -> np.ndarray:
    """Gold per-frame character id, from the span annotation."""
    out = np.zeros(utt.n_frames, dtype=np.int64)
    for (start, end), label in zip(utt.spans, utt.ids):
        out[start:end] = label
    return out


def train_classifier(corpus: Corpus, cfg: Config,
                     quiet: bool = True) -> FrameClassifier:
    """Fit the frozen evaluation classifier on the train split's gold mels."""
    vocab = len(corpus.alphabet.chars) + 1
    clf = FrameClassifier(Rng(cfg["seed"]).split("classifier"), vocab)
    params = clf.params()
    opt = AdamW(params, lr=cfg["eval.classifier_lr"])
    rng = Rng(cfg["seed"]).split("classifier_data")
    steps = cfg["eval.classifier_steps"]
    for step in range(steps):
        u = corpus.train[int(rng.integers(0, len(corpus.train)))]
        labels = frame_labels(u)
        log_probs = clf(u.mel)
        picked = Tensor(np.eye(log_probs.shape[1])[labels],
                        dtype=log_probs.data.dtype)
        loss = (log_probs * picked).sum() * (-1.0 / labels.size)
        loss.backward()
        opt.step()
        opt.zero_grad()
        if not quiet and step % 100 == 0:
            print(f"classifier step {step}  loss {float(loss.data):.4f}",
                  flush=True)
    return clf


def classifier_accuracy(clf: FrameClassifier, utts) -> float:
    """Fraction of frames whose argmax matches the gold character."""
    hits = 0
    total = 0
    with no_grad():
        for u in utts:
            pred = np.argmax(clf(u.mel).data, axis=1)
            gold = frame_labels(u)
            hits += int(np.sum(pred == gold))
            total += gold.size
    return hits / total


def transcribe(model, mel: np.ndarray) -> np.ndarray:
    """Greedy per-frame labels from the model's deepest alignment head.

    Runs the backbone at flow time 1.0 on the finished mel with both
    condition streams dropped, exactly the "nothing given" configuration
    modality dropout trained.
    """
    t_frames = mel.shape[0]
    zeros = np.zeros_like(mel)
    mask = np.ones(t_frames, dtype=np.float32)
    with no_grad():
        _, heads = model(mel, 1.0, zeros, mask, video=None, text_ids=None,
                         want_ctc=True)
    return np.argmax(heads[-1].data, axis=1)


def span_mae_ms(pred_spans, gold_spans) -> float:
    """Mean |boundary error| in milliseconds at 100 frames/s."""
    errors = []
    for (ps, pe), (gs, ge) in zip(pred_spans, gold_spans):
        errors.append(0.5 * (abs(ps - gs) + abs(pe - ge)))
    return float(np.mean(errors)) * 10.0


def envelope_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of frame-mean energy tracks."""
    ea = a.mean(axis=1)
    eb = b.mean(axis=1)
    if ea.std() < 1e-8 or eb.std() < 1e-8:
        return 0.0
    return float(np.corrcoef(ea, eb)[0, 1])


def estimate_tilt(mel: np.ndarray, utt: Utterance,
                  templates: np.ndarray) -> float:
    """Least-squares spectral slope of (mel - gold template track)."""
    slopes = []
    for (start, end), label in zip(utt.spans, utt.ids):
        resid = mel[start:end].mean(axis=0) - templates[label - 1]
        slopes.append(float(resid @ _RAMP) / float(_RAMP @ _RAMP))
    return float(np.mean(slopes))


# worker state for fork-based parallel evaluation
_WORK: dict = {}


def _generate(utt: Utterance) -> np.ndarray:
    w = _WORK
    pair = make_reference_pair(utt, w["corpus"].reference_for(utt))
    mode = w["modality"]
    video = pair.video if mode in ("both", "video") else None
    text_ids = pair.text_ids if mode in ("both", "text") else None
    out = sample(w["model"], Rng(w["seed"]).split(f"sample:{utt.id}"),
                 pair.mel_ctx, pair.mask, video=video, text_ids=text_ids,
                 n_steps=w["steps"], s_text=w["s_text"],
                 s_video=w["s_video"], sway=w["sway"])
    return out[pair.t_ref:]


def _eval_one(index: int) -> dict:
    w = _WORK
    utt = w["utts"][index]
    corpus = w["corpus"]
    gen = utt.mel if w["oracle"] else _generate(utt)

    decoded = decode_by_template(gen, utt.spans, corpus.templates,
                                 corpus.alphabet, tilt=utt.tilt)
    ctc_text = corpus.alphabet.collapse(transcribe(w["model"], gen))
    with no_grad():
        log_probs = w["classifier"](gen).data
    pred_spans = ctc_viterbi_align(log_probs, utt.ids)

    return {
        "id": utt.id,
        "ref_len": len(utt.text),
        "template_edits": edit_distance(utt.text, decoded),
        "ctc_edits": edit_distance(utt.text, ctc_text),
        "align_mae_ms": span_mae_ms(pred_spans, utt.spans),
        "sync": envelope_correlation(gen, utt.mel),
        "tilt_err": abs(estimate_tilt(gen, utt, corpus.templates) - utt.tilt),
    }


def evaluate_model(model, corpus: Corpus, cfg: Config, *,
                   s_text: float | None = None, s_video: float | None = None,
                   modality: str = "both", oracle: bool = False,
                   classifier: FrameClassifier | None = None,
                   setting: str = "default") -> dict:
    """Score the model on the held-out split; returns one report row."""
    if modality not in MODALITY_MODES:
        raise InputError(f"modality must be one of {MODALITY_MODES}")
    utts = corpus.eval[:cfg["eval.max_utterances"]]
    if not utts:
        raise InputError("evaluation split is empty")
    if classifier is None:
        classifier = train_classifier(corpus, cfg)
    _WORK.update(
        model=model, corpus=corpus, utts=utts, classifier=classifier,
        oracle=oracle, modality=modality, seed=cfg["seed"],
        steps=cfg["sample.steps"], sway=cfg["sample.sway"],
        s_text=cfg["sample.s_text"] if s_text is None else s_text,
        s_video=cfg["sample.s_video"] if s_video is None else s_video,
    )
    workers = worker_count()
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(workers, len(utts))) as pool:
            rows = pool.map(_eval_one, range(len(utts)))
    else:
        rows = [_eval_one(i) for i in range(len(utts))]

    total_len = sum(r["ref_len"] for r in rows)
    report = {
        "setting": setting,
        "s_text": _WORK["s_text"],
        "s_video": _WORK["s_video"],
        "n_utterances": len(rows),
        "cer_template": sum(r["template_edits"] for r in rows) / total_len,
        "cer_ctc": sum(r["ctc_edits"] for r in rows) / total_len,
        "align_mae_ms": float(np.mean([r["align_mae_ms"] for r in rows])),
        "sync": float(np.mean([r["sync"] for r in rows])),
        "tilt_err": float(np.mean([r["tilt_err"] for r in rows])),
    }
    for key, value in report.items():
        if isinstance(value, float) and not np.isfinite(value):
            raise InputError(f"metric {key} is not finite")
    return report
