"""Training loops: audio-only pretraining and multimodal finetuning.

Both stages share one loop. Each step draws a batch of training utterances;
per utterance it samples a flow time, Gaussian noise, and a contiguous
inpainting mask, then regresses the velocity field on the masked rows.

The audio-only stage drops text and video permanently and trains with the
flow loss alone — the model learns to continue speech from acoustic
context. The multimodal stage adds the character-alignment (CTC) term on
the tapped hidden states and applies modality dropout: one uniform draw per
utterance partitions [0, 1) into drop-text / drop-video / drop-both / keep
regions, so every conditioning combination the guided sampler later asks
for has been trained.

Checkpoints hold the raw parameters, the EMA shadow under ``ema.``-prefixed
names, and the architecture settings needed to rebuild the network before
loading. Logs are plain CSV with a fixed float format so that identical
seeds reproduce identical bytes.
"""

from __future__ import annotations

import os

import numpy as np

from .config import Config
from .corpus import Corpus
from .dit import MelInpainter
from .errors import InputError
from .fusion import sample_mask
from .objectives import cfm_loss, ctc_multi_loss, flow_interpolate
from .optim import AdamW, Ema, WarmupDecaySchedule, clip_grad_norm
from .rng import Rng
from .serial import load_checkpoint, save_checkpoint

LOG_FIELDS = ("step", "loss", "cfm", "ctc", "lr")

# architecture settings stored in (and checked against) checkpoints
_ARCH_KEYS = ("variant", "dim", "heads", "n_blocks", "ff_hidden",
              "text_blocks", "video_blocks", "vocab", "video_dim", "n_mels")


def modality_dropout(gate: float, p_text: float, p_video: float,
                     p_both: float) -> tuple[bool, bool]:
    """Map one uniform draw to (drop_text, drop_video).

    [0,1) splits into four regions: drop text only (p_text), drop video
    only (p_video), drop both (p_both), keep both (the rest).
    """
    both_lo = p_text + p_video
    both_hi = both_lo + p_both
    drop_text = gate < p_text or both_lo <= gate < both_hi
    drop_video = p_text <= gate < both_hi
    return drop_text, drop_video


def _arch_from_config(cfg: Config, corpus: Corpus) -> dict:
    arch = cfg.model_kwargs()
    arch["vocab"] = len(corpus.alphabet.chars) + 1  # characters + blank
    arch["video_dim"] = corpus.utterances[0].video.shape[1]
    arch["n_mels"] = corpus.utterances[0].mel.shape[1]
    return arch


def build_model(cfg: Config, corpus: Corpus) -> MelInpainter:
    """Freshly initialized model sized for this corpus."""
    arch = _arch_from_config(cfg, corpus)
    return MelInpainter(Rng(cfg["seed"]).split("model"), **arch)


def load_model(path: str, use_ema: bool = True) -> tuple[MelInpainter, dict]:
    """Rebuild a model from a checkpoint directory."""
    tensors, meta = load_checkpoint(path)
    missing = [k for k in _ARCH_KEYS if k not in meta]
    if missing:
        raise InputError(f"{path}: checkpoint config lacks {missing}")
    arch = {k: (meta[k] if k == "variant" else int(meta[k]))
            for k in _ARCH_KEYS}
    model = MelInpainter(Rng(0), **arch)
    prefix = "ema."
    if use_ema:
        weights = {k[len(prefix):]: v for k, v in tensors.items()
                   if k.startswith(prefix)}
    else:
        weights = {k: v for k, v in tensors.items()
                   if not k.startswith(prefix)}
    model.load(weights)
    return model, meta


def _write_log(path: str, rows: list[dict]) -> None:
    with open(path, "w") as f:
        f.write(",".join(LOG_FIELDS) + "\n")
        for row in rows:
            f.write(f"{row['step']},{row['loss']:.8f},{row['cfm']:.8f},"
                    f"{row['ctc']:.8f},{row['lr']:.8f}\n")


def read_log(path: str) -> list[dict]:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = []
        for line in f:
            parts = line.strip().split(",")
            row = dict(zip(header, parts))
            row["step"] = int(row["step"])
            for key in ("loss", "cfm", "ctc", "lr"):
                row[key] = float(row[key])
            rows.append(row)
    return rows


def _run_stage(model: MelInpainter, corpus: Corpus, cfg: Config, *,
               steps: int, multimodal: bool, out_dir: str, stage: str,
               quiet: bool = False) -> dict:
    if steps < 1:
        raise InputError(f"{stage} needs at least one step")
    params = model.params()
    opt = AdamW(params, lr=cfg["train.peak_lr"],
                weight_decay=cfg["train.weight_decay"])
    warmup = min(cfg["train.warmup"], steps - 1) if steps > 1 else 0
    sched = WarmupDecaySchedule(cfg["train.peak_lr"], warmup, steps)
    ema = Ema(params, decay=cfg["train.ema"])
    root = Rng(cfg["seed"]).split(stage)
    batch = cfg["train.batch"]
    ctc_weight = cfg["loss.ctc_weight"] if multimodal else 0.0
    p_text = cfg["loss.p_drop_text"]
    p_video = cfg["loss.p_drop_video"]
    p_both = cfg["loss.p_drop_both"]
    log_every = cfg["train.log_every"]

    rows = []
    for step in range(steps):
        r = root.split(f"step{step}")
        picks = r.split("pick").integers(0, len(corpus.train), (batch,))
        cfm_sum = 0.0
        ctc_sum = 0.0
        for j, pick in enumerate(picks):
            u = corpus.train[int(pick)]
            rs = r.split(f"sample{j}")
            t = float(rs.split("t").uniform())
            x0 = rs.split("x0").normal(u.mel.shape).astype(np.float32)
            mask = sample_mask(rs.split("mask"), u.n_frames)
            x_t, u_t = flow_interpolate(x0, u.mel, t)

            if multimodal:
                gate = float(rs.split("drop").uniform())
                drop_text, drop_video = modality_dropout(
                    gate, p_text, p_video, p_both)
                text_ids = None if drop_text else u.ids
                video = None if drop_video else u.video
            else:
                text_ids, video = None, None

            v, heads = model(x_t, t, u.mel, mask, video=video,
                             text_ids=text_ids, want_ctc=multimodal)
            cfm = cfm_loss(v, u_t, mask)
            loss = cfm
            if multimodal:
                ctc = ctc_multi_loss(heads, u.ids)
                loss = cfm + ctc_weight * ctc
                ctc_sum += float(ctc.data)
            cfm_sum += float(cfm.data)
            (loss * (1.0 / batch)).backward()

        clip_grad_norm(params, cfg["train.clip"])
        opt.lr = sched.lr(step)
        opt.step()
        opt.zero_grad()
        ema.update()

        if step % log_every == 0 or step == steps - 1:
            cfm_mean = cfm_sum / batch
            ctc_mean = ctc_sum / batch
            row = {"step": step, "cfm": cfm_mean, "ctc": ctc_mean,
                   "loss": cfm_mean + ctc_weight * ctc_mean, "lr": opt.lr}
            rows.append(row)
            if not quiet:
                print(f"{stage} step {row['step']:>5d}  "
                      f"loss {row['loss']:.5f}  cfm {row['cfm']:.5f}  "
                      f"ctc {row['ctc']:.5f}  lr {row['lr']:.6f}", flush=True)

    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.csv")
    _write_log(log_path, rows)
    arch = _arch_from_config(cfg, corpus)
    ckpt_path = os.path.join(out_dir, "checkpoint")
    tensors = {name: p.data for name, p in params.items()}
    tensors.update({f"ema.{name}": ema.shadow[name] for name in params})
    save_checkpoint(ckpt_path, tensors, {k: arch[k] for k in _ARCH_KEYS})
    return {"checkpoint": ckpt_path, "log": log_path, "rows": rows}


def pretrain(cfg: Config, corpus: Corpus, out_dir: str,
             steps: int | None = None, quiet: bool = False) -> dict:
    """Audio-only stage: inpainting from acoustic context, flow loss only."""
    model = build_model(cfg, corpus)
    return _run_stage(model, corpus, cfg,
                      steps=steps if steps is not None else cfg["pretrain.steps"],
                      multimodal=False, out_dir=out_dir, stage="pretrain",
                      quiet=quiet)


def train(cfg: Config, corpus: Corpus, out_dir: str,
          init: str | None = None, steps: int | None = None,
          quiet: bool = False) -> dict:
    """Multimodal stage: flow + alignment losses with modality dropout.

    ``init`` warm-starts from a checkpoint. Sizes must agree exactly; the
    conditioning variant may differ, in which case only the shared
    parameters (trunk, encoders, fusion, heads) are transferred and the
    variant-specific ones keep their fresh initialization. This lets one
    audio-only pretrain seed runs of every conditioning variant.
    """
    arch = _arch_from_config(cfg, corpus)
    if init is not None:
        tensors, meta = load_checkpoint(init)
        clashes = [k for k in _ARCH_KEYS if k != "variant"
                   and str(meta.get(k)) != str(arch[k])]
        if clashes:
            raise InputError(
                f"checkpoint {init} disagrees with the current config on "
                f"{', '.join(clashes)}"
            )
        model = MelInpainter(Rng(cfg["seed"]).split("model"), **arch)
        weights = {k: v for k, v in tensors.items()
                   if not k.startswith("ema.")}
        if meta.get("variant") == arch["variant"]:
            model.load(weights)
        else:
            own = model.params()
            for name, arr in weights.items():
                if name in own and np.asarray(arr).shape == own[name].data.shape:
                    own[name].data[...] = np.asarray(arr).astype(
                        own[name].data.dtype)
    else:
        model = build_model(cfg, corpus)
    return _run_stage(model, corpus, cfg,
                      steps=steps if steps is not None else cfg["train.steps"],
                      multimodal=True, out_dir=out_dir, stage="train",
                      quiet=quiet)
