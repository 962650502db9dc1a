"""Command-line interface.

Subcommands cover the full workflow:

* ``gen-corpus``  — synthesize and save the paired mel/video/text corpus;
* ``pretrain``    — audio-only inpainting stage (flow loss only);
* ``train``       — multimodal stage (flow + alignment, modality dropout),
  optionally initialized from a pretrain checkpoint;
* ``sample``      — inpaint one held-out utterance from a same-speaker
  reference prompt; writes the mel tensor, a CSV row, and a figure;
* ``eval``        — held-out metrics (plus an oracle calibration row);
* ``ablate``      — one of three sweeps: ``conditioning`` (variant x
  alignment loss, each setting trained for ``ablate.steps``, optionally
  warm-started from a shared ``--init`` checkpoint), ``cfg``
  (guidance-scale grid), or ``modality`` (text-only / video-only /
  both at fixed scales).

Every artifact-producing command snapshots its resolved configuration
(including the build id) into ``config.txt`` in the output directory.
Errors exit nonzero with a single-line reason on stderr. The ADT_THREADS
environment variable caps evaluation worker parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import Config
from .corpus import load_corpus, make_reference_pair, save_corpus
from .errors import AdtError, InputError
from .evaluate import evaluate_model, train_classifier
from .fusion import VARIANTS
from .report import (plot_loss_curve, plot_mel_triptych, plot_metric_bars,
                     write_metrics_csv)
from .rng import Rng
from .sampler import sample
from .serial import write_tensor
from .training import load_model, pretrain, train

CFG_GRID = ((0.0, 0.0), (2.0, 2.0), (5.0, 2.0), (5.0, 5.0))

METRIC_FIELDS = ["setting", "s_text", "s_video", "n_utterances",
                 "cer_template", "cer_ctc", "align_mae_ms", "sync",
                 "tilt_err"]


def _parse_scales(raw: str) -> tuple[float, float]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise InputError(f"--scales expects S_TEXT,S_VIDEO, got {raw!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise InputError(
            f"--scales expects two numbers, got {raw!r}") from None


def _overrides(args, steps_key: str | None = None) -> dict:
    o = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = str(args.seed)
    if steps_key is not None and getattr(args, "steps", None) is not None:
        o[steps_key] = str(args.steps)
    if getattr(args, "variant", None) is not None:
        o["model.variant"] = args.variant
    if getattr(args, "scales", None) is not None:
        s_text, s_video = _parse_scales(args.scales)
        o["sample.s_text"] = str(s_text)
        o["sample.s_video"] = str(s_video)
    return o


def _config(args, steps_key: str | None = None, extra: dict | None = None):
    overrides = _overrides(args, steps_key)
    if extra:
        overrides.update(extra)
    return Config(getattr(args, "config", None), overrides)


def _finish(cfg: Config, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cfg.snapshot(os.path.join(out_dir, "config.txt"))


def _print_row(row: dict) -> None:
    print("  ".join(
        f"{k}={row[k]:.4f}" if isinstance(row[k], float) else f"{k}={row[k]}"
        for k in METRIC_FIELDS if k in row), flush=True)


def cmd_gen_corpus(args) -> int:
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    corpus = save_corpus(args.out, cfg.corpus_config(), cfg["seed"])
    _finish(cfg, args.out)
    print(f"wrote {len(corpus.utterances)} utterances "
          f"({len(corpus.train)} train / {len(corpus.eval)} eval) "
          f"to {args.out}")
    return 0


def _training_command(args, stage_fn, steps_key: str, **kwargs) -> int:
    cfg = _config(args, steps_key)
    corpus = load_corpus(args.corpus)
    result = stage_fn(cfg, corpus, args.out, **kwargs)
    plot_loss_curve(result["rows"], os.path.join(args.out, "loss_curve.png"))
    _finish(cfg, args.out)
    print(f"checkpoint: {result['checkpoint']}")
    return 0


def cmd_pretrain(args) -> int:
    return _training_command(args, pretrain, "pretrain.steps")


def cmd_train(args) -> int:
    return _training_command(args, train, "train.steps", init=args.init)


def cmd_sample(args) -> int:
    cfg = _config(args, "sample.steps")
    corpus = load_corpus(args.corpus)
    model, _ = load_model(args.checkpoint)
    if not 0 <= args.index < len(corpus.eval):
        raise InputError(
            f"--index {args.index} out of range for "
            f"{len(corpus.eval)} held-out utterances")
    utt = corpus.eval[args.index]
    pair = make_reference_pair(utt, corpus.reference_for(utt))
    out = sample(model, Rng(cfg["seed"]).split(f"sample:{utt.id}"),
                 pair.mel_ctx, pair.mask, video=pair.video,
                 text_ids=pair.text_ids, n_steps=cfg["sample.steps"],
                 s_text=cfg["sample.s_text"], s_video=cfg["sample.s_video"],
                 sway=cfg["sample.sway"])
    gen = out[pair.t_ref:]

    os.makedirs(args.out, exist_ok=True)
    write_tensor(os.path.join(args.out, "mel.adtn"), gen)
    write_metrics_csv(os.path.join(args.out, "sample.csv"), [{
        "id": utt.id, "speaker": utt.speaker, "text": utt.text,
        "frames": gen.shape[0], "s_text": cfg["sample.s_text"],
        "s_video": cfg["sample.s_video"], "steps": cfg["sample.steps"],
    }])
    plot_mel_triptych(pair.mel_ctx[:pair.t_ref], gen, utt.mel,
                      os.path.join(args.out, "mel.png"))
    _finish(cfg, args.out)
    print(f"inpainted {gen.shape[0]} frames for {utt.id} "
          f"({utt.text!r}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    model, _ = load_model(args.checkpoint)
    classifier = train_classifier(corpus, cfg)
    rows = [
        evaluate_model(model, corpus, cfg, classifier=classifier,
                       setting="model"),
        evaluate_model(model, corpus, cfg, classifier=classifier,
                       setting="oracle", oracle=True),
    ]
    for row in rows:
        _print_row(row)
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), rows,
                      METRIC_FIELDS)
    plot_metric_bars(rows, "cer_template",
                     os.path.join(args.out, "cer_template.png"))
    utt = corpus.eval[0]
    pair = make_reference_pair(utt, corpus.reference_for(utt))
    out = sample(model, Rng(cfg["seed"]).split(f"sample:{utt.id}"),
                 pair.mel_ctx, pair.mask, video=pair.video,
                 text_ids=pair.text_ids, n_steps=cfg["sample.steps"],
                 s_text=cfg["sample.s_text"], s_video=cfg["sample.s_video"],
                 sway=cfg["sample.sway"])
    plot_mel_triptych(pair.mel_ctx[:pair.t_ref], out[pair.t_ref:], utt.mel,
                      os.path.join(args.out, "triptych.png"))
    _finish(cfg, args.out)
    return 0


def _ablate_conditioning(args) -> list[dict]:
    rows = []
    corpus = load_corpus(args.corpus)
    classifier = None
    for variant in VARIANTS:
        for with_ctc in (True, False):
            name = f"{variant}+ctc" if with_ctc else variant
            cfg = _config(args, "ablate.steps", {
                "model.variant": variant,
                "loss.ctc_weight": "0.1" if with_ctc else "0.0",
            })
            if classifier is None:
                classifier = train_classifier(corpus, cfg)
            run_dir = os.path.join(args.out, f"run_{name.replace('+', '_')}")
            print(f"[conditioning] training {name} "
                  f"({cfg['ablate.steps']} steps)", flush=True)
            result = train(cfg, corpus, run_dir, init=args.init,
                           steps=cfg["ablate.steps"], quiet=True)
            model, _ = load_model(result["checkpoint"])
            row = evaluate_model(model, corpus, cfg, classifier=classifier,
                                 setting=name)
            _print_row(row)
            rows.append(row)
    return rows


def _ablate_cfg(args) -> list[dict]:
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    model, _ = load_model(args.checkpoint)
    classifier = train_classifier(corpus, cfg)
    rows = []
    for s_text, s_video in CFG_GRID:
        row = evaluate_model(model, corpus, cfg, s_text=s_text,
                             s_video=s_video, classifier=classifier,
                             setting=f"scales({s_text:g},{s_video:g})")
        _print_row(row)
        rows.append(row)
    return rows


def _ablate_modality(args) -> list[dict]:
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    model, _ = load_model(args.checkpoint)
    classifier = train_classifier(corpus, cfg)
    rows = []
    for mode, name in (("text", "text-only"), ("video", "video-only"),
                       ("both", "both")):
        row = evaluate_model(model, corpus, cfg, modality=mode,
                             classifier=classifier, setting=name)
        _print_row(row)
        rows.append(row)
    return rows


def cmd_ablate(args) -> int:
    if args.axis == "conditioning":
        if args.checkpoint:
            raise InputError(
                "the conditioning axis trains fresh models; "
                "--checkpoint is not used")
        rows = _ablate_conditioning(args)
    elif args.axis == "cfg":
        if not args.checkpoint:
            raise InputError("the cfg axis needs --checkpoint")
        rows = _ablate_cfg(args)
    else:
        if not args.checkpoint:
            raise InputError("the modality axis needs --checkpoint")
        rows = _ablate_modality(args)

    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), rows,
                      METRIC_FIELDS)
    plot_metric_bars(rows, "cer_template",
                     os.path.join(args.out, "cer_template.png"))
    plot_metric_bars(rows, "sync", os.path.join(args.out, "sync.png"))
    _finish(_config(args), args.out)
    return 0


def _add_common(sp, with_corpus: bool = True) -> None:
    sp.add_argument("--config", metavar="PATH",
                    help="key=value configuration file")
    sp.add_argument("--seed", type=int, metavar="N",
                    help="override the run seed")
    sp.add_argument("--out", required=True, metavar="DIR",
                    help="output directory")
    if with_corpus:
        sp.add_argument("--corpus", required=True, metavar="DIR",
                        help="corpus directory from gen-corpus")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="adt",
        description="Multimodal mel inpainting: corpus, training, "
                    "sampling, evaluation, ablations.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-corpus", help="synthesize the paired corpus")
    _add_common(sp, with_corpus=False)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("pretrain", help="audio-only inpainting stage")
    _add_common(sp)
    sp.add_argument("--steps", type=int, metavar="N")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="multimodal stage")
    _add_common(sp)
    sp.add_argument("--steps", type=int, metavar="N")
    sp.add_argument("--init", metavar="CKPT",
                    help="checkpoint directory to initialize from")
    sp.add_argument("--variant", choices=VARIANTS,
                    help="text-conditioning variant")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="inpaint one held-out utterance")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True, metavar="CKPT")
    sp.add_argument("--index", type=int, default=0, metavar="N",
                    help="held-out utterance index (default 0)")
    sp.add_argument("--steps", type=int, metavar="N",
                    help="integration steps")
    sp.add_argument("--scales", metavar="S_TEXT,S_VIDEO",
                    help="guidance scales")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="held-out metrics")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True, metavar="CKPT")
    sp.add_argument("--scales", metavar="S_TEXT,S_VIDEO")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="run one ablation axis")
    sp.add_argument("axis", choices=("conditioning", "cfg", "modality"))
    _add_common(sp)
    sp.add_argument("--checkpoint", metavar="CKPT",
                    help="model for the cfg and modality axes")
    sp.add_argument("--steps", type=int, metavar="N",
                    help="training steps per conditioning run")
    sp.add_argument("--init", metavar="CKPT",
                    help="shared warm-start checkpoint for the "
                         "conditioning axis (e.g. the pretrain stage)")
    sp.add_argument("--scales", metavar="S_TEXT,S_VIDEO")
    sp.set_defaults(func=cmd_ablate)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AdtError as err:
        print(err.one_line(), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
