"""Run configuration: a flat registry of dotted keys with typed defaults.

Configs live in plain-text ``key=value`` files; blank lines and ``#``
comments are ignored. Every key must exist in ``DEFAULTS`` — unknown keys
are rejected rather than silently dropped — and values are coerced to the
type of the default. Each command resolves its config once (defaults, then
file, then command-line overrides) and writes the result beside its outputs
so any artifact can be traced back to the exact settings that produced it.
"""

from __future__ import annotations

import os
import subprocess

from .corpus import CorpusConfig
from .errors import ConfigError
from .fusion import VARIANTS

DEFAULTS = {
    "seed": 0,
    # synthetic corpus
    "corpus.n_utterances": 440,
    "corpus.n_speakers": 8,
    "corpus.text_min": 6,
    "corpus.text_max": 10,
    "corpus.dur_min": 10,
    "corpus.dur_max": 14,
    "corpus.space_prob": 0.15,
    "corpus.mel_noise": 0.05,
    "corpus.video_noise": 0.1,
    "corpus.tilt_max": 0.8,
    # model
    "model.variant": "xattn",
    "model.dim": 64,
    "model.heads": 4,
    "model.blocks": 6,
    "model.ff_hidden": 192,
    "model.text_blocks": 4,
    "model.video_blocks": 2,
    # loss weighting and modality dropout
    "loss.ctc_weight": 0.1,
    "loss.p_drop_text": 0.2,
    "loss.p_drop_video": 0.2,
    "loss.p_drop_both": 0.2,
    # optimization
    "train.steps": 5000,
    "train.batch": 4,
    "train.peak_lr": 1e-3,
    "train.warmup": 200,
    "train.weight_decay": 0.0,
    "train.clip": 1.0,
    "train.ema": 0.999,
    "train.log_every": 50,
    "pretrain.steps": 2000,
    # sampling
    "sample.steps": 32,
    "sample.s_text": 5.0,
    "sample.s_video": 2.0,
    "sample.sway": -1.0,
    # evaluation
    "eval.max_utterances": 12,
    "eval.classifier_steps": 300,
    "eval.classifier_lr": 3e-3,
    # ablation sweeps (per-setting training budget)
    "ablate.steps": 800,
}


def coerce(key: str, raw):
    """Convert `raw` to the type of the key's default, or raise ConfigError."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, int):
            value = int(raw)
        elif isinstance(default, float):
            value = float(raw)
        else:
            value = str(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"{key}={raw!r} is not a valid {type(default).__name__}"
        ) from None
    if key == "model.variant" and value not in VARIANTS:
        raise ConfigError(
            f"model.variant must be one of {', '.join(VARIANTS)}, got {value!r}"
        )
    return value


def _parse_file(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            out[key.strip()] = coerce(key.strip(), raw)
    return out


class Config:
    """Resolved settings; immutable once built, lookup by dotted key."""

    def __init__(self, file: str | None = None, overrides: dict | None = None):
        values = dict(DEFAULTS)
        if file is not None:
            values.update(_parse_file(file))
        for key, raw in (overrides or {}).items():
            values[key] = coerce(key, raw)
        self._values = values

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def items(self):
        return sorted(self._values.items())

    def snapshot(self, path: str) -> None:
        """Write the fully resolved config (and build id) next to outputs."""
        with open(path, "w") as f:
            f.write(f"# build: {build_id()}\n")
            for key, value in self.items():
                f.write(f"{key}={value}\n")

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(
            n_utterances=self["corpus.n_utterances"],
            n_speakers=self["corpus.n_speakers"],
            text_min=self["corpus.text_min"],
            text_max=self["corpus.text_max"],
            dur_min=self["corpus.dur_min"],
            dur_max=self["corpus.dur_max"],
            space_prob=self["corpus.space_prob"],
            mel_noise=self["corpus.mel_noise"],
            video_noise=self["corpus.video_noise"],
            tilt_max=self["corpus.tilt_max"],
        )

    def model_kwargs(self) -> dict:
        return {
            "variant": self["model.variant"],
            "dim": self["model.dim"],
            "heads": self["model.heads"],
            "n_blocks": self["model.blocks"],
            "ff_hidden": self["model.ff_hidden"],
            "text_blocks": self["model.text_blocks"],
            "video_blocks": self["model.video_blocks"],
        }


def build_id() -> str:
    """git-describe style identifier of the working tree, or "unknown"."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=10,
        )
    except OSError:
        return "unknown"
    text = out.stdout.strip()
    return text if out.returncode == 0 and text else "unknown"
