"""End-to-end CLI workflow on a tiny corpus and model."""

import os

import numpy as np
import pytest

from adt.cli import main
from adt.report import read_metrics_csv
from adt.serial import read_tensor

TINY_CONFIG = """\
# tiny settings for fast CLI tests
corpus.n_utterances=24
corpus.n_speakers=2
model.dim=16
model.heads=2
model.ff_hidden=32
model.blocks=3
model.text_blocks=1
model.video_blocks=1
train.batch=2
train.warmup=2
train.log_every=2
sample.steps=4
eval.max_utterances=3
eval.classifier_steps=150
ablate.steps=4
"""


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    paths = {
        "cfg": str(cfg),
        "corpus": str(root / "corpus"),
        "pretrain": str(root / "pretrain"),
        "train": str(root / "train"),
        "root": root,
    }
    assert main(["gen-corpus", "--config", paths["cfg"],
                 "--out", paths["corpus"]]) == 0
    assert main(["pretrain", "--config", paths["cfg"], "--corpus",
                 paths["corpus"], "--steps", "3",
                 "--out", paths["pretrain"]]) == 0
    assert main(["train", "--config", paths["cfg"], "--corpus",
                 paths["corpus"], "--steps", "4",
                 "--init", os.path.join(paths["pretrain"], "checkpoint"),
                 "--out", paths["train"]]) == 0
    paths["checkpoint"] = os.path.join(paths["train"], "checkpoint")
    return paths


def test_gen_corpus_artifacts(ws):
    assert os.path.isfile(os.path.join(ws["corpus"], "corpus.jsonl"))
    snapshot = os.path.join(ws["corpus"], "config.txt")
    with open(snapshot) as fh:
        first = fh.readline()
    assert first.startswith("# build: ") and len(first.strip()) > len("# build:")


def test_training_artifacts(ws):
    for stage in ("pretrain", "train"):
        for name in ("train_log.csv", "loss_curve.png", "config.txt"):
            assert os.path.isfile(os.path.join(ws[stage], name)), (stage, name)
        assert os.path.isfile(
            os.path.join(ws[stage], "checkpoint", "manifest.txt"))


def test_config_snapshot_reflects_cli_overrides(ws):
    with open(os.path.join(ws["train"], "config.txt")) as fh:
        body = fh.read()
    assert "train.steps=4" in body
    assert "model.dim=16" in body


def test_sample_writes_mel_csv_and_figure(ws, tmp_path):
    out = str(tmp_path / "sample")
    assert main(["sample", "--config", ws["cfg"], "--corpus", ws["corpus"],
                 "--checkpoint", ws["checkpoint"], "--index", "1",
                 "--scales", "1,0.5", "--out", out]) == 0
    mel = read_tensor(os.path.join(out, "mel.adtn"))
    assert mel.ndim == 2 and mel.shape[1] == 80
    row = read_metrics_csv(os.path.join(out, "sample.csv"))[0]
    assert row["frames"] == mel.shape[0]
    assert row["s_text"] == 1.0 and row["s_video"] == 0.5
    assert os.path.isfile(os.path.join(out, "mel.png"))
    assert os.path.isfile(os.path.join(out, "config.txt"))


def test_sample_is_deterministic(ws, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["sample", "--config", ws["cfg"], "--corpus",
                     ws["corpus"], "--checkpoint", ws["checkpoint"],
                     "--out", out]) == 0
        with open(os.path.join(out, "mel.adtn"), "rb") as fh:
            outs.append(fh.read())
    assert outs[0] == outs[1]


def test_eval_writes_model_and_oracle_rows(ws, tmp_path):
    out = str(tmp_path / "eval")
    assert main(["eval", "--config", ws["cfg"], "--corpus", ws["corpus"],
                 "--checkpoint", ws["checkpoint"], "--out", out]) == 0
    rows = read_metrics_csv(os.path.join(out, "metrics.csv"))
    assert [r["setting"] for r in rows] == ["model", "oracle"]
    oracle = rows[1]
    assert oracle["cer_template"] == 0.0
    assert oracle["sync"] >= 0.99
    assert os.path.isfile(os.path.join(out, "cer_template.png"))
    assert os.path.isfile(os.path.join(out, "triptych.png"))


def test_ablate_modality_rows(ws, tmp_path):
    out = str(tmp_path / "modality")
    assert main(["ablate", "modality", "--config", ws["cfg"], "--corpus",
                 ws["corpus"], "--checkpoint", ws["checkpoint"],
                 "--out", out]) == 0
    rows = read_metrics_csv(os.path.join(out, "metrics.csv"))
    assert [r["setting"] for r in rows] == ["text-only", "video-only", "both"]
    assert os.path.isfile(os.path.join(out, "cer_template.png"))
    assert os.path.isfile(os.path.join(out, "sync.png"))


def test_ablate_cfg_grid(ws, tmp_path):
    out = str(tmp_path / "cfg")
    assert main(["ablate", "cfg", "--config", ws["cfg"], "--corpus",
                 ws["corpus"], "--checkpoint", ws["checkpoint"],
                 "--out", out]) == 0
    rows = read_metrics_csv(os.path.join(out, "metrics.csv"))
    assert [(r["s_text"], r["s_video"]) for r in rows] == [
        (0.0, 0.0), (2.0, 2.0), (5.0, 2.0), (5.0, 5.0)]


def test_ablate_conditioning_rows(ws, tmp_path):
    out = str(tmp_path / "cond")
    assert main(["ablate", "conditioning", "--config", ws["cfg"],
                 "--corpus", ws["corpus"], "--steps", "2",
                 "--out", out]) == 0
    rows = read_metrics_csv(os.path.join(out, "metrics.csv"))
    assert [r["setting"] for r in rows] == [
        "early+ctc", "early", "prefix+ctc", "prefix",
        "xattn+ctc", "xattn"]


def test_errors_are_single_line_and_nonzero(ws, tmp_path, capsys):
    code = main(["sample", "--config", ws["cfg"], "--corpus", ws["corpus"],
                 "--checkpoint", ws["checkpoint"], "--index", "99",
                 "--out", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("input:") and "\n" not in err

    code = main(["ablate", "cfg", "--config", ws["cfg"], "--corpus",
                 ws["corpus"], "--out", str(tmp_path / "y")])
    assert code == 2
    assert capsys.readouterr().err.strip().startswith("input:")

    code = main(["sample", "--config", ws["cfg"], "--corpus", ws["corpus"],
                 "--checkpoint", ws["checkpoint"], "--scales", "1",
                 "--out", str(tmp_path / "z")])
    assert code == 2
    assert "S_TEXT,S_VIDEO" in capsys.readouterr().err

    code = main(["train", "--config", str(tmp_path / "no-such-file.cfg"),
                 "--corpus", ws["corpus"], "--out", str(tmp_path / "w")])
    assert code == 2
    assert capsys.readouterr().err.strip().startswith("config:")


def test_unknown_axis_is_a_usage_error(ws, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "volume", "--corpus", ws["corpus"],
              "--out", str(tmp_path / "v")])
    assert exc.value.code == 2


def test_sample_respects_variant_arch_from_checkpoint(ws, tmp_path):
    # the checkpoint fixes the architecture; sample has no --variant flag
    with pytest.raises(SystemExit):
        main(["sample", "--corpus", ws["corpus"], "--checkpoint",
              ws["checkpoint"], "--variant", "early",
              "--out", str(tmp_path / "s")])
