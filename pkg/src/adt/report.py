"""Report artifacts: delimited metric tables and rendered figures.

Every table is a plain CSV that round-trips through `read_metrics_csv`
(ints stay ints, floats stay floats). Figures are rendered headlessly to
PNG files next to the tables:

* loss curve        — training log (total / flow / alignment terms);
* mel triptych      — context, generated, and ground-truth spectrograms
  for one utterance, shared color scale;
* metric bars       — one bar per evaluated setting for a chosen metric.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import FormatError, InputError


def write_metrics_csv(path: str, rows: list[dict],
                      fields: list[str] | None = None) -> str:
    """Write dict rows as CSV; floats use repr so they round-trip exactly."""
    if not rows:
        raise InputError("no rows to write")
    if fields is None:
        fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            missing = [f for f in fields if f not in row]
            if missing:
                raise InputError(f"row is missing fields {missing}")
            writer.writerow([repr(row[f]) if isinstance(row[f], float)
                             else row[f] for f in fields])
    return path


def _coerce_cell(raw: str):
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            continue
    return raw


def read_metrics_csv(path: str) -> list[dict]:
    """Read a metrics CSV back into typed dict rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            fields = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty metrics file") from None
        rows = []
        for line, record in enumerate(reader, start=2):
            if len(record) != len(fields):
                raise FormatError(
                    f"{path}:{line}: expected {len(fields)} cells, "
                    f"got {len(record)}"
                )
            rows.append({f: _coerce_cell(c) for f, c in zip(fields, record)})
    return rows


def plot_loss_curve(log_rows: list[dict], out_png: str) -> str:
    """Training-log line plot: total, flow, and alignment loss vs step."""
    if not log_rows:
        raise InputError("empty training log")
    steps = [r["step"] for r in log_rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key, label in (("loss", "total"), ("cfm", "flow"),
                       ("ctc", "alignment")):
        if any(r[key] != 0.0 for r in log_rows):
            ax.plot(steps, [r[key] for r in log_rows], label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return out_png


def _mel_panel(ax, mel: np.ndarray, title: str, vmin: float, vmax: float):
    ax.imshow(np.asarray(mel).T, aspect="auto", origin="lower",
              vmin=vmin, vmax=vmax, cmap="magma")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("frame")


def plot_mel_triptych(context: np.ndarray, generated: np.ndarray,
                      gold: np.ndarray, out_png: str) -> str:
    """Context / generated / ground-truth spectrograms, shared color scale."""
    stack = np.concatenate([np.asarray(m).ravel()
                            for m in (context, generated, gold)])
    vmin, vmax = float(stack.min()), float(stack.max())
    fig, axes = plt.subplots(1, 3, figsize=(10, 3), sharey=True)
    for ax, mel, title in zip(axes, (context, generated, gold),
                              ("context", "generated", "ground truth")):
        _mel_panel(ax, mel, title, vmin, vmax)
    axes[0].set_ylabel("mel bin")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return out_png


def plot_metric_bars(rows: list[dict], metric: str, out_png: str) -> str:
    """One bar per setting for the chosen metric column."""
    if not rows:
        raise InputError("no rows to plot")
    if any(metric not in r for r in rows):
        raise InputError(f"metric {metric!r} missing from rows")
    labels = [str(r.get("setting", i)) for i, r in enumerate(rows)]
    values = [r[metric] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(rows)), 3.2))
    ax.bar(range(len(values)), values, color="#4878b0")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return out_png
