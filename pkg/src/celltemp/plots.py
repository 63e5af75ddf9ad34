"""Tidy plot data from run directories, and PNG renderings of it.

Every figure is first flattened to long-format rows
``(figure, panel, series, x, y)`` so any external tool can redraw it; the
PNGs are a convenience view of the same rows.
"""
from __future__ import annotations

import csv
import os
from collections import defaultdict

import numpy as np

TIDY_HEADER = ("figure", "panel", "series", "x", "y")


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _series_rows(path, run):
    rows = []
    data = _read(path)
    for col in ("current_a", "voltage_v", "surf_temp_c", "core_temp_c", "coolant_temp_c"):
        if data and col in data[0]:
            rows += [(f"{run}:signals", col, col, r["time_s"], r[col]) for r in data]
    return rows


def _history_rows(path, run):
    data = _read(path)
    return [(f"{run}:training", "mse", s, r["epoch"], r[s]) for s in ("train_mse", "val_mse") for r in data]


def _alignment_rows(path, run):
    data = _read(path)
    return [(f"{run}:alignment", s, s, r["epoch"], r[s]) for s in ("mse", "mmd", "coral") for r in data]


def _pca_rows(path, run):
    return [(f"{run}:pca", r["stage"], r["domain"], r["pc1"], r["pc2"]) for r in _read(path)]


def _prediction_rows(path, run):
    data = _read(path)
    return [(f"{run}:estimate", "core", s, r["time_s"], r[s]) for s in ("truth", "estimate") for r in data]


def _study_rows(path, run):
    out = []
    for r in _read(path):
        if r["error"]:
            continue
        for m in ("rmse_pa", "rmse_lstm_s", "rmse_lstm_da"):
            out.append((f"{run}:study", r["parameter"], m, r["epsilon"], r[m]))
    return out


def _sensitivity_rows(path, run):
    out = []
    for r in _read(path):
        for s in ("d_voltage", "d_t_surf", "d_t_core"):
            out.append((f"{run}:sensitivity", r["profile"], s, r["parameter"], r[s]))
    return out


EXTRACTORS = {
    "series.csv": _series_rows,
    "history.csv": _history_rows,
    "alignment.csv": _alignment_rows,
    "pca.csv": _pca_rows,
    "predictions.csv": _prediction_rows,
    "study.csv": _study_rows,
    "sensitivity.csv": _sensitivity_rows,
}


def collect(run_dirs):
    """Tidy rows for every recognised output in ``run_dirs``, plus the files read."""
    rows, used = [], []
    for d in run_dirs:
        run = os.path.basename(os.path.normpath(d))
        for name, fn in EXTRACTORS.items():
            p = os.path.join(d, name)
            if os.path.exists(p):
                rows += fn(p, run)
                used.append(p)
    return rows, used


def _num(v):
    try:
        return float(v)
    except ValueError:
        return None


def render(rows, out_dir):
    """One PNG per figure, one subplot per panel; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figs = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for fig, panel, series, x, y in rows:
        figs[fig][panel][series].append((x, y))
    paths = []
    for fig in sorted(figs):
        panels = figs[fig]
        n = len(panels)
        f, axes = plt.subplots(n, 1, figsize=(7, 2.6 * n), squeeze=False)
        kind = fig.split(":")[-1]
        for ax, panel in zip(axes[:, 0], sorted(panels)):
            for series in sorted(panels[panel]):
                pts = panels[panel][series]
                ys = np.array([float(p[1]) for p in pts])
                xs = [_num(p[0]) for p in pts]
                if kind == "study":
                    _study_panel(ax, np.array(xs), ys, series)
                elif kind == "pca":
                    ax.scatter(xs, ys, s=4, label=series)
                elif any(x is None for x in xs):
                    ax.bar([f"{p[0]}\n{series}" for p in pts], ys, label=series)
                else:
                    ax.plot(xs, ys, label=series, lw=1)
            ax.set_title(panel, fontsize=9)
            ax.legend(fontsize=7)
        f.suptitle(fig, fontsize=10)
        f.tight_layout()
        path = os.path.join(out_dir, fig.replace(":", "__") + ".png")
        f.savefig(path, dpi=80, metadata={"Software": None})
        plt.close(f)
        paths.append(path)
    return paths


def _study_panel(ax, eps, vals, series):
    """Median RMSE per epsilon with the spread of the profiles."""
    levels = np.unique(eps)
    med = [np.median(vals[eps == e]) for e in levels]
    lo = [np.min(vals[eps == e]) for e in levels]
    hi = [np.max(vals[eps == e]) for e in levels]
    ax.plot(levels, med, marker="o", lw=1, label=series)
    ax.fill_between(levels, lo, hi, alpha=0.2)
    ax.set_yscale("log")
