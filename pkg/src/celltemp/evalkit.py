"""Error metrics, signal smoothing and the data-fidelity studies."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptConfig, domain_adapt, encode, pseudo_labels, select_reliable
from .datagen import ProfileSpec, ScenarioSpec, SimSettings, WindowBatch, simulate_scenario, windowize
from .errors import CellTempError, DomainError
from .net import head_forward
from .sim import CellParams


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size == 0:
        raise DomainError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return pred - truth


def rmse(pred, truth):
    return float(np.sqrt(np.mean(_pair(pred, truth) ** 2)))


def mae(pred, truth):
    return float(np.mean(np.abs(_pair(pred, truth))))


def max_abs_err(pred, truth):
    return float(np.max(np.abs(_pair(pred, truth))))


def metrics(pred, truth):
    return {"rmse": rmse(pred, truth), "mae": mae(pred, truth), "max_abs_err": max_abs_err(pred, truth)}


def gaussian_kernel(window, sigma):
    half = window // 2
    j = np.arange(-half, half + 1)
    return np.exp(-(j**2) / (2.0 * sigma**2))


def gaussian_smooth(series, window, sigma):
    """Gaussian-weighted moving average with renormalised edges."""
    if window < 1 or window % 2 == 0:
        raise DomainError("window must be a positive odd number of steps")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    x = np.asarray(series, dtype=float)
    k = gaussian_kernel(window, sigma)
    half = window // 2
    num = np.convolve(x, k, mode="full")[half : half + x.size]
    den = np.convolve(np.ones_like(x), k, mode="full")[half : half + x.size]
    return num / den


@dataclass
class StudyContext:
    """Everything a study cell needs besides the grid coordinates."""

    nominal: CellParams
    pretrained: object  # NetParams
    norm: object  # NormStats
    source_windows: WindowBatch
    adapt: AdaptConfig = AdaptConfig()
    settings: SimSettings = SimSettings()
    coolant_temp: float = 5.0
    adapt_stride: int = 10

    @property
    def window(self):
        return self.source_windows.length


@dataclass
class CellResult:
    rmse_pa: float
    rmse_lstm_s: float
    rmse_lstm_da: float
    reliable_fraction: float
    pseudo_max_dev: float
    mmd_start: float
    mmd_end: float
    history: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)


def parse_param(param):
    """``"r0+r1"`` perturbs both resistances together."""
    return tuple(param.split("+"))


def run_cell(ctx: StudyContext, param, eps, profile: ProfileSpec, keep_features=False) -> CellResult:
    names = parse_param(param)
    eps_map = {n: eps for n in names}
    target = simulate_scenario(ScenarioSpec(profile, ctx.coolant_temp, eps_map, "fom"), ctx.nominal, ctx.settings)
    pa = simulate_scenario(ScenarioSpec(profile, ctx.coolant_temp, (), "pa"), ctx.nominal, ctx.settings)
    meas = target.measurements()
    w = ctx.window

    full = windowize(meas, w, 1, ctx.norm)
    ends = full.ends
    truth = target.t_core[ends]
    enc = encode(full, ctx.pretrained)
    pred_s, feat_s, _ = head_forward(enc.hidden, enc.last, ctx.pretrained)

    pseudo = pseudo_labels(meas, ctx.nominal, anchor_surface=ctx.adapt.anchor_surface)
    pseudo.mask = select_reliable(pseudo, meas.t_surf, ctx.adapt.tau_reliable)
    adapt_windows = windowize(meas, w, ctx.adapt_stride, ctx.norm)
    adapted, hist = domain_adapt(ctx.pretrained, ctx.source_windows, adapt_windows, pseudo, ctx.adapt)
    pred_da, feat_da, _ = head_forward(enc.hidden, enc.last, adapted)

    res = CellResult(
        rmse_pa=rmse(pa.t_core[ends], truth),
        rmse_lstm_s=rmse(pred_s, truth),
        rmse_lstm_da=rmse(pred_da, truth),
        reliable_fraction=float(pseudo.mask.mean()),
        pseudo_max_dev=max_abs_err(pseudo.t_core, target.t_core),
        mmd_start=hist["mmd"][0],
        mmd_end=hist["mmd"][-1],
        history=hist,
    )
    if keep_features:
        res.features = {"target_s": feat_s, "target_da": feat_da, "adapted": adapted, "ends": ends, "pred_s": pred_s, "pred_da": pred_da, "truth": truth}
    return res


ROW_FIELDS = (
    "parameter",
    "epsilon",
    "profile",
    "rmse_pa",
    "rmse_lstm_s",
    "rmse_lstm_da",
    "reliable_fraction",
    "mmd_start",
    "mmd_end",
    "error",
)


@dataclass
class StudyReport:
    rows: list

    def select(self, parameter=None, ok_only=True):
        out = [r for r in self.rows if parameter is None or r["parameter"] == parameter]
        return [r for r in out if not r["error"]] if ok_only else out

    def quartiles(self):
        """Box-plot statistics per (parameter, epsilon, method)."""
        out = []
        keys = sorted({(r["parameter"], r["epsilon"]) for r in self.rows}, key=lambda k: (k[0], k[1]))
        for param, eps in keys:
            rows = [r for r in self.select(param) if r["epsilon"] == eps]
            for method in ("rmse_pa", "rmse_lstm_s", "rmse_lstm_da"):
                vals = np.array([r[method] for r in rows])
                if vals.size == 0:
                    continue
                q = np.percentile(vals, [0, 25, 50, 75, 100])
                out.append({"parameter": param, "epsilon": eps, "method": method, "n": int(vals.size),
                            "min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]})
        return out

    def write(self, out_dir, stem="study"):
        """Write ``<stem>.csv``, ``<stem>_quartiles.csv`` and ``<stem>.json``.

        Returns ``(reproducible_paths, runtime_path)``; wall-clock times
        live in the separate runtime file.
        """
        import os

        rows_path = os.path.join(out_dir, f"{stem}.csv")
        with open(rows_path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items() if k in ROW_FIELDS})
        q_path = os.path.join(out_dir, f"{stem}_quartiles.csv")
        quart = self.quartiles()
        with open(q_path, "w", newline="") as fh:
            fields = ["parameter", "epsilon", "method", "n", "min", "q1", "median", "q3", "max"]
            wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            wr.writeheader()
            for r in quart:
                wr.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
        t_path = os.path.join(out_dir, f"{stem}_runtime.csv")
        with open(t_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["parameter", "epsilon", "profile", "runtime_s"])
            for r in self.rows:
                wr.writerow([r["parameter"], repr(r["epsilon"]), r["profile"], repr(r.get("runtime_s", float("nan")))])
        summary = {
            "rows": len(self.rows),
            "failed": sum(1 for r in self.rows if r["error"]),
            "median_by_parameter": {
                p: {m: float(np.median([r[m] for r in self.select(p)])) for m in ("rmse_pa", "rmse_lstm_s", "rmse_lstm_da")}
                for p in sorted({r["parameter"] for r in self.rows}) if self.select(p)
            },
        }
        js_path = os.path.join(out_dir, f"{stem}.json")
        with open(js_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [rows_path, q_path, js_path], t_path


def _study_cell(args):
    ctx, param, eps, prof = args
    start = time.perf_counter()
    row = {"parameter": param, "epsilon": float(eps), "profile": prof.profile_id}
    try:
        res = run_cell(ctx, param, float(eps), prof)
        row.update(
            rmse_pa=res.rmse_pa,
            rmse_lstm_s=res.rmse_lstm_s,
            rmse_lstm_da=res.rmse_lstm_da,
            reliable_fraction=res.reliable_fraction,
            mmd_start=res.mmd_start,
            mmd_end=res.mmd_end,
            error="",
        )
    except CellTempError as err:
        row.update({k: float("nan") for k in ROW_FIELDS[3:9]}, error=f"{type(err).__name__}: {err}")
    row["runtime_s"] = time.perf_counter() - start
    return row


def perturbation_study(grid, profiles, ctx: StudyContext, workers=1, log=None) -> StudyReport:
    """Evaluate PA, LSTM-S and LSTM-DA on perturbed FOM "real" cells.

    ``grid`` maps a parameter name (``"r0+r1"`` for a joint perturbation) to
    the epsilons to test. Failing cells are recorded with their error and
    the study carries on. Rows come back in grid order whatever ``workers``.
    """
    jobs = [(ctx, p, e, prof) for p in grid for e in grid[p] for prof in profiles]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_study_cell, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_study_cell(job))
            if log:
                r = rows[-1]
                log(f"{r['parameter']} eps={r['epsilon']:+.2f} {r['profile']}: {r['error'] or 'ok'}")
    return StudyReport(rows)


def sensitivity_study(param, epsilon, profile: ProfileSpec, nominal: CellParams, coolant_temp=5.0, settings=SimSettings(), backend="pa"):
    """Max-over-time absolute change of V_t, T_s and T_c under one perturbation."""
    names = parse_param(param)
    base = simulate_scenario(ScenarioSpec(profile, coolant_temp, (), backend), nominal, settings)
    pert = simulate_scenario(ScenarioSpec(profile, coolant_temp, {n: epsilon for n in names}, backend), nominal, settings)
    return {
        "d_voltage": max_abs_err(pert.voltage, base.voltage),
        "d_t_surf": max_abs_err(pert.t_surf, base.t_surf),
        "d_t_core": max_abs_err(pert.t_core, base.t_core),
    }
