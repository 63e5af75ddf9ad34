"""Acceptance suite: one test per criterion, each prints a PASS/FAIL line.

The heavy fixtures (default source sweep, default pre-training, the
h-mismatch study) are built once per session.
"""
import math
import time

import numpy as np
import pytest
import yaml

from celltemp import cli
from celltemp import config as C
from celltemp import pipeline as P
from celltemp.adapt import adapt_with_labels, coral, labeled_cutoff, mmd2
from celltemp.datagen import ProfileSpec, ScenarioSpec, simulate_scenario
from celltemp.evalkit import rmse, run_cell, sensitivity_study
from celltemp.fom import fom_outputs, fom_steady_state
from celltemp.io import RunManifest
from celltemp.net import backward, forward, init_params
from celltemp.thermal import derive_pa_coefficients, pa_outputs

from .conftest import record
from .test_io_cli import TINY
from .test_net import numeric_grad, rel_error


def pct(before, after):
    return 100.0 * (before - after) / before


# ---------------------------------------------------------------- 1


def test_criterion_1_pa_matches_fom():
    cfg = C.load_config()
    cell, settings = C.cell_params(cfg), C.sim_settings(cfg)
    start = time.perf_counter()
    errs = []
    for seed in (11, 12, 13):
        spec = ProfileSpec("pulse_train", seed, duration=3600)
        pa = simulate_scenario(ScenarioSpec(spec, 25.0, (), "pa"), cell, settings)
        fom = simulate_scenario(ScenarioSpec(spec, 25.0, (), "fom"), cell, settings)
        errs.append(rmse(pa.t_core, fom.t_core))
    ss = derive_pa_coefficients(cell.thermal)
    steady = 0.0
    for q in (0.5, 2.0, 5.0):
        ts_pa, tc_pa = pa_outputs(ss.steady_state(q, 25.0), 25.0, ss)
        ts_f, tc_f, _ = fom_outputs(fom_steady_state(q, 25.0, cell.thermal, 201))
        steady = max(steady, abs(ts_pa - ts_f), abs(tc_pa - tc_f))
    elapsed = time.perf_counter() - start
    ok = max(errs) < 0.2 and steady < 1e-3 and elapsed < 30.0
    record(1, ok, f"PA-vs-FOM core RMSE max {max(errs):.4f} C (< 0.2), steady {steady:.2e} C (< 1e-3), {elapsed:.1f} s (< 30)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_fom_closed_form_and_convergence():
    p = C.cell_params(C.load_config()).thermal
    q, tf = 2.0, 25.0
    ts_cf = tf + q / (p.h * p.area)
    tc_cf = ts_cf + q / (4 * math.pi * p.k_t * p.length)
    tbar_cf = ts_cf + q / (8 * math.pi * p.k_t * p.length)
    errors = []
    for n in (51, 101, 201):
        ts, tc, tbar = fom_outputs(fom_steady_state(q, tf, p, n))
        errors.append(max(abs(ts - ts_cf), abs(tc - tc_cf), abs(tbar - tbar_cf)))
    orders = [math.log2(errors[0] / errors[1]), math.log2(errors[1] / errors[2])]
    ok = errors[-1] < 1e-3 and all(1.8 < o < 2.2 for o in orders)
    record(2, ok, f"n=201 error {errors[-1]:.2e} C (< 1e-3), observed orders {orders[0]:.3f}, {orders[1]:.3f}")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_gradient_check():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        params = init_params(hidden=3, features=2, seed=seed)
        for k in params.weights:
            params.weights[k] += rng.normal(scale=0.3, size=params.weights[k].shape)
        x, y = rng.normal(size=(4, 5, 4)), rng.normal(size=4)
        pred, _, cache = forward(x, params)
        grads = backward(cache, pred - y)
        worst = max(worst, max(rel_error(grads[n], numeric_grad(params, x, y, n)) for n in params.weights))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 10.0
    record(3, ok, f"max relative error {worst:.2e} (< 1e-5), {elapsed:.2f} s (< 10)")
    assert ok


# ---------------------------------------------------------------- shared fixtures


@pytest.fixture(scope="session")
def trained():
    cfg = C.load_config()
    start = time.perf_counter()
    data = P.generate(cfg)
    params, _ = P.pretrain(cfg, data)
    return cfg, data, params, time.perf_counter() - start


@pytest.fixture(scope="session")
def ctx(trained):
    cfg, data, params, _ = trained
    return P.study_context(cfg, params, data)


@pytest.fixture(scope="session")
def held_out(trained):
    return C.evaluation_profiles(trained[0])


@pytest.fixture(scope="session")
def h_study(ctx, held_out):
    """``{(eps, profile_id): CellResult}`` over the h grid, with timing."""
    start = time.perf_counter()
    cells = {}
    for eps in (-0.45, -0.30, -0.15, 0.15, 0.30, 0.45):
        for prof in held_out:
            cells[(eps, prof.profile_id)] = run_cell(ctx, "h", eps, prof, keep_features=eps == 0.45)
    return cells, time.perf_counter() - start


# ---------------------------------------------------------------- 4


@pytest.mark.slow
def test_criterion_4_matched_model(trained, ctx, held_out):
    cfg, data, params, train_s = trained
    start = time.perf_counter()
    w = ctx.window
    lines, ok = [], True
    for prof in held_out:
        target = simulate_scenario(P.target_spec(cfg, prof), ctx.nominal, ctx.settings)
        pa = simulate_scenario(ScenarioSpec(prof, ctx.coolant_temp, (), "pa"), ctx.nominal, ctx.settings)
        ends, pred, m = P.evaluate(params, data.norm, target, w)
        r_pa = rmse(pa.t_core[ends], target.t_core[ends])
        ok &= m["rmse"] <= r_pa and m["rmse"] < 0.3
        lines.append(f"{prof.profile_id}: LSTM-S {m['rmse']:.4f} vs PA {r_pa:.4f}")
    total = train_s + time.perf_counter() - start
    ok &= total < 15 * 60
    record(4, ok, "; ".join(lines) + f" (need LSTM-S <= PA and < 0.3); pretrain+eval {total / 60:.1f} min (< 15)")
    assert ok


# ---------------------------------------------------------------- 5


@pytest.mark.slow
def test_criterion_5_h_mismatch(h_study, held_out):
    cells, elapsed = h_study
    mono = True
    for prof in held_out:
        for sign in (-1, 1):
            seq = [cells[(sign * e, prof.profile_id)].rmse_pa for e in (0.15, 0.30, 0.45)]
            mono &= all(a <= b for a, b in zip(seq, seq[1:]))
    s = [c.rmse_lstm_s for c in cells.values()]
    da = [c.rmse_lstm_da for c in cells.values()]
    med_s, med_da = float(np.median(s)), float(np.median(da))
    edge = [c for (e, _), c in cells.items() if abs(e) == 0.45]
    gains = [pct(c.rmse_lstm_s, c.rmse_lstm_da) for c in edge]
    ok_b = med_da <= med_s
    ok_c = all(g > 0 for g in gains)
    ok = mono and ok_b and ok_c and elapsed < 30 * 60
    gain_txt = ", ".join(f"{g:+.1f}%" for g in gains)
    record(
        5,
        ok,
        f"(a) PA monotone {mono}; (b) median DA {med_da:.4f} vs S {med_s:.4f}; "
        f"(c) DA gain at |eps|=0.45 {gain_txt} (reference 35%); {elapsed / 60:.1f} min (< 30)",
    )
    assert mono, "PA RMSE not monotone in |eps_h|"
    assert ok_b and ok_c
    assert elapsed < 30 * 60


# ---------------------------------------------------------------- 6


def test_criterion_6_k_t_asymmetry():
    cfg = C.load_config()
    cell = C.cell_params(cfg)
    prof = C.evaluation_profiles(cfg)[0]
    sens = {p: sensitivity_study(p, 0.45, prof, cell) for p in ("h", "c_p", "k_t")}
    ratio = {p: sens[p]["d_t_surf"] / sens[p]["d_t_core"] for p in ("h", "k_t")}
    dv = max(sens[p]["d_voltage"] for p in sens)
    ok = ratio["k_t"] < ratio["h"] and dv == 0.0
    record(6, ok, f"dTs/dTc k_t {ratio['k_t']:.4f} < h {ratio['h']:.4f}; max dV over thermal params {dv}")
    assert ok


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_7_electrical_mismatch(trained, ctx, held_out):
    cfg, data, params, _ = trained
    eps_grid = C.study_grid(cfg)["r0"]
    lines, ok = [], True
    for prof in held_out:
        s, pa = {}, {}
        nominal_pa = simulate_scenario(ScenarioSpec(prof, ctx.coolant_temp, (), "pa"), ctx.nominal, ctx.settings)
        for eps in eps_grid:
            target = simulate_scenario(P.target_spec(cfg, prof, "r0+r1", eps), ctx.nominal, ctx.settings)
            ends, _, m = P.evaluate(params, data.norm, target, ctx.window)
            s[eps] = m["rmse"]
            pa[eps] = rmse(nominal_pa.t_core[ends], target.t_core[ends])
        worst = max(s.values())
        ok &= worst <= 2 * s[0.0] and s[0.5] < pa[0.5]
        lines.append(
            f"{prof.profile_id}: max S {worst:.4f} vs 2x eps0 {2 * s[0.0]:.4f}; "
            f"at +0.5 S {s[0.5]:.4f} vs PA {pa[0.5]:.4f} ({pct(pa[0.5], s[0.5]):.1f}% better, reference 60%)"
        )
    record(7, ok, "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- 8


@pytest.mark.slow
def test_criterion_8_partial_labels(h_study, ctx, trained, held_out):
    cfg, data, _, _ = trained
    cells, _ = h_study
    lines, ok = [], True
    for prof in held_out:
        cell = cells[(0.45, prof.profile_id)]
        target = simulate_scenario(P.target_spec(cfg, prof, "h", 0.45), ctx.nominal, ctx.settings)
        adapted = adapt_with_labels(ctx.pretrained, target, 0.25, ctx.adapt, ctx.source_windows, ctx.norm, ctx.adapt_stride)
        ends, pred = P.estimate(adapted, ctx.norm, target, ctx.window)
        f = cell.features
        assert np.array_equal(ends, f["ends"])
        span = ends >= labeled_cutoff(len(target), 0.25)
        r_lab = rmse(pred[span], f["truth"][span])
        r_da = rmse(f["pred_da"][span], f["truth"][span])
        ok &= r_lab <= r_da
        lines.append(f"{prof.profile_id}: labelled {r_lab:.4f} vs DA {r_da:.4f} ({pct(r_da, r_lab):+.1f}%, reference 44/62%)")
    record(8, ok, "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- 9


@pytest.mark.slow
def test_criterion_9_alignment_mechanics(h_study, held_out):
    cells, _ = h_study
    drops = [(cells[(0.45, p.profile_id)].mmd_start, cells[(0.45, p.profile_id)].mmd_end) for p in held_out]
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(7, 3)), rng.normal(1.0, 2.0, size=(6, 3))
    bw = [0.5, 1.0, 2.0]
    props = [
        mmd2(x, y, bw) >= 0.0 and coral(x, y) >= 0.0,
        mmd2(x, y, bw) == mmd2(y, x, bw) and coral(x, y) == coral(y, x),
        mmd2(x, x.copy(), bw) == 0.0 and coral(x, x.copy()) == 0.0,
        math.isclose(mmd2([0.0], [1.0], [1.0]), 2.0 - 2.0 * math.exp(-0.5), rel_tol=1e-14),
        math.isclose(coral([[0.0], [2.0]], [[0.0], [0.0]]), 1.0 / 4.0, rel_tol=1e-12),
    ]
    ok = all(b < a for a, b in drops) and all(props)
    txt = ", ".join(f"{a:.4f} -> {b:.4f}" for a, b in drops)
    record(9, ok, f"mmd2 epoch 0 -> final at eps_h=+0.45: {txt}; property suite {sum(props)}/{len(props)}")
    assert ok


# ---------------------------------------------------------------- 10


def test_criterion_10_reproducibility(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))

    def run(out, *argv, workers=1):
        code = cli.main([str(a) for a in argv] + ["--config", str(cfg), "--out", str(tmp_path / out), "--workers", str(workers)])
        assert code == 0, argv
        return RunManifest.read(str(tmp_path / out / "manifest.json")).outputs

    ds = tmp_path / "gen" / "dataset"
    ck = tmp_path / "pre" / "checkpoint.npz"
    tgt = tmp_path / "tgt" / "series.csv"
    steps = [
        ("gen", ["generate"]),
        ("pre", ["pretrain", "--dataset", ds]),
        ("tgt", ["simulate", "--profile", "pulse_train", "--seed", 901, "--backend", "fom", "--eps", "h=0.45"]),
        ("ad", ["adapt", "--dataset", ds, "--checkpoint", ck, "--target", tgt]),
        ("ev", ["evaluate", "--checkpoint", ck, "--target", tgt]),
        ("st", ["study-perturb", "--dataset", ds, "--checkpoint", ck]),
        ("se", ["study-sensitivity"]),
        ("pl", ["export-plots", tmp_path / "pre", tmp_path / "tgt"]),
    ]
    same, workers_same = [], []
    for name, argv in steps:
        first = run(name, *argv)
        same.append(first == run(name + "_again", *argv))
        workers_same.append(first == run(name + "_w2", *argv, workers=2))
    ok = all(same) and all(workers_same)
    record(10, ok, f"{sum(same)}/{len(steps)} commands byte-identical on re-run, {sum(workers_same)}/{len(steps)} unchanged with 2 workers")
    assert ok
