import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from celltemp.datagen import (
    NormStats,
    ProfileSpec,
    ScenarioSpec,
    WindowBatch,
    build_dataset,
    gen_profile,
    simulate_scenario,
    sweep,
    windowize,
)
from celltemp.electrical import ElectricalParams
from celltemp.errors import DomainError, SimulationError
from celltemp.sim import CellParams, CurrentProfile, simulate
from celltemp.thermal import ThermalParams

# module-level cell for hypothesis tests (function fixtures do not reset per example)
_CELL = CellParams(ElectricalParams(2.5, 0.01, 0.015, 2000.0), ThermalParams(2700, 900, 0.6, 20, 0.013, 0.065))


@pytest.mark.parametrize("kind", ["pulse_train", "random_walk"])
@given(seed=st.integers(0, 10_000), max_current=st.floats(0.5, 40.0))
@settings(max_examples=15, deadline=None)
def test_profile_respects_current_limit(kind, seed, max_current):
    prof = gen_profile(kind, max_current, 600, seed)
    assert np.max(np.abs(prof.samples)) <= max_current
    assert len(prof) == 600


@pytest.mark.parametrize("kind", ["pulse_train", "random_walk"])
def test_profile_is_deterministic(kind):
    a = gen_profile(kind, 10.0, 900, seed=7)
    b = gen_profile(kind, 10.0, 900, seed=7)
    c = gen_profile(kind, 10.0, 900, seed=8)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_pulse_train_is_discharge_biased_piecewise_constant():
    s = gen_profile("pulse_train", 10.0, 3600, seed=3).samples
    assert s.mean() > 0
    # piecewise constant: far fewer level changes than samples
    assert np.count_nonzero(np.diff(s)) < len(s) / 5


def test_scaled_replay_multiplies_by_ratio(tmp_path):
    raw = np.array([0.0, 2.5, -10.0, 7.0, 10.0, 1.25])
    path = tmp_path / "drive.csv"
    path.write_text("time_s,current_a\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(raw)))
    prof = gen_profile("scaled_replay", 35.0, len(raw), replay_path=str(path))
    np.testing.assert_allclose(prof.samples, raw * 3.5, rtol=0, atol=1e-12)


def test_scaled_replay_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("time_s,current_a\n")
    with pytest.raises(DomainError, match="no samples"):
        gen_profile("scaled_replay", 10.0, 10, replay_path=str(empty))
    with pytest.raises(DomainError):
        gen_profile("scaled_replay", 10.0, 10)


def test_unknown_kind_rejected():
    with pytest.raises(DomainError, match="unknown profile kind"):
        gen_profile("sawtooth", 10.0, 100)


def test_charge_guard_keeps_soc_in_range():
    prof = gen_profile("pulse_train", 10.0, 3600, seed=11, capacity_ah=2.5, soc0=0.8)
    soc = 0.8 - np.cumsum(prof.samples) / (3600 * 2.5)
    assert soc.min() >= 0.1 - 1e-12 and soc.max() <= 0.95 + 1e-12


def test_identity_sweep_matches_direct_simulation(cell):
    spec = ScenarioSpec(ProfileSpec("pulse_train", 5, duration=600), coolant_temp=10.0)
    series, _ = build_dataset([spec], cell)
    direct = simulate(spec.profile.build(cell.electrical.capacity, 0.8), cell, soc0=0.8, t_f=10.0)
    assert series[0].equals(direct)


def test_sweep_cartesian_count():
    profs = [ProfileSpec("pulse_train", 1), ProfileSpec("random_walk", 2)]
    grid = sweep(profs, (25.0,), {"h": [-0.45, 0.0, 0.45]})
    assert len(grid) == 6
    assert len({g.scenario_id for g in grid}) == 6


def test_scenario_epsilon_bounds():
    with pytest.raises(DomainError):
        ScenarioSpec(ProfileSpec("rest"), epsilons={"h": 0.95})
    with pytest.raises(DomainError):
        ScenarioSpec(ProfileSpec("rest"), epsilons={"rho": 0.1})


def test_perturbed_scenario_uses_perturbed_cell(cell):
    prof = ProfileSpec("pulse_train", 4, duration=600)
    base = simulate_scenario(ScenarioSpec(prof, 25.0), cell)
    cooler = simulate_scenario(ScenarioSpec(prof, 25.0, {"h": 0.45}), cell)
    assert cooler.t_surf.max() < base.t_surf.max()
    np.testing.assert_array_equal(cooler.voltage, base.voltage)


def test_failing_scenario_is_tagged(cell):
    spec = ScenarioSpec(ProfileSpec("pulse_train", 1, max_current=400.0, duration=300), 25.0)
    with pytest.raises(SimulationError) as info:
        build_dataset([spec], cell)
    assert info.value.scenario == spec.scenario_id
    assert spec.scenario_id in str(info.value)


def test_parallel_build_matches_serial(cell):
    specs = sweep([ProfileSpec("pulse_train", 1, duration=400)], (5.0, 25.0), {"h": [0.0, 0.3]})
    a, na = build_dataset(specs, cell, workers=1)
    b, nb = build_dataset(specs, cell, workers=2)
    assert all(x.equals(y) for x, y in zip(a, b))
    assert na.content_hash == nb.content_hash


def test_norm_stats_of_rest_series(cell):
    specs = [ScenarioSpec(ProfileSpec("rest", duration=200), t_f) for t_f in (10.0, 10.0)]
    series, norm = build_dataset(specs, cell, std_floor=1e-6)
    assert norm.mean[0] == 0.0
    assert norm.mean[2] == pytest.approx(10.0, abs=1e-12)
    assert norm.mean[3] == 10.0
    assert norm.std == (1e-6, 1e-6, 1e-6, 1e-6)
    assert norm.label_std == 1e-6


def test_norm_stats_round_trip_and_hash():
    n = NormStats((0.1, 3.2, 20.0, 15.0), (5.0, 0.1, 10.0, 8.0), 21.0, 10.5)
    assert NormStats.from_dict(n.to_dict()) == n
    assert NormStats.from_dict(n.to_dict()).content_hash == n.content_hash
    other = NormStats((0.1, 3.2, 20.0, 15.0), (5.0, 0.1, 10.0, 8.0), 21.0, 10.6)
    assert other.content_hash != n.content_hash
    with pytest.raises(DomainError):
        NormStats((0, 0, 0, 0), (1, 0, 1, 1), 0.0, 1.0)


def _series(cell, n, t_f=25.0):
    return simulate(CurrentProfile(np.sin(np.arange(n) / 7.0) * 5.0), cell, t_f=t_f)


def test_window_count_and_starts(cell):
    s = _series(cell, 100)
    norm = NormStats.from_series([s])
    wb = windowize(s, 50, 25, norm)
    assert len(wb) == 3
    assert list(wb.starts) == [0, 25, 50]
    np.testing.assert_array_equal(wb.labels, s.t_core[[49, 74, 99]])
    assert wb.features().shape == (3, 50, 4)


@given(n=st.integers(5, 80), w=st.integers(1, 40), stride=st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_window_count_formula(n, w, stride):
    s = simulate(CurrentProfile(np.zeros(n)), _CELL)
    norm = NormStats((0, 0, 0, 0), (1, 1, 1, 1), 0.0, 1.0)
    if n < w:
        with pytest.raises(DomainError):
            windowize(s, w, stride, norm)
        return
    assert len(windowize(s, w, stride, norm)) == (n - w) // stride + 1


def test_single_window_when_length_equals_w(cell):
    s = _series(cell, 60)
    assert len(windowize(s, 60, 7, NormStats.from_series([s]))) == 1


def test_features_are_z_scored_with_source_stats(cell):
    series = [_series(cell, 300, t_f) for t_f in (5.0, 25.0)]
    norm = NormStats.from_series(series)
    wb = WindowBatch.concat([windowize(s, 1, 1, norm) for s in series])
    f = wb.features()[:, 0, :]
    np.testing.assert_allclose(f.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(f.std(axis=0), 1.0, atol=1e-6)
    assert wb.norm_hash == norm.content_hash


def test_target_windows_carry_source_hash_and_no_labels(cell):
    src = _series(cell, 200)
    norm = NormStats.from_series([src])
    tgt = windowize(_series(cell, 200, 40.0).measurements(), 50, 10, norm)
    assert tgt.labels is None
    assert tgt.norm_hash == norm.content_hash
    other = NormStats.from_series([_series(cell, 200, 40.0)])
    with pytest.raises(DomainError):
        WindowBatch.concat([tgt, windowize(src, 50, 10, other)])


def test_subset_and_concat_keep_alignment(cell):
    a, b = _series(cell, 120), _series(cell, 150, 10.0)
    norm = NormStats.from_series([a, b])
    wa, wb_ = windowize(a, 30, 10, norm, "a"), windowize(b, 30, 10, norm, "b")
    both = WindowBatch.concat([wa, wb_])
    assert len(both) == len(wa) + len(wb_)
    i = len(wa) + 2
    np.testing.assert_array_equal(both.features([i])[0], wb_.features([2])[0])
    assert both.scenario_of(i) == "b"
    sub = both.subset([i, 0])
    assert sub.labels[0] == wb_.labels[2] and sub.scenario_of(1) == "a"
