import math

import numpy as np
import pytest

from celltemp.fom import FomGrid, fom_outputs, fom_steady_state, fom_step, node_volumes, thermal_energy
from celltemp.thermal import pa_steady_state

from .conftest import pulse


def run_to_steady(p, q, tf, n, steps=15000, dt=1.0):
    grid = FomGrid.uniform(tf, p, n)
    for _ in range(steps):
        grid = fom_step(grid, q, tf, dt, p)
    return grid


def test_volumes_sum_to_cell(t_params):
    for n in (3, 10, 201):
        assert node_volumes(n, t_params).sum() == pytest.approx(t_params.volume, rel=1e-13)


def test_equilibrium_unchanged(t_params):
    grid = FomGrid.uniform(17.0, t_params)
    for _ in range(50):
        grid = fom_step(grid, 0.0, 17.0, 1.0, t_params)
    assert np.max(np.abs(grid.temps - 17.0)) < 1e-12


def test_grid_rejects_too_few_nodes(t_params):
    from celltemp.errors import DomainError

    with pytest.raises(DomainError):
        FomGrid(np.zeros(2), t_params.radius)


def test_transient_reaches_closed_form_steady_state(t_params):
    grid = run_to_steady(t_params, 2.0, 25.0, 201)
    ts, tc, t_bar = fom_outputs(grid)
    t_bar_cf, ts_cf, tc_cf = pa_steady_state(2.0, 25.0, t_params)
    assert abs(ts - ts_cf) < 1e-3
    assert abs(tc - tc_cf) < 1e-3
    assert abs(t_bar - t_bar_cf) < 1e-3


def test_second_order_convergence(t_params):
    t_bar_cf, ts_cf, tc_cf = pa_steady_state(2.0, 25.0, t_params)
    errors = []
    for n in (51, 101, 201):
        ts, tc, t_bar = fom_outputs(fom_steady_state(2.0, 25.0, t_params, n))
        errors.append(max(abs(ts - ts_cf), abs(tc - tc_cf), abs(t_bar - t_bar_cf)))
    ratios = [errors[0] / errors[1], errors[1] / errors[2]]
    for r in ratios:
        assert 3.5 < r < 4.5
    assert errors[-1] < 1e-3


def test_outputs_uniform(t_params):
    assert fom_outputs(FomGrid.uniform(25.0, t_params)) == (25.0, 25.0, 25.0)


def test_outputs_quadratic_profile(t_params):
    r = np.linspace(0, t_params.radius, 201)
    grid = FomGrid(25.0 + (r / t_params.radius) ** 2, t_params.radius)
    ts, tc, t_bar = fom_outputs(grid)
    assert (ts, tc) == (26.0, 25.0)
    assert t_bar == pytest.approx(25.5, abs=1e-4)


def test_steady_parabola_gradient(t_params):
    ts, tc, _ = fom_outputs(fom_steady_state(3.0, 10.0, t_params))
    assert tc - ts == pytest.approx(3.0 / (4 * math.pi * t_params.k_t * t_params.length), rel=1e-9)


def test_discrete_energy_balance(t_params):
    rng = np.random.default_rng(0)
    grid = FomGrid.uniform(20.0, t_params)
    dt = 1.0
    for q in rng.uniform(0, 4, 100):
        tf = 15.0
        nxt = fom_step(grid, q, tf, dt, t_params)
        d_energy = (thermal_energy(nxt, t_params) - thermal_energy(grid, t_params)) / dt
        ts_mid = 0.5 * (grid.temps[-1] + nxt.temps[-1])
        expected = q - t_params.h * t_params.area * (ts_mid - tf)
        assert d_energy == pytest.approx(expected, rel=1e-6, abs=1e-9)
        grid = nxt


@pytest.mark.parametrize("t0,tf", [(30.0, 10.0), (10.0, 30.0)])
def test_maximum_principle(t_params, t0, tf):
    grid = FomGrid.uniform(t0, t_params)
    for q in pulse(2000, amp=3.0, on=5, off=7):
        grid = fom_step(grid, q, tf, 1.0, t_params)
        assert grid.temps.min() >= min(t0, tf) - 1e-9


def test_core_above_surface_when_heated(t_params):
    rng = np.random.default_rng(5)
    grid = FomGrid.uniform(25.0, t_params)
    for q in rng.uniform(0, 4, 1500):
        grid = fom_step(grid, q, 25.0, 1.0, t_params)
        ts, tc, _ = fom_outputs(grid)
        assert tc >= ts - 1e-12
