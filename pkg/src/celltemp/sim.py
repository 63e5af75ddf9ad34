"""Coupled electro-thermal simulation and the time-series containers."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .electrical import ElectricalParams, ElectricalState, ecm_step, ocv
from .errors import DomainError, SimulationError
from .fom import DEFAULT_NODES, FomGrid, fom_outputs, fom_step
from .thermal import (
    ThermalParams,
    ThermalStatePA,
    derive_pa_coefficients,
    pa_step,
)

THERMAL_FIELDS = ("rho", "c_p", "k_t", "h", "radius", "length")
ELECTRICAL_FIELDS = ("capacity", "r0", "r1", "c1")
BACKENDS = ("pa", "fom")


@dataclass(frozen=True)
class CellParams:
    electrical: ElectricalParams
    thermal: ThermalParams

    def perturbed(self, epsilons) -> "CellParams":
        """Apply ``theta * (1 + eps)`` to each named parameter."""
        e_changes, t_changes = {}, {}
        for name, eps in epsilons.items():
            if name in THERMAL_FIELDS:
                t_changes[name] = perturb(getattr(self.thermal, name), eps)
            elif name in ELECTRICAL_FIELDS:
                e_changes[name] = perturb(getattr(self.electrical, name), eps)
            else:
                raise DomainError(f"unknown parameter {name!r}")
        return CellParams(
            dataclasses.replace(self.electrical, **e_changes),
            dataclasses.replace(self.thermal, **t_changes),
        )


def perturb(theta_star, epsilon):
    value = theta_star * (1.0 + epsilon)
    if not value > 0:
        raise DomainError(f"perturbed value {value!r} is not positive")
    return value


@dataclass(frozen=True)
class CurrentProfile:
    samples: np.ndarray  # A, discharge positive
    dt: float = 1.0
    max_abs: float = math.inf

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise DomainError("profile samples must be 1-D")
        if not self.dt > 0:
            raise DomainError("profile dt must be positive")
        if not np.all(np.isfinite(samples)):
            raise DomainError("profile contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > self.max_abs:
            raise DomainError(f"profile exceeds current limit {self.max_abs} A")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size


SIGNALS = ("current", "voltage", "t_surf", "t_fluid")


@dataclass(frozen=True, eq=False)
class Measurements:
    """What a BMS can observe: no core temperature."""

    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    t_surf: np.ndarray
    t_fluid: np.ndarray

    def __post_init__(self):
        n = None
        for f in dataclasses.fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=float)
            if arr.ndim != 1:
                raise DomainError(f"{f.name} must be 1-D")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DomainError(f"{f.name} has length {arr.size}, expected {n}")
            object.__setattr__(self, f.name, arr)

    def __len__(self):
        return self.t.size

    @property
    def labeled(self):
        return False

    def feature_matrix(self):
        """(n, 4) array of (I, V_t, T_s, T_f)."""
        return np.column_stack([getattr(self, s) for s in SIGNALS])

    def slice(self, start, stop=None):
        kw = {f.name: getattr(self, f.name)[start:stop] for f in dataclasses.fields(self)}
        return type(self)(**kw)


@dataclass(frozen=True, eq=False)
class TimeSeries(Measurements):
    t_core: np.ndarray = None

    def __post_init__(self):
        if self.t_core is None:
            raise DomainError("TimeSeries requires t_core; use Measurements")
        super().__post_init__()

    @property
    def labeled(self):
        return True

    def measurements(self) -> Measurements:
        return Measurements(self.t, self.current, self.voltage, self.t_surf, self.t_fluid)

    def equals(self, other) -> bool:
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in dataclasses.fields(self)
        )


@dataclass(frozen=True)
class NoiseSpec:
    sigma_i: float = 0.010
    sigma_v: float = 0.002
    sigma_t: float = 0.05
    seed: int = 0


def _pack(t, cols, n):
    return TimeSeries(t[:n], *(c[:n] for c in cols))


def simulate(
    profile: CurrentProfile,
    cell: CellParams,
    soc0=0.8,
    t0=None,
    t_f=25.0,
    backend="pa",
    noise: NoiseSpec | None = None,
    n_nodes=DEFAULT_NODES,
) -> TimeSeries:
    """Run ``profile`` through the ECM and the chosen thermal backend.

    ``t_f`` may be a scalar or a per-step array. ``t0`` is the initial
    uniform cell temperature and defaults to the first coolant value. Record
    ``k`` holds the signals at the end of step ``k`` (time ``(k+1)*dt``).
    """
    if backend not in BACKENDS:
        raise DomainError(f"unknown backend {backend!r}")
    if not 0.0 <= soc0 <= 1.0:
        raise DomainError("soc0 must lie in [0, 1]")
    n = len(profile)
    dt = profile.dt
    t_f = np.broadcast_to(np.asarray(t_f, dtype=float), (n,)).copy()
    if t0 is None:
        t0 = t_f[0] if n else 25.0
    e_par, t_par = cell.electrical, cell.thermal

    t = (np.arange(n) + 1.0) * dt
    current = profile.samples.copy()
    voltage = np.empty(n)
    t_surf = np.empty(n)
    t_core = np.empty(n)

    estate = ElectricalState(soc0, 0.0)
    if backend == "pa":
        ss = derive_pa_coefficients(t_par)
        tstate = ThermalStatePA(float(t0), 0.0)
    else:
        grid = FomGrid.uniform(t0, t_par, n_nodes)

    for k in range(n):
        try:
            estate, v_t, q_gen = ecm_step(estate, current[k], dt, e_par)
        except SimulationError as err:
            err.step = k
            err.partial = _pack(t, (current, voltage, t_surf, t_f, t_core), k)
            raise
        if backend == "pa":
            tstate, ts, tc = pa_step(tstate, q_gen, t_f[k], dt, ss)
        else:
            grid = fom_step(grid, q_gen, t_f[k], dt, t_par)
            ts, tc, _ = fom_outputs(grid)
        voltage[k] = v_t
        t_surf[k] = ts
        t_core[k] = tc

    if noise is not None:
        rng = np.random.default_rng(noise.seed)
        current = current + rng.normal(0.0, noise.sigma_i, n)
        voltage = voltage + rng.normal(0.0, noise.sigma_v, n)
        t_surf = t_surf + rng.normal(0.0, noise.sigma_t, n)
    return TimeSeries(t, current, voltage, t_surf, t_f, t_core)


def rest_voltage(soc, cell: CellParams):
    return ocv(soc, cell.electrical)
