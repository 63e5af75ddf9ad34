"""Radial finite-volume full-order thermal model.

Node ``i`` sits at ``r_i = i R / (n - 1)`` and owns the annulus between the
neighbouring face midpoints (half cells at the centre and at the surface).
Face fluxes use the exact face radius, so the discrete operator conserves
energy and reproduces the parabolic steady profile at the nodes. Time
stepping is Crank-Nicolson.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DomainError, NumericError
from .thermal import ThermalParams

DEFAULT_NODES = 201


@dataclass(frozen=True, eq=False)
class FomGrid:
    temps: np.ndarray
    radius: float

    def __post_init__(self):
        temps = np.asarray(self.temps, dtype=float)
        if temps.ndim != 1 or temps.size < 3:
            raise DomainError("FomGrid needs at least 3 nodes")
        if not np.all(np.isfinite(temps)):
            raise NumericError("non-finite grid temperature")
        object.__setattr__(self, "temps", temps)

    @property
    def n_nodes(self):
        return self.temps.size

    @property
    def radii(self):
        return np.linspace(0.0, self.radius, self.n_nodes)

    @classmethod
    def uniform(cls, temp, params: ThermalParams, n_nodes=DEFAULT_NODES):
        return cls(np.full(n_nodes, float(temp)), params.radius)


@dataclass(frozen=True, eq=False)
class _Operator:
    """Lumped capacities ``m``, conductance matrix ``k`` and CN factors."""

    m: np.ndarray
    k: np.ndarray
    src_weight: np.ndarray  # fraction of Q deposited per node
    ha: float
    lhs: tuple
    rhs: np.ndarray
    dt: float


def node_volumes(n, params: ThermalParams):
    dr = params.radius / (n - 1)
    faces = np.concatenate(([0.0], (np.arange(n - 1) + 0.5) * dr, [params.radius]))
    return math.pi * params.length * (faces[1:] ** 2 - faces[:-1] ** 2)


@lru_cache(maxsize=64)
def _operator(params: ThermalParams, n: int, dt: float) -> _Operator:
    dr = params.radius / (n - 1)
    vol = node_volumes(n, params)
    m = params.rho * params.c_p * vol
    face_r = (np.arange(n - 1) + 0.5) * dr
    g = params.k_t * 2.0 * math.pi * face_r * params.length / dr
    k = np.zeros((n, n))
    idx = np.arange(n - 1)
    k[idx, idx] += g
    k[idx + 1, idx + 1] += g
    k[idx, idx + 1] -= g
    k[idx + 1, idx] -= g
    ha = params.h * params.area
    k[-1, -1] += ha
    lhs = np.diag(m) + 0.5 * dt * k
    rhs = np.diag(m) - 0.5 * dt * k
    return _Operator(m, k, vol / params.volume, ha, lu_factor(lhs), rhs, dt)


def fom_step(grid: FomGrid, q_gen, t_f, dt, params: ThermalParams) -> FomGrid:
    """One Crank-Nicolson step with ``q_gen`` and ``t_f`` held over ``dt``."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    op = _operator(params, grid.n_nodes, float(dt))
    b = op.rhs @ grid.temps + dt * q_gen * op.src_weight
    b[-1] += dt * op.ha * t_f
    temps = lu_solve(op.lhs, b)
    if not np.all(np.isfinite(temps)):
        raise NumericError("FOM solve produced non-finite temperatures")
    return FomGrid(temps, grid.radius)


def thermal_energy(grid: FomGrid, params: ThermalParams):
    """Stored heat relative to 0 degC, in joules."""
    return float(params.rho * params.c_p * node_volumes(grid.n_nodes, params) @ grid.temps)


def fom_outputs(grid: FomGrid):
    """Return ``(t_s, t_c, t_bar)``; ``t_bar`` uses trapezoidal weights."""
    r = grid.radii
    t_bar = 2.0 / grid.radius**2 * np.trapezoid(r * grid.temps, r)
    return float(grid.temps[-1]), float(grid.temps[0]), float(t_bar)


def fom_steady_state(q_gen, t_f, params: ThermalParams, n_nodes=DEFAULT_NODES) -> FomGrid:
    """Solve the discrete steady problem directly."""
    op = _operator(params, n_nodes, 1.0)
    b = q_gen * op.src_weight
    b[-1] += op.ha * t_f
    return FomGrid(np.linalg.solve(op.k, b), params.radius)
