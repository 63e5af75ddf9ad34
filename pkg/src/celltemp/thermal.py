"""Two-state polynomial-approximation thermal model of a cylindrical cell.

The radial temperature is approximated by the quartic

    T(r, t) = a + b (r/R)^2 + d (r/R)^4

and the heat equation is volume averaged. With the volume-averaged
temperature ``t_bar`` and volume-averaged radial gradient ``gamma_bar`` as
states, the convective boundary condition closes the system and the three
polynomial coefficients drop out:

    a + b/2 + d/3           = t_bar
    (4b/3 + 8d/5) / R       = gamma_bar
    (k/R)(2b + 4d)          = -h (T_s - T_f),   T_s = a + b + d,  T_c = a

Inputs are the heat generation ``Q`` [W] and coolant temperature ``T_f``.
Outputs are the surface and core temperatures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class ThermalParams:
    rho: float  # kg/m^3
    c_p: float  # J/(kg K)
    k_t: float  # W/(m K)
    h: float  # W/(m^2 K)
    radius: float  # m
    length: float  # m

    def __post_init__(self):
        for name in ("rho", "c_p", "k_t", "h", "radius", "length"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")

    @property
    def alpha(self):
        return self.k_t / (self.rho * self.c_p)

    @property
    def volume(self):
        return math.pi * self.radius**2 * self.length

    @property
    def area(self):
        """Lateral surface area; end caps are neglected."""
        return 2.0 * math.pi * self.radius * self.length

    @property
    def heat_capacity(self):
        return self.rho * self.c_p * self.volume


@dataclass(frozen=True)
class ThermalStatePA:
    t_bar: float
    gamma_bar: float = 0.0


@dataclass(frozen=True, eq=False)
class PaStateSpace:
    """Continuous-time realisation x' = A x + B u, y = C x + D u.

    x = (t_bar, gamma_bar), u = (Q, T_f), y = (T_s, T_c).
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    d_mat: np.ndarray
    _zoh: dict = field(default_factory=dict, repr=False)

    def discretize(self, dt):
        """Exact zero-order-hold matrices ``(Ad, Bd)`` for step ``dt``."""
        key = float(dt)
        if key not in self._zoh:
            aug = np.zeros((4, 4))
            aug[:2, :2] = self.a_mat * dt
            aug[:2, 2:] = self.b_mat * dt
            phi = expm(aug)
            self._zoh[key] = (phi[:2, :2].copy(), phi[:2, 2:].copy())
        return self._zoh[key]

    def steady_state(self, q_gen, t_f):
        """Fixed point of the state equation for constant inputs."""
        u = np.array([q_gen, t_f], dtype=float)
        x = np.linalg.solve(self.a_mat, -self.b_mat @ u)
        return ThermalStatePA(float(x[0]), float(x[1]))


def derive_pa_coefficients(params: ThermalParams) -> PaStateSpace:
    R, k, h = params.radius, params.k_t, params.h
    rc = params.rho * params.c_p
    den = R * h + 24.0 * k

    a_mat = np.array(
        [
            [-48.0 * h * k / (R * rc * den), -15.0 * h * k / (rc * den)],
            [-320.0 * h * k / (R**2 * rc * den), -120.0 * k * (R * h + 4.0 * k) / (R**2 * rc * den)],
        ]
    )
    b_mat = np.array(
        [
            [1.0 / (rc * params.volume), 48.0 * h * k / (R * rc * den)],
            [0.0, 320.0 * h * k / (R**2 * rc * den)],
        ]
    )
    c_mat = np.array(
        [
            [24.0 * k / den, 15.0 * R * k / (2.0 * den)],
            [3.0 * (8.0 * k - R * h) / den, -15.0 * R * (R * h + 8.0 * k) / (8.0 * den)],
        ]
    )
    d_mat = np.array([[0.0, R * h / den], [0.0, 4.0 * R * h / den]])
    return PaStateSpace(a_mat, b_mat, c_mat, d_mat)


def pa_outputs(state: ThermalStatePA, t_f, ss: PaStateSpace):
    x = np.array([state.t_bar, state.gamma_bar])
    y = ss.c_mat @ x + ss.d_mat[:, 1] * t_f
    return float(y[0]), float(y[1])


def pa_step(state: ThermalStatePA, q_gen, t_f, dt, ss: PaStateSpace):
    """Advance one step; returns ``(next_state, t_s, t_c)``.

    Inputs are held constant over the step. Outputs are evaluated on the
    advanced state with the same inputs.
    """
    if not 0 < dt <= 1.0:
        raise DomainError(f"dt must be in (0, 1] s, got {dt!r}")
    if not all(map(math.isfinite, (state.t_bar, state.gamma_bar, q_gen, t_f))):
        raise NumericError("non-finite thermal input")
    ad, bd = ss.discretize(dt)
    x = ad @ np.array([state.t_bar, state.gamma_bar]) + bd @ np.array([q_gen, t_f])
    nxt = ThermalStatePA(float(x[0]), float(x[1]))
    t_s, t_c = pa_outputs(nxt, t_f, ss)
    return nxt, t_s, t_c


def pa_steady_state(q_gen, t_f, params: ThermalParams):
    """Closed-form steady conduction with uniform generation.

    Returns ``(t_bar, t_s, t_c)``.
    """
    t_s = t_f + q_gen / (params.h * params.area)
    rise = q_gen / (4.0 * math.pi * params.k_t * params.length)
    return t_s + rise / 2.0, t_s, t_s + rise
