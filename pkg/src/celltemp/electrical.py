"""First-order (1RC) equivalent circuit model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SocBoundsError, VoltageCutoffError


@dataclass(frozen=True)
class ElectricalParams:
    capacity: float  # Ah
    r0: float  # ohm
    r1: float  # ohm
    c1: float  # F
    ocv_curve: tuple = ((0.0, 3.0), (1.0, 3.4))  # (soc, volts) breakpoints
    v_min: float = 2.5
    v_max: float = 3.8

    def __post_init__(self):
        curve = tuple((float(s), float(v)) for s, v in self.ocv_curve)
        object.__setattr__(self, "ocv_curve", curve)
        if self.capacity <= 0:
            raise DomainError("capacity must be positive")
        if min(self.r0, self.r1, self.c1) <= 0:
            raise DomainError("r0, r1 and c1 must be positive")
        if len(curve) < 2:
            raise DomainError("ocv_curve needs at least two breakpoints")
        socs = [s for s, _ in curve]
        volts = [v for _, v in curve]
        if socs[0] != 0.0 or socs[-1] != 1.0:
            raise DomainError("ocv_curve must span soc 0..1")
        if any(b <= a for a, b in zip(socs, socs[1:])):
            raise DomainError("ocv_curve soc values must be strictly increasing")
        if any(b < a for a, b in zip(volts, volts[1:])):
            raise DomainError("ocv_curve voltages must be nondecreasing")
        if not self.v_min < self.v_max:
            raise DomainError("v_min must be below v_max")

    @property
    def tau(self):
        return self.r1 * self.c1


@dataclass(frozen=True)
class ElectricalState:
    soc: float
    v1: float = 0.0


def ocv(soc, params: ElectricalParams) -> float:
    """Piecewise-linear open-circuit voltage at ``soc``."""
    if not 0.0 <= soc <= 1.0:
        raise DomainError(f"soc {soc!r} outside [0, 1]")
    socs, volts = zip(*params.ocv_curve)
    return float(np.interp(soc, socs, volts))


def ecm_step(state: ElectricalState, current, dt, params: ElectricalParams):
    """Advance the circuit by ``dt`` seconds under a constant ``current``.

    Discharge current is positive. The RC branch uses the exact zero-order
    hold solution. Returns ``(next_state, v_t, q_gen)`` where ``q_gen`` is the
    irreversible heat (ohmic plus polarisation) in watts.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    soc = state.soc - current * dt / (3600.0 * params.capacity)
    if not 0.0 <= soc <= 1.0:
        raise SocBoundsError(f"soc left [0, 1]: {soc:.6f}")
    decay = math.exp(-dt / params.tau)
    v1 = state.v1 * decay + params.r1 * (1.0 - decay) * current
    v_t = ocv(soc, params) - current * params.r0 - v1
    if not params.v_min <= v_t <= params.v_max:
        raise VoltageCutoffError(
            f"terminal voltage {v_t:.4f} V outside [{params.v_min}, {params.v_max}]"
        )
    q_gen = current * current * params.r0 + v1 * v1 / params.r1
    return ElectricalState(soc, v1), v_t, q_gen


def heat_generation(current, dt, params: ElectricalParams, v1=0.0):
    """Irreversible heat per step for a whole current sequence.

    Same recursion as :func:`ecm_step` without SOC or cutoff checks, which
    the heat does not depend on.
    """
    current = np.asarray(current, dtype=float)
    decay = math.exp(-dt / params.tau)
    gain = params.r1 * (1.0 - decay)
    q = np.empty_like(current)
    for k, cur in enumerate(current):
        v1 = v1 * decay + gain * cur
        q[k] = cur * cur * params.r0 + v1 * v1 / params.r1
    return q
