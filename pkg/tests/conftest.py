import numpy as np
import pytest

from celltemp.electrical import ElectricalParams
from celltemp.sim import CellParams
from celltemp.thermal import ThermalParams


@pytest.fixture
def e_params():
    return ElectricalParams(capacity=2.5, r0=0.010, r1=0.015, c1=2000.0)


@pytest.fixture
def t_params():
    return ThermalParams(rho=2700.0, c_p=900.0, k_t=0.6, h=20.0, radius=0.013, length=0.065)


@pytest.fixture
def cell(e_params, t_params):
    return CellParams(e_params, t_params)


def pulse(n, amp=10.0, on=30, off=30, alternate=False):
    """Square pulses: ``on`` seconds at ``amp`` then ``off`` seconds rest.

    With ``alternate`` every other pulse is a charge pulse.
    """
    k = np.arange(n)
    out = np.where(k % (on + off) < on, amp, 0.0)
    if alternate:
        out *= np.where((k // (on + off)) % 2 == 0, 1.0, -1.0)
    return out


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
