"""Exception hierarchy shared across the package."""


class CellTempError(Exception):
    """Base class for all package errors."""


class ConfigError(CellTempError):
    pass


class DomainError(CellTempError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(CellTempError, ArithmeticError):
    pass


class SimulationError(CellTempError):
    """Raised when a simulation has to stop early.

    ``step`` is the index of the offending step and ``partial`` holds the
    records emitted before it (set by the simulator, ``None`` otherwise).
    """

    def __init__(self, message, step=None, partial=None, scenario=None):
        super().__init__(message)
        self.step = step
        self.partial = partial
        self.scenario = scenario

    def __str__(self):
        msg = super().__str__()
        if self.step is not None:
            msg = f"{msg} (step {self.step})"
        if self.scenario is not None:
            msg = f"[{self.scenario}] {msg}"
        return msg


class SocBoundsError(SimulationError):
    pass


class VoltageCutoffError(SimulationError):
    pass


class DivergenceError(CellTempError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} at epoch {epoch}")
        self.epoch = epoch


class AdaptationStarvedError(CellTempError):
    """No reliable pseudo-labelled windows were left to adapt on."""


class StaleCacheError(CellTempError):
    pass
