"""Exception hierarchy shared by all modules."""


class CollapseError(Exception):
    """Base class for every error raised by this package."""


class InvalidStateError(CollapseError, ValueError):
    """Wavefunction contains non-finite entries or violates a contract."""


class DegenerateStateError(CollapseError, ValueError):
    """Operation needs a nonzero norm but the state vanishes."""


class GridMismatchError(CollapseError, ValueError):
    pass


class InvalidSpecError(CollapseError, ValueError):
    """Bad kernel, Hamiltonian or collapse parameters."""


class ConfigError(CollapseError, ValueError):
    """Scenario configuration is invalid. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(CollapseError, IOError):
    pass


class NumericalFailure(CollapseError, ArithmeticError):
    """NaN or Inf appeared during time stepping."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
