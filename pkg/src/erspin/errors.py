"""Exception and warning types raised across the package."""


class ErspinError(Exception):
    """Base class for all package errors."""


class ZeroPrecession(ErspinError, ValueError):
    pass


class NegativeDuration(ErspinError, ValueError):
    pass


class NotUnitary(ErspinError, ValueError):
    pass


class NoEntanglingAxis(ErspinError, ValueError):
    """Raised when the two conditional precession axes are parallel (A_perp = 0)."""


class NoRootInWindow(ErspinError, ValueError):
    pass


class NoFeasibleSequence(ErspinError, RuntimeError):
    """No GRASS start met the acceptance thresholds."""

    def __init__(self, message, results=None):
        super().__init__(message)
        self.results = results or []


class MissingGrassSequence(ErspinError, ValueError):
    pass


class InvalidTarget(ErspinError, ValueError):
    pass


class FidelityTooLow(ErspinError, ValueError):
    pass


class RoundsTooLarge(ErspinError, ValueError):
    pass


class ZeroSeparation(ErspinError, ValueError):
    pass


class BoxTooSmall(ErspinError, ValueError):
    pass


class FitDiverged(ErspinError, RuntimeError):
    pass


class InsufficientData(ErspinError, ValueError):
    pass


class ConfigError(ErspinError, ValueError):
    """Base for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class UnknownKey(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class DegenerateRotation(UserWarning):
    """A conditional rotation angle is ~0, so its axis is undefined."""


class OverlappingPulses(UserWarning):
    """Pulses on the two electrons coincide within 1 ns."""


class NumericalFailure(ErspinError, RuntimeError):
    """A command produced non-finite or otherwise unusable numbers."""


class IoError(ErspinError, OSError):
    pass
