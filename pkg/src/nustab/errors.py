"""Exception hierarchy.

Two families matter to the CLI: configuration problems (exit code 2) and
numerical failures (exit code 3).
"""


class NustabError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(NustabError, ValueError):
    """Invalid system, damping or experiment parameters."""


class InsufficientData(NustabError, ValueError):
    """Too few modes, peaks or trace points for the requested operation."""


class DimensionMismatch(NustabError, ValueError):
    pass


class DataError(NustabError, ValueError):
    """Input table violates a structural requirement (e.g. monotonicity)."""


class DomainError(NustabError, ValueError):
    """Argument outside the domain of a rate function or its inverse."""


class PreconditionViolation(NustabError, ValueError):
    pass


class ValidityWindowError(NustabError, ValueError):
    """Requested index range leaves the truncation validity window."""


class NumericalFailure(NustabError, ArithmeticError):
    """Base class for failures of a numerical method on valid input."""


class SpectrumHit(NumericalFailure):
    """The evaluation point lies on (or numerically at) the spectrum."""

    def __init__(self, s, sigma_min=None, message=None):
        self.s = s
        self.sigma_min = sigma_min
        if message is None:
            message = f"is = i*{s!r} is numerically in the spectrum"
            if sigma_min is not None:
                message += f" (sigma_min = {sigma_min:.3e})"
        super().__init__(message)


class UndampedPole(NumericalFailure):
    """s coincides with an undamped frequency; the rank-one path cannot start there."""

    def __init__(self, s, mode_index):
        self.s = s
        self.mode_index = mode_index
        super().__init__(
            f"s = {s!r} coincides with undamped frequency of mode {mode_index}; "
            "offset s or use the dense path"
        )


class KatoDenominatorSingular(NumericalFailure):
    def __init__(self, s, value):
        self.s = s
        self.value = value
        super().__init__(f"|1 + beta^T R beta| = {abs(value):.3e} at s = {s!r}")


class AssemblyError(NumericalFailure):
    """Assembled operator failed its post-assembly identity check."""


class PrecisionExhausted(NumericalFailure):
    """Interval arithmetic could not certify the next partial quotient."""

    def __init__(self, prefix, requested_depth, message=None):
        self.prefix = tuple(prefix)
        self.requested_depth = requested_depth
        if message is None:
            message = (
                f"certified only {max(len(self.prefix) - 1, 0)} of {requested_depth} "
                f"partial quotients: {list(self.prefix)}"
            )
        super().__init__(message)
