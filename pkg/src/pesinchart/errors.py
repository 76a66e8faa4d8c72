"""Exception hierarchy.

Numeric failures map to CLI exit code 3, configuration problems to 2.
"""

from __future__ import annotations


class PesinError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(PesinError):
    pass


class NumericFailure(PesinError):
    """A computation could not produce a trustworthy result."""


class CocycleOverflow(NumericFailure):
    pass


class DegenerateSplitting(NumericFailure):
    pass


class NonSummable(NumericFailure):
    pass


class IllConditioned(NumericFailure):
    pass


class WindowTooShort(NumericFailure):
    pass


class DomainEscape(NumericFailure):
    pass


class NotContractive(NumericFailure):
    pass


class NoConvergence(NumericFailure):
    pass


class ImplicitSolveFailure(NumericFailure):
    pass


class AdmissibilityLost(NumericFailure):
    def __init__(self, message: str, parameter: str = "", measured: float = 0.0, bound: float = 0.0):
        super().__init__(message)
        self.parameter = parameter
        self.measured = measured
        self.bound = bound


class NoVertexFound(NumericFailure):
    def __init__(self, message: str, index: int = 0):
        super().__init__(message)
        self.index = index


class EmptyAlphabet(NumericFailure):
    pass


class InfeasibleInput(NumericFailure):
    pass


class SplicingImpossible(NumericFailure):
    pass


class NotSameOrbit(NumericFailure):
    pass
