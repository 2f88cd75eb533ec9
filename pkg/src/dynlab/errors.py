"""Exception hierarchy shared by all dynlab modules."""


class DynlabError(Exception):
    """Base class for every error raised by the library."""


class OutOfValidity(DynlabError):
    pass


class FloatRangeOverflow(DynlabError):
    """A value left the double range; ``log_value`` carries its logarithm when known."""

    def __init__(self, message, log_value=None):
        super().__init__(message)
        self.log_value = log_value


class Unsupported(DynlabError):
    pass


class NearZeroDivision(DynlabError):
    pass


class NormalizationError(DynlabError):
    pass


class NonConvergence(DynlabError):
    pass


class ZeroOnContour(DynlabError):
    pass


class NonIntegerResidue(DynlabError):
    pass


class InsufficientData(DynlabError):
    pass


class DegenerateT(DynlabError):
    pass


class BudgetExceeded(DynlabError):
    pass


class InjectivityViolation(DynlabError):
    pass


class BadRadius(DynlabError):
    pass


class EmptyCandidate(DynlabError):
    pass


class EmptyAfterExclusion(DynlabError):
    pass


class NoConvergence(DynlabError):
    pass


class WrongBranch(DynlabError):
    pass


class CriticalSeed(DynlabError):
    pass


class DepthUnreachable(DynlabError):
    pass


class PreconditionViolated(DynlabError):
    """A 'sufficiently large r' inequality failed at runtime; ``check`` names it."""

    def __init__(self, message, check=None):
        super().__init__(message)
        self.check = check


class DegenerateFit(DynlabError):
    pass


class EmptyWindow(DynlabError):
    pass


class ResolutionCap(DynlabError):
    pass


class ConfigError(DynlabError):
    pass
