"""Exception types raised across the package."""

from __future__ import annotations


class DsaError(Exception):
    """Base class for all package errors."""


# gossip / spectral
class GossipError(DsaError, ValueError):
    pass


class RowSumViolation(GossipError):
    pass


class NegativeEntry(GossipError):
    pass


class Reducible(GossipError):
    pass


class Periodic(GossipError):
    pass


class ConvergenceFailure(DsaError, ArithmeticError):
    pass


class NotPositiveDefinite(DsaError, ValueError):
    pass


# schedule
class IndexBeforeStart(DsaError, IndexError):
    pass


class BurnInNotReached(DsaError, ValueError):
    pass


# engine
class NonFinite(DsaError, FloatingPointError):
    """Iterate overflowed or became NaN/Inf.

    ``step`` is the iteration at which the guard fired and ``partial`` holds
    the trace recorded up to the last finite checkpoint (may be ``None``).
    """

    def __init__(self, message: str, step: int | None = None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial

    @property
    def last_record(self):
        if self.partial is None or len(self.partial) == 0:
            return None
        return self.partial[-1]


class SingularA(DsaError, ArithmeticError):
    pass


# decomposition / estimation
class XStarNotConsensus(DsaError, ValueError):
    pass


class EmptyAfterBurnIn(DsaError, ValueError):
    pass


class TooFewPoints(DsaError, ValueError):
    pass


class TauNotIncreasing(DsaError, ValueError):
    pass


# td
class ReducibleChain(DsaError, ValueError):
    pass


class PeriodicChain(DsaError, ValueError):
    pass


class RankDeficientFeatures(DsaError, ValueError):
    pass


# harness
class AssumptionVeto(DsaError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(DsaError, ValueError):
    pass
