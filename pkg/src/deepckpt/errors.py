"""Exception hierarchy shared by every deepckpt module."""

from __future__ import annotations


class DeepCkptError(Exception):
    """Base class for all errors raised by this package."""


# -- machine description ---------------------------------------------------

class SpecError(DeepCkptError, ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class RouteError(DeepCkptError, LookupError):
    pass


# -- NAM device ------------------------------------------------------------

class CapacityError(DeepCkptError):
    pass


class NotRegistered(DeepCkptError):
    pass


class GroupError(DeepCkptError):
    pass


class OverlapError(DeepCkptError):
    """Two in-flight puts target overlapping NAM ranges."""


class SlotStateError(DeepCkptError):
    """Illegal ring-slot transition."""


# -- aggregation container ---------------------------------------------------

class AggregateError(DeepCkptError):
    pass


class AlignError(AggregateError, ValueError):
    pass


class ChunkOverflowError(AggregateError, OverflowError):
    pass


class DoubleWrite(AggregateError):
    pass


class NotAContainer(AggregateError):
    pass


class UnknownRank(AggregateError, LookupError):
    pass


class CorruptChunk(AggregateError):
    def __init__(self, rank: int, offset: int, reason: str = "crc mismatch"):
        super().__init__(f"rank {rank} at offset {offset}: {reason}")
        self.rank = rank
        self.offset = offset


# -- checkpoint engine -------------------------------------------------------

class StrategyUnsupported(DeepCkptError):
    pass


class TierFull(DeepCkptError):
    pass


class EmptyInput(DeepCkptError, ValueError):
    pass


class HopError(DeepCkptError, ValueError):
    pass


class FlushError(DeepCkptError):
    pass


# -- recovery ----------------------------------------------------------------

class UnknownNode(DeepCkptError, LookupError):
    pass


class TooManyErasures(DeepCkptError):
    pass


class CrcMismatch(DeepCkptError):
    pass


class PlanStale(DeepCkptError):
    pass


# -- task resiliency ---------------------------------------------------------

class RetriesExhausted(DeepCkptError):
    pass


class LogCorrupt(DeepCkptError):
    """A task log entry disagrees with the data it describes."""


class NoSurvivors(DeepCkptError):
    pass


class GraphError(DeepCkptError, ValueError):
    pass


# -- bench -------------------------------------------------------------------

class ScenarioError(DeepCkptError, ValueError):
    pass


class Infeasible(DeepCkptError):
    pass
