# backend/models.py
"""Domain types shared by every service: scenario data, event timelines and schedules.

Volumes are abstract volume units, times are hours. Old batches are stored far end
first, so a larger batch index always means "nearer the pipeline origin".
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple


# =============================================================================
# ERRORS
# =============================================================================

class PipeschedError(Exception):
    """Base class for every domain failure raised by the scheduler"""


class ScenarioParseError(PipeschedError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ScenarioSchemaError(PipeschedError):
    def __init__(self, messages):
        self.messages = messages
        fields = ', '.join(sorted(str(k) for k in messages)) if isinstance(messages, dict) else ''
        super().__init__(f"Scenario schema violation in: {fields or messages}")


class EventIndexError(PipeschedError, IndexError):
    pass


class SolverNotFoundError(PipeschedError):
    pass


class SolverCrashError(PipeschedError):
    def __init__(self, message, stderr=''):
        self.stderr = stderr
        super().__init__(message)


class SolutionFormatError(PipeschedError):
    def __init__(self, message, last_good_line=None):
        self.last_good_line = last_good_line
        super().__init__(message)


class ScheduleExtractionError(PipeschedError):
    pass


class ScheduleFormatError(PipeschedError):
    def __init__(self, messages):
        self.messages = messages
        super().__init__(f"Schedule file does not match the schedule format: {messages}")


class PlanningError(PipeschedError):
    def __init__(self, message, status=None, stats=None):
        self.status = status
        self.stats = stats or {}
        super().__init__(message)


class ReplanError(PipeschedError):
    def __init__(self, message, prefix=None):
        self.prefix = prefix
        super().__init__(message)


class SolveStatus(str, Enum):
    optimal = 'Optimal'
    feasible = 'Feasible'
    infeasible = 'Infeasible'
    time_limit = 'TimeLimit'
    error = 'Error'

    @property
    def has_solution(self):
        return self in (SolveStatus.optimal, SolveStatus.feasible)


# =============================================================================
# SCENARIO
# =============================================================================

@dataclass(frozen=True)
class EventTimeline:
    """One value per event interval (T_{e-1}, T_e], e = 1 .. |E|-1"""
    values: Tuple[float, ...]

    @classmethod
    def constant(cls, value, intervals):
        return cls(tuple(float(value) for _ in range(intervals)))

    def __len__(self):
        return len(self.values)

    def at(self, e):
        return param_at(self, e)

    def max(self):
        return max(self.values)

    def min(self):
        return min(self.values)


def param_at(timeline: EventTimeline, e: int) -> float:
    """Value of a parameter on the interval that ends at event e (e >= 1)."""
    if e < 1 or e > len(timeline.values):
        raise EventIndexError(
            f"Event index {e} out of range: intervals are numbered 1..{len(timeline.values)}")
    return timeline.values[e - 1]


@dataclass(frozen=True)
class Product:
    id: str
    name: str = ''


@dataclass(frozen=True)
class SourceTerminal:
    id: str
    tau: float
    rate_min: EventTimeline
    rate_max: EventTimeline
    pump_cost: Dict[str, float] = field(default_factory=dict)
    supply_min: Dict[str, float] = field(default_factory=dict)
    supply_max: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class OutputTerminal:
    id: str
    sigma: float
    demand_min: Dict[str, float] = field(default_factory=dict)
    demand_max: Dict[str, float] = field(default_factory=dict)
    backorder_cost: Dict[str, float] = field(default_factory=dict)
    delivery_min: Optional[EventTimeline] = None
    delivery_max: Optional[EventTimeline] = None


@dataclass(frozen=True)
class Event:
    id: str
    time: float
    label: str = ''


@dataclass(frozen=True)
class OldBatch:
    id: str
    product: str
    volume0: float


@dataclass(frozen=True)
class SlotBlock:
    """`count` new-batch indices placed right behind (upstream of) old batch `behind`"""
    behind: str
    count: int


@dataclass(frozen=True)
class Scenario:
    name: str
    pipeline_volume: float
    horizon: float
    products: Tuple[Product, ...]
    sources: Tuple[SourceTerminal, ...]
    depots: Tuple[OutputTerminal, ...]
    old_batches: Tuple[OldBatch, ...]
    events: Tuple[Event, ...]
    interface_cost: Dict[Tuple[str, str], float] = field(default_factory=dict)
    forbidden_pairs: FrozenSet[Tuple[str, str]] = frozenset()
    batch_size_min: float = 0.0
    batch_size_max: float = 0.0
    run_count: int = 1
    new_batch_count: int = 0
    new_batch_slots: Tuple[SlotBlock, ...] = ()
    new_batch_prefix: str = 'N'
    notes: Tuple[str, ...] = ()

    @property
    def intervals(self):
        """Event interval indices e = 1 .. |E|-1"""
        return range(1, len(self.events))

    @property
    def product_ids(self):
        return [p.id for p in self.products]

    def source(self, source_id):
        return next(s for s in self.sources if s.id == source_id)

    def depot(self, depot_id):
        return next(d for d in self.depots if d.id == depot_id)

    def cif(self, p, q):
        if p == q:
            return 0.0
        return self.interface_cost.get((p, q), 0.0)

    def interval_of(self, start, end, tol=0.0):
        """Event interval e with T_{e-1} <= start and end <= T_e, or None"""
        for e in self.intervals:
            if self.events[e - 1].time - tol <= start and end <= self.events[e].time + tol:
                return e
        return None

    def interval_at(self, t):
        """Event interval containing instant t, with T_{e-1} <= t < T_e (last interval closed)"""
        for e in self.intervals:
            if t < self.events[e].time:
                return e
        return len(self.events) - 1

    def delivery_min_at(self, depot, e):
        return param_at(depot.delivery_min, e) if depot.delivery_min is not None else 0.0

    def delivery_max_at(self, depot, e):
        if depot.delivery_max is not None:
            return param_at(depot.delivery_max, e)
        return self.batch_size_max

    def with_changes(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class BatchSlot:
    """One batch index of the model, old or new, in far-end-first order"""
    position: int
    id: str
    is_old: bool
    product: Optional[str] = None
    volume0: float = 0.0
    block: Optional[int] = None
    block_pos: Optional[int] = None


def batch_layout(s: Scenario) -> List[BatchSlot]:
    """Ordered batch indices: old batches with their slot blocks interleaved behind them."""
    blocks = list(s.new_batch_slots)
    if not blocks and s.new_batch_count > 0 and s.old_batches:
        blocks = [SlotBlock(behind=s.old_batches[-1].id, count=s.new_batch_count)]

    layout = []
    counter = 0
    for old in s.old_batches:
        layout.append(BatchSlot(len(layout), old.id, True, old.product, old.volume0))
        for b, block in enumerate(blocks):
            if block.behind != old.id:
                continue
            for t in range(block.count):
                counter += 1
                layout.append(BatchSlot(len(layout), f"{s.new_batch_prefix}{counter}", False,
                                        block=b, block_pos=t))
    return layout


# =============================================================================
# SCHEDULE
# =============================================================================

@dataclass(frozen=True)
class Injection:
    source: str
    batch: str
    product: str
    volume: float
    duration: float


@dataclass(frozen=True)
class Delivery:
    depot: str
    batch: str
    product: str
    volume: float


@dataclass(frozen=True)
class PumpingRun:
    index: int
    start: float
    end: float
    interval: Optional[int]
    injections: Tuple[Injection, ...] = ()
    deliveries: Tuple[Delivery, ...] = ()

    @property
    def duration(self):
        return self.end - self.start

    @property
    def injected(self):
        return sum(inj.volume for inj in self.injections)

    @property
    def delivered(self):
        return sum(d.volume for d in self.deliveries)


@dataclass(frozen=True)
class BatchTrajectory:
    """Batch identity plus its (F, W) snapshot at time zero and after every run"""
    batch: str
    display_id: str
    product: Optional[str]
    is_old: bool
    snapshots: Tuple[Tuple[float, float], ...] = ()


@dataclass(frozen=True)
class CostBreakdown:
    interface: float
    pumping: float
    backorder: float

    @property
    def total(self):
        return self.interface + self.pumping + self.backorder


@dataclass(frozen=True)
class Schedule:
    scenario: str
    runs: Tuple[PumpingRun, ...]
    trajectories: Tuple[BatchTrajectory, ...]
    backorders: Dict[Tuple[str, str], float] = field(default_factory=dict)
    cost: Optional[CostBreakdown] = None
    solver_objective: Optional[float] = None
    horizon: Optional[float] = None

    @property
    def batch_order(self):
        return [t.batch for t in self.trajectories]

    def trajectory(self, batch_id):
        return next(t for t in self.trajectories if t.batch == batch_id)

    def with_changes(self, **changes):
        return replace(self, **changes)


# =============================================================================
# EVENT REALIZATIONS
# =============================================================================

@dataclass(frozen=True)
class ParameterOverride:
    """`parameter` of `terminal` takes `value` from the realization time until `until`"""
    terminal: str
    parameter: str
    value: float
    until: Optional[float] = None


@dataclass(frozen=True)
class EventRealization:
    event_id: str
    time: float
    overrides: Tuple[ParameterOverride, ...] = ()
    label: str = ''
