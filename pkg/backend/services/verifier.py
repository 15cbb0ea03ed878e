# backend/services/verifier.py
"""Plug-flow replay of a Schedule against its Scenario.

The simulation only uses scenario data and the schedule's own actions: batches are
tiled from the origin after every run and each physical or contractual law is checked
on the result. Nothing here depends on the optimisation model.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from config import Config
from extensions import logger
from models import Scenario, Schedule, CostBreakdown, param_at
from schemas import VerificationReportSchema, convert_numpy_types


@dataclass(frozen=True)
class PipelineState:
    time: float
    segments: Tuple[Tuple[str, Optional[str], float], ...]  # origin first

    @property
    def total_volume(self):
        return sum(v for _, _, v in self.segments)

    def far_end_first(self):
        return tuple(reversed(self.segments))


@dataclass(frozen=True)
class Check:
    tag: str
    passed: bool
    location: str = ''
    detail: str = ''


@dataclass(frozen=True)
class LedgerRow:
    product: str
    depot: str
    delivered: float
    demand_min: float
    demand_max: float
    backorder: float


@dataclass
class VerificationReport:
    checks: List[Check] = field(default_factory=list)
    recomputed_cost: Optional[CostBreakdown] = None
    demand_ledger: List[LedgerRow] = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    @property
    def failed_tags(self):
        return sorted({c.tag for c in self.failures})

    def check(self, tag, ok, location='', detail=''):
        self.checks.append(Check(tag, bool(ok), location, '' if ok else detail))
        return ok


class _Replay:
    """Mutable pipeline contents during one simulation, far end first"""

    def __init__(self, sch: Schedule, s: Scenario):
        self.order = [t.batch for t in sch.trajectories]
        self.position = {b: n for n, b in enumerate(self.order)}
        self.products = {t.batch: t.product for t in sch.trajectories}
        old = {b.id: b.volume0 for b in s.old_batches}
        self.volumes = np.array([old.get(b, 0.0) if t.is_old else 0.0
                                 for b, t in zip(self.order, sch.trajectories)], dtype=float)

    def upper(self):
        """Upper coordinate of every batch: everything behind it, origin side"""
        return np.cumsum(self.volumes[::-1])[::-1]

    def apply(self, run, fraction=1.0):
        for inj in run.injections:
            if inj.batch in self.position:
                self.volumes[self.position[inj.batch]] += inj.volume * fraction
        for d in run.deliveries:
            if d.batch in self.position:
                self.volumes[self.position[d.batch]] -= d.volume * fraction

    def state(self, t):
        segments = tuple((b, self.products[b], float(v))
                         for b, v in zip(reversed(self.order), self.volumes[::-1]) if v > 1e-9)
        return PipelineState(t, segments)


# =============================================================================
# SIMULATION
# =============================================================================

def _check_initial_state(sch, s, report, vtol):
    old_in_schedule = [t for t in sch.trajectories if t.is_old]
    expected = list(s.old_batches)
    report.check('eq35', [t.batch for t in old_in_schedule] == [b.id for b in expected],
                 'initial state', f"old batches {[t.batch for t in old_in_schedule]} "
                                  f"do not match {[b.id for b in expected]} far end first")
    upper = s.pipeline_volume
    for b in expected:
        t = next((t for t in old_in_schedule if t.batch == b.id), None)
        if t is None:
            continue
        report.check('eq36', t.product == b.product, f"batch {b.id}",
                     f"carries {t.product}, scenario says {b.product}")
        if t.snapshots:
            f0, w0 = t.snapshots[0]
            report.check('eq35', abs(f0 - upper) <= vtol and abs(w0 - b.volume0) <= vtol, f"batch {b.id}",
                         f"initial (F, W) = ({f0:g}, {w0:g}), expected ({upper:g}, {b.volume0:g})")
        upper -= b.volume0


def _check_batches(sch, s, report):
    injected = {inj.batch for run in sch.runs for inj in run.injections}
    known = {t.batch for t in sch.trajectories}
    for t in sch.trajectories:
        report.check('eq27', t.product in s.product_ids, f"batch {t.display_id}",
                     f"product {t.product!r} is not a scenario product")
        if not t.is_old:
            report.check('eq28', t.batch in injected, f"batch {t.display_id}", "new batch is never injected")
    for run in sch.runs:
        for inj in run.injections:
            report.check('eq28', inj.batch in known, f"run {run.index}", f"injection into unknown batch {inj.batch}")
        for d in run.deliveries:
            report.check('eq28', d.batch in known, f"run {run.index}", f"delivery from unknown batch {d.batch}")

    old_ids = {b.id for b in s.old_batches}
    real = list(sch.trajectories)
    for a, b in zip(real[:-1], real[1:]):
        if a.batch in old_ids and b.batch in old_ids:
            continue
        report.check('eq29', (a.product, b.product) not in s.forbidden_pairs,
                     f"batches {a.display_id}/{b.display_id}", f"forbidden sequence {a.product} -> {b.product}")


def _check_timing(run, prev_end, s, report, ttol):
    where = f"run {run.index}"
    report.check('eq1', run.start >= prev_end - ttol and run.start <= run.end + ttol and run.start >= -ttol,
                 where, f"[{run.start:.4f}, {run.end:.4f}] overlaps or precedes the previous run ending {prev_end:.4f}")
    report.check('eq2', run.end <= s.horizon + ttol, where, f"ends at {run.end:.4f} after horizon {s.horizon:g}")
    e = s.interval_at(run.start + ttol)
    t_lo, t_hi = s.events[e - 1].time, s.events[e].time
    report.check('eq4', run.start >= t_lo - ttol, where, f"starts before event at {t_lo:g}")
    report.check('eq5', run.end <= t_hi + ttol, where,
                 f"[{run.start:.4f}, {run.end:.4f}] straddles event {s.events[e].id} at {t_hi:g}")
    return e


def _check_injections(run, e, replay, upper, s, report, vtol, ttol):
    where = f"run {run.index}"
    sources = [inj.source for inj in run.injections]
    report.check('eq6', len(sources) == len(set(sources)), where, "a source injects more than one batch")
    for inj in run.injections:
        src = s.source(inj.source)
        at = f"{where}, {inj.source} -> {inj.batch}"
        report.check('eq8', s.batch_size_min - vtol <= inj.volume <= s.batch_size_max + vtol and inj.volume > 0,
                     at, f"injection {inj.volume:g} outside [{s.batch_size_min:g}, {s.batch_size_max:g}]")
        report.check('eq9', -ttol <= inj.duration <= run.duration + ttol, at,
                     f"pumping time {inj.duration:.4f} exceeds run length {run.duration:.4f}")
        vb_min, vb_max = param_at(src.rate_min, e), param_at(src.rate_max, e)
        report.check('eq11', vb_min * inj.duration - vtol <= inj.volume <= vb_max * inj.duration + vtol, at,
                     f"{inj.volume:g} over {inj.duration:.4f} h breaks rate bounds [{vb_min:g}, {vb_max:g}] "
                     f"of interval {e}")
        if inj.batch in replay.position:
            n = replay.position[inj.batch]
            report.check('eq30', inj.product == replay.products[inj.batch], at,
                         f"injects {inj.product} into a batch of {replay.products[inj.batch]}")
            report.check('eq20', upper[n] >= src.tau - vtol, at,
                         f"batch upper coordinate {upper[n]:g} has not reached the source at {src.tau:g}")
            report.check('eq21', upper[n] - replay.volumes[n] <= src.tau + vtol, at,
                         f"batch lower coordinate {upper[n] - replay.volumes[n]:g} has passed the source at {src.tau:g}")


def _check_deliveries(run, e, replay, upper, s, report, vtol):
    where = f"run {run.index}"
    injected_by_batch = {}
    for inj in run.injections:
        injected_by_batch.setdefault(inj.batch, []).append(inj)
    for d in run.deliveries:
        depot = s.depot(d.depot)
        at = f"{where}, {d.batch} -> {d.depot}"
        upstream = sum(inj.volume for inj in run.injections if s.source(inj.source).tau < depot.sigma)
        report.check('eq13', d.volume <= upstream + vtol, at,
                     f"delivers {d.volume:g} but upstream sources inject only {upstream:g}")
        d_min, d_max = s.delivery_min_at(depot, e), s.delivery_max_at(depot, e)
        report.check('eq22', d_min - vtol <= d.volume <= d_max + vtol, at,
                     f"delivery {d.volume:g} outside [{d_min:g}, {d_max:g}] on interval {e}")
        if d.batch not in replay.position:
            continue
        n = replay.position[d.batch]
        report.check('eq32', d.product == replay.products[d.batch], at,
                     f"delivers {d.product} from a batch of {replay.products[d.batch]}")
        report.check('eq24', upper[n] - replay.volumes[n] <= depot.sigma + vtol, at,
                     f"batch lower coordinate {upper[n] - replay.volumes[n]:g} is already past {depot.sigma:g}")
        cumulative = sum(x.volume for x in run.deliveries
                         if x.batch == d.batch and s.depot(x.depot).sigma <= depot.sigma)
        pushed = sum(inj.volume for inj in injected_by_batch.get(d.batch, [])
                     if s.source(inj.source).tau < depot.sigma)
        room = depot.sigma - (upper[n] - replay.volumes[n]) + pushed
        report.check('eq26', cumulative <= room + vtol, at,
                     f"deliveries up to {d.depot} total {cumulative:g}, only {room:g} can pass")


def _check_after(run, replay, before_upper, s, report, vtol):
    where = f"run {run.index}"
    injected = sum(i.volume for i in run.injections)
    delivered = sum(d.volume for d in run.deliveries)
    report.check('eq19', abs(injected - delivered) <= vtol, where,
                 f"injected {injected:g} but delivered {delivered:g}")
    total = float(replay.volumes.sum())
    report.check('eq18', abs(total - s.pipeline_volume) <= vtol, where,
                 f"pipeline holds {total:g}, volume is {s.pipeline_volume:g}")
    upper = replay.upper()
    for n, b in enumerate(replay.order):
        at = f"{where}, batch {b}"
        report.check('eq12', replay.volumes[n] >= -vtol, at, f"volume {replay.volumes[n]:g} is negative")
        report.check('eq15', upper[n] >= before_upper[n] - vtol, at,
                     f"moves backwards from {before_upper[n]:g} to {upper[n]:g}")
        report.check('eq16', upper[n] <= s.pipeline_volume + vtol, at, f"upper coordinate {upper[n]:g} beyond PV")
        report.check('eq17', upper[n] - replay.volumes[n] >= -vtol, at, "lower coordinate below origin")
    for d in run.deliveries:
        if d.batch in replay.position:
            n = replay.position[d.batch]
            sigma = s.depot(d.depot).sigma
            report.check('eq23', upper[n] >= sigma - vtol, f"{where}, {d.batch} -> {d.depot}",
                         f"batch upper coordinate {upper[n]:g} never reaches depot at {sigma:g}")
    return upper


def _check_trajectory(sch, step, replay, upper, report, vtol):
    for n, t in enumerate(sch.trajectories):
        if step >= len(t.snapshots):
            continue
        f, w = t.snapshots[step]
        ok = abs(f - upper[n]) <= vtol and abs(w - replay.volumes[n]) <= vtol
        report.check('eq14', ok, f"snapshot {step}, batch {t.display_id}",
                     f"reported (F, W) = ({f:g}, {w:g}), replay gives ({upper[n]:g}, {replay.volumes[n]:g})")


def _check_supply(sch, s, report, vtol):
    shipped = {}
    for run in sch.runs:
        for inj in run.injections:
            shipped[(inj.source, inj.product)] = shipped.get((inj.source, inj.product), 0.0) + inj.volume
    for src in s.sources:
        for p, hi in src.supply_max.items():
            got = shipped.get((src.id, p), 0.0)
            report.check('eqSU', got <= hi + vtol, f"{p} from {src.id}", f"ships {got:g}, supply is {hi:g}")
        for p, lo in src.supply_min.items():
            got = shipped.get((src.id, p), 0.0)
            report.check('eqSU', got >= lo - vtol, f"{p} from {src.id}", f"ships {got:g}, at least {lo:g} required")


def _ledger_and_cost(sch, s, report, vtol):
    delivered = {}
    for run in sch.runs:
        for d in run.deliveries:
            delivered[(d.product, d.depot)] = delivered.get((d.product, d.depot), 0.0) + d.volume

    backorder_cost = 0.0
    for depot in s.depots:
        for p in s.product_ids:
            got = delivered.get((p, depot.id), 0.0)
            lo, hi = depot.demand_min.get(p, 0.0), depot.demand_max.get(p, 0.0)
            if lo == 0 and hi == 0 and got == 0:
                continue
            report.check('eq34', got <= hi + vtol, f"{p} at {depot.id}", f"delivered {got:g} exceeds maximum {hi:g}")
            shortage = max(0.0, lo - got)
            if shortage <= vtol:
                shortage = 0.0
            backorder_cost += depot.backorder_cost.get(p, 0.0) * shortage
            report.demand_ledger.append(LedgerRow(p, depot.id, got, lo, hi, shortage))

    interface = sum(s.cif(a.product, b.product) for a, b in zip(sch.trajectories[:-1], sch.trajectories[1:]))
    pumping = sum(s.source(i.source).pump_cost.get(i.product, 0.0) * i.volume
                  for run in sch.runs for i in run.injections)
    report.recomputed_cost = CostBreakdown(interface=interface, pumping=pumping, backorder=backorder_cost)


def simulate(sch: Schedule, s: Scenario) -> VerificationReport:
    """Replay every run and check each law; malformed input shows up as failed checks"""
    vtol = Config.VERIFIER_VOLUME_TOL * s.pipeline_volume
    ttol = Config.VERIFIER_TIME_TOL
    report = VerificationReport()

    _check_initial_state(sch, s, report, vtol)
    _check_batches(sch, s, report)

    replay = _Replay(sch, s)
    upper = replay.upper()
    _check_trajectory(sch, 0, replay, upper, report, vtol)
    prev_end = 0.0
    for step, run in enumerate(sch.runs, start=1):
        e = _check_timing(run, prev_end, s, report, ttol)
        _check_injections(run, e, replay, upper, s, report, vtol, ttol)
        _check_deliveries(run, e, replay, upper, s, report, vtol)
        replay.apply(run)
        upper = _check_after(run, replay, upper, s, report, vtol)
        _check_trajectory(sch, step, replay, upper, report, vtol)
        prev_end = max(prev_end, run.end)

    _check_supply(sch, s, report, vtol)
    _ledger_and_cost(sch, s, report, vtol)
    if report.passed:
        logger.debug(f"Schedule for '{s.name}' verified: {len(report.checks)} checks passed")
    else:
        logger.debug(f"Schedule for '{s.name}' failed verification: {', '.join(report.failed_tags)}")
    return report


def state_at(sch: Schedule, s: Scenario, t: float) -> PipelineState:
    """Pipeline contents at instant t; a run in progress is applied pro rata"""
    ttol = Config.VERIFIER_TIME_TOL
    end = max((run.end for run in sch.runs), default=0.0)
    if t < -ttol or t > end + ttol:
        raise ValueError(f"t={t} is outside [0, {end:g}]")
    replay = _Replay(sch, s)
    for run in sch.runs:
        if run.end <= t + 1e-12:
            replay.apply(run)
        elif run.start < t:
            replay.apply(run, (t - run.start) / run.duration)
    return replay.state(t)


def report_to_dict(report: VerificationReport) -> dict:
    return convert_numpy_types(VerificationReportSchema().dump(report))


# =============================================================================
# MUTATION TESTING
# =============================================================================

MUTATION_KINDS = ('volume', 'time', 'product', 'depot', 'batch_product')


def _replace_run(sch, n, run):
    runs = list(sch.runs)
    runs[n] = run
    return sch.with_changes(runs=tuple(runs))


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


def mutate(sch: Schedule, s: Scenario, kind: str, rng, delta: float = 1.0) -> Schedule:
    """One random corruption of `sch`; `rng` is a numpy Generator"""
    if kind not in MUTATION_KINDS:
        raise ValueError(f"Unknown mutation kind '{kind}' (expected one of {', '.join(MUTATION_KINDS)})")
    if not sch.runs:
        raise ValueError("Cannot mutate a schedule without runs")

    if kind == 'volume':
        actions = [(n, 'injections', a) for n, run in enumerate(sch.runs) for a in range(len(run.injections))]
        actions += [(n, 'deliveries', a) for n, run in enumerate(sch.runs) for a in range(len(run.deliveries))]
        n, attr, a = _pick(rng, actions)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        items = list(getattr(sch.runs[n], attr))
        items[a] = replace(items[a], volume=items[a].volume + sign * delta)
        return _replace_run(sch, n, replace(sch.runs[n], **{attr: tuple(items)}))

    if kind == 'time':
        n = int(rng.integers(len(sch.runs)))
        run = sch.runs[n]
        previous_end = sch.runs[n - 1].end if n > 0 else 0.0
        return _replace_run(sch, n, replace(run, start=previous_end - delta))

    if kind == 'product':
        actions = [(n, a) for n, run in enumerate(sch.runs) for a in range(len(run.injections))]
        n, a = _pick(rng, actions)
        items = list(sch.runs[n].injections)
        others = [p for p in s.product_ids if p != items[a].product]
        items[a] = replace(items[a], product=_pick(rng, others))
        return _replace_run(sch, n, replace(sch.runs[n], injections=tuple(items)))

    if kind == 'depot':
        actions = [(n, a) for n, run in enumerate(sch.runs) for a in range(len(run.deliveries))]
        n, a = _pick(rng, actions)
        items = list(sch.runs[n].deliveries)
        others = [d.id for d in s.depots if d.id != items[a].depot]
        items[a] = replace(items[a], depot=_pick(rng, others))
        return _replace_run(sch, n, replace(sch.runs[n], deliveries=tuple(items)))

    new_batches = [t for t in sch.trajectories if not t.is_old]
    target = _pick(rng, new_batches)
    product = _pick(rng, [p for p in s.product_ids if p != target.product])

    def relabel(action):
        return replace(action, product=product) if action.batch == target.batch else action

    runs = tuple(replace(run, injections=tuple(relabel(i) for i in run.injections),
                         deliveries=tuple(relabel(d) for d in run.deliveries)) for run in sch.runs)
    trajectories = tuple(replace(t, product=product) if t.batch == target.batch else t for t in sch.trajectories)
    return sch.with_changes(runs=runs, trajectories=trajectories)


def random_mutation_suite(sch: Schedule, s: Scenario, n: int = 100, seed: int = 0,
                          kinds=('volume',), delta: float = 1.0, workers: Optional[int] = None) -> float:
    """Fraction of `n` seeded random mutants that the simulation rejects"""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    mutants = [mutate(sch, s, kinds[int(rng.integers(len(kinds)))], rng, delta) for _ in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        caught = sum(1 for report in pool.map(lambda m: simulate(m, s), mutants) if not report.passed)
    rate = caught / n
    logger.info(f"Mutation suite ({', '.join(kinds)}): {caught}/{n} mutants rejected")
    return rate
