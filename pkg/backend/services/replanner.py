# backend/services/replanner.py
"""Event-aware planning, the reactive stop-and-resolve baseline and their comparison"""
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import pandas as pd

from config import Config
from extensions import logger
from models import (
    Scenario, Schedule, Event, OldBatch, SlotBlock, EventTimeline, EventRealization, CostBreakdown,
    PlanningError, ReplanError, SolveStatus, param_at,
)
from schemas import ComparisonReportSchema, convert_numpy_types
from services.milp_builder import BuildOptions, build_model, model_stats
from services.scenario_loader import apply_realizations
from services.scenario_validator import validate
from services.schedule_builder import (
    extract_schedule, makespan, delivered_totals, prefix_until, shift_schedule, split_run,
    concatenate, rebuild_trajectories, initial_volumes, with_costs,
)
from services.solver_backend import SolverConfig, solve
from services.verifier import simulate, state_at

BASELINE_MODES = ('resume', 'resolve')


# =============================================================================
# EVENT-AWARE PLANNING
# =============================================================================

def _solve_scenario(s: Scenario, cfg: Optional[SolverConfig], options: Optional[BuildOptions]):
    m = build_model(s, options)
    stats = model_stats(m)
    logger.info(f"Model for '{s.name}': {stats['variables']} variables ({stats['binaries']} binary), "
                f"{stats['constraints']} constraints")
    solution = solve(m, cfg)
    if not solution.status.has_solution:
        return None, solution.status, stats
    if solution.status == SolveStatus.feasible:
        gap = f"{solution.gap:.4%}" if solution.gap is not None else "unknown"
        logger.warning(f"Solver stopped on its limit for '{s.name}' before proving optimality (gap {gap})")
    return extract_schedule(solution, s), solution.status, stats


def plan_event_aware(s: Scenario, cfg: Optional[SolverConfig] = None,
                     options: Optional[BuildOptions] = None) -> Schedule:
    """Plan with every event interval known up front; the result is verified before it is returned"""
    violations = validate(s)
    if violations:
        raise PlanningError(f"Scenario '{s.name}' is invalid: {'; '.join(violations)}")

    schedule, status, stats = _solve_scenario(s, cfg, options)
    if schedule is None:
        logger.error(f"No schedule for '{s.name}': solver status {status.value}")
        raise PlanningError(f"No schedule for '{s.name}': solver status {status.value}",
                            status=status, stats=stats)

    report = simulate(schedule, s)
    if not report.passed:
        logger.error(f"Extracted schedule fails verification: {', '.join(report.failed_tags)}")
        raise PlanningError(f"Extracted schedule fails verification on {', '.join(report.failed_tags)}",
                            status=status, stats=stats)
    if not schedule.runs:
        logger.warning(f"Planned '{s.name}' without pumping: every demand is backordered")
        return schedule
    logger.info(f"Planned '{s.name}': makespan {makespan(schedule):.2f} h, cost {schedule.cost.total:.2f}")
    return schedule


# =============================================================================
# FREEZING
# =============================================================================

def _slice(timeline: Optional[EventTimeline], kept: Sequence[int]):
    if timeline is None:
        return None
    return EventTimeline(tuple(param_at(timeline, e) for e in kept))


def _remaining(bounds, used):
    return {key: max(0.0, value - used.get(key, 0.0)) for key, value in bounds.items()}


def _slot_blocks(segment_ids: List[str], count: int) -> List[SlotBlock]:
    """Spread `count` new-batch indices round-robin behind the residual batches, origin first"""
    if count <= 0 or not segment_ids:
        return []
    origin_first = list(reversed(segment_ids))
    counts = {b: 0 for b in origin_first}
    for n in range(count):
        counts[origin_first[n % len(origin_first)]] += 1
    return [SlotBlock(behind=b, count=counts[b]) for b in segment_ids if counts[b]]


def _free_prefix(prefix: str, count: int, taken) -> str:
    while any(f"{prefix}{n}" in taken for n in range(1, count + 1)):
        prefix += 'r'
    return prefix


def freeze_prefix(sch: Schedule, s: Scenario, t: float) -> Scenario:
    """Residual scenario seen from instant t once the schedule has run up to t.

    Old batches are the pipeline contents at t, demands and supplies shrink by what was
    delivered and injected, and events and the horizon move onto the residual clock.
    """
    ttol = Config.VERIFIER_TIME_TOL
    end = makespan(sch) if sch.runs else 0.0
    if t < -ttol or t > end + ttol:
        raise ReplanError(f"Freeze time {t} is outside [0, {end:g}]")
    t = min(max(t, 0.0), end)

    state = state_at(sch, s, t)
    segments = state.far_end_first()
    old_batches = tuple(OldBatch(batch, product, volume) for batch, product, volume in segments)

    executed = prefix_until(sch, t)
    delivered = delivered_totals(executed)
    injected = {}
    for run in executed.runs:
        for inj in run.injections:
            key = (inj.source, inj.product)
            injected[key] = injected.get(key, 0.0) + inj.volume

    depots = []
    for d in s.depots:
        done = {p: v for (p, j), v in delivered.items() if j == d.id}
        depots.append(replace(d, demand_min=_remaining(d.demand_min, done), demand_max=_remaining(d.demand_max, done)))

    kept = [e for e in s.intervals if s.events[e].time > t + ttol] or [len(s.events) - 1]
    first = s.events[kept[0] - 1]
    head = Event(first.id, 0.0, first.label) if abs(first.time - t) <= ttol else Event(f"freeze_{t:g}", 0.0, 'plan frozen')
    events = (head,) + tuple(Event(s.events[e].id, s.events[e].time - t, s.events[e].label) for e in kept)

    sources = []
    for src in s.sources:
        done = {p: v for (i, p), v in injected.items() if i == src.id}
        sources.append(replace(src, rate_min=_slice(src.rate_min, kept), rate_max=_slice(src.rate_max, kept),
                               supply_min=_remaining(src.supply_min, done),
                               supply_max=_remaining(src.supply_max, done)))
    depots = [replace(d, delivery_min=_slice(d.delivery_min, kept), delivery_max=_slice(d.delivery_max, kept))
              for d in depots]

    started = sum(1 for run in sch.runs if run.start < t - ttol)
    used = {a.batch for run in executed.runs for a in run.injections}
    layout_new = [tr.batch for tr in sch.trajectories if not tr.is_old]
    new_count = max(0, s.new_batch_count - len(used & set(layout_new)))

    segment_ids = [b.id for b in old_batches]
    if not used and all(block.behind in segment_ids for block in s.new_batch_slots):
        blocks = list(s.new_batch_slots)
        new_count = s.new_batch_count
    else:
        blocks = _slot_blocks(segment_ids, new_count)

    taken = set(segment_ids) | {tr.batch for tr in sch.trajectories}
    prefix = _free_prefix(s.new_batch_prefix, new_count, taken)

    residual = s.with_changes(
        name=f"{s.name}@{t:g}", horizon=s.horizon - t, old_batches=old_batches, events=events,
        sources=tuple(sources), depots=tuple(depots), run_count=max(1, s.run_count - started),
        new_batch_count=new_count, new_batch_slots=tuple(blocks), new_batch_prefix=prefix)
    logger.info(f"Froze '{s.name}' at t={t:g}: {len(old_batches)} batches in line, "
                f"{residual.run_count} runs and {new_count} new batches left")
    return residual


# =============================================================================
# REACTIVE BASELINE
# =============================================================================

@dataclass(frozen=True)
class ReplanOutcome:
    schedule: Schedule
    feasible: bool
    message: str = ''
    prefix: Optional[Schedule] = None


def _executable(run, e, s: Scenario) -> bool:
    vtol = Config.VERIFIER_VOLUME_TOL * s.pipeline_volume
    for inj in run.injections:
        src = s.source(inj.source)
        lo, hi = param_at(src.rate_min, e) * inj.duration, param_at(src.rate_max, e) * inj.duration
        if not lo - vtol <= inj.volume <= hi + vtol:
            return False
    for d in run.deliveries:
        depot = s.depot(d.depot)
        if not s.delivery_min_at(depot, e) - vtol <= d.volume <= s.delivery_max_at(depot, e) + vtol:
            return False
    return True


def _shifted(run, dt):
    return replace(run, start=run.start + dt, end=run.end + dt)


def _finish(sch: Schedule, s: Scenario, label: str, prefix: Optional[Schedule] = None) -> ReplanOutcome:
    report = simulate(sch, s)
    if report.passed:
        return ReplanOutcome(sch, True, f"{label}: makespan {makespan(sch):.2f} h", prefix)
    message = f"{label}: schedule fails verification on {', '.join(report.failed_tags)}"
    logger.warning(message)
    return ReplanOutcome(sch, False, message, prefix)


def resume_nominal(nominal: Schedule, s: Scenario, realizations: Sequence[EventRealization]) -> ReplanOutcome:
    """Execute the nominal runs under the realized parameters, idling whenever a run cannot go ahead"""
    realized = apply_realizations(s, realizations)
    ttol = Config.VERIFIER_TIME_TOL
    last = len(realized.events) - 1
    pending = deque(nominal.runs)
    runs = []
    delay = 0.0
    while pending:
        run = _shifted(pending.popleft(), delay)
        e = realized.interval_at(run.start + ttol)
        boundary = realized.events[e].time
        if run.end > boundary + ttol and run.start < boundary - ttol:
            run, tail = split_run(run, boundary)
            pending.appendleft(_shifted(tail, -delay))
        if not _executable(run, e, realized):
            if e == last:
                partial = with_costs(nominal.with_changes(
                    runs=tuple(runs), trajectories=rebuild_trajectories(nominal.trajectories, runs,
                                                                        initial_volumes(nominal))), realized)
                message = f"resume: run {run.index} cannot execute in the last event interval"
                logger.warning(message)
                return ReplanOutcome(partial, False, message, partial)
            pending.appendleft(_shifted(run, -delay))
            logger.info(f"resume: pipeline idle on [{run.start:.2f}, {boundary:.2f}]")
            delay += boundary - run.start
            continue
        runs.append(replace(run, index=len(runs) + 1, interval=e))

    trajectories = rebuild_trajectories(nominal.trajectories, runs, initial_volumes(nominal))
    schedule = with_costs(nominal.with_changes(runs=tuple(runs), trajectories=trajectories,
                                               solver_objective=None), realized)
    return _finish(schedule, realized, 'resume')


def _skip_shutdown(residual: Scenario):
    """Drop a leading interval in which no source may pump; returns the scenario and the idle time"""
    if len(residual.events) <= 2:
        return residual, 0.0
    if any(param_at(src.rate_max, 1) > 0 for src in residual.sources):
        return residual, 0.0
    gap = residual.events[1].time
    kept = list(residual.intervals)[1:]
    events = (Event(residual.events[1].id, 0.0, residual.events[1].label),) + tuple(
        Event(residual.events[e].id, residual.events[e].time - gap, residual.events[e].label) for e in kept)
    sources = tuple(replace(src, rate_min=_slice(src.rate_min, kept), rate_max=_slice(src.rate_max, kept))
                    for src in residual.sources)
    depots = tuple(replace(d, delivery_min=_slice(d.delivery_min, kept), delivery_max=_slice(d.delivery_max, kept))
                   for d in residual.depots)
    return residual.with_changes(events=events, sources=sources, depots=depots,
                                 horizon=residual.horizon - gap), gap


def resolve_residual(nominal: Schedule, s: Scenario, realizations: Sequence[EventRealization],
                     cfg: Optional[SolverConfig] = None, options: Optional[BuildOptions] = None) -> ReplanOutcome:
    """Stop at every realization, freeze what was executed and re-solve the rest"""
    current = nominal
    known = []
    for r in sorted(realizations, key=lambda r: r.time):
        known.append(r)
        if r.time >= makespan(current) - Config.VERIFIER_TIME_TOL:
            logger.info(f"resolve: '{r.event_id}' at t={r.time:g} comes after the plan ends")
            continue
        informed = apply_realizations(s, known)
        prefix = prefix_until(current, r.time)
        residual, idle = _skip_shutdown(freeze_prefix(current, informed, r.time))
        if idle:
            logger.info(f"resolve: total shutdown, pipeline idle on [{r.time:g}, {r.time + idle:g}]")
        rest, status, _ = _solve_scenario(residual, cfg, options)
        if rest is None:
            partial = with_costs(prefix, informed)
            message = f"resolve: residual from t={r.time:g} has no schedule (solver status {status.value})"
            logger.warning(message)
            return ReplanOutcome(partial, False, message, partial)
        rest = shift_schedule(rest, r.time + idle, informed)
        current = concatenate(shift_schedule(prefix, 0.0, informed), rest, informed)

    realized = apply_realizations(s, realizations)
    return _finish(with_costs(shift_schedule(current, 0.0, realized), realized), realized, 'resolve')


def plan_reactive_baseline(s: Scenario, realizations: Sequence[EventRealization], mode: str = 'resume',
                           cfg: Optional[SolverConfig] = None,
                           options: Optional[BuildOptions] = None) -> ReplanOutcome:
    """Plan without knowledge of the events, then react when they happen"""
    if mode not in BASELINE_MODES:
        raise ValueError(f"Unknown baseline mode '{mode}' (expected one of {', '.join(BASELINE_MODES)})")
    nominal = plan_event_aware(s, cfg, options)
    if not realizations:
        return ReplanOutcome(nominal, True, 'no realized events')
    if mode == 'resume':
        return resume_nominal(nominal, s, realizations)
    return resolve_residual(nominal, s, realizations, cfg, options)


# =============================================================================
# COMPARISON
# =============================================================================

@dataclass(frozen=True)
class Regime:
    name: str
    makespan: float
    cost: Optional[CostBreakdown]
    run_count: int
    feasible: bool = True


@dataclass(frozen=True)
class ComparisonReport:
    event_aware: Regime
    baseline: Regime

    @property
    def makespan_delta(self):
        """Hours the event-aware plan saves over the baseline"""
        return self.baseline.makespan - self.event_aware.makespan

    @property
    def cost_delta(self):
        if self.event_aware.cost is None or self.baseline.cost is None:
            return None
        return self.baseline.cost.total - self.event_aware.cost.total

    @property
    def run_delta(self):
        return self.baseline.run_count - self.event_aware.run_count

    @property
    def percent_of_baseline(self):
        return 100.0 * self.makespan_delta / self.baseline.makespan if self.baseline.makespan else 0.0

    @property
    def percent_of_event_aware(self):
        return 100.0 * self.makespan_delta / self.event_aware.makespan if self.event_aware.makespan else 0.0


def _regime(name, sch: Schedule, s: Scenario, feasible=True) -> Regime:
    span = makespan(sch) if sch.runs else 0.0
    return Regime(name, span, with_costs(sch, s).cost, len(sch.runs), feasible)


def compare(a: Schedule, b: Schedule, s: Scenario, b_feasible: bool = True,
            names=('event-aware', 'reactive')) -> ComparisonReport:
    """Event-aware schedule `a` against baseline `b`, both costed on `s`"""
    return ComparisonReport(_regime(names[0], a, s), _regime(names[1], b, s, b_feasible))


def comparison_table(report: ComparisonReport) -> pd.DataFrame:
    rows = []
    for regime in (report.event_aware, report.baseline):
        cost = regime.cost
        rows.append({
            'Regime': regime.name,
            'Makespan (h)': round(regime.makespan, 2),
            'Runs': regime.run_count,
            'Interface': round(cost.interface, 2) if cost else None,
            'Pumping': round(cost.pumping, 2) if cost else None,
            'Backorder': round(cost.backorder, 2) if cost else None,
            'Total cost': round(cost.total, 2) if cost else None,
            'Feasible': 'yes' if regime.feasible else 'no',
        })
    return pd.DataFrame(rows)


def render_comparison(report: ComparisonReport) -> str:
    lines = [comparison_table(report).to_string(index=False), '']
    lines.append(f"Makespan saved: {report.makespan_delta:.2f} h")
    lines.append(f"  {report.percent_of_baseline:.2f}% of the baseline makespan")
    lines.append(f"  {report.percent_of_event_aware:.2f}% of the event-aware makespan (improved-plan convention)")
    if report.cost_delta is not None:
        lines.append(f"Cost saved: {report.cost_delta:.2f}")
    lines.append(f"Run count difference: {report.run_delta}")
    if not report.baseline.feasible:
        lines.append("WARNING: the baseline did not reach a feasible complete schedule; its figures cover the "
                     "executed prefix only")
    return '\n'.join(lines) + '\n'


def compare_regimes(s: Scenario, realizations: Sequence[EventRealization], mode: str = 'resume',
                    cfg: Optional[SolverConfig] = None, options: Optional[BuildOptions] = None):
    """Plan both regimes concurrently; returns (event-aware schedule, baseline outcome, report)"""
    realized = apply_realizations(s, realizations)
    with ThreadPoolExecutor(max_workers=2) as pool:
        aware_future = pool.submit(plan_event_aware, realized, cfg, options)
        baseline_future = pool.submit(plan_reactive_baseline, s, realizations, mode, cfg, options)
        aware = aware_future.result()
        outcome = baseline_future.result()
    report = compare(aware, outcome.schedule, realized, b_feasible=outcome.feasible,
                     names=('event-aware', f"reactive ({mode})"))
    logger.info(f"Event-aware {report.event_aware.makespan:.2f} h vs {report.baseline.name} "
                f"{report.baseline.makespan:.2f} h")
    return aware, outcome, report


def comparison_to_dict(report: ComparisonReport) -> dict:
    return convert_numpy_types(ComparisonReportSchema().dump(report))
