# backend/services/schedule_builder.py
"""Solution -> physical Schedule, plus the schedule algebra used by the replanner"""
import json
import os
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from marshmallow import ValidationError

from config import Config
from extensions import logger
from models import (
    Scenario, Schedule, PumpingRun, Injection, Delivery, BatchTrajectory, CostBreakdown,
    ScheduleExtractionError, ScheduleFormatError, batch_layout,
)
from schemas import ScheduleSchema, convert_numpy_types
from services.solver_backend import Solution


def _volume_eps(s: Scenario):
    return Config.SCENARIO_VOLUME_TOL * s.pipeline_volume


def extract_schedule(sol: Solution, s: Scenario) -> Schedule:
    """Replay the solved variables as pumping runs, dropping dummy runs and fictitious batches"""
    if not sol.status.has_solution:
        raise ScheduleExtractionError(f"No schedule to extract: solver status {sol.status.value}")

    bad = [(ref.name, value) for ref, value in sol.values.items()
           if ref.is_binary and abs(value - round(value)) > Config.INTEGRALITY_TOL]
    if bad:
        name, value = bad[0]
        logger.error(f"Solution violates integrality on {len(bad)} binaries")
        raise ScheduleExtractionError(f"Binary {name} = {value} is not integral")

    eps = _volume_eps(s)
    layout = batch_layout(s)
    products = {}
    for slot in layout:
        if slot.is_old:
            products[slot.id] = slot.product
            continue
        chosen = [p for p in s.product_ids if sol.value('y', slot.id, p) > 0.5]
        products[slot.id] = chosen[0] if chosen else None

    runs = []
    kept = []
    for k in range(1, s.run_count + 1):
        injections = []
        for slot in layout:
            for src in s.sources:
                q = sol.value('Q', slot.id, src.id, k)
                if q > eps:
                    injections.append(Injection(src.id, slot.id, products[slot.id], q,
                                                sol.value('LS', k, src.id)))
        if not injections:
            continue
        deliveries = []
        for slot in layout:
            for d in s.depots:
                volume = sol.value('D', slot.id, d.id, k)
                if volume > eps:
                    deliveries.append(Delivery(d.id, slot.id, products[slot.id], volume))
        interval = max(s.intervals, key=lambda e: sol.value('b', k, e))
        end = sol.value('C', k)
        start = end - sol.value('L', k)
        runs.append(PumpingRun(len(runs) + 1, start, end, interval, tuple(injections), tuple(deliveries)))
        kept.append(k)

    injected_batches = {inj.batch for run in runs for inj in run.injections}
    real = [slot for slot in layout if slot.is_old or slot.id in injected_batches]
    trajectories = []
    for rank, slot in enumerate(real, start=1):
        snapshots = [(sol.value('F', slot.id, 0), sol.value('W', slot.id, 0))]
        snapshots += [(sol.value('F', slot.id, k), sol.value('W', slot.id, k)) for k in kept]
        trajectories.append(BatchTrajectory(slot.id, f"B{rank}", products[slot.id], slot.is_old,
                                            tuple(snapshots)))

    backorders = {}
    for d in s.depots:
        for p in s.product_ids:
            b = sol.value('B', p, d.id)
            if b > eps:
                backorders[(p, d.id)] = b

    schedule = Schedule(scenario=s.name, runs=tuple(runs), trajectories=tuple(trajectories),
                        backorders=backorders, solver_objective=sol.cost_objective, horizon=s.horizon)
    schedule = schedule.with_changes(cost=cost_breakdown(schedule, s))
    logger.info(f"Extracted {len(runs)} pumping runs ({s.run_count - len(runs)} dummy), "
                f"{len(trajectories)} real batches")
    if sol.cost_objective is not None:
        rel = abs(schedule.cost.total - sol.cost_objective) / max(1.0, abs(sol.cost_objective))
        if rel > 1e-4:
            logger.warning(f"Recomputed cost {schedule.cost.total:.4f} differs from solver objective "
                           f"{sol.cost_objective:.4f}")
    return schedule


def makespan(sch: Schedule) -> float:
    if not sch.runs:
        raise ScheduleExtractionError("Empty schedule has no makespan")
    return max(run.end for run in sch.runs)


def delivered_totals(sch: Schedule) -> Dict[Tuple[str, str], float]:
    totals = {}
    for run in sch.runs:
        for d in run.deliveries:
            totals[(d.product, d.depot)] = totals.get((d.product, d.depot), 0.0) + d.volume
    return totals


def cost_breakdown(sch: Schedule, s: Scenario) -> CostBreakdown:
    """Interface, pumping and backorder costs recomputed from the schedule's actions"""
    interface = 0.0
    real = [t for t in sch.trajectories if t.product is not None]
    for a, b in zip(real[:-1], real[1:]):
        interface += s.cif(a.product, b.product)

    pumping = 0.0
    for run in sch.runs:
        for inj in run.injections:
            pumping += s.source(inj.source).pump_cost.get(inj.product, 0.0) * inj.volume

    delivered = delivered_totals(sch)
    backorder = 0.0
    for d in s.depots:
        for p, demand in d.demand_min.items():
            shortage = max(0.0, demand - delivered.get((p, d.id), 0.0))
            if shortage > _volume_eps(s):
                backorder += d.backorder_cost.get(p, 0.0) * shortage
    return CostBreakdown(interface=interface, pumping=pumping, backorder=backorder)


# =============================================================================
# SCHEDULE ALGEBRA
# =============================================================================

def rebuild_trajectories(order: Sequence[BatchTrajectory], runs: Sequence[PumpingRun],
                         initial: Dict[str, float]) -> Tuple[BatchTrajectory, ...]:
    """Recompute (F, W) snapshots by tiling volumes from the origin after every run.

    ``order`` gives the batches far end first; ``initial`` their volumes at time zero.
    """
    ids = [t.batch for t in order]
    position = {b: n for n, b in enumerate(ids)}
    volumes = np.array([initial.get(b, 0.0) for b in ids], dtype=float)

    def tile(w):
        upper = np.cumsum(w[::-1])[::-1]
        return list(zip(upper.tolist(), w.tolist()))

    history = [tile(volumes)]
    for run in runs:
        for inj in run.injections:
            volumes[position[inj.batch]] += inj.volume
        for d in run.deliveries:
            volumes[position[d.batch]] -= d.volume
        history.append(tile(volumes))

    return tuple(
        BatchTrajectory(t.batch, f"B{n + 1}", t.product, t.is_old,
                        tuple(snapshot[n] for snapshot in history))
        for n, t in enumerate(order)
    )


def initial_volumes(sch: Schedule) -> Dict[str, float]:
    return {t.batch: (t.snapshots[0][1] if t.snapshots else 0.0) for t in sch.trajectories}


def shift_schedule(sch: Schedule, dt: float, s: Optional[Scenario] = None) -> Schedule:
    """Move every run by dt hours; intervals are re-read from `s` when given"""
    runs = []
    for run in sch.runs:
        start, end = run.start + dt, run.end + dt
        interval = run.interval
        if s is not None:
            interval = s.interval_of(start, end, tol=Config.VERIFIER_TIME_TOL) or s.interval_at(start)
        runs.append(replace(run, start=start, end=end, interval=interval))
    return sch.with_changes(runs=tuple(runs))


def split_run(run: PumpingRun, t: float) -> Tuple[PumpingRun, PumpingRun]:
    """Cut a run at instant t; volumes and pumping durations split pro rata"""
    if not run.start < t < run.end:
        raise ValueError(f"Split time {t} is not inside run {run.index} [{run.start}, {run.end}]")
    f = (t - run.start) / run.duration

    def part(fraction, start, end, index):
        return PumpingRun(
            index, start, end, run.interval,
            tuple(replace(i, volume=i.volume * fraction, duration=i.duration * fraction) for i in run.injections),
            tuple(replace(d, volume=d.volume * fraction) for d in run.deliveries))

    return part(f, run.start, t, run.index), part(1.0 - f, t, run.end, run.index + 1)


def merge_batch_order(first: Sequence[BatchTrajectory], second: Sequence[BatchTrajectory]) -> List[BatchTrajectory]:
    """Second order with batches only known to the first slotted back behind their old neighbours"""
    combined = list(second)
    ids = [t.batch for t in combined]
    anchor = -1
    for t in first:
        if t.batch in ids:
            anchor = ids.index(t.batch)
            combined[anchor] = replace(combined[anchor], is_old=t.is_old, product=t.product)
            continue
        combined.insert(anchor + 1, t)
        ids.insert(anchor + 1, t.batch)
        anchor += 1
    return combined


def with_costs(sch: Schedule, s: Scenario) -> Schedule:
    return sch.with_changes(cost=cost_breakdown(sch, s), backorders=backorder_volumes(sch, s),
                            scenario=s.name, horizon=s.horizon)


def prefix_until(sch: Schedule, t: float) -> Schedule:
    """Runs executed by instant t; the run in progress is cut at t"""
    runs = []
    for run in sch.runs:
        if run.end <= t + 1e-9:
            runs.append(run)
        elif run.start < t:
            runs.append(split_run(run, t)[0])
    touched = {a.batch for run in runs for a in run.injections}
    order = [tr for tr in sch.trajectories if tr.is_old or tr.batch in touched]
    trajectories = rebuild_trajectories(order, runs, initial_volumes(sch))
    return sch.with_changes(runs=tuple(runs), trajectories=trajectories, solver_objective=None)


def concatenate(first: Schedule, second: Schedule, s: Scenario) -> Schedule:
    """Runs of `first` followed by runs of `second` (already on the same clock)"""
    runs = [replace(run, index=n) for n, run in enumerate(list(first.runs) + list(second.runs), start=1)]
    order = merge_batch_order(first.trajectories, second.trajectories)
    trajectories = rebuild_trajectories(order, runs, initial_volumes(first))
    schedule = Schedule(scenario=s.name, runs=tuple(runs), trajectories=trajectories,
                        backorders={}, horizon=s.horizon)
    return with_costs(schedule, s)


def backorder_volumes(sch: Schedule, s: Scenario):
    delivered = delivered_totals(sch)
    result = {}
    for d in s.depots:
        for p, demand in d.demand_min.items():
            shortage = demand - delivered.get((p, d.id), 0.0)
            if shortage > _volume_eps(s):
                result[(p, d.id)] = shortage
    return result


# =============================================================================
# FILES
# =============================================================================

def schedule_to_dict(sch: Schedule) -> dict:
    return convert_numpy_types(ScheduleSchema().dump(sch))


def dump_schedule(sch: Schedule, path):
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(schedule_to_dict(sch), fh, indent=2)
    logger.info(f"Schedule written to {path}")


def load_schedule(path) -> Schedule:
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScheduleFormatError({'_json': [f"line {e.lineno}, column {e.colno}: {e.msg}"]}) from e
    try:
        return ScheduleSchema().load(data)
    except ValidationError as e:
        raise ScheduleFormatError(e.messages) from e
