# backend/services/scenario_loader.py
import json
import os
from dataclasses import replace
from typing import Iterable, List

from marshmallow import ValidationError

from extensions import logger
from models import (
    Scenario, Event, EventTimeline, EventRealization, ScenarioParseError, ScenarioSchemaError,
)
from schemas import ScenarioSchema, RealizationSchema, convert_numpy_types


def _read_json(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, 'r', encoding='utf-8') as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"Invalid JSON in {os.path.basename(path)}: {e.msg}",
                                 line=e.lineno, column=e.colno) from e


def scenario_from_dict(data) -> Scenario:
    try:
        return ScenarioSchema().load(data)
    except ValidationError as e:
        logger.error(f"Scenario schema violation: {e.messages}")
        raise ScenarioSchemaError(e.messages) from e


def load_scenario(path) -> Scenario:
    """Read a scenario file and build the immutable Scenario.

    Raises ScenarioParseError for malformed JSON (with line and column) and
    ScenarioSchemaError naming the offending fields.
    """
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ScenarioSchemaError({'_schema': ['Scenario file must hold a JSON object.']})
    scenario = scenario_from_dict(data)
    logger.info(f"Loaded scenario '{scenario.name}': {len(scenario.products)} products, "
                f"{len(scenario.sources)} sources, {len(scenario.depots)} depots, "
                f"{len(scenario.events)} events")
    return scenario


def _timeline_out(timeline: EventTimeline):
    values = list(timeline.values)
    if values and all(v == values[0] for v in values):
        return values[0]
    return values


def scenario_to_dict(s: Scenario) -> dict:
    """File representation of a scenario; load_scenario reads it back field for field"""
    costs = {}
    for (p, q), c in sorted(s.interface_cost.items()):
        costs.setdefault(p, {})[q] = c

    data = {
        'name': s.name,
        'notes': list(s.notes),
        'pipeline_volume': s.pipeline_volume,
        'horizon': s.horizon,
        'products': [{'id': p.id, 'name': p.name} for p in s.products],
        'sources': [{
            'id': src.id,
            'tau': src.tau,
            'rate_min': _timeline_out(src.rate_min),
            'rate_max': _timeline_out(src.rate_max),
            'pump_cost': dict(src.pump_cost),
            'supply_min': dict(src.supply_min),
            'supply_max': dict(src.supply_max),
        } for src in s.sources],
        'depots': [{
            'id': d.id,
            'sigma': d.sigma,
            'demand_min': dict(d.demand_min),
            'demand_max': dict(d.demand_max),
            'backorder_cost': dict(d.backorder_cost),
            'delivery_min': _timeline_out(d.delivery_min) if d.delivery_min is not None else None,
            'delivery_max': _timeline_out(d.delivery_max) if d.delivery_max is not None else None,
        } for d in s.depots],
        'old_batches': [{'id': b.id, 'product': b.product, 'volume': b.volume0}
                        for b in s.old_batches],
        'events': [{'id': e.id, 'time': e.time, 'label': e.label} for e in s.events],
        'interface_costs': costs,
        'forbidden_pairs': [list(pair) for pair in sorted(s.forbidden_pairs)],
        'batch_size': {'min': s.batch_size_min, 'max': s.batch_size_max},
        'run_count': s.run_count,
        'new_batch_count': s.new_batch_count,
        'new_batch_slots': [{'behind': b.behind, 'count': b.count} for b in s.new_batch_slots],
        'new_batch_prefix': s.new_batch_prefix,
    }
    return convert_numpy_types(data)


def save_scenario(s: Scenario, path):
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(scenario_to_dict(s), fh, indent=2)
    logger.debug(f"Scenario '{s.name}' written to {path}")


def load_realizations(path) -> List[EventRealization]:
    """Realization file: a JSON list of {event, time, label, overrides}"""
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get('realizations', [])
    try:
        realizations = RealizationSchema(many=True).load(data)
    except ValidationError as e:
        logger.error(f"Realization schema violation: {e.messages}")
        raise ScenarioSchemaError(e.messages) from e
    return sorted(realizations, key=lambda r: r.time)


# =============================================================================
# EVENT REALIZATIONS
# =============================================================================

_SOURCE_PARAMETERS = ('rate_min', 'rate_max')
_DEPOT_PARAMETERS = ('delivery_min', 'delivery_max')


def _split_timeline(s: Scenario, timeline: EventTimeline, times: List[float]) -> EventTimeline:
    values = []
    for a, b in zip(times[:-1], times[1:]):
        e = s.interval_of(a, b, tol=1e-9) or s.interval_at(a)
        values.append(timeline.at(e))
    return EventTimeline(tuple(values))


def apply_realizations(s: Scenario, realizations: Iterable[EventRealization]) -> Scenario:
    """Scenario as it unfolds when the realizations happen.

    Realization instants (and override end times) become events; every timeline is split at
    them and each override sets its parameter on the intervals it covers.
    """
    realizations = sorted(realizations, key=lambda r: r.time)
    if not realizations:
        return s

    events = list(s.events)
    tol = 1e-9

    def add_event(event_id, time, label):
        if time <= tol or time >= s.horizon - tol:
            return
        if any(abs(e.time - time) <= tol for e in events):
            return
        events.append(Event(event_id, time, label))

    for r in realizations:
        if not 0 <= r.time <= s.horizon:
            raise ScenarioSchemaError({'time': [f"Realization '{r.event_id}' at t={r.time} is outside the horizon"]})
        add_event(r.event_id, r.time, r.label or r.event_id)
        for o in r.overrides:
            if o.until is not None:
                add_event(f"{r.event_id}_end", o.until, f"{r.label or r.event_id} ends")
    events.sort(key=lambda e: e.time)
    times = [e.time for e in events]

    sources = {src.id: {'rate_min': _split_timeline(s, src.rate_min, times),
                        'rate_max': _split_timeline(s, src.rate_max, times)}
               for src in s.sources}
    depots = {d.id: {'delivery_min': _split_timeline(s, d.delivery_min, times),
                     'delivery_max': _split_timeline(s, d.delivery_max, times)}
              for d in s.depots if d.delivery_min is not None and d.delivery_max is not None}

    for r in realizations:
        for o in r.overrides:
            if o.terminal in sources and o.parameter in _SOURCE_PARAMETERS:
                params = sources[o.terminal]
            elif o.terminal in depots and o.parameter in _DEPOT_PARAMETERS:
                params = depots[o.terminal]
            else:
                raise ScenarioSchemaError(
                    {'overrides': [f"Unknown terminal/parameter {o.terminal}.{o.parameter}"]})
            until = s.horizon if o.until is None else o.until
            values = list(params[o.parameter].values)
            for e in range(1, len(times)):
                if times[e - 1] >= r.time - tol and times[e] <= until + tol:
                    values[e - 1] = o.value
            params[o.parameter] = EventTimeline(tuple(values))
            logger.debug(f"Override {o.terminal}.{o.parameter} = {o.value} on [{r.time}, {until}]")

    # keep lower bounds consistent with lowered upper bounds
    for params in list(sources.values()) + list(depots.values()):
        lo, hi = ('rate_min', 'rate_max') if 'rate_min' in params else ('delivery_min', 'delivery_max')
        params[lo] = EventTimeline(tuple(min(a, b) for a, b in zip(params[lo].values, params[hi].values)))

    new_sources = tuple(
        replace(src, **sources[src.id]) for src in s.sources)
    new_depots = tuple(
        replace(d, **depots[d.id]) if d.id in depots else d for d in s.depots)
    realized = s.with_changes(events=tuple(events), sources=new_sources, depots=new_depots)
    logger.info(f"Applied {len(realizations)} realization(s): {len(events)} events in realized scenario")
    return realized
