import numpy as np
from marshmallow import Schema, fields, validate, post_load, ValidationError, EXCLUDE, RAISE

from models import (
    Scenario, Product, SourceTerminal, OutputTerminal, Event, EventTimeline, OldBatch,
    SlotBlock, Schedule, PumpingRun, Injection, Delivery, BatchTrajectory, CostBreakdown,
    EventRealization, ParameterOverride,
)


def convert_numpy_types(obj):
    """Recursively convert numpy types to native Python types for JSON serialization"""
    if isinstance(obj, dict):
        return {key: convert_numpy_types(value) for key, value in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [convert_numpy_types(item) for item in obj]
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif hasattr(obj, 'item'):  # numpy scalars
        return obj.item()
    else:
        return obj


class TimelineField(fields.Field):
    """Event-indexed parameter: a scalar, or one value per event interval"""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        values = list(value.values) if isinstance(value, EventTimeline) else value
        if isinstance(values, list) and values and all(v == values[0] for v in values):
            return values[0]
        return values

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, bool):
            raise ValidationError('Expected a number or a list of numbers.')
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, list) and value and all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return [float(v) for v in value]
        raise ValidationError('Expected a number or a non-empty list of numbers.')


def VolumeMap(**kwargs):
    """product id -> nonnegative volume or unit cost"""
    return fields.Dict(keys=fields.Str(), values=fields.Float(validate=validate.Range(min=0)), **kwargs)


class ProductSchema(Schema):
    id = fields.Str(required=True)
    name = fields.Str(load_default='')


class SourceSchema(Schema):
    id = fields.Str(required=True)
    tau = fields.Float(required=True)
    rate_min = TimelineField(load_default=0.0)
    rate_max = TimelineField(required=True)
    pump_cost = VolumeMap(load_default=dict)
    supply_min = VolumeMap(load_default=dict)
    supply_max = VolumeMap(load_default=dict)


class DepotSchema(Schema):
    id = fields.Str(required=True)
    sigma = fields.Float(required=True)
    demand_min = VolumeMap(load_default=dict)
    demand_max = VolumeMap(load_default=None, allow_none=True)
    backorder_cost = VolumeMap(load_default=dict)
    delivery_min = TimelineField(load_default=None, allow_none=True)
    delivery_max = TimelineField(load_default=None, allow_none=True)


class OldBatchSchema(Schema):
    id = fields.Str(required=True)
    product = fields.Str(required=True)
    volume = fields.Float(required=True)


class EventSchema(Schema):
    id = fields.Str(required=True)
    time = fields.Float(required=True)
    label = fields.Str(load_default='')


class BatchSizeSchema(Schema):
    min = fields.Float(load_default=0.0)
    max = fields.Float(load_default=None, allow_none=True)


class SlotBlockSchema(Schema):
    behind = fields.Str(required=True)
    count = fields.Int(required=True, validate=validate.Range(min=0))


class ScenarioSchema(Schema):
    """Scenario file. Old batches are listed far end first; free text goes under `notes`."""

    class Meta:
        unknown = RAISE

    name = fields.Str(load_default='scenario')
    notes = fields.List(fields.Str(), load_default=list)
    pipeline_volume = fields.Float(required=True)
    horizon = fields.Float(required=True)
    products = fields.List(fields.Nested(ProductSchema), required=True)
    sources = fields.List(fields.Nested(SourceSchema), required=True)
    depots = fields.List(fields.Nested(DepotSchema), required=True)
    old_batches = fields.List(fields.Nested(OldBatchSchema), required=True)
    events = fields.List(fields.Nested(EventSchema), required=True,
                         validate=validate.Length(min=2))
    interface_costs = fields.Dict(keys=fields.Str(),
                                  values=fields.Dict(keys=fields.Str(), values=fields.Float()),
                                  load_default=dict)
    forbidden_pairs = fields.List(fields.List(fields.Str(), validate=validate.Length(equal=2)),
                                  load_default=list)
    batch_size = fields.Nested(BatchSizeSchema, load_default=lambda: {'min': 0.0, 'max': None})
    run_count = fields.Int(required=True)
    new_batch_count = fields.Int(required=True)
    new_batch_slots = fields.List(fields.Nested(SlotBlockSchema), load_default=list)
    new_batch_prefix = fields.Str(load_default='N')

    @post_load
    def make_scenario(self, data, **kwargs):
        intervals = len(data['events']) - 1
        pv = data['pipeline_volume']
        q_max = data['batch_size'].get('max')
        q_max = pv if q_max is None else q_max

        def timeline(value, field_name, default):
            if value is None:
                value = default
            if isinstance(value, list):
                if len(value) != intervals:
                    raise ValidationError(
                        f'Expected {intervals} values (one per event interval), got {len(value)}.',
                        field_name=field_name)
                return EventTimeline(tuple(value))
            return EventTimeline.constant(value, intervals)

        sources = tuple(
            SourceTerminal(
                id=s['id'], tau=s['tau'],
                rate_min=timeline(s['rate_min'], 'sources', 0.0),
                rate_max=timeline(s['rate_max'], 'sources', 0.0),
                pump_cost=dict(s['pump_cost']),
                supply_min=dict(s['supply_min']),
                supply_max=dict(s['supply_max']),
            )
            for s in data['sources']
        )
        depots = tuple(sorted((
            OutputTerminal(
                id=d['id'], sigma=d['sigma'],
                demand_min=dict(d['demand_min']),
                demand_max=dict(d['demand_max'] if d['demand_max'] is not None else d['demand_min']),
                backorder_cost=dict(d['backorder_cost']),
                delivery_min=timeline(d['delivery_min'], 'depots', 0.0),
                delivery_max=timeline(d['delivery_max'], 'depots', q_max),
            )
            for d in data['depots']), key=lambda d: d.sigma))

        interface_cost = {
            (p, q): cost
            for p, row in data['interface_costs'].items()
            for q, cost in row.items()
        }
        return Scenario(
            name=data['name'],
            pipeline_volume=pv,
            horizon=data['horizon'],
            products=tuple(Product(**p) for p in data['products']),
            sources=sources,
            depots=depots,
            old_batches=tuple(OldBatch(b['id'], b['product'], b['volume']) for b in data['old_batches']),
            events=tuple(Event(**e) for e in data['events']),
            interface_cost=interface_cost,
            forbidden_pairs=frozenset(tuple(pair) for pair in data['forbidden_pairs']),
            batch_size_min=data['batch_size'].get('min', 0.0),
            batch_size_max=q_max,
            run_count=data['run_count'],
            new_batch_count=data['new_batch_count'],
            new_batch_slots=tuple(SlotBlock(**b) for b in data['new_batch_slots']),
            new_batch_prefix=data['new_batch_prefix'],
            notes=tuple(data['notes']),
        )


# =============================================================================
# SCHEDULE
# =============================================================================

class InjectionSchema(Schema):
    source = fields.Str(required=True)
    batch = fields.Str(required=True)
    product = fields.Str(required=True)
    volume = fields.Float(required=True)
    duration = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return Injection(**data)


class DeliverySchema(Schema):
    depot = fields.Str(required=True)
    batch = fields.Str(required=True)
    product = fields.Str(required=True)
    volume = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return Delivery(**data)


class RunSchema(Schema):
    class Meta:
        unknown = EXCLUDE

    index = fields.Int(required=True)
    start = fields.Float(required=True)
    end = fields.Float(required=True)
    interval = fields.Int(allow_none=True, load_default=None)
    duration = fields.Method('get_duration', dump_only=True)
    start_rounded = fields.Method('get_start_rounded', dump_only=True)
    end_rounded = fields.Method('get_end_rounded', dump_only=True)
    injections = fields.List(fields.Nested(InjectionSchema), load_default=list)
    deliveries = fields.List(fields.Nested(DeliverySchema), load_default=list)

    def get_duration(self, run):
        return run.end - run.start

    def get_start_rounded(self, run):
        return round(run.start, 2)

    def get_end_rounded(self, run):
        return round(run.end, 2)

    @post_load
    def make(self, data, **kwargs):
        return PumpingRun(
            index=data['index'], start=data['start'], end=data['end'], interval=data['interval'],
            injections=tuple(data['injections']), deliveries=tuple(data['deliveries']))


class TrajectorySchema(Schema):
    batch = fields.Str(required=True)
    display_id = fields.Str(required=True)
    product = fields.Str(allow_none=True, load_default=None)
    is_old = fields.Bool(required=True)
    snapshots = fields.List(fields.List(fields.Float(), validate=validate.Length(equal=2)),
                            load_default=list)

    @post_load
    def make(self, data, **kwargs):
        return BatchTrajectory(
            batch=data['batch'], display_id=data['display_id'], product=data['product'],
            is_old=data['is_old'], snapshots=tuple(tuple(s) for s in data['snapshots']))


class CostSchema(Schema):
    class Meta:
        unknown = EXCLUDE

    interface = fields.Float(required=True)
    pumping = fields.Float(required=True)
    backorder = fields.Float(required=True)
    total = fields.Method('get_total', dump_only=True)

    def get_total(self, cost):
        return cost.total

    @post_load
    def make(self, data, **kwargs):
        return CostBreakdown(**data)


class BackorderSchema(Schema):
    product = fields.Str(required=True)
    depot = fields.Str(required=True)
    volume = fields.Float(required=True)


class ScheduleSchema(Schema):
    class Meta:
        unknown = EXCLUDE

    scenario = fields.Str(required=True)
    makespan = fields.Method('get_makespan', dump_only=True)
    makespan_rounded = fields.Method('get_makespan_rounded', dump_only=True)
    runs = fields.List(fields.Nested(RunSchema), required=True)
    trajectories = fields.List(fields.Nested(TrajectorySchema), required=True)
    backorders = fields.Method('dump_backorders', deserialize='load_backorders', load_default=dict)
    cost = fields.Nested(CostSchema, allow_none=True, load_default=None)
    solver_objective = fields.Float(allow_none=True, load_default=None)
    horizon = fields.Float(allow_none=True, load_default=None)

    def get_makespan(self, schedule):
        return max((r.end for r in schedule.runs), default=0.0)

    def get_makespan_rounded(self, schedule):
        return round(self.get_makespan(schedule), 2)

    def dump_backorders(self, schedule):
        return [{'product': p, 'depot': j, 'volume': v}
                for (p, j), v in sorted(schedule.backorders.items())]

    def load_backorders(self, value):
        rows = BackorderSchema(many=True).load(value)
        return {(r['product'], r['depot']): r['volume'] for r in rows}

    @post_load
    def make(self, data, **kwargs):
        return Schedule(
            scenario=data['scenario'], runs=tuple(data['runs']),
            trajectories=tuple(data['trajectories']), backorders=data['backorders'],
            cost=data['cost'], solver_objective=data['solver_objective'],
            horizon=data['horizon'])


# =============================================================================
# REALIZATIONS AND REPORTS
# =============================================================================

class OverrideSchema(Schema):
    terminal = fields.Str(required=True)
    parameter = fields.Str(required=True, validate=validate.OneOf(
        ['rate_min', 'rate_max', 'delivery_min', 'delivery_max']))
    value = fields.Float(required=True)
    until = fields.Float(allow_none=True, load_default=None)

    @post_load
    def make(self, data, **kwargs):
        return ParameterOverride(**data)


class RealizationSchema(Schema):
    event = fields.Str(required=True, attribute='event_id', data_key='event')
    time = fields.Float(required=True)
    label = fields.Str(load_default='')
    overrides = fields.List(fields.Nested(OverrideSchema), load_default=list)

    @post_load
    def make(self, data, **kwargs):
        return EventRealization(event_id=data['event_id'], time=data['time'],
                                overrides=tuple(data['overrides']), label=data['label'])


class CheckSchema(Schema):
    tag = fields.Str()
    passed = fields.Bool()
    location = fields.Str()
    detail = fields.Str()


class LedgerRowSchema(Schema):
    product = fields.Str()
    depot = fields.Str()
    delivered = fields.Float()
    demand_min = fields.Float()
    demand_max = fields.Float()
    backorder = fields.Float()


class VerificationReportSchema(Schema):
    passed = fields.Bool()
    failed_tags = fields.Method('get_failed_tags')
    checks = fields.Method('get_failed_checks')
    checks_run = fields.Method('get_checks_run')
    recomputed_cost = fields.Nested(CostSchema)
    demand_ledger = fields.List(fields.Nested(LedgerRowSchema))

    def get_failed_tags(self, report):
        return sorted({c.tag for c in report.checks if not c.passed})

    def get_failed_checks(self, report):
        return CheckSchema(many=True).dump([c for c in report.checks if not c.passed])

    def get_checks_run(self, report):
        return len(report.checks)


class RegimeSchema(Schema):
    name = fields.Str()
    makespan = fields.Float()
    makespan_rounded = fields.Method('get_rounded')
    cost = fields.Nested(CostSchema, allow_none=True)
    run_count = fields.Int()
    feasible = fields.Bool()

    def get_rounded(self, regime):
        return round(regime.makespan, 2)


class ComparisonReportSchema(Schema):
    event_aware = fields.Nested(RegimeSchema)
    baseline = fields.Nested(RegimeSchema)
    makespan_delta = fields.Float()
    cost_delta = fields.Float(allow_none=True)
    run_delta = fields.Int()
    percent_of_baseline = fields.Float()
    percent_of_event_aware = fields.Float()
