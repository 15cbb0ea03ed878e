from datetime import datetime
from typing import List

import numpy as np

from config import Config
from extensions import logger
from models import Scenario


class ScenarioValidationResult:
    def __init__(self):
        self.valid = True
        self.errors = []
        self.warnings = []
        self.summary = {}
        self.detailed_report = ""

    @property
    def violations(self) -> List[str]:
        return [f"{e['field']}: {e['error']}" for e in self.errors]


class ScenarioValidator:
    """Checks the invariants every planning module relies on"""

    def __init__(self, volume_tol=None):
        self.volume_tol = Config.SCENARIO_VOLUME_TOL if volume_tol is None else volume_tol

    def validate(self, s: Scenario) -> ScenarioValidationResult:
        result = ScenarioValidationResult()
        result.summary = {
            'name': s.name,
            'pipeline_volume': s.pipeline_volume,
            'horizon': s.horizon,
            'products': len(s.products),
            'sources': len(s.sources),
            'depots': len(s.depots),
            'old_batches': len(s.old_batches),
            'events': len(s.events),
            'run_count': s.run_count,
            'new_batch_count': s.new_batch_count,
            'initial_volume': float(np.sum([b.volume0 for b in s.old_batches])),
        }

        self._check_ids(s, result)
        self._check_events(s, result)
        self._check_pipeline(s, result)
        self._check_sources(s, result)
        self._check_depots(s, result)
        self._check_costs(s, result)
        self._check_sizes(s, result)
        self._check_slots(s, result)

        result.valid = len(result.errors) == 0
        result.detailed_report = self._generate_detailed_report(result, s.name)
        if result.valid:
            logger.info(f"Scenario '{s.name}' is valid ({len(result.warnings)} warnings)")
        else:
            logger.warning(f"Scenario '{s.name}' has {len(result.errors)} violations")
        return result

    def _error(self, result, field, error, value=''):
        result.errors.append({'field': field, 'error': error, 'value': value})

    def _warning(self, result, field, error, value=''):
        result.warnings.append({'field': field, 'error': error, 'value': value})

    def _check_ids(self, s, result):
        for name, items in (('products', s.products), ('sources', s.sources),
                            ('depots', s.depots), ('events', s.events)):
            ids = [item.id for item in items]
            for dup in sorted({i for i in ids if ids.count(i) > 1}):
                self._error(result, name, f'Duplicate id "{dup}"', dup)

        batch_ids = [b.id for b in s.old_batches]
        for dup in sorted({i for i in batch_ids if batch_ids.count(i) > 1}):
            self._error(result, 'old_batches', f'Duplicate id "{dup}"', dup)
        if not s.products:
            self._error(result, 'products', 'At least one product is required')
        if not s.sources:
            self._error(result, 'sources', 'At least one source terminal is required')
        if not s.depots:
            self._error(result, 'depots', 'At least one depot is required')

    def _check_events(self, s, result):
        if len(s.events) < 2:
            self._error(result, 'events', 'At least the start and end events are required')
            return
        if s.events[0].time != 0:
            self._error(result, 'events', 'First event must occur at time 0', s.events[0].time)
        if abs(s.events[-1].time - s.horizon) > 1e-9:
            self._error(result, 'events', 'Last event must occur at the horizon end',
                        s.events[-1].time)
        for a, b in zip(s.events[:-1], s.events[1:]):
            if not b.time > a.time:
                self._error(result, 'events',
                            f'Events out of order: {a.id} at {a.time} is not before {b.id} at {b.time}')

    def _check_pipeline(self, s, result):
        pv = s.pipeline_volume
        if pv <= 0:
            self._error(result, 'pipeline_volume', 'Pipeline volume must be positive', pv)
        if s.horizon <= 0:
            self._error(result, 'horizon', 'Horizon must be positive', s.horizon)
        if s.run_count < 1:
            self._error(result, 'run_count', 'At least one pumping run is required', s.run_count)
        if s.new_batch_count < 0:
            self._error(result, 'new_batch_count', 'Must be nonnegative', s.new_batch_count)

        known = set(s.product_ids)
        for b in s.old_batches:
            if b.volume0 <= 0:
                self._error(result, 'old_batches', f'Batch {b.id} must have a positive volume', b.volume0)
            if b.product not in known:
                self._error(result, 'old_batches', f'Batch {b.id} carries unknown product {b.product}')
        total = sum(b.volume0 for b in s.old_batches)
        if abs(total - pv) > self.volume_tol * pv:
            self._error(result, 'old_batches',
                        f'pipeline not full at t=0: old batches hold {total:g}, pipeline volume is {pv:g}',
                        total)
        if s.depots and max(d.sigma for d in s.depots) > pv:
            self._error(result, 'pipeline_volume', 'Pipeline volume is smaller than the farthest depot')

    def _check_sources(self, s, result):
        known = set(s.product_ids)
        for src in s.sources:
            if not 0 <= src.tau < s.pipeline_volume:
                self._error(result, 'sources', f'Source {src.id} coordinate must lie in [0, PV)', src.tau)
            for name, timeline in (('rate_min', src.rate_min), ('rate_max', src.rate_max)):
                if len(timeline) != len(s.events) - 1:
                    self._error(result, 'sources',
                                f'Source {src.id} {name} has {len(timeline)} values for '
                                f'{len(s.events) - 1} event intervals')
            for e, (lo, hi) in enumerate(zip(src.rate_min.values, src.rate_max.values), start=1):
                if lo < 0 or lo > hi:
                    self._error(result, 'sources',
                                f'Source {src.id} needs 0 <= rate_min <= rate_max on interval {e}',
                                f'{lo}..{hi}')
            for name, mapping in (('pump_cost', src.pump_cost), ('supply_min', src.supply_min),
                                  ('supply_max', src.supply_max)):
                for p, v in mapping.items():
                    if p not in known:
                        self._error(result, 'sources', f'Source {src.id} {name} names unknown product {p}')
                    if v < 0:
                        self._error(result, 'sources', f'Source {src.id} {name}[{p}] is negative', v)
            for p, lo in src.supply_min.items():
                hi = src.supply_max.get(p)
                if hi is not None and lo > hi:
                    self._error(result, 'sources', f'Source {src.id} supply_min[{p}] exceeds supply_max')

    def _check_depots(self, s, result):
        known = set(s.product_ids)
        sigmas = [d.sigma for d in s.depots]
        if sigmas != sorted(sigmas):
            self._error(result, 'depots', 'Depots must be sorted by coordinate')
        supplied = {p for src in s.sources for p in src.pump_cost} | \
                   {p for src in s.sources for p, v in src.supply_max.items() if v > 0}
        for d in s.depots:
            if not 0 < d.sigma <= s.pipeline_volume:
                self._error(result, 'depots', f'Depot {d.id} coordinate must lie in (0, PV]', d.sigma)
            for p in set(d.demand_min) | set(d.demand_max):
                if p not in known:
                    self._error(result, 'depots', f'Depot {d.id} demands unknown product {p}')
                lo, hi = d.demand_min.get(p, 0.0), d.demand_max.get(p, 0.0)
                if lo > hi:
                    self._error(result, 'depots', f'Depot {d.id} demand_min[{p}] exceeds demand_max', f'{lo}>{hi}')
                if hi > 0 and d.backorder_cost.get(p, 0.0) == 0:
                    self._warning(result, 'depots', f'Depot {d.id} has no backorder cost for demanded product {p}')
                if hi > 0 and supplied and p not in supplied:
                    self._warning(result, 'depots', f'Product {p} is demanded at {d.id} but no source lists it')
            for p, c in d.backorder_cost.items():
                if c < 0:
                    self._error(result, 'depots', f'Depot {d.id} backorder_cost[{p}] is negative', c)
            if d.delivery_min is not None and d.delivery_max is not None:
                for e, (lo, hi) in enumerate(zip(d.delivery_min.values, d.delivery_max.values), start=1):
                    if lo < 0 or lo > hi:
                        self._error(result, 'depots',
                                    f'Depot {d.id} needs 0 <= delivery_min <= delivery_max on interval {e}')
                if len(d.delivery_max) != len(s.events) - 1:
                    self._error(result, 'depots', f'Depot {d.id} delivery bounds do not match event intervals')

    def _check_costs(self, s, result):
        known = set(s.product_ids)
        for (p, q), c in s.interface_cost.items():
            if p not in known or q not in known:
                self._error(result, 'interface_costs', f'Unknown product pair ({p}, {q})')
            if c < 0:
                self._error(result, 'interface_costs', f'Interface cost ({p}, {q}) is negative', c)
        for p, q in s.forbidden_pairs:
            if p == q:
                self._error(result, 'forbidden_pairs', f'Pair ({p}, {q}) repeats a product')
            if p not in known or q not in known:
                self._error(result, 'forbidden_pairs', f'Unknown product pair ({p}, {q})')

    def _check_sizes(self, s, result):
        if not 0 <= s.batch_size_min <= s.batch_size_max:
            self._error(result, 'batch_size', 'Need 0 <= min <= max',
                        f'{s.batch_size_min}..{s.batch_size_max}')

    def _check_slots(self, s, result):
        if not s.new_batch_slots:
            return
        old_ids = {b.id for b in s.old_batches}
        for block in s.new_batch_slots:
            if block.behind not in old_ids:
                self._error(result, 'new_batch_slots', f'Slot block behind unknown batch {block.behind}')
        total = sum(b.count for b in s.new_batch_slots)
        if total != s.new_batch_count:
            self._error(result, 'new_batch_slots',
                        f'Slot counts sum to {total}, new_batch_count is {s.new_batch_count}')

    def _generate_detailed_report(self, result: ScenarioValidationResult, name: str) -> str:
        report_lines = [
            f"Scenario Validation Report for: {name}",
            f"Generated on: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
            "=" * 60,
            "",
            "SUMMARY:",
            f"Scenario Status: {'PASSED' if result.valid else 'FAILED'}",
            f"Pipeline Volume: {result.summary.get('pipeline_volume', 0):g}",
            f"Initial Volume: {result.summary.get('initial_volume', 0):g}",
            f"Horizon: {result.summary.get('horizon', 0):g} h",
            f"Products / Sources / Depots: {result.summary.get('products', 0)} / "
            f"{result.summary.get('sources', 0)} / {result.summary.get('depots', 0)}",
            f"Events: {result.summary.get('events', 0)}",
            f"Errors: {len(result.errors)}",
            f"Warnings: {len(result.warnings)}",
            ""
        ]

        if result.errors:
            report_lines.extend(["ERRORS (Must be fixed):", "-" * 40])
            for i, error in enumerate(result.errors, 1):
                report_lines.append(f"{i}. Field '{error['field']}':")
                report_lines.append(f"   {error['error']}")
                if error['value'] != '':
                    report_lines.append(f"   Value: '{error['value']}'")
                report_lines.append("")

        if result.warnings:
            report_lines.extend(["WARNINGS (Recommended to review):", "-" * 35])
            for i, warning in enumerate(result.warnings, 1):
                report_lines.append(f"{i}. Field '{warning['field']}':")
                report_lines.append(f"   {warning['error']}")
                report_lines.append("")

        return "\n".join(report_lines)


def validate(s: Scenario) -> List[str]:
    """Violations of the scenario invariants; an empty list means valid"""
    return ScenarioValidator().validate(s).violations
