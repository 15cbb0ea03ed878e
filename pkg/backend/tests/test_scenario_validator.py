from dataclasses import replace

import pytest

from models import Event, OldBatch, SlotBlock
from services.scenario_validator import ScenarioValidator, validate


def test_case_studies_are_valid(case_study, maintenance_case):
    assert validate(case_study) == []
    assert validate(maintenance_case) == []


def test_summary_and_report(case_study):
    result = ScenarioValidator().validate(case_study)
    assert result.valid
    assert result.summary['initial_volume'] == pytest.approx(80)
    assert result.summary['events'] == 2
    assert 'case_study' in result.detailed_report


def test_pipeline_not_full(case_study):
    short = case_study.with_changes(old_batches=case_study.old_batches[:-1])
    violations = validate(short)
    assert any('pipeline not full at t=0' in v for v in violations)


def test_events_must_increase(maintenance_case):
    events = list(maintenance_case.events)
    events[1], events[2] = events[2], events[1]
    violations = validate(maintenance_case.with_changes(events=tuple(events)))
    assert any('out of order' in v for v in violations)


def test_last_event_at_horizon(case_study):
    events = (case_study.events[0], Event('end', 200.0))
    assert any('horizon end' in v for v in validate(case_study.with_changes(events=events)))


def test_rate_bounds_order(case_study):
    s1 = case_study.source('S1')
    bad = replace(s1, rate_min=s1.rate_max, rate_max=s1.rate_min)
    sources = (bad,) + case_study.sources[1:]
    assert any('rate_min <= rate_max' in v for v in validate(case_study.with_changes(sources=sources)))


def test_depot_beyond_pipeline(case_study):
    far = replace(case_study.depots[-1], sigma=90.0)
    depots = case_study.depots[:-1] + (far,)
    assert any('coordinate must lie in (0, PV]' in v for v in validate(case_study.with_changes(depots=depots)))


def test_unknown_old_batch_product(case_study):
    batches = (OldBatch('B1', 'Z', 20.0),) + case_study.old_batches[1:]
    assert any('unknown product Z' in v for v in validate(case_study.with_changes(old_batches=batches)))


@pytest.mark.parametrize('blocks, message', [
    ((SlotBlock('B9', 6),), 'unknown batch B9'),
    ((SlotBlock('B5', 5),), 'sum to 5'),
])
def test_slot_blocks(case_study, blocks, message):
    violations = validate(case_study.with_changes(new_batch_slots=blocks))
    assert any(message in v for v in violations)


def test_missing_backorder_cost_is_warning(case_study):
    depot = replace(case_study.depots[0], backorder_cost={})
    depots = (depot,) + case_study.depots[1:]
    result = ScenarioValidator().validate(case_study.with_changes(depots=depots))
    assert result.valid
    assert any('no backorder cost' in w['error'] for w in result.warnings)
