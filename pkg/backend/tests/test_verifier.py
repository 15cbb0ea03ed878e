import inspect
from dataclasses import replace

import numpy as np
import pytest

from services import verifier
from services.verifier import simulate, state_at, mutate, random_mutation_suite, report_to_dict, MUTATION_KINDS


def _edit_run(sch, n, **changes):
    runs = list(sch.runs)
    runs[n] = replace(runs[n], **changes)
    return sch.with_changes(runs=tuple(runs))


def test_nominal_plan_passes(nominal_schedule, case_study):
    report = simulate(nominal_schedule, case_study)
    assert report.passed, [c for c in report.failures]
    assert report.failed_tags == []
    assert report.recomputed_cost.interface == pytest.approx(178)
    assert report.recomputed_cost.pumping == pytest.approx(8175)
    assert report.recomputed_cost.total == pytest.approx(8353)


def test_demand_ledger(nominal_schedule, case_study):
    ledger = {(row.product, row.depot): row for row in simulate(nominal_schedule, case_study).demand_ledger}
    assert set(ledger) == {('A', 'D1'), ('A', 'D2'), ('C', 'D2'), ('B', 'D3')}
    assert ledger[('B', 'D3')].delivered == pytest.approx(100)
    assert all(row.backorder == 0 for row in ledger.values())


def test_state_before_outage(nominal_schedule, case_study):
    state = state_at(nominal_schedule, case_study, 100.0)
    assert state.total_volume == pytest.approx(80)
    assert [(b, p) for b, p, _ in state.segments] == [('N4', 'B'), ('B5', 'A'), ('B4', 'B')]
    assert [v for _, _, v in state.segments] == pytest.approx([30, 10, 40])


def test_state_at_start_and_end(nominal_schedule, case_study):
    start = state_at(nominal_schedule, case_study, 0.0)
    assert [b for b, _, _ in start.far_end_first()] == ['B1', 'B2', 'B4', 'B5']
    end = state_at(nominal_schedule, case_study, 175.0)
    assert [(b, p) for b, p, _ in end.segments] == [('N6', 'B'), ('N5', 'C'), ('N4', 'B')]
    assert [v for _, _, v in end.segments] == pytest.approx([50, 10, 20])


def test_state_inside_a_run(nominal_schedule, case_study):
    # halfway through the first run: 5 of A in, 5 of A out at D2
    state = state_at(nominal_schedule, case_study, 25 / 6)
    volumes = {b: v for b, _, v in state.segments}
    assert volumes['B5'] == pytest.approx(25)
    assert volumes['B2'] == pytest.approx(25)


def test_state_out_of_range(nominal_schedule, case_study):
    with pytest.raises(ValueError):
        state_at(nominal_schedule, case_study, 500.0)


def test_overlapping_runs(nominal_schedule, case_study):
    sch = _edit_run(nominal_schedule, 3, start=50.0)
    assert 'eq1' in simulate(sch, case_study).failed_tags


def test_run_beyond_horizon(nominal_schedule, case_study):
    short = case_study.with_changes(horizon=150.0)
    assert 'eq2' in simulate(nominal_schedule, short).failed_tags


def test_run_straddling_event(nominal_schedule, maintenance_case):
    # the nominal plan pumps S1 across the maintenance window
    report = simulate(nominal_schedule, maintenance_case)
    assert 'eq11' in report.failed_tags
    straddling = _edit_run(nominal_schedule, 4, end=105.0)
    assert 'eq5' in simulate(straddling, maintenance_case).failed_tags


def test_unbalanced_run(nominal_schedule, case_study):
    run = nominal_schedule.runs[0]
    sch = _edit_run(nominal_schedule, 0, deliveries=(replace(run.deliveries[0], volume=9.0),))
    tags = simulate(sch, case_study).failed_tags
    assert 'eq19' in tags
    assert 'eq14' in tags


def test_wrong_injection_product(nominal_schedule, case_study):
    run = nominal_schedule.runs[0]
    sch = _edit_run(nominal_schedule, 0, injections=(replace(run.injections[0], product='C'),))
    assert 'eq30' in simulate(sch, case_study).failed_tags


def test_delivery_before_batch_arrives(nominal_schedule, case_study):
    # B2 sits at [30, 60] and cannot reach D3 during the first run
    run = nominal_schedule.runs[0]
    sch = _edit_run(nominal_schedule, 0, deliveries=(replace(run.deliveries[0], depot='D3'),))
    tags = simulate(sch, case_study).failed_tags
    assert 'eq23' in tags
    assert 'eq34' in tags


def test_unknown_batch(nominal_schedule, case_study):
    run = nominal_schedule.runs[0]
    sch = _edit_run(nominal_schedule, 0, injections=(replace(run.injections[0], batch='X9'),))
    assert 'eq28' in simulate(sch, case_study).failed_tags


def test_forbidden_sequence(nominal_schedule, case_study):
    strict = case_study.with_changes(forbidden_pairs=frozenset({('C', 'B')}))
    assert 'eq29' in simulate(nominal_schedule, strict).failed_tags


def test_supply_overrun(nominal_schedule, case_study):
    # S2 has 60 of B; the reference plan already ships all of it
    run = nominal_schedule.runs[3]
    extra = replace(run.injections[1], volume=41.0)
    sch = _edit_run(nominal_schedule, 3, injections=(run.injections[0], extra))
    report = simulate(sch, case_study)
    assert 'eqSU' in report.failed_tags
    assert any(c.location == 'B from S2' for c in report.failures)


def test_supply_minimum(nominal_schedule, case_study):
    sources = (case_study.sources[0], replace(case_study.sources[1], supply_min={'C': 50.0}))
    report = simulate(nominal_schedule, case_study.with_changes(sources=sources))
    assert report.failed_tags == ['eqSU']


def test_old_batches_must_match(nominal_schedule, case_study):
    swapped = case_study.with_changes(old_batches=(case_study.old_batches[1], case_study.old_batches[0])
                                      + case_study.old_batches[2:])
    assert 'eq35' in simulate(nominal_schedule, swapped).failed_tags


def test_report_serializes_failures_only(nominal_schedule, case_study):
    sch = _edit_run(nominal_schedule, 3, start=50.0)
    data = report_to_dict(simulate(sch, case_study))
    assert data['passed'] is False
    assert 'eq1' in data['failed_tags']
    assert all(not c['passed'] for c in data['checks'])
    assert data['checks_run'] > len(data['checks'])
    assert data['recomputed_cost']['total'] == pytest.approx(8353)


@pytest.mark.parametrize('kind', MUTATION_KINDS)
def test_mutation_changes_schedule(nominal_schedule, case_study, kind):
    mutant = mutate(nominal_schedule, case_study, kind, np.random.default_rng(7))
    assert mutant != nominal_schedule


def test_volume_mutations_are_all_caught(nominal_schedule, case_study):
    assert random_mutation_suite(nominal_schedule, case_study, n=200, seed=1) == 1.0


def test_time_mutations_are_all_caught(nominal_schedule, case_study):
    assert random_mutation_suite(nominal_schedule, case_study, n=30, seed=2, kinds=('time',)) == 1.0


def test_product_mutations_are_all_caught(nominal_schedule, case_study):
    assert random_mutation_suite(nominal_schedule, case_study, n=30, seed=3, kinds=('product',)) == 1.0


def test_mutation_suite_is_seeded(nominal_schedule, case_study):
    kinds = ('depot', 'batch_product')
    a = random_mutation_suite(nominal_schedule, case_study, n=20, seed=5, kinds=kinds)
    b = random_mutation_suite(nominal_schedule, case_study, n=20, seed=5, kinds=kinds, workers=1)
    assert a == b


def test_unknown_mutation_kind(nominal_schedule, case_study):
    with pytest.raises(ValueError):
        mutate(nominal_schedule, case_study, 'gremlin', np.random.default_rng(0))


def test_simulation_does_not_use_the_model():
    assert 'milp_builder' not in inspect.getsource(verifier)
