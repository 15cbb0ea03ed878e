import json
import os
import sys
from typing import NamedTuple

import numpy as np
import pytest

# Add backend directory to Python path
BACKEND = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, BACKEND)

from models import (  # noqa: E402
    Scenario, Schedule, PumpingRun, Injection, Delivery, BatchTrajectory, batch_layout,
)
from services.milp_builder import BuildOptions, ModelInstance, VarRef, build_model  # noqa: E402
from services.scenario_loader import load_scenario, load_realizations, scenario_from_dict  # noqa: E402
from services.schedule_builder import extract_schedule, rebuild_trajectories, with_costs  # noqa: E402
from services.solver_backend import Solution, SolverConfig, solve  # noqa: E402

ARTIFACTS = os.path.join(BACKEND, 'artifacts')


def _has_milp():
    try:
        from scipy.optimize import milp  # noqa: F401
    except ImportError:
        return False
    return True


def pytest_configure(config):
    config.addinivalue_line('markers', 'solver: needs a MILP solver (scipy.optimize.milp)')


def pytest_collection_modifyitems(config, items):
    if _has_milp():
        return
    skip = pytest.mark.skip(reason='scipy.optimize.milp is not available')
    for item in items:
        if 'solver' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def artifact():
    def path(name):
        return os.path.join(ARTIFACTS, name)
    return path


@pytest.fixture
def case_study():
    return load_scenario(os.path.join(ARTIFACTS, 'case_study.json'))


@pytest.fixture
def maintenance_case():
    return load_scenario(os.path.join(ARTIFACTS, 'case_study_maintenance.json'))


@pytest.fixture
def realizations():
    return load_realizations(os.path.join(ARTIFACTS, 'maintenance_realization.json'))


def _run(index, start, end, injections, deliveries):
    return PumpingRun(
        index, start, end, 1,
        tuple(Injection(src, batch, product, volume, volume / 1.2) for src, batch, product, volume in injections),
        tuple(Delivery(depot, batch, product, volume) for depot, batch, product, volume in deliveries))


def nominal_runs():
    """Nine-run no-event plan of the case study inside the supplies, all pumping at 1.2 units/h"""
    return [
        _run(1, 0.0, 25 / 3, [('S1', 'B5', 'A', 10)], [('D2', 'B2', 'A', 10)]),
        _run(2, 25 / 3, 25.0, [('S2', 'B2', 'A', 20)], [('D2', 'B2', 'A', 20)]),
        _run(3, 25.0, 175 / 3, [('S1', 'B5', 'A', 40), ('S2', 'N1', 'C', 40)],
             [('D1', 'B5', 'A', 40), ('D2', 'B2', 'A', 20), ('D2', 'N1', 'C', 20)]),
        _run(4, 175 / 3, 275 / 3, [('S1', 'N4', 'B', 20), ('S2', 'B4', 'B', 40)],
             [('D1', 'B5', 'A', 20), ('D2', 'N1', 'C', 20), ('D3', 'B1', 'B', 20)]),
        _run(5, 275 / 3, 100.0, [('S1', 'N4', 'B', 10)], [('D3', 'B4', 'B', 10)]),
        _run(6, 100.0, 350 / 3, [('S1', 'N5', 'C', 20)], [('D3', 'B4', 'B', 20)]),
        _run(7, 350 / 3, 125.0, [('S1', 'N5', 'C', 10)], [('D2', 'B5', 'A', 10)]),
        _run(8, 125.0, 425 / 3, [('S1', 'N6', 'B', 10), ('S2', 'N4', 'B', 20)],
             [('D3', 'B4', 'B', 20), ('D3', 'N4', 'B', 10)]),
        _run(9, 425 / 3, 175.0, [('S1', 'N6', 'B', 40)], [('D2', 'N5', 'C', 20), ('D3', 'N4', 'B', 20)]),
    ]


@pytest.fixture
def nominal_schedule(case_study):
    order = [BatchTrajectory(batch, '', product, is_old)
             for batch, product, is_old in (('B1', 'B', True), ('B2', 'A', True), ('N1', 'C', False),
                                            ('B4', 'B', True), ('B5', 'A', True), ('N4', 'B', False),
                                            ('N5', 'C', False), ('N6', 'B', False))]
    runs = nominal_runs()
    initial = {b.id: b.volume0 for b in case_study.old_batches}
    schedule = Schedule(scenario=case_study.name, runs=tuple(runs),
                        trajectories=rebuild_trajectories(order, runs, initial), horizon=case_study.horizon)
    return with_costs(schedule, case_study)


def values_from_schedule(sch, s):
    """Every model variable for a schedule whose batch ids follow the model's layout"""
    layout = batch_layout(s)
    ids = [slot.id for slot in layout]
    products = {t.batch: t.product for t in sch.trajectories}
    values = {}

    def put(kind, *indices, value):
        values[VarRef(kind, tuple(indices))] = float(value)

    volumes = np.array([slot.volume0 for slot in layout], dtype=float)

    def tile(k):
        upper = np.cumsum(volumes[::-1])[::-1]
        for n, i in enumerate(ids):
            put('F', i, k, value=upper[n])
            put('W', i, k, value=volumes[n])

    tile(0)
    for i in ids:
        for p in s.product_ids:
            put('y', i, p, value=1.0 if products.get(i) == p else 0.0)
    for run in sch.runs:
        k = run.index
        put('C', k, value=run.end)
        put('L', k, value=run.duration)
        put('b', k, 1, value=1.0)
        pumping = 0.0
        for inj in run.injections:
            put('LS', k, inj.source, value=inj.duration)
            put('Q', inj.batch, inj.source, k, value=inj.volume)
            put('v', inj.batch, inj.source, k, value=1.0)
            put('QP', inj.batch, inj.source, inj.product, k, value=inj.volume)
            pumping += s.source(inj.source).pump_cost[inj.product] * inj.volume
            volumes[ids.index(inj.batch)] += inj.volume
        for d in run.deliveries:
            put('D', d.batch, d.depot, k, value=d.volume)
            put('x', d.batch, d.depot, k, value=1.0)
            put('DP', d.batch, d.depot, d.product, k, value=d.volume)
            volumes[ids.index(d.batch)] -= d.volume
        put('PC', k, value=pumping)
        tile(k)

    real = [i for i in ids if products.get(i)]
    for a, b in zip(real[:-1], real[1:]):
        put('RC', a, value=s.cif(products[a], products[b]))
    return values


@pytest.fixture
def nominal_values(case_study, nominal_schedule):
    return values_from_schedule(nominal_schedule, case_study)


# =============================================================================
# SMALL RANDOM SCENARIOS
# =============================================================================

def small_scenario_data(seed, events=None):
    """Seeded two-source line of 40 units: 2-3 depots, 2-3 products, at most 5 runs.

    ``events`` is the event count including start and end (2 or 3); by default it
    alternates with the seed. With 3 events S1 may be stopped in the middle interval.
    """
    rng = np.random.default_rng(seed)
    products = ['A', 'B', 'C'][:int(rng.integers(2, 4))]
    events = 2 + seed % 2 if events is None else events
    horizon = 120.0
    times = [0.0, horizon] if events == 2 else [0.0, float(rng.choice([30, 50, 70])), horizon]
    intervals = len(times) - 1

    s1_max = [float(rng.choice([1.0, 2.0]))] * intervals
    if intervals == 2 and rng.random() < 0.5:
        s1_max[1] = 0.0
    s2_max = float(rng.choice([1.0, 1.5]))

    def costs():
        return {p: float(rng.integers(10, 50)) for p in products}

    sigmas = sorted(float(v) for v in rng.choice([15, 25, 30, 40], size=int(rng.integers(2, 4)), replace=False))
    depots = []
    for n, sigma in enumerate(sigmas, start=1):
        p = str(rng.choice(products))
        demand = 10.0 * int(rng.integers(0, 3))
        depots.append({'id': f"D{n}", 'sigma': sigma, 'demand_min': {p: demand}, 'demand_max': {p: demand},
                       'backorder_cost': {p: 1000.0}})

    far = 10.0 * int(rng.integers(1, 4))
    return {
        'name': f"small_{seed}",
        'pipeline_volume': 40.0,
        'horizon': horizon,
        'products': [{'id': p} for p in products],
        'sources': [
            {'id': 'S1', 'tau': 0.0, 'rate_min': [0.5 * r for r in s1_max], 'rate_max': s1_max,
             'pump_cost': costs(), 'supply_max': {p: 10.0 * int(rng.integers(1, 6)) for p in products}},
            {'id': 'S2', 'tau': float(rng.choice([10, 20])), 'rate_min': 0.5 * s2_max, 'rate_max': s2_max,
             'pump_cost': costs()},
        ],
        'depots': depots,
        'old_batches': [{'id': 'B1', 'product': str(rng.choice(products)), 'volume': far},
                        {'id': 'B2', 'product': str(rng.choice(products)), 'volume': 40.0 - far}],
        'events': [{'id': f"e{n}", 'time': t} for n, t in enumerate(times)],
        'interface_costs': {p: {q: float(rng.integers(5, 30)) for q in products if q != p} for p in products},
        'run_count': int(rng.integers(3, 6)),
        'new_batch_count': 2,
        'new_batch_slots': [{'behind': 'B2', 'count': 2}],
    }


@pytest.fixture
def small_scenario():
    def build(seed, events=None):
        return scenario_from_dict(small_scenario_data(seed, events))
    return build


@pytest.fixture
def small_scenario_file(tmp_path):
    def write(seed, events=None):
        path = tmp_path / f"small_{seed}.json"
        path.write_text(json.dumps(small_scenario_data(seed, events)), encoding='utf-8')
        return str(path)
    return write


# =============================================================================
# SOLVED CASES (shared across the solver tests of one session)
# =============================================================================

class Solved(NamedTuple):
    scenario: Scenario
    model: ModelInstance
    solution: Solution
    schedule: Schedule


CASE_STUDY_SOLVER = SolverConfig(time_limit=600)


def _solve_artifact(name):
    s = load_scenario(os.path.join(ARTIFACTS, name))
    m = build_model(s, BuildOptions(tie_break=True))
    solution = solve(m, CASE_STUDY_SOLVER)
    assert solution.status.has_solution, solution.message
    return Solved(s, m, solution, extract_schedule(solution, s))


@pytest.fixture(scope='session')
def solved_case_study():
    return _solve_artifact('case_study.json')


@pytest.fixture(scope='session')
def solved_maintenance():
    return _solve_artifact('case_study_maintenance.json')
