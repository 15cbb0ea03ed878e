from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from config import Config
from models import SolveStatus, SolverNotFoundError, SolutionFormatError
from services.milp_builder import VarRef, build_model
from services.mps_writer import write_mps
from services.solver_backend import (
    SolverConfig, available_backends, get_backend, parse_solution, snap_binaries, solve, solver_argv, CbcBackend,
    HighsBackend,
)


@pytest.fixture
def model(case_study):
    return build_model(case_study)


def solution_text(m, values, header='Optimal - objective value 8353.00000000'):
    lines = [header]
    for n, v in enumerate(m.variables):
        value = values.get(v.ref, 0.0)
        if value:
            lines.append(f"{n:>7} {v.ref.name:<24} {value:.10g} 0")
    return '\n'.join(lines) + '\n'


def test_backends_registered():
    assert available_backends() == ['cbc', 'highs']
    with pytest.raises(SolverNotFoundError):
        get_backend('gurobi')


@pytest.mark.parametrize('kwargs', [{'mip_gap': -0.1}, {'time_limit': 0}, {'threads': 0}])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_config_from_env():
    cfg = SolverConfig.from_env(time_limit=12.5, backend=None)
    assert cfg.time_limit == 12.5
    assert cfg.backend == Config.SOLVER_BACKEND


def test_missing_cbc_executable(monkeypatch, tmp_path):
    monkeypatch.setenv('PIPESCHED_SOLVER', str(tmp_path / 'no-such-cbc'))
    with pytest.raises(SolverNotFoundError):
        CbcBackend().executable(SolverConfig(backend='cbc'))


def test_parse_solution(model, nominal_values):
    sol = parse_solution(solution_text(model, nominal_values), model)
    assert sol.status == SolveStatus.optimal
    assert sol.objective == pytest.approx(8353.0)
    assert sol.value('C', 9) == pytest.approx(175.0)
    assert sol.value('y', 'N1', 'C') == 1.0
    assert sol.value('Q', 'N2', 'S1', 1) == 0.0
    assert VarRef('Q', ('N2', 'S1', 1)) in sol.missing


def test_parse_solution_strips_infeasibility_marks(model):
    text = 'Optimal - objective value 0\n**    3 C_1   2.5   0\n'
    sol = parse_solution(text, model)
    assert sol.value('C', 1) == 2.5


def test_parse_infeasible(model):
    sol = parse_solution('Infeasible - objective value 0\n', model)
    assert sol.status == SolveStatus.infeasible
    assert not sol.status.has_solution


def test_truncated_line_names_last_good_line(model):
    text = 'Optimal - objective value 1\n      0 C_1   2.5   0\n      1 C_2\n'
    with pytest.raises(SolutionFormatError) as excinfo:
        parse_solution(text, model)
    assert excinfo.value.last_good_line == 2


def test_unknown_status_line(model):
    with pytest.raises(SolutionFormatError):
        parse_solution('Something odd\n', model)


def test_empty_solution(model):
    with pytest.raises(SolutionFormatError):
        parse_solution('', model)


def test_snap_binaries(model):
    values = {VarRef('v', ('N1', 'S2', 3)): 0.999999, VarRef('C', (1,)): 0.999999}
    snap_binaries(model, values)
    assert values[VarRef('v', ('N1', 'S2', 3))] == 1.0
    assert values[VarRef('C', (1,))] == 0.999999


def test_mps_uses_free_format_for_long_names(model):
    document = write_mps(model)
    lines = document.text.splitlines()
    assert document.free_format
    assert document.warnings
    assert lines[0] == 'NAME case_study FREE'
    assert lines[-1] == 'ENDATA'
    assert document.text.count("'INTORG'") == document.text.count("'INTEND'")
    assert write_mps(model).text == document.text


def test_mps_fixed_format_refuses_long_names(model):
    with pytest.raises(ValueError):
        write_mps(model, free_format=False)


def test_solver_argv_keeps_paths_with_spaces_whole():
    cfg = SolverConfig(backend='cbc', time_limit=30, mip_gap=0.01)
    argv = solver_argv(cfg, '/opt/my solvers/cbc', '/tmp/run 1/model.mps', '/tmp/run 1/model.sol')
    assert argv[0] == '/opt/my solvers/cbc'
    assert argv[argv.index('-import') + 1] == '/tmp/run 1/model.mps'
    assert argv[argv.index('solution') + 1] == '/tmp/run 1/model.sol'
    assert argv[argv.index('sec') + 1] == '30'
    assert argv[argv.index('ratio') + 1] == '0.01'


def test_custom_argv_template():
    cfg = SolverConfig(backend='cbc', argv_template='{solver} {mps} -solve -solu {solution}')
    assert solver_argv(cfg, 'cbc', 'a b.mps', 'a b.sol') == ['cbc', 'a b.mps', '-solve', '-solu', 'a b.sol']


def _fake_milp(status, x):
    def milp(c, **kwargs):
        if x is None:
            return SimpleNamespace(status=status, x=None, fun=None, mip_gap=None, message='limit reached')
        return SimpleNamespace(status=status, x=np.full(len(c), x), fun=0.0, mip_gap=0.25, message='limit reached')
    return milp


def test_time_limit_with_incumbent_is_feasible(monkeypatch, model):
    optimize = pytest.importorskip('scipy.optimize')
    monkeypatch.setattr(optimize, 'milp', _fake_milp(1, 0.0))
    sol = HighsBackend().solve(model, SolverConfig(time_limit=1))
    assert sol.status == SolveStatus.feasible
    assert sol.status.has_solution
    assert sol.gap == pytest.approx(0.25)


def test_time_limit_without_incumbent(monkeypatch, model):
    optimize = pytest.importorskip('scipy.optimize')
    monkeypatch.setattr(optimize, 'milp', _fake_milp(1, None))
    sol = HighsBackend().solve(model, SolverConfig(time_limit=1))
    assert sol.status == SolveStatus.time_limit
    assert not sol.has_values


@pytest.mark.solver
def test_unmet_demand_becomes_backorder(case_study):
    # ten times the demand cannot be met in two runs
    depots = tuple(replace(d, demand_min={p: v * 10 for p, v in d.demand_min.items()},
                           demand_max={p: v * 10 for p, v in d.demand_min.items()}) for d in case_study.depots)
    tiny = case_study.with_changes(depots=depots, run_count=2)
    fast = SolverConfig(time_limit=60)
    sol = solve(build_model(tiny), fast)
    assert sol.status.has_solution
    assert sol.value('BC') > 0
