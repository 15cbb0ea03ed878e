# backend/services/solver_backend.py
import os
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from config import Config
from extensions import logger
from models import (
    SolveStatus, SolverNotFoundError, SolverCrashError, SolutionFormatError,
)
from services.milp_builder import ModelInstance, VarRef, evaluate_objective
from services.mps_writer import write_mps

DEFAULT_CBC_ARGV = ('{solver} -import {mps} sec {time_limit} ratio {mip_gap} threads {threads} '
                    'solve printingOptions all solution {solution}')


@dataclass(frozen=True)
class SolverConfig:
    backend: str = 'highs'
    time_limit: float = 300.0
    mip_gap: float = 1e-6
    threads: int = 1
    solver_path: Optional[str] = None
    argv_template: str = DEFAULT_CBC_ARGV

    def __post_init__(self):
        if self.mip_gap < 0:
            raise ValueError(f"mip_gap must be >= 0, got {self.mip_gap}")
        if self.time_limit <= 0:
            raise ValueError(f"time_limit must be > 0, got {self.time_limit}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @classmethod
    def from_env(cls, **overrides):
        values = {
            'backend': Config.SOLVER_BACKEND,
            'time_limit': Config.SOLVER_TIME_LIMIT,
            'mip_gap': Config.SOLVER_MIP_GAP,
            'threads': Config.SOLVER_THREADS,
            'solver_path': Config.SOLVER_PATH,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class Solution:
    status: SolveStatus
    objective: Optional[float] = None
    values: Dict[VarRef, float] = field(default_factory=dict)
    gap: Optional[float] = None
    solve_seconds: float = 0.0
    missing: Tuple[VarRef, ...] = ()
    tie_break_value: float = 0.0
    backend: str = ''
    message: str = ''

    @property
    def has_values(self):
        return bool(self.values)

    @property
    def cost_objective(self):
        """Objective without the makespan tie-break term"""
        if self.objective is None:
            return None
        return self.objective - self.tie_break_value

    def value(self, kind, *indices):
        return self.values.get(VarRef(kind, tuple(indices)), 0.0)


def snap_binaries(m: ModelInstance, values: Dict[VarRef, float], tol=None):
    """Round binaries that sit within the integrality tolerance of 0 or 1"""
    tol = Config.INTEGRALITY_TOL if tol is None else tol
    for v in m.variables:
        if not v.integer or v.ref not in values:
            continue
        value = values[v.ref]
        nearest = round(value)
        if abs(value - nearest) <= tol:
            values[v.ref] = float(nearest)
    return values


def _tie_break_value(m: ModelInstance, values):
    return float(sum(coef * values.get(ref, 0.0) for ref, coef in m.tie_break))


# =============================================================================
# BACKENDS
# =============================================================================

_BACKENDS = {}


def register_backend(name):
    def decorator(cls):
        _BACKENDS[name] = cls
        cls.name = name
        return cls
    return decorator


def available_backends():
    return sorted(_BACKENDS)


class SolverBackend:
    name = ''

    def solve(self, m: ModelInstance, cfg: SolverConfig) -> Solution:
        raise NotImplementedError


@register_backend('highs')
class HighsBackend(SolverBackend):
    """In-process HiGHS through scipy.optimize.milp"""

    def solve(self, m: ModelInstance, cfg: SolverConfig) -> Solution:
        try:
            from scipy.optimize import milp, LinearConstraint, Bounds
        except ImportError as e:
            raise SolverNotFoundError("scipy.optimize.milp is not available (scipy >= 1.9 required)") from e

        if cfg.threads > 1:
            logger.warning(f"highs backend runs single-threaded; ignoring threads={cfg.threads}")

        c, A, row_lb, row_ub, lb, ub, integrality = m.to_arrays()
        constraints = [LinearConstraint(A, row_lb, row_ub)] if A.shape[0] else []
        started = time.perf_counter()
        try:
            result = milp(c, constraints=constraints, integrality=integrality, bounds=Bounds(lb, ub),
                          options={'time_limit': cfg.time_limit, 'mip_rel_gap': cfg.mip_gap, 'disp': False})
        except (ValueError, MemoryError) as e:
            raise SolverCrashError(f"HiGHS failed: {e}", stderr=str(e)) from e
        elapsed = time.perf_counter() - started

        if result.status == 0:
            status = SolveStatus.optimal
        elif result.status == 1:
            # stopped on a limit; an incumbent is still a usable schedule
            status = SolveStatus.feasible if result.x is not None else SolveStatus.time_limit
        elif result.status == 2:
            status = SolveStatus.infeasible
        else:
            status = SolveStatus.error

        values = {}
        if result.x is not None:
            values = {v.ref: float(x) for v, x in zip(m.variables, np.asarray(result.x))}
            snap_binaries(m, values)
        objective = float(result.fun) if result.x is not None and result.fun is not None else None
        gap = getattr(result, 'mip_gap', None)
        return Solution(status=status, objective=objective, values=values,
                        gap=float(gap) if gap is not None else None, solve_seconds=elapsed,
                        tie_break_value=_tie_break_value(m, values), backend=self.name,
                        message=str(result.message))


def solver_argv(cfg: SolverConfig, solver, mps_path, sol_path):
    """Split the template first, then fill each token, so paths with spaces stay one argument"""
    values = {'solver': solver, 'mps': mps_path, 'solution': sol_path, 'time_limit': cfg.time_limit,
              'mip_gap': cfg.mip_gap, 'threads': cfg.threads}
    return [token.format(**values) for token in shlex.split(cfg.argv_template)]


@register_backend('cbc')
class CbcBackend(SolverBackend):
    """CBC executable fed with an MPS file; the solution file is parsed back"""

    def executable(self, cfg: SolverConfig):
        path = os.getenv('PIPESCHED_SOLVER') or cfg.solver_path or 'cbc'
        resolved = shutil.which(path) or (path if os.path.isfile(path) else None)
        if resolved is None:
            raise SolverNotFoundError(f"CBC executable not found: {path}")
        return resolved

    def solve(self, m: ModelInstance, cfg: SolverConfig) -> Solution:
        solver = self.executable(cfg)
        with tempfile.TemporaryDirectory(prefix='pipesched_') as work_dir:
            mps_path = os.path.join(work_dir, 'model.mps')
            sol_path = os.path.join(work_dir, 'model.sol')
            with open(mps_path, 'w') as fh:
                fh.write(write_mps(m).text)

            argv = solver_argv(cfg, solver, mps_path, sol_path)
            logger.debug(f"Running {' '.join(argv)}")
            started = time.perf_counter()
            try:
                proc = subprocess.run(argv, capture_output=True, text=True)
            except FileNotFoundError as e:
                raise SolverNotFoundError(f"Could not execute {solver}") from e
            elapsed = time.perf_counter() - started

            if not os.path.exists(sol_path):
                logger.error(f"CBC exited with code {proc.returncode} and wrote no solution")
                raise SolverCrashError(f"CBC exited with code {proc.returncode} without a solution file",
                                       stderr=proc.stderr or proc.stdout)
            with open(sol_path) as fh:
                text = fh.read()

        solution = parse_solution(text, m)
        return Solution(status=solution.status, objective=solution.objective, values=solution.values,
                        gap=solution.gap, solve_seconds=elapsed, missing=solution.missing,
                        tie_break_value=solution.tie_break_value, backend=self.name,
                        message=solution.message)


def parse_solution(text: str, m: ModelInstance) -> Solution:
    """Read a CBC solution file into VarRef space.

    Variables absent from the file default to 0 and are listed in ``missing``.
    A line that cannot be read raises SolutionFormatError naming the last good line.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise SolutionFormatError("Empty solution file", last_good_line=None)

    header = lines[0].strip()
    lowered = header.lower()
    if lowered.startswith('optimal'):
        status = SolveStatus.optimal
    elif 'infeasible' in lowered:
        status = SolveStatus.infeasible
    elif lowered.startswith('stopped'):
        status = SolveStatus.time_limit
    elif lowered.startswith('unbounded'):
        status = SolveStatus.error
    else:
        raise SolutionFormatError(f"Unrecognised solution status line: {header!r}", last_good_line=1)

    objective = None
    if 'objective value' in lowered:
        try:
            objective = float(header.split()[-1])
        except ValueError as e:
            raise SolutionFormatError(f"Unreadable objective in {header!r}", last_good_line=1) from e

    by_name = {v.ref.name: v.ref for v in m.variables}
    row_names = {con.name for con in m.constraints}
    values = {}
    last_good = 1
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if tokens[0] == '**':
            tokens = tokens[1:]
        elif tokens[0].startswith('**'):
            tokens[0] = tokens[0][2:]
        if len(tokens) < 3:
            raise SolutionFormatError(
                f"Truncated solution line {number}: {line.strip()!r} (last good line {last_good})",
                last_good_line=last_good)
        name = tokens[1]
        try:
            value = float(tokens[2])
        except ValueError as e:
            raise SolutionFormatError(
                f"Bad value on line {number}: {line.strip()!r} (last good line {last_good})",
                last_good_line=last_good) from e
        if name in by_name:
            values[by_name[name]] = value
        elif name not in row_names:
            logger.warning(f"Solution names unknown column {name}")
        last_good = number

    missing = tuple(v.ref for v in m.variables if v.ref not in values)
    if status.has_solution or values:
        if missing:
            logger.warning(f"{len(missing)} variables missing from solution; defaulting them to 0")
        values = {v.ref: values.get(v.ref, 0.0) for v in m.variables}
        snap_binaries(m, values)
    if objective is None and values:
        objective = evaluate_objective(m, values, include_tie_break=True)
    return Solution(status=status, objective=objective, values=values,
                    gap=0.0 if status == SolveStatus.optimal else None, missing=missing,
                    tie_break_value=_tie_break_value(m, values), backend='cbc', message=header)


def get_backend(name) -> SolverBackend:
    if name not in _BACKENDS:
        raise SolverNotFoundError(f"Unknown solver backend '{name}' (available: {', '.join(available_backends())})")
    return _BACKENDS[name]()


def solve(m: ModelInstance, cfg: Optional[SolverConfig] = None) -> Solution:
    """Solve with the configured backend; status is reported, never raised"""
    cfg = cfg or SolverConfig.from_env()
    backend = get_backend(cfg.backend)
    logger.info(f"Solving '{m.scenario}' with {cfg.backend} (time limit {cfg.time_limit:g}s, gap {cfg.mip_gap:g})")
    solution = backend.solve(m, cfg)
    objective = f"{solution.objective:.4f}" if solution.objective is not None else 'n/a'
    logger.info(f"Solver status {solution.status.value}, objective {objective}, "
                f"{solution.solve_seconds:.2f}s")
    return solution
