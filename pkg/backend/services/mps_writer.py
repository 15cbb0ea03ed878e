# backend/services/mps_writer.py
"""MPS emission for ModelInstance.

Fixed format is used whenever every row and column name fits in 8 characters;
otherwise the same deterministic names go out in free format.
"""
import math
from dataclasses import dataclass
from typing import Tuple

from extensions import logger
from services.milp_builder import ModelInstance, LE, EQ, GE

OBJECTIVE_ROW = 'COST'
FIXED_NAME_LENGTH = 8
_ROW_TYPES = {LE: 'L', EQ: 'E', GE: 'G'}


@dataclass(frozen=True)
class MpsDocument:
    text: str
    free_format: bool
    warnings: Tuple[str, ...] = ()


def _number(value, width=None):
    text = f'{value:.15g}'
    if width is not None:
        digits = 14
        while len(text) > width and digits > 1:
            digits -= 1
            text = f'{value:.{digits}g}'
    return text


class _Lines:
    def __init__(self, free):
        self.free = free
        self.lines = []

    def section(self, name):
        self.lines.append(name)

    def row(self, kind, name):
        self.lines.append(f' {kind}  {name}')

    def entry(self, field1, name1, name2, value, lead='    '):
        if self.free:
            self.lines.append(f'{lead}{field1 + " " if field1 else ""}{name1} {name2} {_number(value)}'.rstrip())
        else:
            head = f' {field1:<2} ' if field1 else '    '
            self.lines.append(f'{head}{name1:<8}  {name2:<8}  {_number(value, 12):>12}')

    def marker(self, name, kind):
        if self.free:
            self.lines.append(f"    {name} 'MARKER' '{kind}'")
        else:
            self.lines.append(f"    {name:<8}  'MARKER'                 '{kind}'")


def write_mps(m: ModelInstance, free_format=None) -> MpsDocument:
    """Render the model as MPS text; identical models give identical bytes"""
    warnings = []
    names = [v.ref.name for v in m.variables] + [con.name for con in m.constraints]
    too_long = [n for n in names if len(n) > FIXED_NAME_LENGTH]
    if free_format is None:
        free_format = bool(too_long)
        if too_long:
            message = (f'{len(too_long)} names exceed {FIXED_NAME_LENGTH} characters '
                       f'(e.g. {too_long[0]}); writing free-format MPS')
            warnings.append(message)
            logger.warning(message)
    elif not free_format and too_long:
        raise ValueError(f'Fixed-format MPS cannot hold name {too_long[0]}')

    out = _Lines(free_format)
    out.section(f'NAME          {m.scenario.replace(" ", "_")}' if not free_format
                else f'NAME {m.scenario.replace(" ", "_")} FREE')
    out.section('ROWS')
    out.row('N', OBJECTIVE_ROW)
    for con in m.constraints:
        out.row(_ROW_TYPES[con.sense], con.name)

    column_entries = {v.ref: [] for v in m.variables}
    objective = {}
    for ref, coef in m.full_objective:
        objective[ref] = objective.get(ref, 0.0) + coef
    for ref, coef in objective.items():
        if coef != 0:
            column_entries[ref].append((OBJECTIVE_ROW, coef))
    for con in m.constraints:
        for ref, coef in con.terms:
            column_entries[ref].append((con.name, coef))

    out.section('COLUMNS')
    in_integer_block = False
    marker_count = 0
    for v in m.variables:
        if v.integer and not in_integer_block:
            out.marker(f'MARKER{marker_count:02d}' if not free_format else f'M{marker_count}', 'INTORG')
            marker_count += 1
            in_integer_block = True
        elif not v.integer and in_integer_block:
            out.marker(f'MARKER{marker_count:02d}' if not free_format else f'M{marker_count}', 'INTEND')
            marker_count += 1
            in_integer_block = False
        entries = column_entries[v.ref]
        if not entries:
            # keep the column declared
            entries = [(OBJECTIVE_ROW, 0.0)]
        for row, coef in entries:
            out.entry('', v.ref.name, row, coef)
    if in_integer_block:
        out.marker(f'MARKER{marker_count:02d}' if not free_format else f'M{marker_count}', 'INTEND')

    out.section('RHS')
    for con in m.constraints:
        if con.rhs != 0:
            out.entry('', 'RHS', con.name, con.rhs)

    out.section('BOUNDS')
    for v in m.variables:
        name = v.ref.name
        if v.lb != 0 and v.lb == v.ub:
            out.entry('FX', 'BND', name, v.lb, lead=' ')
            continue
        if v.lb != 0:
            out.entry('LO', 'BND', name, v.lb, lead=' ')
        if not math.isinf(v.ub):
            out.entry('UP', 'BND', name, v.ub, lead=' ')
    out.section('ENDATA')
    return MpsDocument('\n'.join(out.lines) + '\n', free_format, tuple(warnings))


def emit_mps(m: ModelInstance) -> str:
    return write_mps(m).text
