# backend/services/milp_builder.py
"""Continuous-time MILP for single-line multi-source pipelines with event-guarded parameters.

Index conventions
-----------------
- runs ``k = 1..|K|``; ``k = 0`` is the initial state for batch coordinates/volumes
- batches follow ``batch_layout``: far end first, so ``i + 1`` sits upstream of ``i``
- event intervals ``e = 1..|E|-1`` cover ``(T_{e-1}, T_e]``

Every constraint carries a family tag (``eq1`` .. ``eq36``, ``eqGAP``, ``eqSU``, ``eqVI``,
``obj38`` .. ``obj40``) and a row name ``<tag>_<ordinal>``. ``eqVI`` rows are cuts that every
integral schedule satisfies; they only tighten the LP relaxation.
"""
import math
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse

from config import Config
from extensions import logger
from models import Scenario, BatchSlot, batch_layout, param_at

BINARY_KINDS = ('v', 'x', 'y', 'b')
VARIABLE_KINDS = ('C', 'L', 'LS', 'Q', 'QP', 'D', 'DP', 'F', 'W', 'B', 'RC', 'PC', 'BC') + BINARY_KINDS
CONSTRAINT_TAGS = tuple(f'eq{n}' for n in range(1, 37)) + ('eqGAP', 'eqSU', 'eqVI', 'obj38', 'obj39', 'obj40')

LE, EQ, GE = '<=', '=', '>='


@dataclass(frozen=True)
class VarRef:
    kind: str
    indices: Tuple = ()

    @property
    def name(self):
        return '_'.join([self.kind] + [str(i) for i in self.indices])

    @property
    def is_binary(self):
        return self.kind in BINARY_KINDS

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Variable:
    ref: VarRef
    lb: float = 0.0
    ub: float = math.inf
    integer: bool = False


@dataclass(frozen=True)
class LinearConstraint:
    terms: Tuple[Tuple[VarRef, float], ...]
    sense: str
    rhs: float
    tag: str
    name: str = ''


@dataclass(frozen=True)
class BigM:
    M_T: float
    M_vol: float
    M_count: float
    M_flow: float


@dataclass(frozen=True)
class BuildOptions:
    """tie_break adds the makespan term; supply_bounds emits eqSU for every SL/SU the scenario
    carries; valid_inequalities adds the eqVI cuts and fixes binaries that can never be active;
    m_vol_scale multiplies every volumetric big-M."""
    tie_break: bool = False
    supply_bounds: bool = True
    valid_inequalities: bool = True
    m_vol_scale: float = 1.0

    @classmethod
    def minimal(cls, tie_break=False, m_vol_scale=1.0):
        """Core formulation only: no supply rows, cuts or fixed binaries"""
        return cls(tie_break=tie_break, supply_bounds=False, valid_inequalities=False,
                   m_vol_scale=m_vol_scale)


@dataclass(frozen=True)
class ModelInstance:
    scenario: str
    variables: Tuple[Variable, ...]
    constraints: Tuple[LinearConstraint, ...]
    objective: Tuple[Tuple[VarRef, float], ...]
    big_m: BigM
    layout: Tuple[BatchSlot, ...] = ()
    tie_break: Tuple[Tuple[VarRef, float], ...] = ()
    options: BuildOptions = field(default_factory=BuildOptions)

    @cached_property
    def index(self) -> Dict[VarRef, int]:
        return {v.ref: col for col, v in enumerate(self.variables)}

    @property
    def full_objective(self):
        """Cost objective plus the optional makespan tie-break term"""
        return self.objective + self.tie_break

    def to_arrays(self):
        """Dense cost vector, sparse constraint matrix with row bounds, column bounds, integrality"""
        n = len(self.variables)
        c = np.zeros(n)
        for ref, coef in self.full_objective:
            c[self.index[ref]] += coef

        rows, cols, vals = [], [], []
        row_lb = np.empty(len(self.constraints))
        row_ub = np.empty(len(self.constraints))
        for r, con in enumerate(self.constraints):
            for ref, coef in con.terms:
                rows.append(r)
                cols.append(self.index[ref])
                vals.append(coef)
            row_lb[r] = con.rhs if con.sense in (EQ, GE) else -np.inf
            row_ub[r] = con.rhs if con.sense in (EQ, LE) else np.inf
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), n))

        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        integrality = np.array([1 if v.integer else 0 for v in self.variables], dtype=int)
        return c, A, row_lb, row_ub, lb, ub, integrality


# =============================================================================
# BIG-M
# =============================================================================

def big_m_values(s: Scenario, options: Optional[BuildOptions] = None) -> BigM:
    """Caps of the big-M constants; each row uses the smallest value safe for that row.

    M_T covers every time value, M_vol any coordinate slack, M_count the number of
    (run, source) injections into one batch, M_flow any inactive rate inequality.
    """
    options = options or BuildOptions()
    h = s.horizon
    vb_min = max((src.rate_min.max() for src in s.sources), default=0.0)
    return BigM(
        M_T=h,
        M_vol=s.pipeline_volume * options.m_vol_scale,
        M_count=float(s.run_count * len(s.sources)),
        M_flow=max(s.batch_size_max, vb_min * h),
    )


# =============================================================================
# BUILDER
# =============================================================================

class ModelBuilder:
    """Collects variables and tagged constraints for one scenario"""

    def __init__(self, s: Scenario, options: Optional[BuildOptions] = None):
        self.s = s
        self.options = options or BuildOptions()
        self.m = big_m_values(s, self.options)
        self.layout = batch_layout(s)
        self.variables: Dict[VarRef, Variable] = {}
        self.constraints: List[LinearConstraint] = []
        self._ordinals = Counter()

        self.K = range(1, s.run_count + 1)
        self.K0 = range(0, s.run_count + 1)
        self.E = list(s.intervals)
        self.I = [slot.id for slot in self.layout]
        self.S = [src.id for src in s.sources]
        self.J = [d.id for d in s.depots]
        self.P = s.product_ids
        self.initial = initial_coordinates(self.layout)

    # -- plumbing ------------------------------------------------------------

    def vol_m(self, value):
        return value * self.options.m_vol_scale

    def tail0(self, i):
        """Lower coordinate of slot i before the first run; it never decreases"""
        f0, w0 = self.initial[i]
        return f0 - w0

    def fix_off(self, ref):
        self.variables[ref] = replace(self.variables[ref], ub=0.0)

    def var(self, kind, *indices, lb=0.0, ub=math.inf):
        ref = VarRef(kind, tuple(indices))
        if ref not in self.variables:
            binary = kind in BINARY_KINDS
            self.variables[ref] = Variable(ref, 0.0 if binary else lb, 1.0 if binary else ub, binary)
        return ref

    def ref(self, kind, *indices):
        ref = VarRef(kind, tuple(indices))
        if ref not in self.variables:
            raise KeyError(f"Undeclared variable {ref.name}")
        return ref

    def add(self, tag, terms, sense, rhs):
        merged = OrderedDict()
        for ref, coef in terms:
            if coef == 0:
                continue
            merged[ref] = merged.get(ref, 0.0) + coef
        terms = tuple((ref, float(c)) for ref, c in merged.items() if c != 0)
        self._ordinals[tag] += 1
        self.constraints.append(
            LinearConstraint(terms, sense, float(rhs), tag, f"{tag}_{self._ordinals[tag]}"))

    # -- variables -----------------------------------------------------------

    def declare_variables(self):
        s, h, pv, q_max = self.s, self.s.horizon, self.s.pipeline_volume, self.s.batch_size_max
        d_cap = min(pv, q_max * len(self.S))
        for k in self.K:
            self.var('C', k, ub=h)
            self.var('L', k, ub=h)
            self.var('PC', k)
            for src in self.S:
                self.var('LS', k, src, ub=h)
            for e in self.E:
                self.var('b', k, e)
        for i in self.I:
            for k in self.K0:
                self.var('F', i, k, ub=pv)
                self.var('W', i, k, ub=pv)
            for p in self.P:
                self.var('y', i, p)
            for k in self.K:
                for src in self.S:
                    self.var('Q', i, src, k, ub=q_max)
                    self.var('v', i, src, k)
                    for p in self.P:
                        self.var('QP', i, src, p, k, ub=q_max)
                for j in self.J:
                    self.var('D', i, j, k, ub=d_cap)
                    self.var('x', i, j, k)
                    for p in self.P:
                        self.var('DP', i, j, p, k, ub=d_cap)
        for i in self.I[:-1]:
            self.var('RC', i)
        for p in self.P:
            for j in self.J:
                self.var('B', p, j)
        self.var('BC')
        if self.options.valid_inequalities:
            self.fix_unreachable()

    def fix_unreachable(self):
        """Zero the injections and deliveries a slot can never take part in.

        A slot's lower coordinate is the upper coordinate of the slot behind it, so it only
        moves downstream: once past a terminal, the slot never meets that terminal again.
        """
        for i in self.I:
            tail = self.tail0(i)
            for src in self.s.sources:
                if tail > src.tau + 1e-9:
                    for k in self.K:
                        self.fix_off(_v('v', i, src.id, k))
                        self.fix_off(_v('Q', i, src.id, k))
            for d in self.s.depots:
                if tail > d.sigma + 1e-9:
                    for k in self.K:
                        self.fix_off(_v('x', i, d.id, k))
                        self.fix_off(_v('D', i, d.id, k))

    # -- timing: eq1-eq5, eq9, eq11 ------------------------------------------

    def add_timing(self):
        s, m = self.s, self.m
        times = [ev.time for ev in s.events]
        for k in self.K:
            # eq1: a run starts after the previous one completes
            terms = [(_v('C', k), 1.0), (_v('L', k), -1.0)]
            if k > 1:
                terms.append((_v('C', k - 1), -1.0))
            self.add('eq1', terms, GE, 0.0)
            self.add('eq2', [(_v('C', k), 1.0)], LE, s.horizon)
            self.add('eq3', [(_v('b', k, e), 1.0) for e in self.E], EQ, 1.0)
            for e in self.E:
                self.add('eq4', [(_v('b', k, e), times[e - 1]), (_v('C', k), -1.0), (_v('L', k), 1.0)],
                         LE, 0.0)
                self.add('eq5', [(_v('C', k), 1.0), (_v('b', k, e), m.M_T - times[e])], LE, m.M_T)
            for src in self.S:
                self.add('eq9', [(_v('LS', k, src), 1.0), (_v('L', k), -1.0)], LE, 0.0)

        q_max = s.batch_size_max
        for src in s.sources:
            for k in self.K:
                injected = [(_v('Q', i, src.id, k), 1.0) for i in self.I]
                for e in self.E:
                    vb_min = param_at(src.rate_min, e)
                    vb_max = param_at(src.rate_max, e)
                    # inactive: vb_min * LS <= vb_min * h on one side, one batch <= q_max on the other
                    m_low = vb_min * s.horizon
                    self.add('eq11', [(_v('LS', k, src.id), vb_min)] + _neg(injected)
                             + [(_v('b', k, e), m_low)], LE, m_low)
                    self.add('eq11', injected + [(_v('LS', k, src.id), -vb_max),
                                                 (_v('b', k, e), q_max)], LE, q_max)

    # -- injections: eq6-eq8, eq20-eq21, eq30-eq31 ---------------------------

    def add_injections(self):
        s = self.s
        # eq6 caps the injections of one run at |S|
        m_run = float(len(self.S))
        for k in self.K:
            for src in self.S:
                self.add('eq6', [(_v('v', i, src, k), 1.0) for i in self.I], LE, 1.0)
            if k > 1:
                now = [(_v('v', i, src, k), 1.0) for i in self.I for src in self.S]
                before = [(_v('v', i, src, k - 1), -m_run) for i in self.I for src in self.S]
                self.add('eq7', now + before, LE, 0.0)

        for i in self.I:
            for src in s.sources:
                for k in self.K:
                    q, v = _v('Q', i, src.id, k), _v('v', i, src.id, k)
                    self.add('eq8', [(v, s.batch_size_min), (q, -1.0)], LE, 0.0)
                    self.add('eq8', [(q, 1.0), (v, -s.batch_size_max)], LE, 0.0)
                    f_prev, w_prev = _v('F', i, k - 1), _v('W', i, k - 1)
                    m_tail = self.vol_m(s.pipeline_volume - src.tau)
                    self.add('eq20', [(v, src.tau), (f_prev, -1.0)], LE, 0.0)
                    self.add('eq21', [(f_prev, 1.0), (w_prev, -1.0), (v, m_tail)], LE, src.tau + m_tail)
                    for p in self.P:
                        self.add('eq30', [(_v('QP', i, src.id, p, k), 1.0), (_v('y', i, p), -s.batch_size_max)],
                                 LE, 0.0)
                    self.add('eq31', [(_v('QP', i, src.id, p, k), 1.0) for p in self.P] + [(q, -1.0)], EQ, 0.0)

    # -- volumes and coordinates: eq12-eq19 ----------------------------------

    def add_tracking(self):
        s = self.s
        pv = s.pipeline_volume
        for k in self.K:
            for i in self.I:
                terms = [(_v('W', i, k), 1.0), (_v('W', i, k - 1), -1.0)]
                terms += [(_v('Q', i, src, k), -1.0) for src in self.S]
                terms += [(_v('D', i, j, k), 1.0) for j in self.J]
                self.add('eq12', terms, EQ, 0.0)
            for d in s.depots:
                upstream = [(_v('Q', i2, src.id, k), -1.0) for src in s.sources if src.tau < d.sigma
                            for i2 in self.I]
                for i in self.I:
                    self.add('eq13', [(_v('D', i, d.id, k), 1.0)] + upstream, LE, 0.0)

        for k in self.K0:
            for pos, i in enumerate(self.I):
                terms = [(_v('F', i, k), 1.0), (_v('W', i, k), -1.0)]
                if pos + 1 < len(self.I):
                    terms.append((_v('F', self.I[pos + 1], k), -1.0))
                self.add('eq14', terms, EQ, 0.0)

        for k in self.K:
            for i in self.I:
                self.add('eq15', [(_v('F', i, k - 1), 1.0), (_v('F', i, k), -1.0)], LE, 0.0)
                self.add('eq16', [(_v('F', i, k), 1.0)], LE, pv)
                self.add('eq17', [(_v('F', i, k), 1.0), (_v('W', i, k), -1.0)], GE, 0.0)
            self.add('eq18', [(_v('W', i, k), 1.0) for i in self.I], EQ, pv)
            self.add('eq19', [(_v('Q', i, src, k), 1.0) for i in self.I for src in self.S]
                     + [(_v('D', i, j, k), -1.0) for i in self.I for j in self.J], EQ, 0.0)

    # -- deliveries: eq22-eq24, eq26, eq32-eq33 ------------------------------

    def add_deliveries(self):
        s = self.s
        pv = s.pipeline_volume
        m_delivery = self.vol_m(min(pv, s.batch_size_max * len(self.S)))
        for i in self.I:
            for k in self.K:
                f_prev, w_prev, f_now = _v('F', i, k - 1), _v('W', i, k - 1), _v('F', i, k)
                cumulative = []
                for d in s.depots:
                    dv, x = _v('D', i, d.id, k), _v('x', i, d.id, k)
                    cumulative.append((dv, 1.0))
                    for e in self.E:
                        b = _v('b', k, e)
                        d_min, d_max = s.delivery_min_at(d, e), s.delivery_max_at(d, e)
                        m_low = self.vol_m(d_min)
                        self.add('eq22', [(x, d_min), (dv, -1.0), (b, m_low)], LE, m_low)
                        self.add('eq22', [(dv, 1.0), (x, -d_max), (b, m_delivery)], LE, m_delivery)
                    m_tail = self.vol_m(pv - d.sigma)
                    self.add('eq23', [(x, d.sigma), (f_now, -1.0)], LE, 0.0)
                    self.add('eq24', [(f_prev, 1.0), (w_prev, -1.0), (x, m_tail)], LE, d.sigma + m_tail)
                    upstream = [(_v('Q', i, src.id, k), -1.0) for src in s.sources if src.tau < d.sigma]
                    self.add('eq26', list(cumulative) + [(f_prev, 1.0), (w_prev, -1.0)] + upstream
                             + [(x, pv - d.sigma)], LE, pv)
                    d_cap = max(d.delivery_max.values) if d.delivery_max is not None else s.batch_size_max
                    for p in self.P:
                        self.add('eq32', [(_v('DP', i, d.id, p, k), 1.0), (_v('y', i, p), -d_cap)], LE, 0.0)
                    self.add('eq33', [(_v('DP', i, d.id, p, k), 1.0) for p in self.P] + [(dv, -1.0)], EQ, 0.0)

    # -- products: eq27-eq29, eqGAP, eq34-eq36 -------------------------------

    def adjacent_pairs(self):
        """(downstream, upstream, skipped) index triples that may become physical neighbours.

        ``skipped`` is the new slot right behind ``downstream`` that must be fictitious for
        the pair to touch (None for consecutive indices).
        """
        pairs = [(a.id, b.id, None) for a, b in zip(self.layout[:-1], self.layout[1:])]
        blocks = {}
        for slot in self.layout:
            if slot.block is not None:
                blocks.setdefault(slot.block, []).append(slot)
        for block in blocks.values():
            after = block[-1].position + 1
            if after >= len(self.layout):
                continue
            upstream = self.layout[after]
            before = self.layout[block[0].position - 1]
            for a, skipped in zip([before] + block[:-1], block):
                pairs.append((a.id, upstream.id, skipped.id))
        return pairs

    def add_products(self):
        s, m = self.s, self.m
        is_old = {slot.id: slot.is_old for slot in self.layout}
        for slot in self.layout:
            i = slot.id
            self.add('eq27', [(_v('y', i, p), 1.0) for p in self.P], LE, 1.0)
            if slot.is_old:
                self.add('eq36', [(_v('y', i, slot.product), 1.0)], EQ, 1.0)
                continue
            assigned = [(_v('y', i, p), 1.0) for p in self.P]
            injected = [(_v('v', i, src, k), 1.0) for src in self.S for k in self.K]
            self.add('eq28', assigned + _neg(injected), LE, 0.0)
            self.add('eq28', injected + [(ref, -m.M_count) for ref, _ in assigned], LE, 0.0)

        blocks = {}
        for slot in self.layout:
            if slot.block is not None:
                blocks.setdefault(slot.block, []).append(slot.id)
        for ids in blocks.values():
            for first, second in zip(ids[:-1], ids[1:]):
                self.add('eqGAP', [(_v('y', second, p), 1.0) for p in self.P]
                         + [(_v('y', first, p), -1.0) for p in self.P], LE, 0.0)

        for a, b, skipped in self.adjacent_pairs():
            if is_old[a] and is_old[b]:
                continue
            gap = [] if skipped is None else [(_v('y', skipped, q), -1.0) for q in self.P]
            for p, q in sorted(s.forbidden_pairs):
                self.add('eq29', [(_v('y', a, p), 1.0), (_v('y', b, q), 1.0)] + gap, LE, 1.0)

        for d in s.depots:
            for p in self.P:
                delivered = [(_v('DP', i, d.id, p, k), 1.0) for i in self.I for k in self.K]
                self.add('eq34', delivered + [(_v('B', p, d.id), 1.0)], GE, d.demand_min.get(p, 0.0))
                self.add('eq34', delivered, LE, d.demand_max.get(p, 0.0))

        for i in self.I:
            f0, w0 = self.initial[i]
            self.add('eq35', [(_v('F', i, 0), 1.0)], EQ, f0)
            self.add('eq35', [(_v('W', i, 0), 1.0)], EQ, w0)

    def add_supply_bounds(self):
        for src in self.s.sources:
            for p in self.P:
                shipped = [(_v('QP', i, src.id, p, k), 1.0) for i in self.I for k in self.K]
                if p in src.supply_min and src.supply_min[p] > 0:
                    self.add('eqSU', shipped, GE, src.supply_min[p])
                if p in src.supply_max:
                    self.add('eqSU', shipped, LE, src.supply_max[p])

    # -- cuts: eqVI ----------------------------------------------------------

    def injection_cap(self, src, p):
        """Most product p that source `src` can ever put into one batch"""
        s = self.s
        cap = s.run_count * s.batch_size_max
        cap = min(cap, sum(d.demand_max.get(p, 0.0) for d in s.depots) + s.pipeline_volume)
        if self.options.supply_bounds and p in src.supply_max:
            cap = min(cap, src.supply_max[p])
        return cap

    def add_valid_inequalities(self):
        s = self.s
        for slot in self.layout:
            i = slot.id
            # a batch never hands out more of a product than it started with plus what it took in
            for p in self.P:
                stock = slot.volume0 if slot.is_old and slot.product == p else 0.0
                terms = []
                for k in self.K:
                    terms += [(_v('DP', i, j, p, k), 1.0) for j in self.J]
                    terms += [(_v('QP', i, src, p, k), -1.0) for src in self.S]
                    self.add('eqVI', list(terms), LE, stock)
            if slot.is_old:
                continue
            for d in s.depots:
                for p in self.P:
                    cap = d.demand_max.get(p, 0.0)
                    delivered = [(_v('DP', i, d.id, p, k), 1.0) for k in self.K]
                    self.add('eqVI', delivered + [(_v('y', i, p), -cap)], LE, 0.0)
            for src in s.sources:
                for p in self.P:
                    injected = [(_v('QP', i, src.id, p, k), 1.0) for k in self.K]
                    self.add('eqVI', injected + [(_v('y', i, p), -self.injection_cap(src, p))], LE, 0.0)

        # interface cost of a pair, lifted over the products of one side
        for a, b, skipped in self.adjacent_pairs():
            gap = [] if skipped is None else [(_v('y', skipped, q), 1.0) for q in self.P]
            for p in self.P:
                worst = max((s.cif(p, q) for q in self.P), default=0.0)
                if worst <= 0:
                    continue
                terms = [(_v('RC', a), 1.0)] + [(_v('y', b, q), -s.cif(p, q)) for q in self.P]
                terms += [(_v('y', a, p), -worst)] + [(ref, worst) for ref, _ in gap]
                self.add('eqVI', terms, GE, -worst)
            for q in self.P:
                worst = max((s.cif(p, q) for p in self.P), default=0.0)
                if worst <= 0:
                    continue
                terms = [(_v('RC', a), 1.0)] + [(_v('y', a, p), -s.cif(p, q)) for p in self.P]
                terms += [(_v('y', b, q), -worst)] + [(ref, worst) for ref, _ in gap]
                self.add('eqVI', terms, GE, -worst)

    # -- objective: obj38-obj40 ----------------------------------------------

    def add_costs(self):
        s = self.s
        for a, b, skipped in self.adjacent_pairs():
            gap = [] if skipped is None else [(_v('y', skipped, q), 1.0) for q in self.P]
            for p in self.P:
                for q in self.P:
                    cif = s.cif(p, q)
                    if cif <= 0:
                        continue
                    self.add('obj38', [(_v('RC', a), 1.0), (_v('y', a, p), -cif), (_v('y', b, q), -cif)]
                             + [(ref, cif * c) for ref, c in gap], GE, -cif)
        for k in self.K:
            terms = [(_v('PC', k), 1.0)]
            for src in s.sources:
                for p in self.P:
                    cin = src.pump_cost.get(p, 0.0)
                    terms += [(_v('QP', i, src.id, p, k), -cin) for i in self.I]
            self.add('obj39', terms, EQ, 0.0)
        terms = [(_v('BC'), 1.0)]
        for d in s.depots:
            terms += [(_v('B', p, d.id), -d.backorder_cost.get(p, 0.0)) for p in self.P]
        self.add('obj40', terms, EQ, 0.0)

    def objective(self):
        terms = [(_v('RC', i), 1.0) for i in self.I[:-1]]
        terms += [(_v('PC', k), 1.0) for k in self.K]
        terms.append((_v('BC'), 1.0))
        return tuple(terms)

    def tie_break_terms(self):
        if not self.options.tie_break:
            return ()
        return ((_v('C', self.s.run_count), tie_break_weight(self.s)),)

    def build(self) -> ModelInstance:
        self.declare_variables()
        self.add_timing()
        self.add_injections()
        self.add_tracking()
        self.add_deliveries()
        self.add_products()
        if self.options.supply_bounds:
            self.add_supply_bounds()
        if self.options.valid_inequalities:
            self.add_valid_inequalities()
        self.add_costs()

        objective = self.objective()
        tie_break = self.tie_break_terms()
        for con in self.constraints:
            for ref, _ in con.terms:
                if ref not in self.variables:
                    raise KeyError(f"{con.name} references undeclared variable {ref.name}")

        return ModelInstance(
            scenario=self.s.name,
            variables=tuple(self.variables.values()),
            constraints=tuple(self.constraints),
            objective=objective,
            big_m=self.m,
            layout=tuple(self.layout),
            tie_break=tie_break,
            options=self.options,
        )


def initial_coordinates(layout) -> Dict[str, Tuple[float, float]]:
    """(F, W) of every slot before the first run: each batch sits on top of those behind it"""
    behind = 0.0
    coords = {}
    for slot in reversed(layout):
        behind += slot.volume0
        coords[slot.id] = (behind, slot.volume0)
    return coords


def _v(kind, *indices):
    return VarRef(kind, indices)


def _neg(terms):
    return [(ref, -coef) for ref, coef in terms]


def tie_break_weight(s: Scenario) -> float:
    """Makespan weight: a small fraction of the smallest positive cost coefficient"""
    coefficients = [c for c in s.interface_cost.values() if c > 0]
    coefficients += [c for src in s.sources for c in src.pump_cost.values() if c > 0]
    coefficients += [c for d in s.depots for c in d.backorder_cost.values() if c > 0]
    return Config.TIE_BREAK_FACTOR * (min(coefficients) if coefficients else 1.0)


def build_model(s: Scenario, options: Optional[BuildOptions] = None) -> ModelInstance:
    """Assemble the complete MILP for a validated scenario"""
    model = ModelBuilder(s, options).build()
    stats = model_stats(model)
    logger.info(f"Built model for '{s.name}': {stats['variables']} variables "
                f"({stats['binaries']} binary), {stats['constraints']} constraints")
    return model


# =============================================================================
# INSPECTION
# =============================================================================

def model_stats(m: ModelInstance) -> dict:
    by_tag = Counter(con.tag for con in m.constraints)
    by_kind = Counter(v.ref.kind for v in m.variables)
    return {
        'scenario': m.scenario,
        'variables': len(m.variables),
        'binaries': sum(1 for v in m.variables if v.integer),
        'constraints': len(m.constraints),
        'nonzeros': sum(len(con.terms) for con in m.constraints),
        'by_tag': {tag: by_tag[tag] for tag in CONSTRAINT_TAGS if by_tag[tag]},
        'by_kind': {kind: by_kind[kind] for kind in VARIABLE_KINDS if by_kind[kind]},
        'big_m': {'M_T': m.big_m.M_T, 'M_vol': m.big_m.M_vol,
                  'M_count': m.big_m.M_count, 'M_flow': m.big_m.M_flow},
    }


def _format_terms(terms):
    parts = []
    for ref, coef in terms:
        sign = '-' if coef < 0 else '+'
        magnitude = abs(coef)
        factor = '' if magnitude == 1 else f'{magnitude:g} '
        parts.append(f'{sign} {factor}{ref.name}')
    text = ' '.join(parts) if parts else '0'
    return text[2:] if text.startswith('+ ') else text


def render_algebraic(m: ModelInstance) -> str:
    """Human-readable dump: objective, one tagged line per constraint, then bounds"""
    lines = [f'\\ model {m.scenario}', 'minimize', f'  z: {_format_terms(m.full_objective)}',
             'subject to']
    for con in m.constraints:
        lines.append(f'  [{con.tag}] {con.name}: {_format_terms(con.terms)} {con.sense} {con.rhs:g}')
    lines.append('bounds')
    for v in m.variables:
        kind = 'binary' if v.integer else 'continuous'
        lines.append(f'  {v.lb:g} <= {v.ref.name} <= {v.ub:g}  ({kind})')
    return '\n'.join(lines) + '\n'


def evaluate_constraints(m: ModelInstance, values: Dict[VarRef, float], tol=None) -> List[Tuple[str, float]]:
    """Rows violated by `values` beyond `tol`, as (row name, violation amount)"""
    tol = Config.FEASIBILITY_TOL if tol is None else tol
    violated = []
    for con in m.constraints:
        lhs = sum(coef * values.get(ref, 0.0) for ref, coef in con.terms)
        if con.sense == LE:
            excess = lhs - con.rhs
        elif con.sense == GE:
            excess = con.rhs - lhs
        else:
            excess = abs(lhs - con.rhs)
        if excess > tol:
            violated.append((con.name, excess))
    for v in m.variables:
        value = values.get(v.ref, 0.0)
        excess = max(v.lb - value, value - v.ub)
        if excess > tol:
            violated.append((f'bound_{v.ref.name}', excess))
    return violated


def evaluate_objective(m: ModelInstance, values: Dict[VarRef, float], include_tie_break=False) -> float:
    terms = m.full_objective if include_tie_break else m.objective
    return float(sum(coef * values.get(ref, 0.0) for ref, coef in terms))
