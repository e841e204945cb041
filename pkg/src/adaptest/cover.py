"""Offline test-subset optimisation.

Failing units are tracked as bitsets (Python ints for the greedy loop,
``uint64`` word arrays for exhaustive enumeration), one bit per failing unit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exceptions import InsufficientPoints, Infeasible, TooLarge


@dataclass(frozen=True)
class CoverConfig:
    epsilon: int = 0
    mandatory_steps: frozenset = frozenset()
    exhaustive_limit: int = 20

    def __post_init__(self):
        if int(self.epsilon) != self.epsilon or self.epsilon < 0:
            raise ValueError("epsilon must be a nonnegative integer")
        object.__setattr__(self, "epsilon", int(self.epsilon))
        object.__setattr__(self, "mandatory_steps", frozenset(int(i) for i in self.mandatory_steps))

    def validate(self, m):
        bad = [i for i in self.mandatory_steps if not 0 <= i < m.m]
        if bad:
            raise ValueError(f"mandatory steps out of range: {sorted(bad)}")


@dataclass(frozen=True)
class TestSubset:
    """A candidate plan and its cost / risk figures."""

    __test__ = False

    members: tuple
    cost: float
    saving_pct: float
    escapes: int
    escape_risk: float
    n_failing: int
    fit_units: frozenset | None = field(default=None, compare=False)

    def __contains__(self, i):
        return i in self.members

    def __len__(self):
        return len(self.members)

    def to_dict(self, m):
        return {
            "members": [m.steps[i] for i in self.members],
            "cost_s": self.cost,
            "saving_pct": self.saving_pct,
            "escapes": self.escapes,
            "escape_risk": self.escape_risk,
        }


@dataclass(frozen=True)
class ParetoPoint:
    epsilon: int
    subset: TestSubset

    @property
    def saving_pct(self):
        return self.subset.saving_pct

    @property
    def escape_risk(self):
        return self.subset.escape_risk

    def to_row(self):
        s = self.subset
        return {
            "epsilon": self.epsilon,
            "escapes": s.escapes,
            "escape_risk": s.escape_risk,
            "cost_s": s.cost,
            "saving_pct": s.saving_pct,
            "n_steps": len(s.members),
        }


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    r_squared: float
    points_used: int

    def predict(self, epsilon):
        return self.a * np.log(epsilon) + self.b

    def to_dict(self):
        return {"a": self.a, "b": self.b, "r_squared": self.r_squared, "points_used": self.points_used}


@dataclass(frozen=True)
class BoundReport:
    greedy_cost: float
    optimal_cost: float
    ratio: float
    harmonic_bound: float
    within_bound: bool
    n_failing: int


def _members(C):
    if isinstance(C, TestSubset):
        return C.members
    return tuple(sorted(int(i) for i in C))


def detects(C, u, m):
    """1 if some step of ``C`` failed for unit ``u``, else 0 (0 for empty ``C``)."""
    cols = list(_members(C))
    if not cols:
        return 0
    return int(np.any(m.Y[u, cols] == 0))


def detected_mask(C, m, rows=None):
    """Detection indicator for every unit (or for ``rows``) as a bool array."""
    cols = list(_members(C))
    Y = m.Y if rows is None else m.Y[rows]
    if not cols:
        return np.zeros(Y.shape[0], dtype=bool)
    return np.any(Y[:, cols] == 0, axis=1)


def count_escapes(C, m):
    fail_rows = np.flatnonzero(m.failing_mask)
    return int(np.count_nonzero(~detected_mask(C, m, fail_rows)))


def escape_risk(C, m):
    n_fail = int(np.count_nonzero(m.failing_mask))
    if n_fail == 0:
        return 0.0
    return count_escapes(C, m) / n_fail


def saving_pct(cost, c_full):
    if c_full <= 0:
        return 0.0
    return (1.0 - cost / c_full) * 100.0


def make_subset(members, m, c, fit_units=None):
    members = _members(members)
    cost = math.fsum(c.c[list(members)].tolist())
    n_fail = int(np.count_nonzero(m.failing_mask))
    esc = count_escapes(members, m)
    return TestSubset(
        members=members,
        cost=cost,
        saving_pct=saving_pct(cost, c.c_full),
        escapes=esc,
        escape_risk=esc / n_fail if n_fail else 0.0,
        n_failing=n_fail,
        fit_units=fit_units,
    )


def _step_bitsets(m):
    fail = m.Y[m.failing_mask] == 0
    packed = np.packbits(fail, axis=0, bitorder="little")
    return [int.from_bytes(packed[:, i].tobytes(), "little") for i in range(m.m)]


def _fit_units(m):
    return frozenset(m.units)


def greedy_cover(m, c, cfg=None):
    """Cost-weighted greedy cover stopping once at most ``cfg.epsilon`` failing units escape.

    Each round adds the step maximising newly detected failing units per
    second.  Ties: higher ratio, then lower cost, then lower index; zero-cost
    steps with positive gain rank above every finite ratio.
    """
    cfg = cfg or CoverConfig()
    cfg.validate(m)
    masks = _step_bitsets(m)
    n_fail = int(np.count_nonzero(m.failing_mask))
    chosen = set(cfg.mandatory_steps)
    covered = 0
    for i in chosen:
        covered |= masks[i]
    costs = c.c.tolist()
    while n_fail - covered.bit_count() > cfg.epsilon:
        best, best_key = None, None
        for i in range(m.m):
            if i in chosen:
                continue
            gain = (masks[i] & ~covered).bit_count()
            if gain == 0:
                continue
            if costs[i] == 0:
                key = (1, 0, 0.0, -i)
            else:
                key = (0, Fraction(gain) / Fraction(costs[i]), -costs[i], -i)
            if best_key is None or key > best_key:
                best, best_key = i, key
        if best is None:
            raise Infeasible("no remaining step detects an uncovered failing unit")
        chosen.add(best)
        covered |= masks[best]
    return make_subset(chosen, m, c, fit_units=_fit_units(m))


class _SubsetTable:
    """Every subset of the diagnostic steps with its cost and escape count."""

    def __init__(self, m, c, mandatory, limit):
        masks = m.Y[m.failing_mask] == 0
        self.n_fail = masks.shape[0]
        mandatory = sorted(mandatory)
        self.mandatory = mandatory
        self.diag = [i for i in range(m.m) if i not in set(mandatory) and masks[:, i].any()]
        k = len(self.diag)
        if k > limit:
            raise TooLarge(k, limit)
        words = max(1, -(-self.n_fail // 64))
        packed = np.zeros((m.m, words * 8), dtype=np.uint8)
        if self.n_fail:
            packed[:, : -(-self.n_fail // 8)] = np.packbits(masks, axis=0, bitorder="little").T
        step_words = packed.view(np.uint64).reshape(m.m, words)

        size = 1 << k
        cov = np.zeros((size, words), dtype=np.uint64)
        for i in mandatory:
            cov[0] |= step_words[i]
        cost = np.zeros(size)
        count = np.zeros(size, dtype=np.int64)
        for j, i in enumerate(self.diag):
            half = 1 << j
            np.bitwise_or(cov[:half], step_words[i], out=cov[half : 2 * half])
            np.add(cost[:half], c.c[i], out=cost[half : 2 * half])
            np.add(count[:half], 1, out=count[half : 2 * half])
        self.cost = cost
        self.count = count
        self.escapes = self.n_fail - np.bitwise_count(cov).sum(axis=1, dtype=np.int64)

    def members(self, index):
        return tuple(sorted(self.mandatory + [i for j, i in enumerate(self.diag) if index >> j & 1]))

    def best(self, epsilon):
        feasible = np.flatnonzero(self.escapes <= epsilon)
        costs = self.cost[feasible]
        low = costs.min()
        ties = feasible[costs <= low + abs(low) * 1e-12]
        return min(ties, key=lambda idx: (self.count[idx], self.members(idx)))


def exhaustive_cover(m, c, cfg=None):
    """Exact minimum-cost subset with at most ``cfg.epsilon`` escapes.

    Only diagnostic steps (those failing for some failing unit) are
    enumerated; mandatory steps are always included.  Ties go to fewer
    members, then lexicographic member order.
    """
    cfg = cfg or CoverConfig()
    cfg.validate(m)
    table = _SubsetTable(m, c, cfg.mandatory_steps, cfg.exhaustive_limit)
    return make_subset(table.members(table.best(cfg.epsilon)), m, c, fit_units=_fit_units(m))


def epsilon_grid(n_fail, stride=1):
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = list(range(0, n_fail + 1, stride))
    if grid[-1] != n_fail:
        grid.append(n_fail)
    return grid


def frontier_candidates(m, c, solver="greedy", mandatory=(), stride=1, exhaustive_limit=20):
    """One solved subset per escape level, before dominance filtering."""
    n_fail = int(np.count_nonzero(m.failing_mask))
    grid = epsilon_grid(n_fail, stride)
    mandatory = frozenset(mandatory)
    if solver == "greedy":
        return [
            ParetoPoint(eps, greedy_cover(m, c, CoverConfig(eps, mandatory, exhaustive_limit)))
            for eps in grid
        ]
    if solver == "exhaustive":
        CoverConfig(0, mandatory, exhaustive_limit).validate(m)
        table = _SubsetTable(m, c, mandatory, exhaustive_limit)
        fit = _fit_units(m)
        return [ParetoPoint(eps, make_subset(table.members(table.best(eps)), m, c, fit)) for eps in grid]
    raise ValueError(f"unknown solver {solver!r}")


def dominates(p, q):
    return (
        p.saving_pct >= q.saving_pct
        and p.escape_risk <= q.escape_risk
        and (p.saving_pct > q.saving_pct or p.escape_risk < q.escape_risk)
    )


def filter_dominated(points):
    """Drop dominated points and repeated operating points; sort by risk."""
    kept = []
    seen = set()
    for p in sorted(points, key=lambda p: p.epsilon):
        if any(dominates(q, p) for q in points):
            continue
        key = (p.saving_pct, p.escape_risk)
        if key in seen:
            continue
        seen.add(key)
        kept.append(p)
    return sorted(kept, key=lambda p: (p.escape_risk, p.epsilon))


def pareto_frontier(m, c, solver="greedy", mandatory=(), stride=1, exhaustive_limit=20):
    return filter_dominated(frontier_candidates(m, c, solver, mandatory, stride, exhaustive_limit))


def fit_log_frontier(frontier):
    """Least-squares fit of ``saving = a*ln(eps) + b`` over points with eps >= 1."""
    pts = [p for p in frontier if p.epsilon >= 1]
    if len(pts) < 2:
        raise InsufficientPoints(f"need at least 2 points with epsilon >= 1, got {len(pts)}")
    x = np.log(np.array([p.epsilon for p in pts], dtype=float))
    y = np.array([p.saving_pct for p in pts], dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a * x + b)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
        if ss_res <= 1e-24 * max(1.0, ss_tot):
            r2 = 1.0
    return FitResult(float(a), float(b), r2, len(pts))


def harmonic(n):
    return math.fsum(1.0 / k for k in range(1, n + 1))


def approximation_check(m, c, cfg=None):
    """Compare greedy against the exact optimum and the H(|U_F|) bound."""
    cfg = cfg or CoverConfig()
    opt = exhaustive_cover(m, c, cfg)
    greedy = greedy_cover(m, c, cfg)
    if opt.cost == 0:
        ratio = 1.0 if greedy.cost == 0 else math.inf
    else:
        ratio = greedy.cost / opt.cost
    bound = max(1.0, harmonic(opt.n_failing))
    return BoundReport(greedy.cost, opt.cost, ratio, bound, ratio <= bound * (1 + 1e-12), opt.n_failing)
