import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptest.cover import (
    CoverConfig,
    ParetoPoint,
    TestSubset,
    approximation_check,
    detects,
    escape_risk,
    exhaustive_cover,
    filter_dominated,
    fit_log_frontier,
    frontier_candidates,
    greedy_cover,
    harmonic,
    make_subset,
    pareto_frontier,
)
from adaptest.exceptions import InsufficientPoints, TooLarge
from adaptest.ingest import CostVector

import oracles
from conftest import make_matrix, random_instance


def _point(eps, saving, risk):
    return ParetoPoint(eps, TestSubset((), 0.0, saving, 0, risk, 1))


class TestDetection:
    def test_full_set_detects_every_failing_unit(self, three_test):
        m, _ = three_test
        assert all(detects(range(m.m), u, m) == 1 for u in m.failing_units)

    def test_empty_set_detects_nothing(self, three_test):
        m, _ = three_test
        assert [detects((), u, m) for u in range(m.n)] == [0, 0, 0, 0]

    def test_step_that_never_failed(self, three_test):
        m, _ = three_test
        assert detects({2}, 3, m) == 0

    def test_escape_risk_values(self, three_test):
        m, _ = three_test
        assert escape_risk(range(3), m) == 0.0
        assert escape_risk({0}, m) == 1 / 3
        assert escape_risk((), m) == 1.0

    def test_escape_risk_without_failures(self):
        m = make_matrix([[1, 1]])
        assert escape_risk((), m) == 0.0


class TestGreedy:
    def test_zero_escape_fixture(self, three_test):
        m, c = three_test
        s = greedy_cover(m, c, CoverConfig(0))
        assert s.members == (0, 1) and s.cost == 3.0 and s.escapes == 0
        assert oracles.brute_force_min_cost(m.Y.tolist(), sorted(m.failing_units), c.c.tolist(), 0) == 3.0

    def test_one_escape_tolerated(self, three_test):
        m, c = three_test
        s = greedy_cover(m, c, CoverConfig(1))
        assert s.members == (0,) and s.cost == 1.0 and s.escapes == 1
        assert oracles.brute_force_min_cost(m.Y.tolist(), sorted(m.failing_units), c.c.tolist(), 1) == 1.0

    def test_no_failures_keeps_mandatory_only(self):
        m = make_matrix([[1, 1, 1]])
        s = greedy_cover(m, CostVector([1, 1, 1]), CoverConfig(0, {2}))
        assert s.members == (2,)

    def test_subset_figures(self, three_test):
        m, c = three_test
        s = greedy_cover(m, c)
        assert s.saving_pct == pytest.approx((1 - 3 / 13) * 100, rel=1e-15)
        assert s.escape_risk == 0.0 and s.n_failing == 3

    def test_mandatory_cost_counts(self, three_test):
        m, c = three_test
        s = greedy_cover(m, c, CoverConfig(0, {2}))
        assert s.members == (0, 1, 2) and s.cost == 13.0 and s.saving_pct == 0.0

    def test_zero_cost_step_taken_first(self):
        m = make_matrix([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
        s = greedy_cover(m, CostVector([1.0, 0.0, 0.0]), CoverConfig(2))
        # both free steps rank above any finite ratio; lower index wins
        assert s.members == (1,)

    def test_ratio_tie_goes_to_cheaper_step(self):
        # step 0 detects 2 for cost 2, step 1 detects 1 for cost 1: equal ratio
        m = make_matrix([[0, 1], [0, 0]])
        s = greedy_cover(m, CostVector([2.0, 1.0]), CoverConfig(1))
        assert s.members == (1,)

    def test_full_tie_goes_to_lower_index(self):
        m = make_matrix([[0, 0]])
        assert greedy_cover(m, CostVector([1.0, 1.0])).members == (0,)

    def test_bad_mandatory_rejected(self, three_test):
        m, c = three_test
        with pytest.raises(ValueError):
            greedy_cover(m, c, CoverConfig(0, {5}))


class TestExhaustive:
    def test_fixture(self, three_test):
        m, c = three_test
        s = exhaustive_cover(m, c, CoverConfig(0))
        assert s.members == (0, 1) and s.cost == 3.0

    def test_single_failure_single_step(self):
        m = make_matrix([[1, 1, 1], [1, 0, 1]])
        assert exhaustive_cover(m, CostVector([1, 5, 1])).members == (1,)

    def test_all_escapes_tolerated(self, three_test):
        m, c = three_test
        s = exhaustive_cover(m, c, CoverConfig(3))
        assert s.members == () and s.cost == 0.0

    def test_too_large(self):
        Y = np.ones((2, 6), dtype=np.uint8)
        Y[1, :] = 0
        with pytest.raises(TooLarge) as exc:
            exhaustive_cover(make_matrix(Y), CostVector(np.ones(6)), CoverConfig(0, exhaustive_limit=5))
        assert exc.value.diagnostic_count == 6

    def test_mandatory_not_counted_as_diagnostic(self):
        Y = np.ones((2, 6), dtype=np.uint8)
        Y[1, :] = 0
        s = exhaustive_cover(make_matrix(Y), CostVector(np.arange(1.0, 7.0)),
                             CoverConfig(0, {5}, exhaustive_limit=5))
        assert s.members == (5,)

    def test_tie_prefers_fewer_members(self):
        # {0} costs 2, {1, 2} costs 1 + 1: same cost, fewer members wins
        m = make_matrix([[0, 0, 1], [0, 1, 0]])
        assert exhaustive_cover(m, CostVector([2.0, 1.0, 1.0])).members == (0,)

    def test_tie_prefers_lexicographic(self):
        m = make_matrix([[0, 0]])
        assert exhaustive_cover(m, CostVector([1.0, 1.0])).members == (0,)

    def test_many_failing_units_span_words(self):
        rng = np.random.default_rng(3)
        Y = np.ones((300, 8), dtype=np.uint8)
        for u in range(300):
            Y[u, rng.integers(8)] = 0
        m, c = make_matrix(Y), CostVector(rng.uniform(1, 3, 8))
        fail_rows = sorted(m.failing_units)
        for eps in (0, 40, 150):
            s = exhaustive_cover(m, c, CoverConfig(eps))
            assert s.escapes <= eps
            assert s.cost == pytest.approx(oracles.brute_force_min_cost(m.Y.tolist(), fail_rows, c.c.tolist(), eps))


class TestBounds:
    def test_fixture_ratio_is_one(self, three_test):
        r = approximation_check(*three_test)
        assert r.ratio == 1.0 and r.within_bound

    def test_single_failing_unit(self):
        m = make_matrix([[1, 0, 0, 1], [1, 1, 1, 1]])
        r = approximation_check(m, CostVector([1, 3, 2, 1]))
        assert r.ratio == 1.0 and r.greedy_cost == 2.0

    def test_harmonic(self):
        assert harmonic(3) == pytest.approx(11 / 6)
        assert harmonic(0) == 0.0

    def test_three_failing_units_within_h3(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 300:
            Y = np.ones((3, 6), dtype=np.uint8)
            for u in range(3):
                Y[u, rng.random(6) < 0.4] = 0
                if Y[u].all():
                    Y[u, rng.integers(6)] = 0
            m, c = make_matrix(Y), CostVector(rng.uniform(0.1, 5, 6))
            r = approximation_check(m, c)
            assert r.ratio <= oracles.harmonic(3) + 1e-12
            checked += 1


class TestFrontier:
    def test_no_failures_single_point(self):
        m = make_matrix([[1, 1], [1, 1]])
        front = pareto_frontier(m, CostVector([1.0, 3.0]), mandatory={1})
        assert len(front) == 1
        p = front[0]
        assert p.epsilon == 0 and p.escape_risk == 0.0 and p.saving_pct == 25.0

    def test_dominance_definition(self):
        kept = filter_dominated([_point(0, 10.0, 0.0), _point(1, 8.0, 0.1)])
        assert [(p.saving_pct, p.escape_risk) for p in kept] == [(10.0, 0.0)]

    @pytest.mark.parametrize("solver", ["greedy", "exhaustive"])
    def test_fixture_frontier(self, three_test, solver):
        m, c = three_test
        front = pareto_frontier(m, c, solver=solver)
        assert [p.epsilon for p in front] == [0, 1, 3]
        assert [p.subset.cost for p in front] == [3.0, 1.0, 0.0]
        assert [p.escape_risk for p in front] == [0.0, 1 / 3, 1.0]

    def test_stride_keeps_endpoints(self, three_test):
        m, c = three_test
        cands = frontier_candidates(m, c, stride=2)
        assert [p.epsilon for p in cands] == [0, 2, 3]

    def test_rows_for_csv(self, three_test):
        m, c = three_test
        row = pareto_frontier(m, c)[0].to_row()
        assert set(row) == {"epsilon", "escapes", "escape_risk", "cost_s", "saving_pct", "n_steps"}


class TestLogFit:
    def test_exact_curve(self):
        pts = [_point(e, 2 * math.log(e) + 5, 0.0) for e in (1, 2, 4, 8)]
        fit = fit_log_frontier(pts)
        assert fit.a == pytest.approx(2.0, rel=1e-9)
        assert fit.b == pytest.approx(5.0, rel=1e-9)
        assert fit.r_squared == 1.0 and fit.points_used == 4

    def test_two_points_give_r2_one(self):
        fit = fit_log_frontier([_point(1, 40.0, 0.1), _point(5, 70.0, 0.3)])
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_zero_epsilon_excluded(self):
        pts = [_point(0, 99.0, 0.0)] + [_point(e, -math.log(e) + 1, 0.0) for e in (1, 3)]
        fit = fit_log_frontier(pts)
        assert fit.points_used == 2 and fit.a == pytest.approx(-1.0)

    def test_insufficient(self):
        with pytest.raises(InsufficientPoints):
            fit_log_frontier([_point(0, 1.0, 0.0), _point(1, 2.0, 0.1)])

    def test_report_format_illustration(self):
        fit = fit_log_frontier([_point(e, 15.30 * math.log(e) + 106.34, 0.0) for e in (1, 2, 3)])
        assert (round(fit.a, 2), round(fit.b, 2), round(fit.r_squared, 3)) == (15.30, 106.34, 1.0)


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=80, deadline=None)
@given(seeds)
def test_oracle_equivalence_properties(seed):
    rng = np.random.default_rng(seed)
    m, c = random_instance(rng, max_units=80, max_diag=8)
    fail_rows = sorted(m.failing_units)
    Y, costs = m.Y.tolist(), c.c.tolist()
    n_fail = len(fail_rows)
    eps = int(rng.integers(0, n_fail + 1))
    ex = exhaustive_cover(m, c, CoverConfig(eps))
    gr = greedy_cover(m, c, CoverConfig(eps))
    assert oracles.escapes(Y, fail_rows, ex.members) <= eps
    assert oracles.escapes(Y, fail_rows, gr.members) <= eps
    best = oracles.brute_force_min_cost(Y, fail_rows, costs, eps)
    assert ex.cost == pytest.approx(best, rel=1e-12, abs=1e-12)
    assert ex.cost <= gr.cost + 1e-12
    full = approximation_check(m, c, CoverConfig(0))
    assert full.within_bound


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_zero_escape_and_monotone(seed):
    rng = np.random.default_rng(seed)
    m, c = random_instance(rng, max_units=120, max_diag=10)
    assert greedy_cover(m, c, CoverConfig(0)).escape_risk == 0.0
    costs = [p.subset.cost for p in frontier_candidates(m, c)]
    assert all(a >= b for a, b in zip(costs, costs[1:]))


@settings(max_examples=60, deadline=None)
@given(seeds, st.sampled_from(["greedy", "exhaustive"]))
def test_frontier_has_no_dominated_pair(seed, solver):
    rng = np.random.default_rng(seed)
    m, c = random_instance(rng, max_units=100, max_diag=8)
    front = pareto_frontier(m, c, solver=solver)
    for p in front:
        for q in front:
            assert not (q.saving_pct >= p.saving_pct and q.escape_risk <= p.escape_risk
                        and (q.saving_pct > p.saving_pct or q.escape_risk < p.escape_risk))
    risks = [p.escape_risk for p in front]
    assert risks == sorted(risks)


@settings(max_examples=60, deadline=None)
@given(seeds, st.sampled_from([0.25, 0.5, 2.0, 8.0, 1024.0]))
def test_scaling_costs_keeps_greedy_selection(seed, factor):
    rng = np.random.default_rng(seed)
    m, c = random_instance(rng, max_units=100, max_diag=10)
    eps = int(rng.integers(0, len(m.failing_units) + 1))
    a = greedy_cover(m, c, CoverConfig(eps))
    b = greedy_cover(m, CostVector(c.c * factor), CoverConfig(eps))
    assert a.members == b.members


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_mandatory_always_present(seed):
    rng = np.random.default_rng(seed)
    m, c = random_instance(rng, max_units=60, max_diag=6)
    mand = frozenset(rng.choice(m.m, size=min(2, m.m), replace=False).tolist())
    for solver in ("greedy", "exhaustive"):
        for p in frontier_candidates(m, c, solver=solver, mandatory=mand):
            assert mand <= set(p.subset.members)
            assert p.subset.cost >= math.fsum(c.c[list(mand)].tolist()) - 1e-12


def test_make_subset_invariants(three_test):
    m, c = three_test
    s = make_subset({2, 0}, m, c)
    assert s.members == (0, 2)
    assert s.cost == 11.0
    assert s.escapes == s.n_failing - 2
