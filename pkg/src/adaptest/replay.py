"""Chronological replay of a plan-selection policy over historical outcomes.

The full-flow outcome matrix acts as an oracle: for every unit we know
whether the reduced plan would have caught it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cover import CoverConfig, detected_mask, greedy_cover, make_subset
from .exceptions import DimensionMismatch, EmptyTrace, LeakageError
from .policy import FULL, REDUCED, PolicyState, UnitStatus, regret

TRACE_FIELDS = ("t", "arm", "rho", "status", "reward", "cost")


@dataclass(frozen=True)
class StreamUnit:
    unit_index: int
    row: np.ndarray
    in_UF: bool
    board_pass: bool


def stream_units(m):
    failing = m.failing_mask
    for t in range(m.n):
        yield StreamUnit(t, m.Y[t], bool(failing[t]), bool(not m.board_fail[t]))


@dataclass(frozen=True)
class TraceRow:
    t: int
    arm: int
    rho: float
    status: UnitStatus
    reward: float
    cost: float


@dataclass
class ReplayResult:
    trace: list
    sel_rate: float
    saving_pct: float
    escaped: int
    escape_risk: float
    regret: float
    delta_ok: bool
    n_failing: int
    rolling_sel: list = field(default_factory=list)
    rolling_rho: list = field(default_factory=list)
    state: PolicyState | None = field(default=None, repr=False)

    def report_row(self, cohort, cfg):
        algo = cfg.algorithm
        return {
            "cohort": cohort,
            "algorithm": algo,
            "beta": None if algo in ("full", "reduced") else cfg.beta_sens,
            "sel_rate_pct": self.sel_rate * 100.0,
            "saving_pct": self.saving_pct,
            "escaped": self.escaped,
            "escape_risk": self.escape_risk,
            "regret": self.regret,
            "delta_ok": self.delta_ok,
        }


def check_subset(c_red, m):
    bad = [i for i in c_red.members if not 0 <= i < m.m]
    if bad:
        raise DimensionMismatch(f"reduced plan references steps outside the matrix: {bad}")


def subset_from_ids(step_ids, m, c, fit_units=None):
    """Resolve step ids (e.g. from a cover JSON file) into a subset of ``m``."""
    index = {s: i for i, s in enumerate(m.steps)}
    missing = [s for s in step_ids if s not in index]
    if missing:
        raise DimensionMismatch(f"steps not present in the matrix: {missing}")
    return make_subset([index[s] for s in step_ids], m, c, fit_units=fit_units)


def rolling_mean(values, window):
    """Trailing mean over the last ``window`` values, averaging the prefix while t < window."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(1, len(x) + 1)
    lo = np.maximum(0, t - window)
    return (csum[t] - csum[lo]) / (t - lo)


def replay(m, c, c_red, cfg, state=None):
    """Replay ``cfg``'s policy over every unit of ``m`` in row order.

    Pass ``state`` (a previous result's ``.state``) to continue learning
    across cohorts instead of starting from the priors.
    """
    check_subset(c_red, m)
    state = state or PolicyState(cfg)
    failing = m.failing_mask
    board_pass = ~m.board_fail
    caught_red = detected_mask(c_red, m)
    any_fail = (m.Y == 0).any(axis=1)
    c_full = c.c_full
    costs = (c_full, c_red.cost)

    trace = []
    sel = 0
    escaped = 0
    cost_col = []
    for t in range(m.n):
        d = state.decide()
        arm = d.arm
        if arm == FULL:
            status = UnitStatus.CLEAN if board_pass[t] else UnitStatus.DETECTED
        elif not failing[t]:
            status = UnitStatus.CLEAN
        elif caught_red[t]:
            status = UnitStatus.DETECTED
        else:
            status = UnitStatus.ESCAPED
            escaped += 1
        if cfg.observed_only:
            passed = not (any_fail[t] if arm == FULL else caught_red[t])
        else:
            passed = bool(board_pass[t])
        r = state.update(arm, status, passed)
        sel += arm
        cost_col.append(costs[arm])
        trace.append(TraceRow(t, arm, d.rho, status, r, costs[arm]))

    if not trace:
        raise EmptyTrace("cannot replay an empty stream")
    n = len(trace)
    n_fail = int(np.count_nonzero(failing))
    risk = escaped / n_fail if n_fail else 0.0
    mean_cost = math.fsum(cost_col) / n
    result = ReplayResult(
        trace=trace,
        sel_rate=sel / n,
        saving_pct=(1.0 - mean_cost / c_full) * 100.0 if c_full > 0 else 0.0,
        escaped=escaped,
        escape_risk=risk,
        regret=regret((row.arm, row.reward) for row in trace),
        delta_ok=risk <= cfg.delta,
        n_failing=n_fail,
        state=state,
    )
    result.rolling_sel = rolling_mean([row.arm for row in trace], cfg.w).tolist()
    result.rolling_rho = [row.rho for row in trace]
    return result


def compute_metrics(trace, m, c, c_red):
    """Recompute (sel_rate, saving_pct, escaped, escape_risk) from a trace alone."""
    trace = list(trace)
    if not trace:
        raise EmptyTrace("metrics need at least one unit")
    n = len(trace)
    arms = np.array([row.arm for row in trace])
    plan_cost = np.where(arms == REDUCED, c_red.cost, c.c_full)
    mean_cost = math.fsum(plan_cost.tolist()) / n
    rows = np.array([row.t for row in trace])
    failing = m.failing_mask[rows]
    caught = detected_mask(c_red, m, rows)
    escaped = int(np.count_nonzero(failing & (arms == REDUCED) & ~caught))
    n_fail = int(np.count_nonzero(failing))
    return (
        float(np.count_nonzero(arms == REDUCED)) / n,
        (1.0 - mean_cost / c.c_full) * 100.0 if c.c_full > 0 else 0.0,
        escaped,
        escaped / n_fail if n_fail else 0.0,
    )


def instability_intervals(rho, tau):
    """Half-open ``[start, end)`` index runs where ``rho < tau``."""
    below = np.asarray(rho) < tau
    edges = np.diff(np.concatenate([[0], below.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def export_series(r, window, tau=None):
    """Plot data: rolling reduced-plan share, rho per unit, and instability runs."""
    arms = [row.arm for row in r.trace]
    ts = [row.t for row in r.trace]
    sel = rolling_mean(arms, window).tolist()
    rho = [row.rho for row in r.trace]
    out = {"selection": list(zip(ts, sel)), "rho": list(zip(ts, rho))}
    if tau is not None:
        out["instability"] = [(ts[s], ts[e - 1] + 1) for s, e in instability_intervals(rho, tau)]
    return out


def write_series(series, out_dir, prefix="series"):
    out_dir = Path(out_dir)
    paths = []
    sel_path = out_dir / f"{prefix}_selection.csv"
    with open(sel_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "rolling_sel"])
        w.writerows(series["selection"])
    paths.append(sel_path)
    rho_path = out_dir / f"{prefix}_rho.csv"
    with open(rho_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "rho"])
        w.writerows(series["rho"])
    paths.append(rho_path)
    if "instability" in series:
        iv_path = out_dir / f"{prefix}_instability.csv"
        with open(iv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start", "end"])
            w.writerows(series["instability"])
        paths.append(iv_path)
    return paths


def write_trace(r, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in r.trace:
            w.writerow([row.t, row.arm, row.rho, row.status.value, row.reward, row.cost])


@dataclass
class SplitResult:
    c_red: object
    training: ReplayResult
    validation: ReplayResult | None

    def report_rows(self, cfg):
        rows = [self.training.report_row("training", cfg)]
        if self.validation is not None:
            rows.append(self.validation.report_row("validation", cfg))
        return rows


def run_split(m, c, cfg, split=None, c_red=None, cover_cfg=None, carry_state=False):
    """Build (or accept) a reduced plan on the training slice, then replay both cohorts.

    Raises :class:`LeakageError` when ``c_red`` was fitted on any validation unit.
    """
    split = m.n if split is None else int(split)
    if not 0 < split <= m.n:
        raise ValueError(f"split index {split} outside (0, {m.n}]")
    train = m.rows(0, split)
    valid = m.rows(split) if split < m.n else None
    if c_red is None:
        c_red = greedy_cover(train, c, cover_cfg or CoverConfig())
    if valid is not None and c_red.fit_units is not None:
        leaked = c_red.fit_units & set(valid.units)
        if leaked:
            raise LeakageError(f"{len(leaked)} validation units were used to build the reduced plan")
    # escape figures are re-evaluated on each cohort's own failing units
    train_res = replay(train, c, c_red, cfg)
    valid_res = None
    if valid is not None:
        state = train_res.state if carry_state else None
        valid_res = replay(valid, c, c_red, cfg, state=state)
    return SplitResult(c_red, train_res, valid_res)
