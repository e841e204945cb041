"""Seeded synthetic production streams with defect signatures and drift phases.

A signature is a set of steps that all FAIL on a defective unit carrying it.
Phases partition the stream; each phase has its own defect rate and its own
set of active signatures, so a new failure mode can appear mid-stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .config import canonical_json, load_config
from .exceptions import InvalidScenario
from .ingest import CostVector, OutcomeMatrix


@dataclass(frozen=True)
class CostSpec:
    low: float = 0.5
    high: float = 5.0
    heavy_tail: bool = False
    values: tuple | None = None

    def to_dict(self):
        d = {"low": self.low, "high": self.high, "heavy_tail": self.heavy_tail}
        if self.values is not None:
            d["values"] = list(self.values)
        return d


@dataclass(frozen=True)
class Signature:
    steps: tuple
    weight: float = 1.0

    def to_dict(self):
        return {"steps": list(self.steps), "weight": self.weight}


@dataclass(frozen=True)
class Phase:
    start: int
    end: int
    defect_rate: float
    signatures: tuple = ()

    def to_dict(self):
        return {"start": self.start, "end": self.end, "defect_rate": self.defect_rate,
                "signatures": list(self.signatures)}


@dataclass(frozen=True)
class Scenario:
    n_units: int
    n_steps: int
    step_costs: CostSpec = field(default_factory=CostSpec)
    signatures: tuple = ()
    phases: tuple = ()
    seed: int = 0
    abort_rate: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "signatures", tuple(self.signatures))
        object.__setattr__(self, "phases", tuple(self.phases) or (Phase(0, self.n_units, 0.0),))
        self.validate()

    def validate(self):
        if self.n_units < 1 or self.n_steps < 1:
            raise InvalidScenario("n_units and n_steps must be positive")
        if not 0.0 <= self.abort_rate <= 1.0:
            raise InvalidScenario("abort_rate must lie in [0, 1]")
        cs = self.step_costs
        if cs.values is not None:
            if len(cs.values) != self.n_steps or min(cs.values) < 0:
                raise InvalidScenario("explicit step costs need one nonnegative value per step")
        elif not 0 <= cs.low <= cs.high:
            raise InvalidScenario("step cost range needs 0 <= low <= high")
        for k, sig in enumerate(self.signatures):
            if not sig.steps:
                raise InvalidScenario(f"signature {k} has no steps")
            if any(not 0 <= i < self.n_steps for i in sig.steps):
                raise InvalidScenario(f"signature {k} references a step outside 0..{self.n_steps - 1}")
            if sig.weight <= 0:
                raise InvalidScenario(f"signature {k} needs a positive weight")
        cursor = 0
        for k, ph in enumerate(sorted(self.phases, key=lambda p: p.start)):
            if ph.start != cursor or ph.end <= ph.start:
                raise InvalidScenario(f"phases must partition [0, {self.n_units}) without gaps or overlaps")
            cursor = ph.end
            if not 0.0 <= ph.defect_rate <= 1.0:
                raise InvalidScenario(f"phase {k} defect_rate must lie in [0, 1]")
            if any(not 0 <= j < len(self.signatures) for j in ph.signatures):
                raise InvalidScenario(f"phase {k} activates an unknown signature")
            if ph.defect_rate > 0 and not ph.signatures:
                raise InvalidScenario(f"phase {k} has defects but no active signature")
        if cursor != self.n_units:
            raise InvalidScenario(f"phases must partition [0, {self.n_units}) without gaps or overlaps")

    def to_dict(self):
        return {
            "name": self.name,
            "n_units": self.n_units,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "abort_rate": self.abort_rate,
            "step_costs": self.step_costs.to_dict(),
            "signatures": [s.to_dict() for s in self.signatures],
            "phases": [p.to_dict() for p in self.phases],
        }

    def to_json(self):
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        try:
            cost = d.get("step_costs", {})
            values = cost.get("values")
            return cls(
                n_units=int(d["n_units"]),
                n_steps=int(d["n_steps"]),
                step_costs=CostSpec(
                    low=float(cost.get("low", CostSpec.low)),
                    high=float(cost.get("high", CostSpec.high)),
                    heavy_tail=bool(cost.get("heavy_tail", False)),
                    values=tuple(float(v) for v in values) if values is not None else None,
                ),
                signatures=tuple(
                    Signature(tuple(int(i) for i in s["steps"]), float(s.get("weight", 1.0)))
                    for s in d.get("signatures", [])
                ),
                phases=tuple(
                    Phase(int(p["start"]), int(p["end"]), float(p["defect_rate"]),
                          tuple(int(j) for j in p.get("signatures", [])))
                    for p in d.get("phases", [])
                ),
                seed=int(d.get("seed", 0)),
                abort_rate=float(d.get("abort_rate", 0.0)),
                name=str(d.get("name", "custom")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScenario(f"malformed scenario: {exc!r}") from exc


def scenario_from_file(path):
    d = load_config(path)
    return Scenario.from_dict(d.get("scenario", d))


def drift_a(seed=0):
    """Stable phase failing on steps 3/7, then a higher defect rate with a new step-19 mode."""
    return Scenario(
        name="drift-A",
        n_units=8000,
        n_steps=24,
        step_costs=CostSpec(low=0.5, high=6.0),
        signatures=(
            Signature((3,)),
            Signature((7,)),
            Signature((3, 7)),
            Signature((19,)),
        ),
        phases=(
            Phase(0, 5000, 0.04, (0, 1, 2)),
            Phase(5000, 8000, 0.13, (0, 1, 2, 3)),
        ),
        seed=seed,
    )


BUNDLED = {"drift-A": "drift_a.json"}


def bundled_scenario(name):
    if name not in BUNDLED:
        raise InvalidScenario(f"unknown bundled scenario {name!r}; have {sorted(BUNDLED)}")
    ref = resources.files("adaptest") / "data" / BUNDLED[name]
    with resources.as_file(ref) as path:
        return scenario_from_file(path)


def generate(s):
    """Draw ``(OutcomeMatrix, CostVector, metadata)`` from a scenario.

    Defective units pick one active signature with probability proportional
    to its weight and fail exactly those steps.  Metadata records per-unit
    phase and signature (-1 when clean) as ground truth.
    """
    s.validate()
    rng = np.random.default_rng(s.seed)
    cs = s.step_costs
    if cs.values is not None:
        costs = np.array(cs.values, dtype=float)
    elif cs.heavy_tail:
        costs = np.minimum(cs.low * (1.0 + rng.pareto(1.5, s.n_steps)), cs.high)
    else:
        costs = rng.uniform(cs.low, cs.high, s.n_steps)

    u_defect = rng.random(s.n_units)
    u_sig = rng.random(s.n_units)
    u_abort = rng.random(s.n_units)

    Y = np.ones((s.n_units, s.n_steps), dtype=np.uint8)
    phase_of = np.empty(s.n_units, dtype=np.int64)
    sig_of = np.full(s.n_units, -1, dtype=np.int64)
    for k, ph in enumerate(s.phases):
        sl = slice(ph.start, ph.end)
        phase_of[sl] = k
        if not ph.signatures:
            continue
        weights = np.array([s.signatures[j].weight for j in ph.signatures])
        edges = np.cumsum(weights) / weights.sum()
        pick = np.minimum(np.searchsorted(edges, u_sig[sl], side="right"), len(edges) - 1)
        defective = u_defect[sl] < ph.defect_rate
        sig_of[sl] = np.where(defective, np.array(ph.signatures)[pick], -1)
    for j, sig in enumerate(s.signatures):
        rows = np.flatnonzero(sig_of == j)
        Y[np.ix_(rows, list(sig.steps))] = 0

    defective = sig_of >= 0
    abort_only = ~defective & (u_abort < s.abort_rate)
    board_fail = defective | abort_only

    width = len(str(s.n_units))
    units = [f"U{t:0{width}d}" for t in range(s.n_units)]
    steps = [f"grp{i // 8}::step_{i:02d}" for i in range(s.n_steps)]
    m = OutcomeMatrix(units, steps, Y, board_fail, abort_only)
    meta = {
        "scenario": s.to_dict(),
        "phase": phase_of.tolist(),
        "signature": sig_of.tolist(),
        "abort_only": np.flatnonzero(abort_only).tolist(),
    }
    return m, CostVector(costs), meta


def signature_units(meta, signature):
    """Units whose ground-truth signature is ``signature``."""
    return [t for t, j in enumerate(meta["signature"]) if j == signature]
