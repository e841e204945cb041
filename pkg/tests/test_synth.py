import io
import json
import math

import numpy as np
import pytest

from adaptest.cover import CoverConfig, greedy_cover
from adaptest.exceptions import InvalidScenario, ParseError
from adaptest.ingest import build_matrix, parse_log_csv
from adaptest.policy import PolicyConfig
from adaptest.replay import replay, run_split
from adaptest.synth import (
    BUNDLED,
    CostSpec,
    Phase,
    Scenario,
    Signature,
    bundled_scenario,
    drift_a,
    generate,
    scenario_from_file,
    signature_units,
)


def test_zero_rate_has_no_failing_units():
    m, c, meta = generate(Scenario(500, 10, phases=(Phase(0, 500, 0.0),)))
    assert m.failing_units == frozenset() and (m.Y == 1).all()
    assert set(meta["signature"]) == {-1}


def test_single_signature_rate_one():
    s = Scenario(50, 6, signatures=(Signature((3,)),), phases=(Phase(0, 50, 1.0, (0,)),))
    m, _, _ = generate(s)
    expected = np.ones((50, 6), dtype=np.uint8)
    expected[:, 3] = 0
    assert (m.Y == expected).all() and len(m.failing_units) == 50


@pytest.mark.parametrize("kwargs", [
    {"phases": (Phase(0, 60, 0.1, (0,)), Phase(50, 100, 0.1, (0,)))},
    {"phases": (Phase(0, 40, 0.1, (0,)), Phase(50, 100, 0.1, (0,)))},
    {"phases": (Phase(0, 100, 1.5, (0,)),)},
    {"phases": (Phase(0, 100, 0.1, (3,)),)},
    {"phases": (Phase(0, 100, 0.1),)},
    {"signatures": (Signature((12,)),)},
    {"signatures": (Signature(()),)},
    {"signatures": (Signature((1,), weight=0.0),)},
    {"abort_rate": -0.1},
    {"step_costs": CostSpec(low=3.0, high=1.0)},
    {"step_costs": CostSpec(values=(1.0, 2.0))},
])
def test_invalid_scenarios(kwargs):
    base = {"signatures": (Signature((1,)),), "phases": (Phase(0, 100, 0.1, (0,)),)}
    with pytest.raises(InvalidScenario):
        Scenario(100, 10, **(base | kwargs))


def test_minimal_file_fills_defaults(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text("[scenario]\nn_units = 20\nn_steps = 4\n")
    s = scenario_from_file(p)
    assert s.seed == 0 and s.abort_rate == 0.0 and s.step_costs == CostSpec()
    assert s.phases == (Phase(0, 20, 0.0),) and s.signatures == ()


def test_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        scenario_from_file(bad)
    overlap = tmp_path / "overlap.json"
    overlap.write_text(json.dumps({
        "n_units": 10, "n_steps": 3, "signatures": [{"steps": [0]}],
        "phases": [{"start": 0, "end": 6, "defect_rate": 0.1, "signatures": [0]},
                   {"start": 5, "end": 10, "defect_rate": 0.1, "signatures": [0]}],
    }))
    with pytest.raises(InvalidScenario):
        scenario_from_file(overlap)
    with pytest.raises(InvalidScenario):
        Scenario.from_dict({"n_steps": 3})


def test_bundled_drift_a_is_byte_identical():
    assert set(BUNDLED) == {"drift-A"}
    s = bundled_scenario("drift-A")
    assert s == drift_a()
    assert s.to_json() == drift_a().to_json()
    from importlib import resources
    raw = (resources.files("adaptest") / "data" / "drift_a.json").read_text(encoding="utf-8")
    assert raw == drift_a().to_json()
    with pytest.raises(InvalidScenario):
        bundled_scenario("drift-Z")


def test_round_trip_dict():
    s = Scenario(30, 5, step_costs=CostSpec(values=(1, 2, 3, 4, 5)),
                 signatures=(Signature((0, 2), 2.0), Signature((4,))),
                 phases=(Phase(0, 10, 0.2, (0,)), Phase(10, 30, 0.5, (0, 1))), seed=4, abort_rate=0.1)
    assert Scenario.from_dict(json.loads(s.to_json())) == s


def test_deterministic():
    a = generate(drift_a(3))
    b = generate(drift_a(3))
    assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
    assert generate(drift_a(4))[0] != a[0]


def test_rate_fidelity():
    s = drift_a()
    m, _, meta = generate(s)
    sig = np.array(meta["signature"])
    for ph in s.phases:
        n = ph.end - ph.start
        rate = np.mean(sig[ph.start:ph.end] >= 0)
        se = math.sqrt(ph.defect_rate * (1 - ph.defect_rate) / n)
        assert abs(rate - ph.defect_rate) <= 3 * se


def test_signature_draws_respect_phase():
    m, _, meta = generate(drift_a())
    sig = np.array(meta["signature"])
    assert not (sig[:5000] == 3).any()
    assert (sig[5000:] == 3).sum() > 0
    for j in range(4):
        rows = signature_units(meta, j)
        steps = set(drift_a().signatures[j].steps)
        fails = {frozenset(np.flatnonzero(m.Y[t] == 0)) for t in rows}
        assert fails == {frozenset(steps)}


def test_drift_separability():
    m, c, meta = generate(drift_a())
    train = m.rows(0, 5000)
    c_red = greedy_cover(train, c, CoverConfig(0))
    assert 19 not in c_red.members
    assert set(c_red.members) <= {3, 7}
    static = PolicyConfig(algorithm="reduced")
    assert replay(train, c, c_red, static).escaped == 0
    res = run_split(m, c, static, split=5000, c_red=c_red)
    step19 = [t for t in signature_units(meta, 3) if t >= 5000]
    assert res.validation.escaped == len(step19) > 0


def test_abort_injection_survives_ingest():
    s = Scenario(400, 5, signatures=(Signature((1,)),), phases=(Phase(0, 400, 0.1, (0,)),),
                 abort_rate=0.2, seed=7)
    m, c, meta = generate(s)
    assert meta["abort_only"] and not set(meta["abort_only"]) & set(np.flatnonzero(m.failing_mask))
    buf = io.StringIO()
    buf.write("unit_id,step_group,step_name,outcome,exec_time_s,seq\n")
    aborted = set(meta["abort_only"])
    for t, u in enumerate(m.units):
        for i, step in enumerate(m.steps):
            grp, name = step.split("::")
            token = "ABORT" if t in aborted and i == 0 else ("PASS" if m.Y[t, i] else "FAIL")
            buf.write(f"{u},{grp},{name},{token},{float(c.c[i])!r},{t}\n")
    parsed = parse_log_csv(io.StringIO(buf.getvalue()))
    parsed.raise_for_errors()
    m2, c2 = build_matrix(parsed.records)
    assert m2.failing_units == m.failing_units
    assert m2.units == m.units
    assert m2.abort_only_units == m.abort_only_units == frozenset(aborted)
    assert np.allclose(c2.c, c.c, rtol=0, atol=1e-12)


def test_heavy_tail_costs_bounded():
    s = Scenario(10, 200, step_costs=CostSpec(low=0.5, high=20.0, heavy_tail=True))
    _, c, _ = generate(s)
    assert c.c.min() >= 0.5 and c.c.max() <= 20.0
