"""Flat test-log ingestion into a binary outcome matrix and step cost vector.

The canonical log schema is one row per (unit, step) execution::

    unit_id, step_group, step_name, outcome, exec_time_s, seq

A step is identified by ``step_group + "::" + step_name``.  Non-standard
headers are remapped with a :class:`ColumnMapping`.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
import re
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import (
    ConflictingOutcome,
    DuplicateRecord,
    IngestError,
    MissingColumn,
    UnparsableOutcome,
)

STEP_SEPARATOR = "::"


class Outcome(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    ABORT = "ABORT"


_OUTCOME_TOKENS = {
    "pass": Outcome.PASS,
    "passed": Outcome.PASS,
    "p": Outcome.PASS,
    "fail": Outcome.FAIL,
    "failed": Outcome.FAIL,
    "f": Outcome.FAIL,
    "abort": Outcome.ABORT,
    "aborted": Outcome.ABORT,
    "skipped": Outcome.ABORT,
    "error": Outcome.ABORT,
}


def normalize_outcome(value):
    """Map a raw outcome token to :class:`Outcome`; ``None`` if unrecognised."""
    return _OUTCOME_TOKENS.get(str(value).strip().lower())


def normalize_column(name):
    """Lowercase a header and join word runs with underscores."""
    return re.sub(r"[^0-9a-z]+", "_", str(name).strip().lower()).strip("_")


@dataclass(frozen=True)
class ColumnMapping:
    """Logical field -> column name.  ``None`` marks an optional column as absent."""

    unit_id: str = "unit_id"
    step_group: str = "step_group"
    step_name: str = "step_name"
    outcome: str = "outcome"
    exec_time: str | None = "exec_time_s"
    seq: str | None = "seq"
    board_outcome: str | None = None

    REQUIRED = ("unit_id", "step_group", "step_name", "outcome")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise IngestError(f"unknown column-mapping keys: {sorted(unknown)}")
        return cls(**{k: (v if v not in ("", None) else None) for k, v in d.items()})

    @classmethod
    def from_file(cls, path):
        """Load a mapping from JSON or from ``key=value`` lines."""
        text = Path(path).read_text(encoding="utf-8")
        if text.lstrip().startswith("{"):
            return cls.from_dict(json.loads(text))
        d = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise IngestError(f"bad mapping line {line!r}")
            d[key.strip()] = value.strip()
        return cls.from_dict(d)


@dataclass(frozen=True)
class StepRecord:
    unit_id: str
    step_id: str
    outcome: Outcome
    exec_time: float = 0.0
    sequence_index: int | None = None
    board_outcome: Outcome | None = None


@dataclass
class ParsedLog:
    """Result of :func:`parse_log_csv`: records plus a row-level error report."""

    records: list
    header_repeats: int = 0
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def raise_for_errors(self):
        if self.errors:
            raise self.errors[0]


class RowError(IngestError):
    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8-sig", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline="")


def parse_log_csv(source, schema=None):
    """Parse a flat step log.

    ``source`` may be a path, raw bytes, or a binary/text stream.  Rows that
    repeat the header are dropped and counted.  Bad rows are collected in
    ``ParsedLog.errors`` and skipped; a missing required column raises
    :class:`MissingColumn` immediately.
    """
    schema = schema or ColumnMapping()
    stream = _open_text(source)
    try:
        reader = csv.reader(stream)
        try:
            raw_header = next(reader)
        except StopIteration:
            raise MissingColumn(schema.unit_id) from None
        header = [normalize_column(h) for h in raw_header]
        pos = {name: i for i, name in enumerate(header)}

        def column(logical, required):
            name = getattr(schema, logical)
            if name is None:
                return None
            key = normalize_column(name)
            if key not in pos:
                if required:
                    raise MissingColumn(key)
                return None
            return pos[key]

        cols = {k: column(k, k in ColumnMapping.REQUIRED) for k in
                ("unit_id", "step_group", "step_name", "outcome", "exec_time", "seq", "board_outcome")}
        stripped_header = [h.strip() for h in raw_header]

        parsed = ParsedLog(records=[])
        for lineno, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if [c.strip() for c in row] == stripped_header:
                parsed.header_repeats += 1
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            unit = row[cols["unit_id"]].strip()
            if not unit:
                parsed.errors.append(RowError(lineno, "empty unit_id"))
                continue
            raw_outcome = row[cols["outcome"]]
            outcome = normalize_outcome(raw_outcome)
            if outcome is None:
                parsed.errors.append(UnparsableOutcome(lineno, raw_outcome))
                continue
            board = None
            if cols["board_outcome"] is not None:
                raw_board = row[cols["board_outcome"]]
                if raw_board.strip():
                    board = normalize_outcome(raw_board)
                    if board is None:
                        parsed.errors.append(UnparsableOutcome(lineno, raw_board))
                        continue
            exec_time = 0.0
            if cols["exec_time"] is not None:
                cell = row[cols["exec_time"]].strip()
                if cell:
                    try:
                        exec_time = float(cell)
                    except ValueError:
                        parsed.errors.append(RowError(lineno, f"non-numeric exec_time {cell!r}"))
                        continue
                    if not math.isfinite(exec_time) or exec_time < 0:
                        parsed.errors.append(RowError(lineno, f"invalid exec_time {cell!r}"))
                        continue
            seq = None
            if cols["seq"] is not None:
                cell = row[cols["seq"]].strip()
                if cell:
                    try:
                        seq = int(float(cell))
                    except ValueError:
                        parsed.errors.append(RowError(lineno, f"non-numeric seq {cell!r}"))
                        continue
                    if seq < 0:
                        parsed.errors.append(RowError(lineno, f"negative seq {cell!r}"))
                        continue
            step_id = row[cols["step_group"]].strip() + STEP_SEPARATOR + row[cols["step_name"]].strip()
            parsed.records.append(StepRecord(unit, step_id, outcome, exec_time, seq, board))
        return parsed
    finally:
        if stream is not source:
            stream.close()


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OutcomeMatrix:
    """Binary unit x step outcomes, rows in chronological order.

    ``Y[u, i] == 1`` means unit ``u`` passed (or never failed) step ``i``.
    The failing-unit set holds board failures with at least one explicit step
    FAIL; board failures with only ABORTs are flagged ``abort_only`` instead.
    """

    units: tuple
    steps: tuple
    Y: np.ndarray
    board_fail: np.ndarray
    abort_only: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "Y", _frozen(self.Y, np.uint8).reshape(len(self.units), len(self.steps)))
        object.__setattr__(self, "board_fail", _frozen(self.board_fail, bool))
        object.__setattr__(self, "abort_only", _frozen(self.abort_only, bool))
        n = len(self.units)
        if len(set(self.units)) != n:
            raise IngestError("duplicate unit_id in matrix")
        if len(set(self.steps)) != len(self.steps):
            raise IngestError("duplicate step_id in matrix")
        if self.board_fail.shape != (n,) or self.abort_only.shape != (n,):
            raise IngestError("per-unit arrays must have one entry per unit")
        if self.Y.size and self.Y.max() > 1:
            raise IngestError("outcome matrix must be binary")
        has_fail = (self.Y == 0).any(axis=1)
        if np.any(self.abort_only & (has_fail | ~self.board_fail)):
            raise IngestError("abort-only units must be board failures without step FAILs")
        object.__setattr__(self, "_failing", _frozen(self.board_fail & has_fail, bool))

    @property
    def n(self):
        return len(self.units)

    @property
    def m(self):
        return len(self.steps)

    @property
    def failing_mask(self):
        return self._failing

    @property
    def failing_units(self):
        return frozenset(np.flatnonzero(self._failing).tolist())

    @property
    def abort_only_units(self):
        return frozenset(np.flatnonzero(self.abort_only).tolist())

    @property
    def external_fail_units(self):
        """Board failures that are neither genuine defects nor abort-only."""
        mask = self.board_fail & ~self._failing & ~self.abort_only
        return frozenset(np.flatnonzero(mask).tolist())

    @property
    def board_pass(self):
        return ~self.board_fail

    def step_index(self, step_id):
        try:
            return self.steps.index(step_id)
        except ValueError:
            raise KeyError(step_id) from None

    def rows(self, start=None, stop=None):
        """Chronological slice of units as a new matrix."""
        sl = slice(start, stop)
        return OutcomeMatrix(self.units[sl], self.steps, self.Y[sl], self.board_fail[sl], self.abort_only[sl])

    def __eq__(self, other):
        if not isinstance(other, OutcomeMatrix):
            return NotImplemented
        return (
            self.units == other.units
            and self.steps == other.steps
            and np.array_equal(self.Y, other.Y)
            and np.array_equal(self.board_fail, other.board_fail)
            and np.array_equal(self.abort_only, other.abort_only)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CostVector:
    c: np.ndarray

    def __post_init__(self):
        c = _frozen(self.c, float).reshape(-1)
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise IngestError("step costs must be finite and nonnegative")
        object.__setattr__(self, "c", c)

    @property
    def c_full(self):
        return math.fsum(self.c.tolist())

    def __len__(self):
        return len(self.c)

    def __eq__(self, other):
        if not isinstance(other, CostVector):
            return NotImplemented
        return np.array_equal(self.c, other.c)

    __hash__ = None


def build_matrix(records, steps=None):
    """Assemble records into ``(OutcomeMatrix, CostVector)``.

    Units are ordered by their smallest ``sequence_index`` (file order breaks
    ties and covers missing values).  Steps are sorted by id unless ``steps``
    fixes the column universe; records for steps outside it are ignored.
    """
    records = list(records)
    if not records:
        raise IngestError("no records to build a matrix from")

    first_pos = {}
    seq = {}
    for pos, r in enumerate(records):
        first_pos.setdefault(r.unit_id, pos)
        if r.sequence_index is not None:
            seq[r.unit_id] = min(seq.get(r.unit_id, r.sequence_index), r.sequence_index)
    units = sorted(first_pos, key=lambda u: (seq.get(u, math.inf), first_pos[u]))
    if steps is None:
        steps = sorted({r.step_id for r in records})
    steps = list(steps)
    u_idx = {u: k for k, u in enumerate(units)}
    s_idx = {s: k for k, s in enumerate(steps)}

    n, m = len(units), len(steps)
    Y = np.ones((n, m), dtype=np.uint8)
    board_fail = np.zeros(n, dtype=bool)
    aborted = np.zeros(n, dtype=bool)
    time_sum = [0.0] * m
    time_count = [0] * m
    seen = {}
    for r in records:
        u = u_idx[r.unit_id]
        if r.outcome is not Outcome.PASS:
            board_fail[u] = True
        if r.board_outcome is not None and r.board_outcome is not Outcome.PASS:
            board_fail[u] = True
        if r.outcome is Outcome.ABORT:
            aborted[u] = True
        i = s_idx.get(r.step_id)
        if i is None:
            continue
        prev = seen.get((u, i))
        if prev is not None:
            if {prev, r.outcome} == {Outcome.PASS, Outcome.FAIL}:
                raise ConflictingOutcome(r.unit_id, r.step_id)
            raise DuplicateRecord(r.unit_id, r.step_id)
        seen[(u, i)] = r.outcome
        if r.outcome is Outcome.FAIL:
            Y[u, i] = 0
        time_sum[i] += r.exec_time
        time_count[i] += 1

    costs = np.zeros(m)
    for i in range(m):
        if time_count[i]:
            costs[i] = time_sum[i] / time_count[i]
        else:
            warnings.warn(f"step {steps[i]!r} was never executed; cost set to 0", stacklevel=2)
    has_fail = (Y == 0).any(axis=1)
    abort_only = board_fail & ~has_fail & aborted
    return OutcomeMatrix(units, steps, Y, board_fail, abort_only), CostVector(costs)


@dataclass(frozen=True)
class SummaryReport:
    n: int
    m: int
    n_failing: int
    n_abort_only: int
    n_external_fail: int
    defect_rate: float
    c_full: float

    def to_dict(self):
        return {
            "n": self.n,
            "m": self.m,
            "n_failing": self.n_failing,
            "n_abort_only": self.n_abort_only,
            "n_external_fail": self.n_external_fail,
            "defect_rate": self.defect_rate,
            "c_full": self.c_full,
        }

    def __str__(self):
        return "\n".join([
            f"units (N)            {self.n}",
            f"steps (M)            {self.m}",
            f"failing units |U_F|  {self.n_failing}",
            f"abort-only excluded  {self.n_abort_only}",
            f"external failures    {self.n_external_fail}",
            f"genuine defect rate  {self.defect_rate:.2%}",
            f"full plan cost       {self.c_full:.2f} s",
        ])


def matrix_summary(m, c):
    n_fail = len(m.failing_units)
    return SummaryReport(
        n=m.n,
        m=m.m,
        n_failing=n_fail,
        n_abort_only=len(m.abort_only_units),
        n_external_fail=len(m.external_fail_units),
        defect_rate=n_fail / m.n if m.n else 0.0,
        c_full=c.c_full,
    )


def sidecar_path(csv_path):
    p = Path(csv_path)
    return p.with_suffix(".json")


def write_matrix(m, c, csv_path, sidecar=None):
    """Write the canonical matrix CSV and its JSON sidecar; returns both paths."""
    csv_path = Path(csv_path)
    sidecar = Path(sidecar) if sidecar else sidecar_path(csv_path)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", *m.steps])
        for unit, row in zip(m.units, m.Y.tolist()):
            w.writerow([unit, *row])
    meta = {
        "steps": list(m.steps),
        "costs": c.c.tolist(),
        "u_f": [m.units[k] for k in sorted(m.failing_units)],
        "abort_only": [m.units[k] for k in sorted(m.abort_only_units)],
        "board_fail": [m.units[k] for k in np.flatnonzero(m.board_fail).tolist()],
        "n": m.n,
        "m": m.m,
    }
    sidecar.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return csv_path, sidecar


def read_matrix(csv_path, sidecar=None):
    """Inverse of :func:`write_matrix`."""
    csv_path = Path(csv_path)
    sidecar = Path(sidecar) if sidecar else sidecar_path(csv_path)
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "unit_id":
            raise MissingColumn("unit_id")
        steps = header[1:]
        units, rows = [], []
        for row in reader:
            if not row:
                continue
            units.append(row[0])
            rows.append([int(v) for v in row[1:]])
    if steps != meta["steps"]:
        raise IngestError("matrix columns do not match sidecar steps")
    if len(units) != meta["n"] or len(steps) != meta["m"]:
        raise IngestError("matrix shape does not match sidecar")
    Y = np.array(rows, dtype=np.uint8).reshape(len(units), len(steps))
    board = set(meta.get("board_fail", meta["u_f"] + meta["abort_only"]))
    aborts = set(meta["abort_only"])
    board_fail = np.array([u in board for u in units], dtype=bool)
    abort_only = np.array([u in aborts for u in units], dtype=bool)
    m = OutcomeMatrix(units, steps, Y, board_fail, abort_only)
    if sorted(m.units[k] for k in m.failing_units) != sorted(meta["u_f"]):
        raise IngestError("sidecar u_f does not match the matrix")
    return m, CostVector(meta["costs"])
