"""adaptest: test-plan covering, frontier analysis and adaptive plan-selection replay.

Exit codes: 0 success, 1 usage, 2 data error, 3 solver limit / infeasible.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import canonical_json, load_config
from .cover import (
    CoverConfig,
    exhaustive_cover,
    filter_dominated,
    fit_log_frontier,
    frontier_candidates,
    greedy_cover,
)
from .exceptions import AdaptestError, InsufficientPoints
from .ingest import ColumnMapping, build_matrix, matrix_summary, parse_log_csv, read_matrix, write_matrix
from .policy import PolicyConfig
from .replay import export_series, run_split, subset_from_ids, write_series, write_trace
from .synth import BUNDLED, bundled_scenario, generate, scenario_from_file

EXIT_USAGE, EXIT_DATA, EXIT_LIMIT = 1, 2, 3

FRONTIER_FIELDS = ("epsilon", "escapes", "escape_risk", "cost_s", "saving_pct", "n_steps")
REPORT_FIELDS = ("cohort", "algorithm", "beta", "sel_rate_pct", "saving_pct", "escaped",
                 "escape_risk", "regret", "delta_ok")
ALGO_LABELS = {
    "full": "Baseline (C_full)",
    "reduced": "Static C_red",
    "epsilon_greedy": "Epsilon-Greedy",
    "ucb": "UCB",
    "thompson": "Thompson Sampling",
}
COHORT_ORDER = {"training": 0, "validation": 1}
ALGO_ORDER = {a: k for k, a in enumerate(ALGO_LABELS)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        sys.exit(EXIT_USAGE)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects outputs and writes the run manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.manifest_stem = args.command
        self.started = time.time()

    def read(self, path):
        path = Path(path)
        self.inputs[str(path)] = _sha256(path)
        return path

    def path(self, name):
        p = Path(name)
        return p if p.is_absolute() or p.parent != Path(".") else self.out_dir / p

    def wrote(self, *paths):
        self.outputs.extend(str(p) for p in paths)

    def write_manifest(self):
        snapshot = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "config": snapshot,
            "inputs": self.inputs,
            "seed": snapshot.get("seed"),
            "version": __version__,
            "outputs": self.outputs,
            "wall_clock_s": round(time.time() - self.started, 6),
        }
        path = self.out_dir / f"{self.manifest_stem}_manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


def _emit(args, payload, human):
    if args.json:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    else:
        sys.stdout.write(human.rstrip("\n") + "\n")


def _load_matrix(run, path):
    path = run.read(path)
    side = path.with_suffix(".json")
    run.read(side)
    return read_matrix(path, side)


def _table(rows, columns):
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[k]) for row in cells]) for k, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _mandatory(names, m):
    try:
        return frozenset(m.step_index(s) for s in names or ())
    except KeyError as exc:
        raise AdaptestError(f"unknown mandatory step {exc.args[0]!r}") from None


def _train_slice(m, split):
    if split is None:
        return m
    if not 0 < split <= m.n:
        raise AdaptestError(f"split index {split} outside (0, {m.n}]")
    return m.rows(0, split)


def cmd_ingest(args, run):
    mapping = ColumnMapping.from_file(run.read(args.mapping)) if args.mapping else ColumnMapping()
    parsed = parse_log_csv(run.read(args.log), mapping)
    if parsed.errors:
        report = {
            "error": type(parsed.errors[0]).__name__,
            "message": f"{len(parsed.errors)} bad rows",
            "rows": [e.to_dict() | {"row": getattr(e, "row", None)} for e in parsed.errors],
        }
        sys.stderr.write(json.dumps(report) + "\n")
        return EXIT_DATA
    m, c = build_matrix(parsed.records)
    paths = write_matrix(m, c, run.path(f"{args.name}.csv"))
    summary = matrix_summary(m, c).to_dict() | {"header_repeats": parsed.header_repeats}
    summary_path = run.path(f"{args.name}_summary.json")
    summary_path.write_text(canonical_json(summary), encoding="utf-8")
    run.wrote(*paths, summary_path)
    _emit(args, summary, str(matrix_summary(m, c)) + f"\nheader repeats dropped {parsed.header_repeats}")
    return 0


def cmd_cover(args, run):
    m, c = _load_matrix(run, args.matrix)
    train = _train_slice(m, args.split)
    cfg = CoverConfig(args.epsilon, _mandatory(args.mandatory, m), args.exhaustive_limit)
    solve = exhaustive_cover if args.solver == "exhaustive" else greedy_cover
    subset = solve(train, c, cfg)
    payload = subset.to_dict(m) | {
        "epsilon": args.epsilon,
        "solver": args.solver,
        "fit_units": list(train.units),
    }
    out = run.path(args.out)
    out.write_text(canonical_json(payload), encoding="utf-8")
    run.wrote(out)
    shown = {k: v for k, v in payload.items() if k != "fit_units"}
    human = _table([{"step": s, "cost_s": float(c.c[m.step_index(s)])} for s in payload["members"]],
                   ["step", "cost_s"])
    human += (f"\n\n{len(subset)} of {m.m} steps, cost {subset.cost:.3f} s, "
              f"saving {subset.saving_pct:.2f}%, escapes {subset.escapes} "
              f"(risk {subset.escape_risk:.4f})")
    _emit(args, shown, human)
    return 0


def cmd_pareto(args, run):
    m, c = _load_matrix(run, args.matrix)
    train = _train_slice(m, args.split)
    cands = frontier_candidates(train, c, args.solver, _mandatory(args.mandatory, m),
                                args.stride, args.exhaustive_limit)
    front = filter_dominated(cands)
    rows = [p.to_row() for p in front]
    csv_path = run.path(f"{args.name}.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=FRONTIER_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    try:
        fit = fit_log_frontier(front).to_dict()
    except InsufficientPoints:
        fit = None
    fit_path = run.path(f"{args.name}_fit.json")
    fit_path.write_text(canonical_json({"fit": fit}), encoding="utf-8")
    run.wrote(csv_path, fit_path)
    human = _table(rows, FRONTIER_FIELDS)
    if fit:
        human += f"\n\nS(eps) = {fit['a']:.4f} ln(eps) + {fit['b']:.4f}, R^2 = {fit['r_squared']:.4f}"
    _emit(args, {"frontier": rows, "fit": fit}, human)
    return 0


def cmd_synth(args, run):
    if args.scenario in BUNDLED:
        scenario = bundled_scenario(args.scenario)
    else:
        scenario = scenario_from_file(run.read(args.scenario))
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    m, c, meta = generate(scenario)
    paths = write_matrix(m, c, run.path(f"{args.name}.csv"))
    meta_path = run.path(f"{args.name}_metadata.json")
    meta_path.write_text(canonical_json(meta), encoding="utf-8")
    run.wrote(*paths, meta_path)
    summary = matrix_summary(m, c)
    _emit(args, summary.to_dict() | {"scenario": scenario.name, "seed": scenario.seed}, str(summary))
    return 0


POLICY_FLAGS = {
    "algo": "algorithm",
    "window": "w",
    "tau": "tau",
    "beta": "beta_sens",
    "kappa": "kappa",
    "epsilon_explore": "epsilon_explore",
    "ucb_c": "ucb_c",
    "delta": "delta",
    "seed": "seed",
}


def _policy_config(args):
    base = {}
    if args.config:
        d = load_config(args.config)
        base = dict(d.get("policy", d))
    for flag, key in POLICY_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    if args.freeze_full_arm:
        base["freeze_full_arm"] = True
    if args.observed_only:
        base["observed_only"] = True
    return PolicyConfig.from_dict(base)


def _simulate_one(m, c, c_red, cfg, split, carry):
    res = run_split(m, c, cfg, split, c_red=c_red, carry_state=carry)
    return res, res.report_rows(cfg)


def _grid_job(payload):
    m, c, c_red, cfg, split, carry = payload
    _, rows = _simulate_one(m, c, c_red, cfg, split, carry)
    return cfg.to_dict(), rows


def cmd_simulate(args, run):
    m, c = _load_matrix(run, args.matrix)
    if args.config:
        run.read(args.config)
    cfg = _policy_config(args)
    c_red = None
    if args.subset:
        sub = json.loads(run.read(args.subset).read_text(encoding="utf-8"))
        fit = frozenset(sub["fit_units"]) if "fit_units" in sub else None
        c_red = subset_from_ids(sub["members"], m, c, fit_units=fit)

    if args.grid:
        grid = load_config(run.read(args.grid))
        keys = list(grid)
        configs = [
            PolicyConfig.from_dict(cfg.to_dict() | dict(zip(keys, values)))
            for values in itertools.product(*(grid[k] for k in keys))
        ]
        if c_red is None:
            c_red = greedy_cover(_train_slice(m, args.split), c)
        jobs = [(m, c, c_red, k, args.split, args.carry_state) for k in configs]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_grid_job, jobs))
        else:
            results = [_grid_job(j) for j in jobs]
        cfg_keys = ["algorithm", "w", "tau", "beta_sens", "kappa", "seed"]
        out_rows = []
        for k_dict, rows in results:
            for r in rows:
                out_rows.append({k: k_dict[k] for k in cfg_keys} | r)
        csv_path = run.path(args.summary)
        run.manifest_stem = csv_path.stem
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cfg_keys + [f for f in REPORT_FIELDS if f not in cfg_keys],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(out_rows)
        run.wrote(csv_path)
        _emit(args, {"rows": out_rows}, _table(out_rows, ["algorithm", "beta_sens", "seed", "cohort",
                                                           "sel_rate_pct", "saving_pct", "escaped"]))
        return 0

    res, rows = _simulate_one(m, c, c_red, cfg, args.split, args.carry_state)
    report = {
        "config": cfg.to_dict(),
        "split": args.split,
        "carry_state": args.carry_state,
        "subset": [m.steps[i] for i in res.c_red.members],
        "rows": rows,
    }
    out = run.path(args.out)
    run.manifest_stem = out.stem
    out.write_text(canonical_json(report), encoding="utf-8")
    run.wrote(out)
    if args.series:
        stem = out.stem
        for cohort, r in (("training", res.training), ("validation", res.validation)):
            if r is None:
                continue
            run.wrote(*write_series(export_series(r, args.series_window or cfg.w, cfg.tau),
                                    out.parent, f"{stem}_{cohort}"))
            trace_path = out.parent / f"{stem}_{cohort}_trace.csv"
            write_trace(r, trace_path)
            run.wrote(trace_path)
    _emit(args, report, _table(rows, REPORT_FIELDS))
    return 0


def _report_key(row):
    beta = row.get("beta")
    return (COHORT_ORDER.get(row["cohort"], 9), row["cohort"], ALGO_ORDER.get(row["algorithm"], 9),
            -1.0 if beta is None else float(beta))


def cmd_report(args, run):
    rows = []
    for path in args.reports:
        data = json.loads(run.read(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data.get("rows")
        if not isinstance(data, list):
            raise AdaptestError(f"{path} is not a simulate report (no 'rows' list)")
        rows.extend(data)
    seen = set()
    unique = []
    for r in sorted(rows, key=_report_key):
        key = json.dumps(r, sort_keys=True)
        if key not in seen:
            seen.add(key)
            unique.append(r | {"label": ALGO_LABELS.get(r["algorithm"], r["algorithm"])})
    csv_path = run.path(f"{args.name}.csv")
    run.manifest_stem = args.name
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=("label",) + REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(unique)
    json_path = run.path(f"{args.name}.json")
    json_path.write_text(canonical_json({"rows": unique}), encoding="utf-8")
    run.wrote(csv_path, json_path)
    _emit(args, {"rows": unique}, _table(unique, ["cohort", "label", "beta", "sel_rate_pct", "saving_pct",
                                                  "escaped", "escape_risk", "delta_ok"]))
    return 0


def _common_flags():
    # a fresh parent per parser: set_defaults on one must not leak into the others
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON/TOML config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable JSON on stdout")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="output directory (default: $ADAPTEST_OUT or .)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    return common


def build_parser():
    p = _Parser(prog="adaptest", description=__doc__.splitlines()[0], parents=[_common_flags()])
    p.add_argument("--version", action="version", version=__version__)
    p.set_defaults(config=None, seed=None, json=False, out_dir=os.environ.get("ADAPTEST_OUT", "."), jobs=1)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[_common_flags()], help="flat step log -> canonical matrix")
    s.add_argument("log")
    s.add_argument("--mapping", help="column mapping file (JSON or key=value)")
    s.add_argument("--name", default="matrix")
    s.set_defaults(func=cmd_ingest)

    def solver_args(s):
        s.add_argument("--matrix", required=True)
        s.add_argument("--solver", choices=("greedy", "exhaustive"), default="greedy")
        s.add_argument("--mandatory", nargs="*", default=[], metavar="STEP_ID")
        s.add_argument("--exhaustive-limit", type=int, default=20)
        s.add_argument("--split", type=int, help="fit on units [0, SPLIT) only")

    s = sub.add_parser("cover", parents=[_common_flags()], help="minimum-cost subset under an escape budget")
    solver_args(s)
    s.add_argument("--epsilon", type=int, default=0, help="allowed escaped failing units")
    s.add_argument("--out", default="cover.json")
    s.set_defaults(func=cmd_cover)

    s = sub.add_parser("pareto", parents=[_common_flags()], help="saving vs. escape-risk frontier")
    solver_args(s)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--name", default="pareto")
    s.set_defaults(func=cmd_pareto)

    s = sub.add_parser("synth", parents=[_common_flags()], help="generate a synthetic stream")
    s.add_argument("--scenario", default="drift-A", help=f"bundled name {sorted(BUNDLED)} or a file")
    s.add_argument("--name", default="matrix")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", parents=[_common_flags()], help="replay a plan-selection policy")
    s.add_argument("--matrix", required=True)
    s.add_argument("--subset", help="cover JSON; default: greedy zero-escape cover of the training slice")
    s.add_argument("--algo", choices=tuple(ALGO_LABELS))
    s.add_argument("--window", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--kappa", type=float)
    s.add_argument("--epsilon-explore", type=float)
    s.add_argument("--ucb-c", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--freeze-full-arm", action="store_true")
    s.add_argument("--observed-only", action="store_true")
    s.add_argument("--split", type=int, help="first validation unit index")
    s.add_argument("--carry-state", action="store_true", help="keep policy state across the split")
    s.add_argument("--out", default="report.json")
    s.add_argument("--series", action="store_true", help="also write rolling series and traces")
    s.add_argument("--series-window", type=int)
    s.add_argument("--grid", help="file mapping policy settings to lists of values")
    s.add_argument("--summary", default="grid_summary.csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", parents=[_common_flags()], help="join simulate reports into one table")
    s.add_argument("reports", nargs="+")
    s.add_argument("--name", default="comparison")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        run = Run(args, argv)
        code = args.func(args, run)
    except AdaptestError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return exc.exit_code
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_DATA
    if code == 0:
        run.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
