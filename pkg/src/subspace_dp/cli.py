"""Command-line interface: ``subspace-dp release|audit|distributed|synth|reproduce``.

Exit codes: 0 success, 1 a statistical audit check failed, 2 parse or
validation error, 3 mechanism error, 4 distributed output mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import audit as audit_mod
from . import synthetic
from .distributed import (
    Partition,
    aggregate,
    centralized_release,
    reports_from_wire,
    run_distributed,
    verify_aggregate,
)
from .errors import AxisOverlap, PartitionInvalid, SubspaceDPError
from .invariants import InvariantSystem, invariant_deviation, invariant_tolerance
from .mechanisms import MECHANISMS, PrivacyBudget, make_plan, release_with_plan
from .noise import NoiseSource, array_digest
from .query import LinearQuery, MarginalSpec, TableShape, build_marginal_invariants

EXIT_AUDIT_FAIL = 1
EXIT_USAGE = 2
EXIT_MECHANISM = 3
EXIT_MISMATCH = 4


class UsageError(Exception):
    """Bad input file, flag or invariant clause (exit 2)."""


@dataclass
class Dataset:
    key_names: list
    value_name: str
    levels: list
    shape: TableShape
    counts: np.ndarray  # flattened row-major over key order

    def rows(self, values=None):
        values = self.counts if values is None else values
        for flat, idx in enumerate(np.ndindex(self.shape.dims)):
            yield [self.levels[a][i] for a, i in enumerate(idx)], values[flat]


def load_dataset(path, keys, value) -> Dataset:
    """Read a CSV of counts into a dense table, filling absent cells with 0."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [*keys, value]:
            if col not in header:
                raise UsageError(f"column {col!r} not found in {path} (have {header})")
        levels = [dict() for _ in keys]
        cells = {}
        for lineno, row in enumerate(reader, start=2):
            key = tuple(levels[a].setdefault(row[k], len(levels[a])) for a, k in enumerate(keys))
            try:
                v = float(row[value])
            except (TypeError, ValueError):
                raise UsageError(f"line {lineno}: value {row[value]!r} in column {value!r} is not numeric") from None
            if not np.isfinite(v) or v < 0:
                raise UsageError(f"line {lineno}: value in column {value!r} must be finite and >= 0")
            if key in cells:
                raise UsageError(f"line {lineno}: duplicate key {tuple(row[k] for k in keys)}")
            cells[key] = v
    if not cells:
        raise UsageError(f"{path} has no data rows")
    dims = tuple(len(lv) for lv in levels)
    shape = TableShape(dims, tuple(keys))
    counts = np.zeros(shape.size)
    for key, v in cells.items():
        counts[shape.flat_index(key)] = v
    return Dataset(list(keys), value, [list(lv) for lv in levels], shape, counts)


_CLAUSE = re.compile(r"^\s*exact-sum\s+group-by(?:\s+(?P<axes>.*))?$")


def parse_invariants(clauses, shape: TableShape) -> list:
    """Parse ``exact-sum group-by <axes>`` clauses (no axes: grand total)."""
    specs = []
    for clause in clauses:
        m = _CLAUSE.match(clause)
        if not m:
            raise UsageError(f"cannot parse invariant {clause!r}; expected 'exact-sum group-by <axes>'")
        raw = (m.group("axes") or "").strip()
        axes = [] if raw in ("", "∅", "()") else [a for a in re.split(r"[,\s]+", raw) if a]
        try:
            specs.append(MarginalSpec.group_by(shape, axes))
        except AxisOverlap as exc:
            raise UsageError(f"invariant {clause!r}: {exc}") from None
    if not specs:
        raise UsageError("at least one --invariant is required")
    return specs


def write_table(path, ds: Dataset, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.key_names, ds.value_name])
        for keys, v in ds.rows(values):
            w.writerow([*keys, format(float(v), ".17g")])


def _mechanism(name: str) -> str:
    mid = name.replace("-", "_")
    if mid not in MECHANISMS:
        raise UsageError(f"unknown mechanism {name!r}")
    return mid


def _setup(args):
    ds = load_dataset(args.input, [k for k in args.keys.split(",") if k], args.value)
    specs = parse_invariants(args.invariant or [], ds.shape)
    try:
        budget = PrivacyBudget(args.epsilon, args.delta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sys_ = build_marginal_invariants(ds.shape, specs)
    return ds, sys_, budget, _mechanism(args.mechanism)


def _verification_line(sys_: InvariantSystem, values, truth) -> str:
    dev = invariant_deviation(sys_, values, sys_.c_matrix @ truth)
    tol = invariant_tolerance(sys_, truth)
    status = "PASS" if dev <= tol else "FAIL"
    return (f"invariants: {status} max_deviation={dev:.3e} tolerance={tol:.3e} "
            f"rank={sys_.rank} raw_rows={sys_.c_matrix.shape[0]}")


def cmd_release(args) -> int:
    ds, sys_, budget, mid = _setup(args)
    plan = make_plan(mid, LinearQuery.identity(ds.shape.size), sys_, budget)
    rel = release_with_plan(plan, ds.counts, NoiseSource(args.seed, args.stream), budget)
    values = np.array(rel.values)
    if args.clip_negative:
        print("WARNING: UNBIASEDNESS-VOID: negative counts clipped to 0; "
              "output is biased and no longer satisfies the invariants", file=sys.stderr)
        values = np.clip(values, 0.0, None)
    write_table(args.out, ds, values)
    if args.report:
        doc = rel.to_dict()
        doc.update(n=sys_.n, n_c=sys_.n_c, raw_constraint_rows=int(sys_.c_matrix.shape[0]),
                   notes=list(sys_.notes), clipped=bool(args.clip_negative))
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    print(_verification_line(sys_, values, ds.counts))
    return 0


def cmd_audit(args) -> int:
    ds, sys_, budget, mid = _setup(args)
    query = LinearQuery.identity(ds.shape.size)
    checks = args.check or ["mse"]
    doc = {"mechanism_id": mid, "seed": args.seed, "epsilon": budget.epsilon, "delta": budget.delta,
           "checks": {}}
    ok = True
    if "mse" in checks:
        cfg = audit_mod.MechanismConfig(mid, query, ds.counts, sys_, budget)
        rep = audit_mod.run_moment_audit(cfg, args.repetitions, args.seed, keep_runs=bool(args.runs_csv))
        if args.runs_csv:
            with open(args.runs_csv, "w", encoding="utf-8") as fh:
                fh.write(rep.runs_csv())
        d = rep.to_dict()
        d.pop("runs", None)
        doc["checks"]["mse"] = d
        ok &= rep.passed
        print(f"mse: {'PASS' if rep.passed else 'FAIL'} ratio={rep.mse_ratio:.4f} "
              f"mean_pass={rep.mean_pass} invariant_dev={rep.invariant_max_deviation:.3e}")
    if "bias" in checks:
        plan = make_plan(mid, query, sys_, budget)
        errs = np.vstack([
            (ds.counts + plan.sample(NoiseSource(args.seed, r))) - ds.counts for r in range(args.runs)
        ])
        pos = ds.counts > 0
        fit = audit_mod.bias_regression(ds.counts[pos], errs[:, pos], alpha=args.alpha)
        passed = fit.ci_low <= 0.0 <= fit.ci_high
        doc["checks"]["bias"] = {**asdict(fit), "passed": passed}
        ok &= passed
        print(f"bias: {'PASS' if passed else 'FAIL'} slope={fit.slope:.4g} "
              f"ci=({fit.ci_low:.4g}, {fit.ci_high:.4g}) p={fit.p_value:.3g}")
    if "ratio" in checks:
        central = 0.99 if "gaussian" in mid else 0.999
        res = audit_mod.ratio_probe(mid, budget, args.repetitions, args.seed, central_mass=central)
        doc["checks"]["ratio"] = res.to_dict()
        ok &= res.passed
        print(f"ratio: {'PASS' if res.passed else 'FAIL'} max_log_ratio={res.max_log_ratio:.4f} "
              f"epsilon={budget.epsilon:g} bins={res.bins_used}")
    doc["passed"] = bool(ok)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    return 0 if ok else EXIT_AUDIT_FAIL


def _parse_fault(text):
    m = re.fullmatch(r"agent=(\d+)", text or "")
    if not m:
        raise UsageError(f"--inject-seed-fault expects agent=<id>, got {text!r}")
    return int(m.group(1))


def cmd_distributed(args) -> int:
    ds, sys_, budget, mid = _setup(args)
    try:
        partition = Partition.even(sys_.n, args.agents)
    except PartitionInvalid as exc:
        raise UsageError(str(exc)) from None
    overrides = {}
    if args.inject_seed_fault:
        bad = _parse_fault(args.inject_seed_fault)
        if bad >= partition.m:
            raise UsageError(f"no agent {bad} among {partition.m}")
        overrides[bad] = (args.seed + 1) % (1 << 64)

    run = run_distributed(ds.counts, sys_, budget, mid, args.seed, partition,
                          stream_id=args.stream, seed_overrides=overrides)
    wire = [r.to_bytes() for r in run.reports]
    if args.wire_dir:
        import os

        os.makedirs(args.wire_dir, exist_ok=True)
        for r, payload in zip(run.reports, wire):
            with open(os.path.join(args.wire_dir, f"agent_{r.agent_id:04d}.bin"), "wb") as fh:
                fh.write(payload)
    received = reports_from_wire(wire, partition)
    values = aggregate(received, partition)
    central = centralized_release(ds.counts, sys_, budget, mid, args.seed, stream_id=args.stream)
    check = verify_aggregate(received, sys_, ds.counts, partition)

    for r in run.reports:
        print(f"agent {r.agent_id}: cells [{r.start}, {r.stop}) seed_digest={r.seed_digest:016x} "
              f"noise_digest={r.noise_digest[:16]}")
    d_dist, d_cent = array_digest(values), array_digest(central.values)
    print(f"distributed sha256={d_dist}")
    print(f"centralized sha256={d_cent}")
    match = values.tobytes() == np.asarray(central.values).tobytes()
    print(f"invariants: {'PASS' if check.passed else 'FAIL'} max_deviation={check.max_deviation:.3e}")
    print("MATCH" if match else "MISMATCH")

    if args.out:
        write_table(args.out, ds, values)
    if args.report:
        doc = {
            "mechanism_id": mid, "seed": args.seed, "agents": partition.m, "match": match,
            "distributed_sha256": d_dist, "centralized_sha256": d_cent,
            "seed_digests_agree": check.digests_agree, "invariant_pass": check.passed,
            "invariant_max_deviation": check.max_deviation,
            "reports": [{"agent_id": r.agent_id, "start": r.start, "stop": r.stop,
                         "seed_digest": r.seed_digest, "noise_digest": r.noise_digest,
                         "y_block": [float(v) for v in r.y_block]} for r in run.reports],
        }
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    return 0 if match and check.passed else EXIT_MISMATCH


def cmd_synth(args) -> int:
    if args.kind == "census":
        if args.states == 1:
            states = [synthetic.synthetic_state(args.counties, args.seed)]
        else:
            states = synthetic.synthetic_census(args.states, args.seed)
        header, rows = ("state", "county", "population"), synthetic.census_rows(states)
    else:
        header = (*synthetic.CAMPUS_AXES, "person_hours")
        rows = synthetic.campus_rows(synthetic.campus_counts(args.seed))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_reproduce(args) -> int:
    if args.which == "census":
        pops = synthetic.synthetic_state(102, args.seed)
        query = LinearQuery.identity(pops.size)
        sys_ = build_marginal_invariants(TableShape((pops.size,)), [MarginalSpec((), (0,))])
        budget = PrivacyBudget(0.192)
        plan = make_plan("projected_laplace", query, sys_, budget)
        errs = np.vstack([plan.sample(NoiseSource(args.seed, r)) for r in range(10)])
        fit = audit_mod.bias_regression(pops, errs)
        sums = [float(np.sum(pops + e) - np.sum(pops)) for e in errs]
        print(f"census: 102 counties, projected Laplace eps=0.192, 10 runs")
        print(f"  max |state total error| over runs = {max(abs(s) for s in sums):.3e}")
        print(f"  per-county error sd (analytic) = {np.sqrt(plan.analytic_mse / pops.size):.2f}")
        print(f"  bias slope = {fit.slope:.3f} (99% CI {fit.ci_low:.3f}, {fit.ci_high:.3f}), p = {fit.p_value:.3f}")
        return 0
    shape = TableShape(synthetic.CAMPUS_DIMS, synthetic.CAMPUS_AXES)
    sys_ = build_marginal_invariants(
        shape, [MarginalSpec.group_by(shape, ["hour", "building"]),
                MarginalSpec.group_by(shape, ["group", "building"])])
    diag = sys_.null_diagonal()
    rng_src = [NoiseSource(args.seed, r) for r in range(50)]
    q = sys_.q_row
    errs = []
    for src in rng_src:
        e = src.standard_normal(sys_.n)
        errs.append(e - q @ (q.T @ e))
    errs = np.array(errs)
    per_rep_var = np.mean(errs**2, axis=1)
    print(f"campus: 14x24x20 table, raw constraint rows {sys_.c_matrix.shape[0]}, rank {sys_.rank}")
    print(f"  median per-cell sd (analytic sqrt diag) = {np.median(np.sqrt(diag)):.4f}")
    print(f"  median per-cell sd over 50 reps         = {np.median(errs.std(axis=0, ddof=1)):.4f}")
    print(f"  per-rep mean squared error: median {np.median(per_rep_var):.3f}, "
          f"5%/95% = ({np.quantile(per_rep_var, 0.05):.3f}, {np.quantile(per_rep_var, 0.95):.3f})")
    return 0


def _add_common(p):
    p.add_argument("--input", required=True, help="CSV with a header row")
    p.add_argument("--keys", required=True, help="comma-separated key (axis) columns")
    p.add_argument("--value", required=True, help="numeric count column")
    p.add_argument("--invariant", action="append", metavar="CLAUSE",
                   help="'exact-sum group-by <axes>' (repeatable; no axes means grand total)")
    p.add_argument("--mechanism", required=True,
                   choices=[m.replace("_", "-") for m in MECHANISMS])
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True, help="u64 noise seed (required)")
    p.add_argument("--stream", type=int, default=0, help="noise stream id")
    p.add_argument("--report", help="JSON output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subspace-dp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("release", help="sanitize a count table")
    _add_common(p)
    p.add_argument("--out", required=True, help="sanitized CSV path")
    p.add_argument("--clip-negative", action="store_true",
                   help="clip negative counts to 0 (voids unbiasedness and invariants)")
    p.set_defaults(func=cmd_release)

    p = sub.add_parser("audit", help="statistical checks of a mechanism on a table")
    _add_common(p)
    p.add_argument("--check", action="append", choices=["mse", "bias", "ratio"])
    p.add_argument("--repetitions", type=int, default=10_000)
    p.add_argument("--runs", type=int, default=10, help="releases used by the bias check")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--runs-csv", help="write per-run errors of the mse check here")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("distributed", help="simulate shared-seed distributed privatization")
    _add_common(p)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--out", help="aggregate sanitized CSV path")
    p.add_argument("--wire-dir", help="directory for per-agent wire-format reports")
    p.add_argument("--inject-seed-fault", metavar="agent=ID",
                   help="give one agent a wrong seed (fault injection)")
    p.set_defaults(func=cmd_distributed)

    p = sub.add_parser("synth", help="write a synthetic census or campus table")
    p.add_argument("kind", choices=["census", "campus"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--states", type=int, default=1)
    p.add_argument("--counties", type=int, default=102)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reproduce", help="print headline numbers for the census/campus settings")
    p.add_argument("which", choices=["census", "campus"])
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed",):
        if hasattr(args, name) and not 0 <= getattr(args, name) < (1 << 64):
            print(f"error: --{name} must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SubspaceDPError as exc:
        print(f"mechanism error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MECHANISM


if __name__ == "__main__":
    sys.exit(main())
