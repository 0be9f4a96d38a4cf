"""Command-line surface: data generation/import, op-count tables,
permutation calibration, bound verification, and the toy quantized
pipeline.

Reproducibility: every command takes a single --seed; components that need
independent streams draw sub-seeds from
numpy.random.SeedSequence(seed).spawn(...) in a fixed order (documented per
command below). Every run writes a ``<output>.manifest.json`` next to its
primary output recording the command, argument snapshot, seeds, paths,
tool version, and wall-clock duration; re-running with the same manifest
inputs reproduces the outputs byte-for-byte.

MIXQUANT_THREADS caps internal parallelism; commands here are
single-threaded row-chunked loops, so any positive cap is honored.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    check_corollary3,
    check_prop1,
    check_prop2,
    check_prop4,
    figure5_statistic,
    write_json_summary,
)
from .data import (
    ActivationSet,
    SyntheticSpec,
    generate,
    load_activations,
    save_activations,
)
from .errors import FormatError, MixquantError
from .graph import (
    GraphConfig,
    config_from_dict,
    load_ffn_weights,
    pipeline_mse,
    run_pipeline,
)
from .hadamard import block_rotation, count_ops, factorize, format_count
from .permutation import (
    STRATEGIES,
    absmax_permutation,
    evaluate_objective,
    identity_permutation,
    massdiff,
    random_permutation,
    zigzag_permutation,
)


def _threads() -> int:
    raw = os.environ.get("MIXQUANT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"MIXQUANT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise SystemExit("MIXQUANT_THREADS must be >= 1")
    return n


def _write_manifest(out_path, args: argparse.Namespace, started: float, seeds=None):
    snapshot = {k: v for k, v in vars(args).items() if k != "func"}
    for k, v in snapshot.items():
        if isinstance(v, Path):
            snapshot[k] = str(v)
    manifest = {
        "command": args.command,
        "args": snapshot,
        "seeds": seeds,
        "output": str(out_path),
        "version": __version__,
        "threads": _threads(),
        "duration_seconds": round(time.monotonic() - started, 6),
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_params(pairs) -> dict:
    params = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise SystemExit(f"--param expects key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        params[key] = float(val)
    return params


def cmd_gen(args) -> int:
    started = time.monotonic()
    spec = SyntheticSpec(args.kind, _parse_params(args.param), seed=args.seed)
    aset = generate(spec, args.m, args.d)
    save_activations(aset, args.out)
    _write_manifest(args.out, args, started, seeds={"root": args.seed})
    print(f"wrote {aset.m}x{aset.d} {args.kind} activations to {args.out}")
    return 0


def cmd_import_csv(args) -> int:
    started = time.monotonic()
    rows = []
    with open(args.input, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise SystemExit(f"{args.input}:{lineno}: malformed value ({exc})")
            if rows and len(values) != len(rows[0]):
                raise SystemExit(
                    f"{args.input}:{lineno}: ragged row has {len(values)} "
                    f"columns, expected {len(rows[0])}"
                )
            rows.append(values)
    if not rows:
        raise SystemExit(f"{args.input}: no data rows")
    aset = ActivationSet(np.array(rows, dtype=np.float32))
    save_activations(aset, args.out)
    _write_manifest(args.out, args, started)
    print(f"imported {aset.m}x{aset.d} rows to {args.out}")
    return 0


_TABLE_BLOCKS = (32, 128, 512)


def _opcount_rows(d: int) -> list[dict]:
    full = count_ops(d, "full").additions_subtractions
    rows = []
    for b in _TABLE_BLOCKS:
        ops = count_ops(d, "block", b).additions_subtractions
        rows.append(
            {"d": d, "method": f"block({b})", "ops": ops,
             "percent_of_full": round(100 * ops / full)}
        )
    rows.append({"d": d, "method": "full", "ops": full, "percent_of_full": 100})
    if factorize(d).t > 1:
        dense = count_ops(d, "dense_matmul").additions_subtractions
        bfm = count_ops(d, "butterfly_plus_matmul").additions_subtractions
        opt = count_ops(d, "optimized").additions_subtractions
        for method, ops in (
            ("dense_matmul", dense),
            ("butterfly_plus_matmul", bfm),
            ("optimized", opt),
        ):
            rows.append(
                {"d": d, "method": method, "ops": ops,
                 "percent_of_full": None,
                 "speedup_vs_optimized": round(ops / opt, 1)}
            )
    return rows


def cmd_opcount(args) -> int:
    started = time.monotonic()
    dims = args.d
    all_rows = []
    for d in dims:
        rows = _opcount_rows(d)
        all_rows.extend(rows)
        for r in rows:
            pct = "" if r["percent_of_full"] is None else f" ({r['percent_of_full']}%)"
            extra = (
                f"  {r['speedup_vs_optimized']}x vs optimized"
                if "speedup_vs_optimized" in r
                else ""
            )
            print(f"d={d:>6}  {r['method']:<22} {r['ops']:>12}  "
                  f"{format_count(r['ops']):>8}{pct}{extra}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(
                f,
                fieldnames=["d", "method", "ops", "percent_of_full",
                            "speedup_vs_optimized"],
            )
            w.writeheader()
            for r in all_rows:
                w.writerow(r)
        _write_manifest(args.csv, args, started)
    return 0


def _build_permutation(aset: ActivationSet, strategy: str, b: int, seed: int):
    if strategy == "identity":
        return identity_permutation(aset.d, b)
    if strategy == "random":
        return random_permutation(aset.d, seed, b)
    if strategy == "absmax":
        return absmax_permutation(aset, b)
    if strategy == "zigzag":
        return zigzag_permutation(aset, b)
    return massdiff(aset, b)


def cmd_calibrate(args) -> int:
    started = time.monotonic()
    aset = load_activations(args.input)
    perm = _build_permutation(aset, args.strategy, args.block_size, args.seed)
    ident = identity_permutation(aset.d, args.block_size)
    obj = evaluate_objective(aset, perm, args.block_size)
    base = evaluate_objective(aset, ident, args.block_size)
    Path(args.out).write_text(perm.to_json() + "\n")
    if args.binary_out:
        Path(args.binary_out).write_bytes(perm.to_binary())
    _write_manifest(args.out, args, started, seeds={"root": args.seed})
    print(f"strategy={args.strategy} objective={obj.expected_max_block_l1:.6g} "
          f"identity={base.expected_max_block_l1:.6g}")
    return 0


def cmd_verify(args) -> int:
    started = time.monotonic()
    aset = load_activations(args.input)
    violations = 0
    summary: dict = {"prop": args.prop, "input": str(args.input)}
    if args.prop == 1:
        report = check_prop1(aset)
        if args.out_csv:
            report.to_csv(args.out_csv)
        summary.update(report.summary())
        violations = report.violations
    elif args.prop == 2:
        if args.b is None:
            raise SystemExit("--prop 2 requires --b")
        report = check_prop2(aset, block_rotation(aset.d, args.b))
        if args.out_csv:
            report.to_csv(args.out_csv)
        summary.update(report.summary())
        violations = report.violations
    elif args.prop == 3:
        if args.b_prime is None or args.k is None:
            raise SystemExit("--prop 3 requires --b-prime and --k")
        report = check_corollary3(aset, args.b_prime, args.k)
        summary.update(
            {"rows": int(len(report.z_b)), "violations": report.violations,
             "k": args.k, "b_prime": args.b_prime}
        )
        violations = report.violations
    else:
        if args.trials is None:
            raise SystemExit("--prop 4 requires --trials")
        if args.b is None:
            raise SystemExit("--prop 4 requires --b")
        rot = block_rotation(aset.d, args.b)
        sub = np.random.SeedSequence(args.seed).spawn(aset.m)
        results = []
        for i in range(aset.m):
            res = check_prop4(
                np.abs(aset.row(i).astype(np.float64)), rot, args.epsilon,
                args.trials, seed=sub[i],
            )
            results.append(
                {"row": i, "bound": res.bound_value,
                 "exceed_rate": res.exceed_rate,
                 "exceed_rate_per_block": res.exceed_rate_per_block}
            )
        summary.update(
            {"epsilon": args.epsilon, "trials": args.trials,
             "max_exceed_rate": max(r["exceed_rate"] for r in results),
             "rows": aset.m, "results": results}
        )
        # probabilistic: never drives the exit code
    if args.out_json:
        write_json_summary(args.out_json, summary)
        _write_manifest(args.out_json, args, started, seeds={"root": args.seed})
    else:
        print(json.dumps(summary, default=float))
    if violations:
        print(f"BOUND VIOLATIONS: {violations}", file=sys.stderr)
        return 1
    return 0


def cmd_pipeline(args) -> int:
    started = time.monotonic()
    w, cfg = load_ffn_weights(args.weights)
    if args.config:
        cfg = config_from_dict(json.loads(Path(args.config).read_text()))
    if cfg is None:
        cfg = GraphConfig()
    x = load_activations(args.input)
    y, report = run_pipeline(x.data.astype(np.float64), w, cfg)
    save_activations(ActivationSet(y.astype(np.float32)), args.out)
    payload = {
        "stage_ranges": report.stage_ranges,
        "r3_bound": report.r3_bound,
        "mse_vs_full_precision": pipeline_mse(x.data.astype(np.float64), w, cfg),
    }
    if args.figure5_blocks:
        payload["figure5"] = figure5_statistic(x, args.figure5_blocks)
    if args.report:
        write_json_summary(args.report, payload)
    _write_manifest(args.out, args, started, seeds={"root": args.seed})
    print(json.dumps({k: payload[k] for k in ("stage_ranges", "mse_vs_full_precision")},
                     default=float))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixquant", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic activations")
    g.add_argument("--kind", required=True,
                   choices=("gaussian", "laplacian", "student_t", "sparse_outlier"))
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", metavar="KEY=VALUE")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("import-csv", help="import CSV rows of reals")
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_import_csv)

    o = sub.add_parser("opcount", help="rotation op-count tables")
    o.add_argument("--d", type=int, nargs="+", required=True)
    o.add_argument("--csv", help="also write rows as CSV")
    o.set_defaults(func=cmd_opcount)

    c = sub.add_parser("calibrate", help="compute a block permutation")
    c.add_argument("--input", required=True)
    c.add_argument("--block-size", type=int, required=True)
    c.add_argument("--strategy", choices=STRATEGIES, default="massdiff")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--binary-out")
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("verify", help="check outlier-suppression bounds")
    v.add_argument("--input", required=True)
    v.add_argument("--prop", type=int, choices=(1, 2, 3, 4), required=True)
    v.add_argument("--b", type=int)
    v.add_argument("--b-prime", type=int)
    v.add_argument("--k", type=int)
    v.add_argument("--epsilon", type=float, default=0.05)
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out-csv")
    v.add_argument("--out-json")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("pipeline", help="run the toy quantized FFN")
    r.add_argument("--weights", required=True, help="weight manifest.json")
    r.add_argument("--input", required=True)
    r.add_argument("--config", help="GraphConfig JSON (overrides manifest)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--report")
    r.add_argument("--figure5-blocks", type=int, nargs="+")
    r.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except MixquantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
