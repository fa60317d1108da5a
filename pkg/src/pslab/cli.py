"""Command-line interface: run experiments, list them, run verification suites."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import EXPERIMENTS, run_experiment, write_results


def _cmd_run(args) -> int:
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if "experiment" in raw and raw["experiment"] != args.experiment:
            print(f"config experiment {raw['experiment']!r} does not match "
                  f"requested {args.experiment!r}", file=sys.stderr)
            return 2
        raw["experiment"] = args.experiment
    else:
        raw = {"experiment": args.experiment}
    if args.dimension is not None:
        raw["dimension"] = args.dimension
    if args.seed is not None:
        raw["seed"] = args.seed
    record = run_experiment(raw, threads=args.threads)
    outdir = args.out or (raw.get("output", {}) or {}).get("dir") or "pslab-results"
    write_results(outdir, [record])
    status = "PASS" if record.passed else "FAIL"
    print(f"{status}  {record.experiment}  ({record.wall_clock_s:.1f}s)  -> {outdir}")
    for k, v in record.criteria.items():
        print(f"  {'ok ' if v else 'BAD'} {k}")
    return 0 if record.passed else 1


def _cmd_list(_args) -> int:
    for name in EXPERIMENTS:
        print(name)
    return 0


def _cmd_verify(args) -> int:
    if args.suite == "acceptance":
        from .acceptance import run_all

        results = run_all(verbose=True)
        ok = all(r["passed"] and r["within_budget"] for r in results)
        print("acceptance suite:", "PASS" if ok else "FAIL")
        return 0 if ok else 1
    # invariants: delegate to pytest on the repository test tree
    import subprocess

    cmd = [sys.executable, "-m", "pytest", "tests", "--ignore=tests/test_acceptance.py",
           "-q"]
    try:
        return subprocess.call(cmd)
    except FileNotFoundError:
        print("pytest or the tests/ tree is unavailable; run from a source checkout",
              file=sys.stderr)
        return 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pslab",
        description="Phase-space laboratory for dispersive propagator experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--dimension", type=int, default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_list = sub.add_parser("list", help="list available experiments")
    p_list.set_defaults(fn=_cmd_list)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("--suite", choices=["invariants", "acceptance"],
                          required=True)
    p_verify.set_defaults(fn=_cmd_verify)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
