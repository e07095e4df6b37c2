"""Command-line entry points.

    hydrostat run <config>     execute one scenario
    hydrostat verify <config>  run the acceptance suite
    hydrostat diff <A> <B>     compare two snapshots

Exit codes: 0 success, 2 configuration/format error, 3 numerical failure,
4 failed acceptance assertion.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .experiments import (ConfigError, RunConfig, SnapshotError,
                          read_snapshot, run_scenario, write_report)


def _cmd_run(path: str) -> int:
    cfg = RunConfig.from_file(path)
    code = run_scenario(cfg)
    print(f"scenario {cfg.scenario}: exit {code}, artifacts in {cfg.outdir}")
    return code


def _cmd_verify(path: str) -> int:
    from .acceptance import run_suite

    cfg = RunConfig.from_file(path)
    results = run_suite(seed=cfg.seed, outdir=cfg.outdir)
    report = {}
    for res in results:
        line = f"[{'PASS' if res.ok else 'FAIL'}] {res.index:2d}. {res.name}: {res.detail}"
        print(line)
        report[f"criterion_{res.index:02d}_{'pass' if res.ok else 'fail'}"] = res.name
    n_ok = sum(r.ok for r in results)
    print(f"{n_ok}/{len(results)} criteria passed")
    report["passed"] = n_ok
    report["total"] = len(results)
    Path(cfg.outdir).mkdir(parents=True, exist_ok=True)
    write_report(Path(cfg.outdir) / "acceptance.txt", report)
    return 0 if n_ok == len(results) else 4


def _cmd_diff(path_a: str, path_b: str) -> int:
    a, ta, name_a = read_snapshot(path_a)
    b, tb, name_b = read_snapshot(path_b)
    print(f"A: field={name_a} t={ta!r} shape={a.shape}")
    print(f"B: field={name_b} t={tb!r} shape={b.shape}")
    if a.shape != b.shape:
        print("error: snapshot shapes differ", file=sys.stderr)
        return 2
    diff = a - b
    l2 = float(np.sqrt(np.sum(diff ** 2)))
    linf = float(np.abs(diff).max()) if diff.size else 0.0
    ref = float(np.sqrt(np.sum(a ** 2)))
    print(f"l2 = {l2!r}")
    print(f"linf = {linf!r}")
    print(f"rel_l2 = {l2 / ref if ref > 0 else 0.0!r}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hydrostat",
        description="Simulator and verification harness for rotating "
                    "hydrostatic flow in a box with horizontal-only "
                    "temperature diffusion.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one scenario from a config file")
    p_run.add_argument("config")
    p_verify = sub.add_parser("verify", help="run the acceptance suite")
    p_verify.add_argument("config")
    p_diff = sub.add_parser("diff", help="print L2/Linf discrepancies of two snapshots")
    p_diff.add_argument("snapA")
    p_diff.add_argument("snapB")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args.config)
        if args.command == "verify":
            return _cmd_verify(args.config)
        return _cmd_diff(args.snapA, args.snapB)
    except (ConfigError, SnapshotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
