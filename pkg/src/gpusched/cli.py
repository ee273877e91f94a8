"""Command-line entry point: generate, allocate, analyze, simulate, sweep, case-study.

Exit codes: 0 success, 1 taskset unschedulable (``analyze``), 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .task_model import AccessMode, ModelError, Policy, load, save, validate

EXIT_OK, EXIT_UNSCHEDULABLE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _load_taskset(path):
    try:
        ts = load(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file")
    except (ModelError, ValueError, KeyError, TypeError) as e:
        raise InputError(f"{path}: {e}")
    errs = validate(ts)
    if errs:
        raise InputError(f"{path}: " + "; ".join(errs))
    return ts


def _needs_allocation(ts) -> bool:
    return any(t.core is None or t.priority is None for t in ts.tasks) or (
        ts.platform.policy is Policy.GPU_SERVER and ts.platform.server_core is None
        and any(t.eta for t in ts.tasks))


def cmd_generate(args) -> int:
    from .taskgen import GenConfig, generate_batch, load_config

    try:
        cfg = load_config(args.config) if args.config else GenConfig()
    except (OSError, ValueError, TypeError) as e:
        raise InputError(f"config: {e}")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    errs = cfg.check()
    if errs:
        raise InputError("config: " + "; ".join(errs))
    if args.count < 1:
        raise InputError("--count must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(args.count - 1))
    for k, ts in enumerate(generate_batch(cfg, args.count)):
        save(ts, out / f"taskset_{k:0{width}d}.json")
    print(f"wrote {args.count} tasksets to {out}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    from .priority_alloc import (AllocationInfeasible, AllocationRequest, Heuristic, allocate,
                                 assign_rm_priorities, format_log)

    ts = _load_taskset(args.taskset)
    policy = Policy(args.policy) if args.policy else ts.platform.policy
    tasks = assign_rm_priorities(ts.tasks) if args.rm or any(t.priority is None for t in ts.tasks) \
        else list(ts.tasks)
    heuristic = Heuristic.WORST_FIT_DECREASING if args.heuristic == "wfd" else Heuristic.FIRST_FIT_DECREASING
    try:
        alloc = allocate(AllocationRequest(tuple(tasks), ts.platform.with_policy(policy), heuristic))
    except AllocationInfeasible as e:
        print(f"allocation failed: {e}", file=sys.stderr)
        return EXIT_UNSCHEDULABLE
    save(alloc.taskset(ts.meta), args.out or args.taskset)
    print(format_log(alloc))
    print("core loads: " + " ".join(f"{u:.4f}" for u in alloc.loads()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .priority_alloc import prepare
    from .server_analysis import analyze, format_report
    from .sync_baseline import analyze_sync

    ts = _load_taskset(args.taskset)
    if args.epsilon is not None:
        ts = ts.with_platform(epsilon=args.epsilon)
    sync = args.test == "sync_reconstructed"
    want = Policy.SYNC_LOCK if sync else Policy.GPU_SERVER
    if ts.platform.policy is not want or _needs_allocation(ts):
        ts = prepare(ts, want, rm=any(t.priority is None for t in ts.tasks))
    report = analyze_sync(ts) if sync else analyze(ts, use_job_driven=args.test == "server_rd_jd")
    sys.stdout.write(format_report(report, ts, csv=args.csv))
    return EXIT_OK if report.schedulable else EXIT_UNSCHEDULABLE


def cmd_simulate(args) -> int:
    from .priority_alloc import prepare
    from .simulator import SimulationError, simulate, trace_check

    ts = _load_taskset(args.taskset)
    changes = {}
    if args.mode:
        changes["access_mode"] = AccessMode(args.mode)
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.lock_overhead is not None:
        changes["lock_overhead"] = args.lock_overhead
    if changes:
        ts = ts.with_platform(**changes)
    policy = Policy(args.policy) if args.policy else ts.platform.policy
    if policy is not ts.platform.policy or _needs_allocation(ts):
        if ts.platform.policy is not policy and not _needs_allocation(ts) and policy is Policy.SYNC_LOCK:
            ts = ts.with_platform(policy=policy)
        else:
            ts = prepare(ts, policy, rm=any(t.priority is None for t in ts.tasks))
    if args.horizon:
        horizon = args.horizon
    else:
        from .experiments import sim_horizon

        horizon = sim_horizon(ts, periods=10)
    try:
        r = simulate(ts, horizon, args.release, seed=args.seed, jitter=args.jitter)
    except SimulationError as e:
        raise InputError(str(e))
    if args.trace:
        Path(args.trace).write_text(r.trace_csv())
    if args.svg:
        from .gantt import render_gantt

        render_gantt(r, args.svg, unit=args.unit)
    print(f"policy {ts.platform.policy.value}, mode {ts.platform.access_mode.value}, horizon {horizon} us")
    print(f"{'task':<16}{'jobs':>6}{'worst (us)':>12}{'mean (us)':>12}")
    for t in sorted(ts.tasks, key=lambda t: -t.priority):
        rs = r.responses.get(t.id, [])
        worst = str(max(rs)) if rs else "-"
        mean = f"{sum(rs) / len(rs):.1f}" if rs else "-"
        print(f"{t.label:<16}{len(rs):>6}{worst:>12}{mean:>12}")
    print(f"deadline misses: {len(r.deadline_misses)}")
    bad = trace_check(r)
    for v in bad:
        print(f"trace violation: {v}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiments import SweepSpecError, emit_outputs, load_spec, run_sweep

    try:
        spec = load_spec(args.spec)
    except (OSError, ValueError, TypeError, SweepSpecError) as e:
        raise InputError(f"{args.spec}: {e}")
    if args.seed is not None:
        spec = replace(spec, base=replace(spec.base, seed=args.seed))
    if args.per_point:
        spec = replace(spec, per_point=args.per_point)
    out = args.out or spec.output or "."
    result = run_sweep(spec, jobs=args.jobs)
    for p in emit_outputs(result, out, stem=args.stem):
        print(f"wrote {p}")
    for pol in spec.policies:
        series = " ".join(f"{100 * f:.1f}" for _, f in result.series(pol))
        print(f"{pol:>20}: {series}")
    return EXIT_OK


def cmd_case_study(args) -> int:
    from .experiments import run_case_study

    rep = run_case_study(args.out, epsilon=args.epsilon, lock_overhead=args.lock_overhead)
    sys.stdout.write(rep.format())
    for p in rep.svgs:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .task_model import LOCK_OVERHEAD_US, SERVER_OVERHEAD_US

    ap = argparse.ArgumentParser(prog="gpusched", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write random tasksets")
    p.add_argument("--config", help="generator config JSON (GenConfig fields)")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("allocate", help="assign RM priorities and cores (WFD/FFD)")
    p.add_argument("taskset")
    p.add_argument("--policy", choices=[x.value for x in Policy])
    p.add_argument("--heuristic", choices=["wfd", "ffd"], default="wfd")
    p.add_argument("--rm", action="store_true", help="reassign RM priorities even if present")
    p.add_argument("--out", help="write here instead of overwriting the input")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("analyze", help="response-time analysis")
    p.add_argument("taskset")
    p.add_argument("--test", choices=["server_rd_jd", "server_rd", "sync_reconstructed"], default="server_rd_jd")
    p.add_argument("--epsilon", type=int, help="override server overhead (us)")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    p.add_argument("taskset")
    p.add_argument("--horizon", type=int, help="us (default: hyperperiod, capped at 10 longest periods)")
    p.add_argument("--policy", choices=[x.value for x in Policy])
    p.add_argument("--mode", choices=[x.value for x in AccessMode])
    p.add_argument("--release", choices=["periodic", "sporadic"], default="periodic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.2)
    p.add_argument("--epsilon", type=int)
    p.add_argument("--lock-overhead", type=int)
    p.add_argument("--trace", help="trace CSV output path")
    p.add_argument("--svg", help="Gantt SVG output path")
    p.add_argument("--unit", type=int, default=1000, help="us per x-axis unit in the SVG")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="schedulability sweep from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--per-point", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--stem", help="output file stem")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("case-study", help="five-task case study under both policies")
    p.add_argument("--out", help="directory for timeline SVGs")
    p.add_argument("--epsilon", type=int, default=SERVER_OVERHEAD_US)
    p.add_argument("--lock-overhead", type=int, default=LOCK_OVERHEAD_US)
    p.set_defaults(func=cmd_case_study)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
