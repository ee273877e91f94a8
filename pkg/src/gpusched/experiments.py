"""Schedulability sweeps, the five-task case study, and their CSV/SVG outputs."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import __version__  # noqa: E402
from .priority_alloc import prepare  # noqa: E402
from .server_analysis import analyze, is_schedulable  # noqa: E402
from .simulator import simulate  # noqa: E402
from .sync_baseline import is_schedulable_sync  # noqa: E402
from .task_model import LOCK_OVERHEAD_US, SERVER_OVERHEAD_US, Policy, Taskset, load_case_study  # noqa: E402
from .taskgen import GenConfig, RNG_NAME, generate  # noqa: E402

POLICIES = ("server_rd", "server_rd_jd", "sync_reconstructed", "sim_only")
POLICY_LABELS = {
    "server_rd": "Server-RD",
    "server_rd_jd": "Server-RD+JD",
    "sync_reconstructed": "Sync (reconstructed bound)",
    "sim_only": "Sync (simulated)",
}
CSV_HEADER = ["param", "value", "policy", "sched_fraction", "n"]

# sweepable names; range-valued fields take a scalar v as the degenerate range [v, v]
RANGE_FIELDS = ("n_range", "util_range", "period_range_ms", "gpu_task_pct", "gpu_ratio", "eta_range",
                "misc_ratio")
ALIASES = {"epsilon": "epsilon_us", "n": "n_range", "eta": "eta_range"}
SPECIAL = ("t_min_ms", "small_fraction")
SCALAR_FIELDS = ("num_cores", "epsilon_us")


class SweepSpecError(ValueError):
    pass


def _canonical_param(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in RANGE_FIELDS + SCALAR_FIELDS + SPECIAL:
        raise SweepSpecError(f"unknown sweep parameter {name!r}")
    return name


def apply_value(base: GenConfig, param: str, value) -> GenConfig:
    """Config for one sweep point."""
    param = _canonical_param(param)
    if param in RANGE_FIELDS:
        rng = tuple(value) if isinstance(value, (list, tuple)) else (value, value)
        if param in ("n_range", "eta_range"):
            rng = tuple(int(v) for v in rng)
        return replace(base, **{param: rng})
    if param == "t_min_ms":
        return replace(base, period_range_ms=(value, base.period_range_ms[1]))
    if param == "small_fraction":
        from .taskgen import Bimodal
        return replace(base, bimodal=replace(base.bimodal or Bimodal(), small_fraction=value))
    return replace(base, **{param: int(value)})


@dataclass(frozen=True)
class SweepSpec:
    base: GenConfig
    param: str
    values: tuple
    policies: tuple = ("server_rd", "server_rd_jd", "sync_reconstructed")
    per_point: int = 1000
    output: Optional[str] = None
    sim_horizon_periods: int = 3

    def check(self):
        _canonical_param(self.param)
        if not self.values:
            raise SweepSpecError("value list is empty")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise SweepSpecError(f"unknown policies {bad}; choose from {list(POLICIES)}")
        if self.per_point < 1:
            raise SweepSpecError("per_point must be >= 1")
        for v in self.values:
            errs = apply_value(self.base, self.param, v).check()
            if errs:
                raise SweepSpecError(f"{self.param}={v}: " + "; ".join(errs))

    @classmethod
    def from_json(cls, d: dict) -> "SweepSpec":
        known = {"base", "param", "values", "policies", "per_point", "output", "sim_horizon_periods"}
        extra = set(d) - known
        if extra:
            raise SweepSpecError(f"unknown sweep spec fields: {sorted(extra)}")
        if "param" not in d or "values" not in d:
            raise SweepSpecError("sweep spec needs 'param' and 'values'")
        base = GenConfig.from_json(d.get("base", {}))
        spec = cls(
            base=base,
            param=d["param"],
            values=tuple(tuple(v) if isinstance(v, list) else v for v in d["values"]),
            policies=tuple(d.get("policies", cls.policies)),
            per_point=int(d.get("per_point", 1000)),
            output=d.get("output"),
            sim_horizon_periods=int(d.get("sim_horizon_periods", 3)),
        )
        spec.check()
        return spec


def load_spec(path) -> SweepSpec:
    return SweepSpec.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PointResult:
    value: object
    policy: str
    schedulable: int
    n: int
    runtime_s: float = 0.0

    @property
    def fraction(self) -> float:
        return self.schedulable / self.n if self.n else 0.0

    @property
    def mean_runtime_s(self) -> float:
        return self.runtime_s / self.n if self.n else 0.0


@dataclass
class SweepResult:
    param: str
    points: list  # PointResult, canonical order
    meta: dict = field(default_factory=dict)

    def fraction(self, value, policy) -> float:
        for p in self.points:
            if p.value == value and p.policy == policy:
                return p.fraction
        raise KeyError((value, policy))

    def series(self, policy) -> list:
        return [(p.value, p.fraction) for p in self.points if p.policy == policy]


def sim_horizon(ts: Taskset, periods: int = 3) -> int:
    """Hyperperiod, capped at ``periods`` times the longest period."""
    return min(ts.hyperperiod(), periods * max(t.period for t in ts.tasks))


def evaluate(ts: Taskset, policies: Sequence[str], sim_periods: int = 3) -> dict:
    """Verdict and runtime for each policy on one raw (unallocated) taskset.

    Any analysis error counts as unschedulable.
    """
    out = {}
    server_ts = sync_ts = None
    for pol in policies:
        t0 = time.perf_counter()
        try:
            if pol in ("server_rd", "server_rd_jd"):
                if server_ts is None:
                    server_ts = prepare(ts, Policy.GPU_SERVER)
                ok = is_schedulable(server_ts, use_job_driven=pol == "server_rd_jd")
            else:
                if sync_ts is None:
                    sync_ts = prepare(ts, Policy.SYNC_LOCK)
                if pol == "sync_reconstructed":
                    ok = is_schedulable_sync(sync_ts)
                else:
                    ok = simulate(sync_ts, sim_horizon(sync_ts, sim_periods), record_trace=False).miss_free
        except Exception:  # noqa: BLE001 - sweeps never abort on one taskset
            ok = False
        out[pol] = (ok, time.perf_counter() - t0)
    return out


def _run_chunk(args):
    cfg, policies, indices, sim_periods = args
    counts = {p: [0, 0.0] for p in policies}
    for i in indices:
        ts = generate(cfg, i)
        for pol, (ok, dt) in evaluate(ts, policies, sim_periods).items():
            counts[pol][0] += int(ok)
            counts[pol][1] += dt
    return counts


def _value_key(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """Evaluate every (value, policy) pair on ``spec.per_point`` tasksets.

    The same taskset indices are used at every point, so points differ only in
    the swept parameter. Counts are summed, so the result does not depend on
    ``jobs``.
    """
    spec.check()
    work = []
    for v in spec.values:
        cfg = apply_value(spec.base, spec.param, v)
        step = max(1, math.ceil(spec.per_point / max(1, jobs * 4)))
        for lo in range(0, spec.per_point, step):
            work.append((v, (cfg, spec.policies, range(lo, min(lo + step, spec.per_point)),
                             spec.sim_horizon_periods)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_chunk, [w for _, w in work]))
    else:
        parts = [_run_chunk(w) for _, w in work]
    agg: dict = {}
    for (v, _), counts in zip(work, parts):
        for pol, (k, dt) in counts.items():
            cur = agg.setdefault((_value_key(v), pol), [v, 0, 0.0])
            cur[1] += k
            cur[2] += dt
    points = [
        PointResult(v, pol, k, spec.per_point, dt)
        for (_, pol), (v, k, dt) in sorted(agg.items(), key=lambda kv: (kv[0][0], kv[0][1]))
    ]
    meta = {"seed": spec.base.seed, "version": __version__, "rng": RNG_NAME, "per_point": spec.per_point,
            "base": spec.base.to_json()}
    return SweepResult(spec.param, points, meta)


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in result.points:
        value = "-".join(str(x) for x in p.value) if isinstance(p.value, tuple) else p.value
        w.writerow([result.param, value, p.policy, f"{p.fraction:.6f}", p.n])
    return buf.getvalue()


def render_sweep(result: SweepResult, path) -> Path:
    with plt.rc_context({"svg.hashsalt": "gpusched", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for pol in POLICIES:
            s = result.series(pol)
            if not s:
                continue
            xs = [v if not isinstance(v, tuple) else sum(v) / len(v) for v, _ in s]
            ax.plot(xs, [100 * f for _, f in s], marker="o", label=POLICY_LABELS[pol])
        ax.set_xlabel(result.param)
        ax.set_ylabel("schedulable tasksets (%)")
        ax.set_ylim(-2, 102)
        ax.grid(True, linewidth=0.3)
        if result.points:
            ax.legend(fontsize=8)
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return out


def emit_outputs(result: SweepResult, out_dir, formats: Sequence[str] = ("csv", "svg"),
                 stem: Optional[str] = None) -> list:
    """Write ``<stem>.csv`` and/or ``<stem>.svg``; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"sweep_{result.param}"
    written = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        if fmt == "csv":
            path.write_text(sweep_csv(result))
        elif fmt == "svg":
            render_sweep(result, path)
        elif fmt == "json":
            path.write_text(json.dumps({"param": result.param, "meta": result.meta,
                                        "points": [[p.value, p.policy, p.schedulable, p.n] for p in result.points]},
                                       indent=2) + "\n")
        else:
            raise ValueError(f"unknown output format {fmt!r}")
        written.append(path)
    return written


def default_sweeps(num_cores: int = 4, per_point: int = 1000, seed: int = 0) -> dict:
    """One spec per swept axis, base generator parameters elsewhere."""
    base = GenConfig(num_cores=num_cores, seed=seed)
    pol = ("server_rd", "server_rd_jd", "sync_reconstructed")
    mk = lambda param, values: SweepSpec(base, param, tuple(values), pol, per_point)  # noqa: E731
    return {
        "gpu_ratio": mk("gpu_ratio", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
        "gpu_task_pct": mk("gpu_task_pct", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
        "n_tasks": mk("n_range", list(range(2 * num_cores, 5 * num_cores + 1, 2))),
        "gpu_segments": mk("eta_range", [1, 2, 3, 4, 5, 6, 7, 8]),
        "epsilon": mk("epsilon_us", [50, 100, 200, 400, 600, 800, 1000, 1500, 2000]),
        "misc_ratio": mk("misc_ratio", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
        "t_min": mk("t_min_ms", [20, 40, 60, 80, 100, 120, 140, 160, 180, 200]),
    }


# -- analysis vs simulation ------------------------------------------------


@dataclass
class SafetyReport:
    tasksets: int = 0
    schedulable: int = 0
    simulations: int = 0
    violations: list = field(default_factory=list)  # (meta, task id, simulated, bound, release model)
    bound_violations: list = field(default_factory=list)  # b_w != min(b_rd, b_jd)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.bound_violations


SAFETY_RELEASES = (("periodic", 0), ("sporadic", 1), ("sporadic", 2))


def check_safety(tasksets, releases=SAFETY_RELEASES, periods: int = 3) -> SafetyReport:
    """Simulate every taskset the server analysis accepts and compare against its bounds."""
    rep = SafetyReport()
    for raw in tasksets:
        rep.tasksets += 1
        ts = prepare(raw, Policy.GPU_SERVER)
        ar = analyze(ts)
        for a in ar.tasks.values():
            if not (a.b_w == min(a.b_rd, a.b_jd) and a.b_w <= a.b_rd and a.b_w <= a.b_jd):
                rep.bound_violations.append((ts.meta, a.task_id))
        if not ar.schedulable:
            continue
        rep.schedulable += 1
        horizon = sim_horizon(ts, periods)
        for model, seed in releases:
            r = simulate(ts, horizon, model, seed=seed, record_trace=False)
            rep.simulations += 1
            for tid, rs in r.responses.items():
                if rs and max(rs) > ar[tid].response:
                    rep.violations.append((ts.meta, tid, max(rs), ar[tid].response, model))
            for tid, _, _ in r.deadline_misses:
                rep.violations.append((ts.meta, tid, "deadline miss", ar[tid].response, model))
    return rep


# -- case study ----------------------------------------------------------


@dataclass
class CaseStudyReport:
    hyperperiod: int
    worst: dict  # policy value -> {task id: worst response (us)}
    misses: dict  # policy value -> deadline-miss list
    names: dict  # task id -> name
    svgs: list = field(default_factory=list)

    def worst_of(self, policy: Policy, name: str) -> int:
        tid = next(i for i, n in self.names.items() if n == name)
        return self.worst[policy.value][tid]

    def format(self) -> str:
        lines = [f"hyperperiod: {self.hyperperiod / 1000:g} ms",
                 f"{'task':<14}{'sync_lock (ms)':>16}{'gpu_server (ms)':>17}"]
        for tid, name in self.names.items():
            s = self.worst[Policy.SYNC_LOCK.value][tid]
            g = self.worst[Policy.GPU_SERVER.value][tid]
            lines.append(f"{name:<14}{s / 1000:>16.3f}{g / 1000:>17.3f}")
        for pol, m in self.misses.items():
            lines.append(f"{pol}: {len(m)} deadline misses")
        return "\n".join(lines) + "\n"


def run_case_study(out_dir=None, epsilon: int = SERVER_OVERHEAD_US,
                   lock_overhead: int = LOCK_OVERHEAD_US) -> CaseStudyReport:
    """Simulate the case-study taskset for one hyperperiod under both policies."""
    from .gantt import render_gantt

    base = load_case_study()
    h = base.hyperperiod()
    worst, misses, svgs = {}, {}, []
    for pol in (Policy.SYNC_LOCK, Policy.GPU_SERVER):
        ts = base.with_platform(policy=pol, epsilon=epsilon, lock_overhead=lock_overhead)
        r = simulate(ts, h, record_trace=out_dir is not None)
        worst[pol.value] = {t.id: r.worst_response(t.id) for t in ts.tasks}
        misses[pol.value] = list(r.deadline_misses)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            svgs.append(render_gantt(r, Path(out_dir) / f"case_study_{pol.value}.svg",
                                     title=f"case study, {pol.value}"))
    names = {t.id: t.label for t in base.tasks}
    return CaseStudyReport(h, worst, misses, names, svgs)

