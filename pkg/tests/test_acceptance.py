"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""

import time

import numpy as np
import pytest

from gpusched import experiments as ex
from gpusched import server_analysis as sa
from gpusched.priority_alloc import prepare
from gpusched.scenarios import TAU_H, example_jobs, example_taskset
from gpusched.simulator import GPU_LANE, SimEvent, SimResult, simulate, trace_check
from gpusched.task_model import AccessMode, GpuSegment, Platform, Policy, Task, Taskset
from gpusched.taskgen import GenConfig, generate_batch, generate

UNIT = 1000
PER_POINT = 500
SAFETY_TASKSETS = 1000
TRACE_SIMS = 10_000
TREND_AXES = ("gpu_ratio", "gpu_task_pct", "n_tasks", "gpu_segments", "epsilon", "misc_ratio")
SERVER_POLICIES = ("server_rd", "server_rd_jd")


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


def tau_h_response(policy, eps_units=0.0):
    ts = example_taskset(policy, eps_units)
    r = simulate(ts, 30 * UNIT, example_jobs())
    assert trace_check(r) == []
    return r.responses[TAU_H][0]


@pytest.fixture(scope="module")
def sweeps():
    specs = ex.default_sweeps(num_cores=4, per_point=PER_POINT)
    return {name: ex.run_sweep(ex.SweepSpec(specs[name].base, specs[name].param, specs[name].values,
                                            SERVER_POLICIES, PER_POINT))
            for name in TREND_AXES}


@pytest.fixture(scope="module")
def safety():
    t0 = time.perf_counter()
    rep = ex.check_safety(generate_batch(GenConfig(num_cores=4, seed=0), SAFETY_TASKSETS))
    return rep, time.perf_counter() - t0


def test_1_lock_schedule_reproduction(verdict):
    t0 = time.perf_counter()
    w = tau_h_response(Policy.SYNC_LOCK)
    dt = time.perf_counter() - t0
    verdict(1, w == 9 * UNIT and dt < 1, f"tau_h response {w / UNIT:g} units (expected 9) in {dt:.3f}s")


def test_2_server_schedule_reproduction(verdict):
    t0 = time.perf_counter()
    got = {e: tau_h_response(Policy.GPU_SERVER, e) for e in (0.0, 0.1, 0.25)}
    dt = time.perf_counter() - t0
    ok = all(w == round((6 + 4 * e) * UNIT) for e, w in got.items()) and dt < 1
    detail = ", ".join(f"eps={e}: {w / UNIT:g} (expected {6 + 4 * e:g})" for e, w in got.items())
    verdict(2, ok, f"{detail}; {dt:.3f}s")


def test_3_overhead_crossover(verdict):
    lock = tau_h_response(Policy.SYNC_LOCK)
    below, above = tau_h_response(Policy.GPU_SERVER, 0.7), tau_h_response(Policy.GPU_SERVER, 0.8)
    ok = below < lock < above
    verdict(3, ok, f"sync {lock / UNIT:g}; server at eps=0.7: {below / UNIT:g}, at eps=0.8: {above / UNIT:g}")


def test_4_case_study(verdict):
    rep = ex.run_case_study()
    s = rep.worst_of(Policy.SYNC_LOCK, "cpu_matmul1")
    g = rep.worst_of(Policy.GPU_SERVER, "cpu_matmul1")
    misses = {p: len(m) for p, m in rep.misses.items()}
    ok = rep.hyperperiod == 3_000_000 and s > g and not any(misses.values())
    verdict(4, ok, f"cpu_matmul1 worst {s / 1000:.2f} ms (sync) vs {g / 1000:.2f} ms (server); misses {misses}")


def test_5_analysis_safety(verdict, safety):
    rep, dt = safety
    ok = rep.tasksets >= 1000 and not rep.violations and rep.schedulable > 0
    verdict(5, ok, f"{rep.tasksets} tasksets, {rep.schedulable} schedulable, {rep.simulations} simulations, "
                   f"{len(rep.violations)} misses or bound overruns ({dt:.0f}s)")


def test_6_double_bound_dominance(verdict, safety, sweeps):
    rep, _ = safety
    worse = [(name, p.value) for name, res in sweeps.items() for p in res.points if p.policy == "server_rd_jd"
             and res.fraction(p.value, "server_rd_jd") < res.fraction(p.value, "server_rd")]
    n_points = sum(len(res.points) // 2 for res in sweeps.values())
    ok = not rep.bound_violations and not worse
    verdict(6, ok, f"B^w = min(B^rd, B^jd) on all tasks of {rep.tasksets} tasksets "
                   f"({len(rep.bound_violations)} violations); RD+JD >= RD at {n_points - len(worse)}/{n_points} points")


def _monotone_with_tolerance(fractions, tol_pp=1.0):
    ups = [(b - a) * 100 for a, b in zip(fractions, fractions[1:]) if b > a]
    return len(ups) <= 1 and all(u <= tol_pp for u in ups), ups


def test_7_trend_reproduction(verdict, sweeps):
    lines, ok = [], True
    for name in TREND_AXES:
        for pol in SERVER_POLICIES:
            series = [f for _, f in sweeps[name].series(pol)]
            good, ups = _monotone_with_tolerance(series)
            ok &= good
            if not good or ups:
                lines.append(f"{name}/{pol} rises {['%.1f' % u for u in ups]} pp")
    detail = f"{len(TREND_AXES)} sweeps x {PER_POINT} tasksets/point, N_P=4; " + (
        "; ".join(lines) if lines else "strictly non-increasing everywhere")
    verdict(7, ok, detail)


def test_8_fixed_point_unit_suite(verdict):
    hi = Task(1, 1000, 10_000, 10_000, priority=2, core=0)
    lo = Task(2, 3000, 100_000, 100_000, priority=1, core=0)
    ts = Taskset((hi, lo), Platform(1, policy=Policy.GPU_SERVER))
    w = sa.analyze(ts)[2].response

    def seg(g):
        return (GpuSegment(g, 0, g),)
    a = Task(1, 100, 10_000, 10_000, seg(1000), priority=4, core=0)
    b = Task(2, 100, 10_000, 10_000, seg(1000), priority=3, core=0)
    me = Task(3, 100, 100_000, 100_000, seg(500), priority=2, core=1)
    low = Task(4, 100, 200_000, 200_000, seg(2000), priority=1, core=1)
    rd_ts = Taskset((a, b, me, low), Platform(2, 0, policy=Policy.GPU_SERVER, server_core=1))
    scan = next(x for x in range(2000, 10**6)
                if x == 2000 + 2 * (-(-x // 10_000) + 1) * 1000)
    rd = sa.request_driven_bound(rd_ts, me, 0)

    h = Task(1, 100, 50_000, 50_000, seg(950), priority=3, core=0)
    m2 = Task(2, 100, 500_000, 500_000, seg(100) + seg(100), priority=2, core=1)
    l2 = Task(3, 100, 900_000, 900_000, seg(4950), priority=1, core=1)
    jd_ts = Taskset((h, m2, l2), Platform(2, 50, policy=Policy.GPU_SERVER, server_core=1))
    jd = sa.job_driven_bound(jd_ts, m2, 60_000)
    jd_oracle = 2 * (4950 + 50) + (-(-60_000 // 50_000) + 1) * (950 + 50)

    ok = w == 4000 and rd == scan == 6000 and jd == jd_oracle == 13_000
    verdict(8, ok, f"W={w} (4000); request-driven {rd} vs scan oracle {scan}; job-driven {jd} vs {jd_oracle}")


def _injected_faults_rejected():
    ts = example_taskset(Policy.GPU_SERVER, 0.1)
    overlap = [SimEvent(0, 0, 3, "gpu_submit"), SimEvent(0, 0, 2, "gpu_submit"),
               SimEvent(100, GPU_LANE, 3, "gpu_start"), SimEvent(200, GPU_LANE, 2, "gpu_start"),
               SimEvent(3000, GPU_LANE, 3, "gpu_finish"), SimEvent(3200, GPU_LANE, 2, "gpu_finish")]
    inversion = [SimEvent(3000, 0, 2, "gpu_submit"), SimEvent(4000, 0, 3, "gpu_submit"),
                 SimEvent(5100, GPU_LANE, 2, "gpu_start"), SimEvent(8100, GPU_LANE, 2, "gpu_finish")]
    counts = [len(trace_check(SimResult(ts, 10_000, tr, {}, [], [0, 0], 0))) for tr in (overlap, inversion)]
    return counts == [1, 1]


def test_9_trace_validity(verdict):
    cfg = GenConfig(num_cores=2, n_range=(3, 8), util_range=(0.05, 0.3), gpu_task_pct=(0.3, 1.0),
                    gpu_ratio=(0.2, 1.5), period_range_ms=(5, 50), misc_ratio=(0.0, 0.5), epsilon_us=100, seed=99)
    bad, events = [], 0
    t0 = time.perf_counter()
    for i in range(TRACE_SIMS):
        rng = np.random.default_rng(i)
        policy = Policy.GPU_SERVER if i % 2 else Policy.SYNC_LOCK
        mode = AccessMode.ASYNCHRONOUS if i % 4 >= 2 else AccessMode.SYNCHRONOUS
        raw = generate(cfg, i).with_platform(access_mode=mode, lock_overhead=int(rng.integers(0, 50)))
        ts = prepare(raw, policy)
        horizon = min(ts.hyperperiod(), 2 * max(t.period for t in ts.tasks))
        model = "periodic" if i % 5 == 0 else "sporadic"
        r = simulate(ts, horizon, model, seed=int(rng.integers(2**31)))
        events += len(r.trace)
        v = trace_check(r)
        if v:
            bad.append((i, v[0]))
    faults = _injected_faults_rejected()
    dt = time.perf_counter() - t0
    verdict(9, not bad and faults,
            f"{TRACE_SIMS} simulations ({events} events, {dt:.0f}s): {len(bad)} with violations; "
            f"injected faults rejected: {faults}")
