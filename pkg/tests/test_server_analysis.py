import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpusched import server_analysis as sa
from gpusched.priority_alloc import prepare
from gpusched.rta import DIVERGED, ceil_div, least_fixed_point
from gpusched.scenarios import TAU_H, TAU_L, example_taskset
from gpusched.task_model import GpuSegment, ModelError, Platform, Policy, Task, Taskset, load_case_study

from strategies import tasksets


def seg(total, m=0):
    return (GpuSegment(total - m, m, total),)


def server_ts(tasks, eps=0, cores=2, server_core=1):
    return Taskset(tuple(tasks), Platform(cores, eps, policy=Policy.GPU_SERVER, server_core=server_core))


# -- recurrence helper ---------------------------------------------------


def test_ceil_div():
    assert [ceil_div(a, 5) for a in (0, 1, 5, 6, -1)] == [0, 1, 1, 2, 0]


def test_fixed_point_stops_above_cap():
    value, log = least_fixed_point(lambda x: x + 10, 0, 25)
    assert value == 30 and log == [0, 10, 20, 30]


def test_fixed_point_rejects_decreasing_step():
    with pytest.raises(ArithmeticError):
        least_fixed_point(lambda x: x - 1, 5, 100)


# -- response time ---------------------------------------------------------


def test_two_cpu_tasks_textbook_example():
    hi = Task(1, 1000, 10_000, 10_000, priority=2, core=0)
    lo = Task(2, 3000, 100_000, 100_000, priority=1, core=0)
    ts = server_ts([hi, lo], cores=1, server_core=None)
    w, ok, _ = sa.response_time(ts, lo, known={1: 1000})
    assert (w, ok) == (4000, True)


def test_lone_cpu_task_is_its_wcet():
    t = Task(1, 2500, 10_000, 10_000, priority=1, core=0)
    a = sa.analyze(server_ts([t], cores=1, server_core=None))[1]
    assert a.response == 2500 and a.iterations == 1


def test_empty_taskset_is_vacuously_schedulable():
    rep = sa.analyze(server_ts([], cores=1, server_core=None))
    assert rep.tasks == {} and rep.schedulable


def test_unallocated_taskset_is_rejected():
    with pytest.raises(ModelError):
        sa.analyze(server_ts([Task(1, 1, 10, 10)]))


# -- request-driven bound ------------------------------------------------


def test_request_bound_without_contention_is_zero():
    t = Task(1, 10, 1000, 1000, seg(100), priority=1, core=0)
    assert sa.request_driven_bound(server_ts([t]), t, 0) == 0


def test_request_bound_highest_priority_waits_for_longest_lower_segment():
    ts = example_taskset(Policy.GPU_SERVER, 0.0)
    tau_h = ts.by_id(TAU_H)
    assert sa.request_driven_bound(ts, tau_h, 0) == 4000


def _rd_oracle(lower, higher, cap=10**7):
    # least integer B >= lower solving the recurrence, by plain scanning
    for b in range(lower, cap):
        if b == lower + sum((math.ceil(b / th) + 1) * load for th, load in higher):
            return b
    raise AssertionError("no fixed point below cap")


def test_request_bound_matches_scan_oracle():
    hi1 = Task(1, 100, 10_000, 10_000, seg(1000), priority=3, core=0)
    hi2 = Task(2, 100, 10_000, 10_000, seg(1000), priority=2, core=0)
    me = Task(3, 100, 100_000, 100_000, seg(500), priority=1, core=1)
    lo = Task(4, 100, 200_000, 200_000, seg(2000), priority=0, core=1)
    ts = server_ts([hi1, hi2, me, lo])
    expected = _rd_oracle(2000, [(10_000, 1000), (10_000, 1000)])
    assert expected == 6000
    assert sa.request_driven_bound(ts, me, 0) == expected


def test_request_bound_diverges_past_deadline():
    hi = Task(1, 0, 1000, 1000, seg(900), priority=2, core=0)
    me = Task(2, 10, 5000, 5000, seg(10), priority=1, core=1)
    assert sa.request_driven_bound(server_ts([hi, me]), me, 0) == DIVERGED


def test_request_bound_rejects_bad_segment_index():
    t = Task(1, 10, 1000, 1000, seg(100), priority=1, core=0)
    with pytest.raises(ValueError):
        sa.request_driven_bound(server_ts([t]), t, 1)


# -- job-driven bound ----------------------------------------------------


def _jd_taskset():
    eps = 50
    hi = Task(1, 100, 50_000, 50_000, seg(1000 - eps), priority=3, core=0)
    me = Task(2, 100, 500_000, 500_000, seg(100) + seg(100), priority=2, core=1)
    lo = Task(3, 100, 900_000, 900_000, seg(5000 - eps), priority=1, core=1)
    return server_ts([hi, me, lo], eps=eps), me


def test_job_bound_single_pass_arithmetic():
    ts, me = _jd_taskset()
    assert sa.job_driven_bound(ts, me, 60_000) == 2 * 5000 + (math.ceil(60 / 50) + 1) * 1000 == 13_000


def test_job_bound_without_other_users_is_zero():
    t = Task(1, 10, 1000, 1000, seg(100), priority=1, core=0)
    assert sa.job_driven_bound(server_ts([t]), t, 500) == 0


def test_job_bound_requires_gpu_use():
    t = Task(1, 10, 1000, 1000, priority=1, core=0)
    with pytest.raises(ValueError):
        sa.job_driven_bound(server_ts([t]), t, 500)


def test_handling_bound_takes_the_smaller_waiting_bound():
    ts, me = _jd_taskset()
    b_rd = 2 * sa.request_driven_bound(ts, me, 0)
    assert b_rd == 14_000
    fixed = me.g_total + 2 * me.eta * 50
    # short window: job-driven wins
    assert sa.job_driven_bound(ts, me, 60_000) < b_rd
    assert sa.gpu_handling_bound(ts, me, 60_000) == 13_000 + fixed
    # long window: request-driven wins
    assert sa.job_driven_bound(ts, me, 200_000) > b_rd
    assert sa.gpu_handling_bound(ts, me, 200_000) == b_rd + fixed
    # request-driven only
    assert sa.gpu_handling_bound(ts, me, 60_000, use_job_driven=False) == b_rd + fixed


def test_handling_bound_of_cpu_task_is_zero():
    t = Task(1, 10, 1000, 1000, priority=1, core=0)
    assert sa.gpu_handling_bound(server_ts([t]), t, 100) == 0


def test_lowest_task_handling_bound_covers_its_simulated_handling_time():
    eps = 100
    ts = example_taskset(Policy.GPU_SERVER, 0.1)
    tau_l = ts.by_id(TAU_L)
    assert sa.gpu_handling_bound(ts, tau_l, tau_l.deadline) >= 4000 + 2 * eps


def test_example_bound_covers_six_plus_four_eps():
    for eps_units in (0.0, 0.1, 0.25):
        rep = sa.analyze(example_taskset(Policy.GPU_SERVER, eps_units))
        assert rep[TAU_H].response >= round((6 + 4 * eps_units) * 1000)


# -- case study regression-------------------------------------------------


def test_case_study_analysis_regression():
    # epsilon 50 us, misc 10% of each segment, fixture cores/priorities
    ts = load_case_study().with_platform(epsilon=50)
    rep = sa.analyze(ts)
    got = {tid: (a.response, a.schedulable) for tid, a in rep.tasks.items()}
    assert got == {
        1: (238_300, True),
        3: (142_600, True),
        4: (738_600, False),
        2: (255_000, True),
        5: (989_100, True),
    }
    # gpu_matmul1 waits behind up to three workzone jobs' requests
    assert rep[4].b_rd == 38_050 + 3 * 142_100
    assert not rep.schedulable


def test_case_study_request_driven_only_is_never_better():
    ts = load_case_study().with_platform(epsilon=50)
    rd, both = sa.analyze(ts, use_job_driven=False), sa.analyze(ts)
    for tid in both.tasks:
        assert both[tid].response <= rd[tid].response


def test_format_report_table_and_csv():
    ts = load_case_study().with_platform(epsilon=50)
    rep = sa.analyze(ts)
    text = sa.format_report(rep, ts)
    assert "MISS" in text and "NOT schedulable" in text
    rows = sa.format_report(rep, ts, csv=True).splitlines()
    assert rows[0] == "id,b_rd,b_jd,b_w,b_gpu,W,D,verdict" and len(rows) == 6


# -- properties --------------------------------------------------------------


def _allocated(ts):
    return prepare(ts, Policy.GPU_SERVER, rm=False)


@given(tasksets())
def test_waiting_bound_is_min_of_both(ts):
    for a in sa.analyze(_allocated(ts)).tasks.values():
        assert a.b_w == min(a.b_rd, a.b_jd)
        assert a.b_w <= a.b_rd and a.b_w <= a.b_jd


@given(tasksets())
def test_iterates_are_non_decreasing(ts):
    for a in sa.analyze(_allocated(ts)).tasks.values():
        assert all(x <= y for x, y in zip(a.log, a.log[1:]))
        assert a.schedulable == (a.response <= a.deadline)


@given(tasksets(), st.integers(1, 2000))
def test_more_overhead_never_helps(ts, extra):
    ts = _allocated(ts)
    before = sa.analyze(ts)
    after = sa.analyze(ts.with_platform(epsilon=ts.platform.epsilon + extra))
    for tid, a in before.tasks.items():
        # past the deadline the iterate is only a witness of divergence
        if after[tid].schedulable:
            assert a.schedulable and after[tid].response >= a.response


@given(tasksets(min_tasks=2), st.data())
def test_removing_a_higher_priority_gpu_task_never_hurts(ts, data):
    ts = _allocated(ts)
    users = [t for t in ts.tasks if t.eta]
    if not users:
        return
    gone = data.draw(st.sampled_from(users))
    rest = ts.with_tasks([t for t in ts.tasks if t.id != gone.id])
    before, after = sa.analyze(ts), sa.analyze(rest)
    for t in rest.tasks:
        if t.priority < gone.priority and before[t.id].schedulable:
            assert after[t.id].schedulable
            assert after[t.id].response <= before[t.id].response


@given(tasksets())
def test_early_exit_agrees_with_full_analysis(ts):
    ts = _allocated(ts)
    for jd in (False, True):
        assert sa.is_schedulable(ts, jd) == sa.analyze(ts, jd).schedulable
    assert sa.analyze(ts).schedulable >= sa.analyze(ts, use_job_driven=False).schedulable
