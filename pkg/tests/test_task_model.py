import json
from fractions import Fraction

import pytest
from hypothesis import given

from gpusched import task_model as tm
from gpusched.task_model import GpuSegment, ModelError, Platform, Policy, Task, Taskset

from strategies import tasksets


def test_case_study_fixture_is_valid():
    ts = tm.load_case_study()
    assert tm.validate(ts) == []
    assert [t.label for t in ts.tasks] == ["workzone", "cpu_matmul1", "cpu_matmul2", "gpu_matmul1", "gpu_matmul2"]
    assert ts.platform.num_cores == 2


def test_case_study_hyperperiod_is_three_seconds():
    assert tm.load_case_study().hyperperiod() == 3_000_000


def test_deadline_beyond_period_is_one_violation():
    ts = Taskset((Task(1, 100, 1000, 1001),), Platform(1))
    errs = tm.validate(ts)
    assert len(errs) == 1 and "deadline > period" in errs[0]


def test_segment_total_beyond_parts_is_one_violation():
    seg = GpuSegment(e_wcet=300, m_wcet=100, total=401)
    ts = Taskset((Task(1, 100, 10_000, 10_000, (seg,)),), Platform(1))
    errs = tm.validate(ts)
    assert len(errs) == 1 and "total > e+m" in errs[0]


def test_duplicate_priorities_and_bad_core():
    ts = Taskset((Task(1, 1, 10, 10, priority=2, core=0), Task(2, 1, 10, 10, priority=2, core=5)), Platform(2))
    errs = tm.validate(ts)
    assert any("not unique" in e for e in errs)
    assert any("core=5" in e for e in errs)


def test_utilization_workzone():
    t = tm.load_case_study().by_id(1)
    assert tm.utilization_exact(t) == Fraction(20_000 + 95_000 + 47_000, 300_000)
    assert tm.utilization(t) == pytest.approx(0.54)


def test_utilization_cpu_matmul1():
    t = tm.load_case_study().by_id(2)
    assert tm.utilization(t) == pytest.approx(0.28667, abs=5e-6)


def test_full_utilization_boundary():
    t = Task(1, 5000, 5000, 5000)
    assert tm.utilization(t) == 1.0
    assert tm.validate(Taskset((t,), Platform(1))) == []


def test_zero_utilization_is_rejected():
    errs = tm.validate(Taskset((Task(1, 0, 100, 100),), Platform(1)))
    assert any("utilization" in e for e in errs)


def test_segment_from_total_keeps_sum():
    s = GpuSegment.from_total(19_000, 0.1)
    assert (s.e_wcet, s.m_wcet, s.total) == (17_100, 1_900, 19_000)


def test_fixture_round_trips_byte_identically():
    text = tm.case_study_path().read_text()
    assert tm.dumps(tm.loads(text)) == text


def test_missing_field_is_model_error():
    doc = {"platform": {"num_cores": 1}, "tasks": [{"id": 1, "c_us": 1, "t_us": 10}]}
    with pytest.raises(ModelError, match="d_us"):
        tm.from_dict(doc)


def test_non_integer_duration_is_model_error():
    doc = {"platform": {"num_cores": 1}, "tasks": [{"id": 1, "c_us": 1.5, "t_us": 10, "d_us": 10}]}
    with pytest.raises(ModelError):
        tm.from_dict(doc)


def test_bad_policy_and_bad_json():
    with pytest.raises(ModelError):
        tm.from_dict({"platform": {"num_cores": 1, "policy": "fifo"}, "tasks": []})
    with pytest.raises(ModelError):
        tm.loads("{not json")


def test_with_policy_sync_clears_server_core():
    p = Platform(2, server_core=1).with_policy(Policy.SYNC_LOCK)
    assert p.server_core is None and p.policy is Policy.SYNC_LOCK


@given(tasksets())
def test_json_round_trip(ts):
    again = tm.loads(tm.dumps(ts))
    assert again == ts
    assert tm.dumps(again) == tm.dumps(ts)
    json.loads(tm.dumps(ts))


@given(tasksets())
def test_generated_tasksets_validate(ts):
    assert tm.validate(ts) == []
