"""Task, GPU segment, platform and taskset types plus their JSON file format.

All durations are integer microseconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence


class ModelError(ValueError):
    """Raised when a model value is unusable (not for invariant violations)."""


class AccessMode(str, Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"


class Policy(str, Enum):
    SYNC_LOCK = "sync_lock"
    GPU_SERVER = "gpu_server"


# measured 99.9th percentile overheads, rounded to whole microseconds
LOCK_OVERHEAD_US = 14
SERVER_OVERHEAD_US = 45
DEFAULT_EPSILON_US = 50


@dataclass(frozen=True)
class GpuSegment:
    e_wcet: int  # CPU-free GPU work
    m_wcet: int  # CPU-required misc work
    total: int

    @classmethod
    def from_total(cls, total: int, misc_ratio: float) -> "GpuSegment":
        m = int(round(total * misc_ratio))
        return cls(e_wcet=total - m, m_wcet=m, total=total)


@dataclass(frozen=True)
class Task:
    id: int
    c_wcet: int
    period: int
    deadline: int
    gpu_segments: tuple[GpuSegment, ...] = ()
    priority: Optional[int] = None
    core: Optional[int] = None
    name: str = ""

    @property
    def eta(self) -> int:
        return len(self.gpu_segments)

    @property
    def g_total(self) -> int:
        return sum(s.total for s in self.gpu_segments)

    @property
    def g_misc(self) -> int:
        return sum(s.m_wcet for s in self.gpu_segments)

    @property
    def uses_gpu(self) -> bool:
        return bool(self.gpu_segments)

    @property
    def label(self) -> str:
        return self.name or f"t{self.id}"


@dataclass(frozen=True)
class Platform:
    num_cores: int
    epsilon: int = DEFAULT_EPSILON_US
    access_mode: AccessMode = AccessMode.SYNCHRONOUS
    policy: Policy = Policy.GPU_SERVER
    server_core: Optional[int] = None
    base_ceiling: Optional[int] = None
    lock_overhead: int = 0  # per critical section, split evenly acquire/release

    def with_policy(self, policy: Policy, **kw) -> "Platform":
        if policy is Policy.SYNC_LOCK:
            kw.setdefault("server_core", None)
        return replace(self, policy=policy, **kw)


@dataclass(frozen=True)
class Taskset:
    tasks: tuple[Task, ...]
    platform: Platform
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def by_id(self, task_id: int) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def with_tasks(self, tasks: Sequence[Task], **platform_changes) -> "Taskset":
        platform = replace(self.platform, **platform_changes) if platform_changes else self.platform
        return Taskset(tuple(tasks), platform, dict(self.meta))

    def with_platform(self, **platform_changes) -> "Taskset":
        return Taskset(self.tasks, replace(self.platform, **platform_changes), dict(self.meta))

    @property
    def base_ceiling(self) -> int:
        if self.platform.base_ceiling is not None:
            return self.platform.base_ceiling
        return max((t.priority or 0 for t in self.tasks), default=0) + 1

    def utilization(self) -> float:
        return float(sum(utilization_exact(t) for t in self.tasks))

    def hyperperiod(self) -> int:
        h = 1
        for t in self.tasks:
            h = math.lcm(h, t.period)
        return h


def utilization_exact(task: Task) -> Fraction:
    if task.period <= 0:
        raise ModelError(f"task {task.label}: period must be positive")
    return Fraction(task.c_wcet + task.g_total, task.period)


def utilization(task: Task) -> float:
    """(C_i + G_i) / T_i."""
    return float(utilization_exact(task))


def validate(taskset: Taskset) -> list[str]:
    """Return a list of human-readable invariant violations; empty means valid."""
    out: list[str] = []
    p = taskset.platform
    if not isinstance(p.num_cores, int) or p.num_cores < 1:
        out.append(f"platform: num_cores={p.num_cores!r} must be >= 1")
    if p.epsilon < 0:
        out.append(f"platform: epsilon={p.epsilon} must be >= 0")
    if p.lock_overhead < 0:
        out.append(f"platform: lock_overhead={p.lock_overhead} must be >= 0")
    if p.server_core is not None:
        if p.policy is not Policy.GPU_SERVER:
            out.append("platform: server_core set but policy is not gpu_server")
        elif not 0 <= p.server_core < max(p.num_cores, 0):
            out.append(f"platform: server_core={p.server_core} outside [0, {p.num_cores})")

    prios = [t.priority for t in taskset.tasks if t.priority is not None]
    if p.base_ceiling is not None and prios and p.base_ceiling <= max(prios):
        out.append(f"platform: base_ceiling={p.base_ceiling} must exceed max priority {max(prios)}")

    seen_ids: set = set()
    seen_prio: dict = {}
    for t in taskset.tasks:
        who = f"task {t.label}"
        if t.id in seen_ids:
            out.append(f"{who}: duplicate id {t.id}")
        seen_ids.add(t.id)
        if t.c_wcet < 0:
            out.append(f"{who}: c_wcet={t.c_wcet} < 0")
        if t.period <= 0:
            out.append(f"{who}: period={t.period} must be > 0")
        if t.deadline <= 0:
            out.append(f"{who}: deadline={t.deadline} must be > 0")
        if t.deadline > t.period:
            out.append(f"{who}: deadline > period ({t.deadline} > {t.period})")
        for j, s in enumerate(t.gpu_segments):
            if s.e_wcet < 0 or s.m_wcet < 0:
                out.append(f"{who} segment {j}: negative e/m wcet")
            if s.total <= 0:
                out.append(f"{who} segment {j}: total={s.total} must be > 0")
            if s.total > s.e_wcet + s.m_wcet:
                out.append(f"{who} segment {j}: total > e+m ({s.total} > {s.e_wcet + s.m_wcet})")
        if t.period > 0:
            u = utilization_exact(t)
            if not 0 < u <= 1:
                out.append(f"{who}: utilization {float(u):.6g} outside (0, 1]")
        if t.priority is not None:
            if t.priority in seen_prio:
                out.append(f"{who}: priority {t.priority} not unique (shared with {seen_prio[t.priority]})")
            seen_prio[t.priority] = t.label
        if t.core is not None and isinstance(p.num_cores, int) and not 0 <= t.core < p.num_cores:
            out.append(f"{who}: core={t.core} outside [0, {p.num_cores})")
    return out


# -- JSON file format -------------------------------------------------------


def segment_to_dict(s: GpuSegment) -> dict:
    return {"e_us": s.e_wcet, "m_us": s.m_wcet, "total_us": s.total}


def task_to_dict(t: Task) -> dict:
    d: dict = {"id": t.id}
    if t.name:
        d["name"] = t.name
    d.update(c_us=t.c_wcet, t_us=t.period, d_us=t.deadline)
    if t.priority is not None:
        d["priority"] = t.priority
    if t.core is not None:
        d["core"] = t.core
    d["gpu_segments"] = [segment_to_dict(s) for s in t.gpu_segments]
    return d


def platform_to_dict(p: Platform) -> dict:
    d: dict = {
        "num_cores": p.num_cores,
        "epsilon_us": p.epsilon,
        "access_mode": p.access_mode.value,
        "policy": p.policy.value,
    }
    if p.server_core is not None:
        d["server_core"] = p.server_core
    if p.base_ceiling is not None:
        d["base_ceiling"] = p.base_ceiling
    if p.lock_overhead:
        d["lock_overhead_us"] = p.lock_overhead
    return d


def to_dict(ts: Taskset) -> dict:
    d = {"platform": platform_to_dict(ts.platform), "tasks": [task_to_dict(t) for t in ts.tasks]}
    if ts.meta:
        d["meta"] = ts.meta
    return d


def dumps(ts: Taskset) -> str:
    return json.dumps(to_dict(ts), indent=2) + "\n"


def _int(d: dict, key: str, where: str, default=None) -> int:
    if key not in d:
        if default is not None:
            return default
        raise ModelError(f"{where}: missing field {key!r}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ModelError(f"{where}: field {key!r} must be an integer number of microseconds, got {v!r}")
    return int(v)


def from_dict(d: dict) -> Taskset:
    if not isinstance(d, dict) or "platform" not in d or "tasks" not in d:
        raise ModelError("taskset document needs 'platform' and 'tasks'")
    pd = d["platform"]
    try:
        platform = Platform(
            num_cores=_int(pd, "num_cores", "platform"),
            epsilon=_int(pd, "epsilon_us", "platform", default=0),
            access_mode=AccessMode(pd.get("access_mode", "synchronous")),
            policy=Policy(pd.get("policy", "gpu_server")),
            server_core=pd.get("server_core"),
            base_ceiling=pd.get("base_ceiling"),
            lock_overhead=_int(pd, "lock_overhead_us", "platform", default=0),
        )
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"platform: {exc}") from exc
    tasks = []
    for i, td in enumerate(d["tasks"]):
        where = f"tasks[{i}]"
        segs = tuple(
            GpuSegment(
                e_wcet=_int(sd, "e_us", f"{where}.gpu_segments[{j}]"),
                m_wcet=_int(sd, "m_us", f"{where}.gpu_segments[{j}]"),
                total=_int(sd, "total_us", f"{where}.gpu_segments[{j}]"),
            )
            for j, sd in enumerate(td.get("gpu_segments", []))
        )
        tasks.append(
            Task(
                id=_int(td, "id", where),
                c_wcet=_int(td, "c_us", where),
                period=_int(td, "t_us", where),
                deadline=_int(td, "d_us", where),
                gpu_segments=segs,
                priority=td.get("priority"),
                core=td.get("core"),
                name=td.get("name", ""),
            )
        )
    return Taskset(tuple(tasks), platform, dict(d.get("meta", {})))


def loads(text: str) -> Taskset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    return from_dict(doc)


def load(path) -> Taskset:
    return loads(Path(path).read_text())


def save(ts: Taskset, path) -> None:
    Path(path).write_text(dumps(ts))


def case_study_path() -> Path:
    return Path(__file__).parent / "fixtures" / "case_study.json"


def load_case_study() -> Taskset:
    return load(case_study_path())
