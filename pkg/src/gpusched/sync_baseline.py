"""Lock-based GPU access: MPCP lock bookkeeping and a conservative response-time bound.

The bound here is a reconstruction, not a published MPCP or FMLP+ test:
every GPU segment is a busy-waiting critical section on the caller's core,
per-request lock blocking has the request-driven shape (longest lower-priority
critical section plus higher-priority ones issued during the wait), and
boosted critical sections of other tasks on the same core are charged as
self-suspending highest-priority interference.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .rta import DIVERGED, ceil_div, least_fixed_point
from .server_analysis import AnalysisReport, TaskAnalysis
from .task_model import ModelError, Task, Taskset

BOUND_LABEL = "sync_reconstructed (reconstructed, conservative)"


class LockProtocolError(RuntimeError):
    pass


@dataclass
class MpcpLockState:
    """Single global GPU mutex. ``wait_list`` holds task ids, highest priority first."""

    base_ceiling: int
    holder: Optional[int] = None
    holder_priority: Optional[int] = None
    wait_list: list = field(default_factory=list)
    _keys: list = field(default_factory=list, repr=False)  # -priority, parallel to wait_list
    _prio: dict = field(default_factory=dict, repr=False)

    @property
    def ceiling(self) -> Optional[int]:
        if self.holder is None:
            return None
        return self.base_ceiling + self.holder_priority

    def _check(self):
        assert self._keys == sorted(self._keys), "wait list lost priority order"
        assert (self.holder is None) == (self.holder_priority is None)

    def acquire(self, task_id: int, priority: int) -> bool:
        """Grant the lock if free (returns True), else queue by priority and return False."""
        if priority >= self.base_ceiling:
            raise LockProtocolError(f"priority {priority} not below base ceiling {self.base_ceiling}")
        if task_id == self.holder or task_id in self._prio:
            raise LockProtocolError(f"task {task_id} already holds or awaits the GPU lock")
        if self.holder is None:
            self.holder, self.holder_priority = task_id, priority
            self._check()
            return True
        k = bisect.bisect_right(self._keys, -priority)
        self._keys.insert(k, -priority)
        self.wait_list.insert(k, task_id)
        self._prio[task_id] = priority
        self._check()
        return False

    def release(self, task_id: int) -> Optional[int]:
        """Release the lock; the highest-priority waiter (returned) becomes holder."""
        if self.holder is None or task_id != self.holder:
            raise LockProtocolError(f"task {task_id} released a lock held by {self.holder}")
        if self.wait_list:
            nxt = self.wait_list.pop(0)
            self._keys.pop(0)
            self.holder, self.holder_priority = nxt, self._prio.pop(nxt)
        else:
            self.holder = self.holder_priority = None
        self._check()
        return self.holder


def mpcp_acquire(state: MpcpLockState, task: Task) -> bool:
    return state.acquire(task.id, task.priority)


def mpcp_release(state: MpcpLockState) -> Optional[int]:
    if state.holder is None:
        raise LockProtocolError("release of a free lock")
    return state.release(state.holder)


class _SyncAnalyzer:
    def __init__(self, taskset: Taskset, lock_overhead: Optional[int] = None):
        self.ts = taskset
        self.oh = taskset.platform.lock_overhead if lock_overhead is None else lock_overhead
        for t in taskset.tasks:
            if t.priority is None or t.core is None:
                raise ModelError(f"task {t.label}: priority and core must be assigned")

    def analyze_task(self, task: Task, known: Mapping) -> TaskAnalysis:
        ts, oh = self.ts, self.oh
        cs_own = task.g_total + task.eta * oh
        b_rd: float = 0
        if task.eta:
            lower = max(
                (s.total + oh for t in ts.tasks if t.priority < task.priority for s in t.gpu_segments),
                default=0,
            )
            higher = [(t.period, t.g_total + t.eta * oh)
                      for t in ts.tasks if t.priority > task.priority and t.eta]

            def rd(b):
                return lower + sum((ceil_div(b, th) + 1) * load for th, load in higher)

            b, _ = least_fixed_point(rd, lower, task.deadline)
            b_rd = DIVERGED if b > task.deadline else b * task.eta

        local = []
        boosted = []
        for h in ts.tasks:
            if h.core != task.core or h.id == task.id:
                continue
            if h.priority > task.priority:
                w_h = known.get(h.id)
                local.append((h.period, h.c_wcet, (w_h if w_h is not None else h.deadline) - h.c_wcet))
            if h.eta:
                cs = h.g_total + h.eta * oh
                boosted.append((h.period, cs, h.deadline - cs))

        if b_rd == DIVERGED:
            return TaskAnalysis(task.id, b_rd, DIVERGED, DIVERGED, DIVERGED, DIVERGED,
                                task.deadline, False, 0, [])
        base = task.c_wcet + cs_own + b_rd

        def step(w):
            total = base
            for th, ch, jit in local:
                total += max(0, ceil_div(w + jit, th)) * ch
            for th, cs, jit in boosted:
                total += max(0, ceil_div(w + jit, th)) * cs
            return total

        w, log = least_fixed_point(step, base, task.deadline)
        b_gpu = b_rd + cs_own if task.eta else 0
        return TaskAnalysis(task.id, b_rd, DIVERGED if task.eta else 0, b_rd, b_gpu, w,
                            task.deadline, w <= task.deadline, len(log) - 1, log)


def sync_response_bound(taskset: Taskset, task: Task, known: Optional[Mapping] = None) -> float:
    """Reconstructed conservative response bound of ``task`` under the GPU lock."""
    return _SyncAnalyzer(taskset).analyze_task(task, known or {}).response


def analyze_sync(taskset: Taskset, lock_overhead: Optional[int] = None) -> AnalysisReport:
    an = _SyncAnalyzer(taskset, lock_overhead)
    known: dict = {}
    out: dict = {}
    for task in sorted(taskset.tasks, key=lambda t: -t.priority):
        a = an.analyze_task(task, known)
        if a.schedulable:
            known[task.id] = a.response
        out[task.id] = a
    return AnalysisReport(out, label=BOUND_LABEL)


def is_schedulable_sync(taskset: Taskset, lock_overhead: Optional[int] = None) -> bool:
    an = _SyncAnalyzer(taskset, lock_overhead)
    known: dict = {}
    for task in sorted(taskset.tasks, key=lambda t: -t.priority):
        a = an.analyze_task(task, known)
        if not a.schedulable:
            return False
        known[task.id] = a.response
    return True
