"""Worst-case response-time analysis for tasks whose GPU requests go through a GPU server.

Waiting time for the GPU is bounded two ways (per request, and per job over
the response window) and the smaller of the two is used. CPU interference
follows the self-suspension aware recurrence, with an extra term for tasks
that share a core with the server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .rta import DIVERGED, ceil_div, least_fixed_point
from .task_model import ModelError, Policy, Task, Taskset


@dataclass
class TaskAnalysis:
    task_id: int
    b_rd: float
    b_jd: float
    b_w: float
    b_gpu: float
    response: float
    deadline: int
    schedulable: bool
    iterations: int
    log: list = field(default_factory=list, repr=False)


@dataclass
class AnalysisReport:
    tasks: dict  # task id -> TaskAnalysis, in analysis (decreasing priority) order
    label: str = "server"

    @property
    def schedulable(self) -> bool:
        return all(a.schedulable for a in self.tasks.values())

    def __getitem__(self, task_id) -> TaskAnalysis:
        return self.tasks[task_id]


def _lower_max(ts: Taskset, task: Task, eps: int) -> int:
    return max(
        (s.total + eps for t in ts.tasks if t.priority < task.priority for s in t.gpu_segments),
        default=0,
    )


def _higher_gpu(ts: Taskset, task: Task, eps: int) -> list[tuple[int, int]]:
    # (T_h, sum_k (G_h,k + eps)) for every higher-priority GPU user on any core
    return [
        (t.period, t.g_total + t.eta * eps)
        for t in ts.tasks
        if t.priority > task.priority and t.eta > 0
    ]


def _rd_step(lower: int, higher, b: int) -> int:
    return lower + sum((ceil_div(b, th) + 1) * load for th, load in higher)


def request_driven_bound(taskset: Taskset, task: Task, segment_index: int) -> float:
    """Worst-case wait of one GPU request; ``DIVERGED`` once the iterate passes D_i."""
    if not 0 <= segment_index < task.eta:
        raise ValueError(f"task {task.label} has no GPU segment {segment_index}")
    eps = taskset.platform.epsilon
    lower = _lower_max(taskset, task, eps)
    higher = _higher_gpu(taskset, task, eps)
    b, _ = least_fixed_point(lambda x: _rd_step(lower, higher, x), lower, task.deadline)
    return DIVERGED if b > task.deadline else b


def job_driven_bound(taskset: Taskset, task: Task, response_hypothesis: int) -> int:
    """Total wait of all of a job's GPU requests given a response-time window."""
    if task.eta == 0:
        raise ValueError(f"task {task.label} makes no GPU requests")
    if response_hypothesis < 0:
        raise ValueError("response hypothesis must be non-negative")
    eps = taskset.platform.epsilon
    lower = _lower_max(taskset, task, eps)
    higher = _higher_gpu(taskset, task, eps)
    return task.eta * lower + sum((ceil_div(response_hypothesis, th) + 1) * load for th, load in higher)


def gpu_handling_bound(taskset: Taskset, task: Task, response_hypothesis: int,
                       use_job_driven: bool = True) -> float:
    """B^gpu: waiting bound plus G_i plus 2 eps per request (0 for CPU-only tasks)."""
    if task.eta == 0:
        return 0
    b_rd = sum(request_driven_bound(taskset, task, j) for j in range(task.eta))
    b_jd = job_driven_bound(taskset, task, response_hypothesis) if use_job_driven else DIVERGED
    b_w = min(b_rd, b_jd)
    return b_w + task.g_total + 2 * task.eta * taskset.platform.epsilon


class _Analyzer:
    """Per-taskset precomputation shared by every task's recurrence."""

    def __init__(self, taskset: Taskset, use_job_driven: bool):
        self.ts = taskset
        self.use_jd = use_job_driven
        p = taskset.platform
        if p.policy is not Policy.GPU_SERVER:
            raise ModelError("server analysis requires policy gpu_server")
        for t in taskset.tasks:
            if t.priority is None or t.core is None:
                raise ModelError(f"task {t.label}: priority and core must be assigned")
        if p.server_core is None and any(t.eta for t in taskset.tasks):
            raise ModelError("GPU users present but no server core assigned")
        self.eps = p.epsilon

    def analyze_task(self, task: Task, known: Mapping) -> TaskAnalysis:
        eps = self.eps
        ts = self.ts
        b_rd: float = 0
        lower = 0
        higher: list = []
        if task.eta:
            lower = _lower_max(ts, task, eps)
            higher = _higher_gpu(ts, task, eps)
            b, _ = least_fixed_point(lambda x: _rd_step(lower, higher, x), lower, task.deadline)
            per_request = DIVERGED if b > task.deadline else b
            b_rd = per_request * task.eta
        g_fixed = task.g_total + 2 * task.eta * eps

        def b_jd_at(w: int) -> float:
            if not task.eta:
                return 0
            if not self.use_jd:
                return DIVERGED
            return task.eta * lower + sum((ceil_div(w, th) + 1) * load for th, load in higher)

        def b_gpu_at(w: int) -> tuple:
            if not task.eta:
                return 0, 0, 0
            jd = b_jd_at(w)
            bw = min(b_rd, jd)
            return jd, bw, bw + g_fixed

        local = []
        for h in ts.tasks:
            if h.core == task.core and h.priority > task.priority:
                w_h = known.get(h.id)
                jitter = (w_h if w_h is not None else h.deadline) - h.c_wcet
                local.append((h.period, h.c_wcet, jitter))
        server_terms = []
        if task.core == ts.platform.server_core:
            for j in ts.tasks:
                if j.id != task.id and j.eta > 0:
                    demand = j.g_misc + 2 * j.eta * eps
                    server_terms.append((j.period, demand, j.deadline - demand))

        used = {}

        def step(w: int):
            jd, bw, bg = b_gpu_at(w)
            used["jd"], used["bw"], used["bg"] = jd, bw, bg
            if bg == DIVERGED:
                return DIVERGED
            total = task.c_wcet + bg
            for th, ch, jit in local:
                total += max(0, ceil_div(w + jit, th)) * ch
            for tj, dj, jit in server_terms:
                total += max(0, ceil_div(w + jit, tj)) * dj
            return total

        jd0, bw0, bg0 = b_gpu_at(0)
        used.update(jd=jd0, bw=bw0, bg=bg0)
        seed = task.c_wcet + bg0
        w, log = least_fixed_point(step, seed, task.deadline)
        sched = w <= task.deadline
        return TaskAnalysis(
            task_id=task.id,
            b_rd=b_rd,
            b_jd=used["jd"],
            b_w=used["bw"],
            b_gpu=used["bg"],
            response=w,
            deadline=task.deadline,
            schedulable=sched,
            iterations=len(log) - 1,
            log=log,
        )


def response_time(taskset: Taskset, task: Task, known: Optional[Mapping] = None,
                  use_job_driven: bool = True) -> tuple[float, bool, int]:
    """(W_i, schedulable, iterations) for one task.

    ``known`` maps already-analyzed schedulable higher-priority task ids to
    their W; anything missing falls back to the deadline in the jitter term.
    """
    a = _Analyzer(taskset, use_job_driven).analyze_task(task, known or {})
    return a.response, a.schedulable, a.iterations


def analyze(taskset: Taskset, use_job_driven: bool = True) -> AnalysisReport:
    """Analyze all tasks in decreasing priority order."""
    an = _Analyzer(taskset, use_job_driven)
    known: dict = {}
    out: dict = {}
    for task in sorted(taskset.tasks, key=lambda t: -t.priority):
        a = an.analyze_task(task, known)
        if a.schedulable:
            known[task.id] = a.response
        out[task.id] = a
    return AnalysisReport(out, label="server_rd_jd" if use_job_driven else "server_rd")


def is_schedulable(taskset: Taskset, use_job_driven: bool = True) -> bool:
    """Early-exit variant of ``analyze(...).schedulable`` for sweeps."""
    an = _Analyzer(taskset, use_job_driven)
    known: dict = {}
    for task in sorted(taskset.tasks, key=lambda t: -t.priority):
        a = an.analyze_task(task, known)
        if not a.schedulable:
            return False
        known[task.id] = a.response
    return True


def format_report(report: AnalysisReport, taskset: Taskset, csv: bool = False) -> str:
    def fmt(x):
        return "inf" if x == math.inf else str(int(x))

    header = ["id", "b_rd", "b_jd", "b_w", "b_gpu", "W", "D", "verdict"]
    rows = []
    for tid, a in report.tasks.items():
        rows.append([str(tid), fmt(a.b_rd), fmt(a.b_jd), fmt(a.b_w), fmt(a.b_gpu), fmt(a.response),
                     str(a.deadline), "ok" if a.schedulable else "MISS"])
    if csv:
        return "\n".join(",".join(r) for r in [header] + rows) + "\n"
    widths = [max(len(r[k]) for r in [header] + rows) for k in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + rows]
    lines.append(f"taskset: {'schedulable' if report.schedulable else 'NOT schedulable'} ({report.label})")
    return "\n".join(lines) + "\n"
