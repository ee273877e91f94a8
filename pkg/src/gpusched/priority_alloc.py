"""Rate-monotonic priorities and bin-packing allocation of tasks (and the GPU server) to cores."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .task_model import Platform, Policy, Task, Taskset, utilization_exact

SERVER = "server"


class Heuristic(str, Enum):
    WORST_FIT_DECREASING = "worst_fit_decreasing"
    FIRST_FIT_DECREASING = "first_fit_decreasing"


class AllocationInfeasible(Exception):
    def __init__(self, item, loads):
        self.item = item
        self.loads = loads

    def __str__(self):
        return f"{self.item} could not be packed (core loads: {', '.join(f'{float(x):.4f}' for x in self.loads)})"


@dataclass(frozen=True)
class AllocationRequest:
    tasks: tuple[Task, ...]
    platform: Platform
    heuristic: Heuristic = Heuristic.WORST_FIT_DECREASING


@dataclass(frozen=True)
class Placement:
    item: object  # task id or SERVER
    utilization: Fraction
    core: int
    loads_before: tuple[Fraction, ...]


@dataclass(frozen=True)
class Allocation:
    tasks: tuple[Task, ...]
    platform: Platform
    log: tuple[Placement, ...]

    def taskset(self, meta: Optional[dict] = None) -> Taskset:
        return Taskset(self.tasks, self.platform, dict(meta or {}))

    def loads(self) -> list[float]:
        out = [Fraction(0)] * self.platform.num_cores
        for p in self.log:
            out[p.core] += p.utilization
        return [float(x) for x in out]


def assign_rm_priorities(tasks: Iterable[Task]) -> list[Task]:
    """Shorter period gets higher priority; equal periods favor the smaller id.

    Priorities are 1..n with n the highest. Input order is preserved.
    """
    tasks = list(tasks)
    for t in tasks:
        if t.period <= 0:
            raise ValueError(f"task {t.label}: period must be positive")
    ranked = sorted(tasks, key=lambda t: (t.period, t.id))
    n = len(ranked)
    prio = {t.id: n - k for k, t in enumerate(ranked)}
    return [replace(t, priority=prio[t.id]) for t in tasks]


def server_utilization_exact(tasks: Iterable[Task], epsilon: int) -> Fraction:
    return sum(
        (Fraction(t.g_misc + 2 * t.eta * epsilon, t.period) for t in tasks if t.eta > 0),
        Fraction(0),
    )


def server_utilization(tasks: Iterable[Task], epsilon: int) -> float:
    """CPU share of the GPU server: sum over GPU users of (G^m_i + 2 eta_i eps) / T_i."""
    return float(server_utilization_exact(tasks, epsilon))


def _pack(items: Sequence[tuple], num_cores: int, heuristic: Heuristic) -> list[Placement]:
    loads = [Fraction(0)] * num_cores
    log = []
    for key, u in items:
        if heuristic is Heuristic.WORST_FIT_DECREASING:
            core = min(range(num_cores), key=lambda c: (loads[c], c))
        else:
            core = next((c for c in range(num_cores) if loads[c] + u <= 1), None)
            if core is None:
                raise AllocationInfeasible(key, loads)
        log.append(Placement(key, u, core, tuple(loads)))
        loads[core] += u
    return log


def allocate(request: AllocationRequest) -> Allocation:
    """Partition tasks onto cores; under gpu_server the server is packed as one more item.

    Items are sorted by decreasing utilization. Ties put the server first, then
    smaller task ids, so the result is deterministic.
    """
    platform = request.platform
    heuristic = Heuristic(request.heuristic)
    for t in request.tasks:
        if t.priority is None:
            raise ValueError(f"task {t.label}: priorities must be assigned before allocation")
    items = [((0, t.id), t.id, utilization_exact(t)) for t in request.tasks]
    if platform.policy is Policy.GPU_SERVER:
        items.append(((-1, 0), SERVER, server_utilization_exact(request.tasks, platform.epsilon)))
    items.sort(key=lambda it: (-it[2], it[0]))
    log = _pack([(key, u) for _, key, u in items], platform.num_cores, heuristic)

    where = {p.item: p.core for p in log}
    tasks = tuple(replace(t, core=where[t.id]) for t in request.tasks)
    if platform.policy is Policy.GPU_SERVER:
        platform = replace(platform, server_core=where[SERVER])
    else:
        platform = replace(platform, server_core=None)
    return Allocation(tasks, platform, tuple(log))


def prepare(taskset: Taskset, policy: Policy, heuristic: Heuristic = Heuristic.WORST_FIT_DECREASING,
            rm: bool = True) -> Taskset:
    """RM priorities (optional) plus allocation for the given policy."""
    tasks = assign_rm_priorities(taskset.tasks) if rm else list(taskset.tasks)
    platform = taskset.platform.with_policy(policy)
    alloc = allocate(AllocationRequest(tuple(tasks), platform, heuristic))
    return alloc.taskset(taskset.meta)


def format_log(alloc: Allocation) -> str:
    lines = []
    for p in alloc.log:
        name = "server" if p.item == SERVER else f"task {p.item}"
        before = " ".join(f"{float(x):.4f}" for x in p.loads_before)
        lines.append(f"{name:>10}  u={float(p.utilization):.4f}  -> core {p.core}  (loads before: {before})")
    return "\n".join(lines)
