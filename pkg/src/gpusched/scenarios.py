"""The three-task, two-core example used to contrast lock-based and server-based GPU access.

tau_h and tau_m share core 0 (which also hosts the GPU server); tau_l is on
core 1. Each job runs one time unit, makes one GPU request, then runs one
more unit. Release times and segment lengths:

    tau_l: released 0, segment 4
    tau_m: released 2, segment 3
    tau_h: released 3, segment 3

Under the server every segment carries two epsilon-long CPU sub-segments,
so its misc share is 2*eps.
"""

from __future__ import annotations

from .simulator import JobSpec
from .task_model import AccessMode, GpuSegment, Platform, Policy, Task, Taskset

UNIT_US = 1000
TAU_L, TAU_M, TAU_H = 1, 2, 3


def example_taskset(policy: Policy, epsilon_units: float = 0.0, unit: int = UNIT_US,
                    lock_overhead: int = 0) -> Taskset:
    eps = round(epsilon_units * unit)
    if policy is Policy.SYNC_LOCK:
        eps_used, misc = 0, 0
    else:
        eps_used, misc = eps, 2 * eps
    period = 100 * unit

    def seg(units):
        total = units * unit
        m = min(misc, total)
        return GpuSegment(e_wcet=total - m, m_wcet=m, total=total)

    tasks = (
        Task(TAU_L, 2 * unit, period, period, (seg(4),), priority=1, core=1, name="tau_l"),
        Task(TAU_M, 2 * unit, period, period, (seg(3),), priority=2, core=0, name="tau_m"),
        Task(TAU_H, 2 * unit, period, period, (seg(3),), priority=3, core=0, name="tau_h"),
    )
    platform = Platform(
        num_cores=2,
        epsilon=eps_used,
        access_mode=AccessMode.SYNCHRONOUS,
        policy=policy,
        server_core=0 if policy is Policy.GPU_SERVER else None,
        lock_overhead=lock_overhead,
    )
    return Taskset(tasks, platform)


def example_jobs(unit: int = UNIT_US) -> list:
    return [
        JobSpec(TAU_L, 0, (unit, unit)),
        JobSpec(TAU_M, 2 * unit, (unit, unit)),
        JobSpec(TAU_H, 3 * unit, (unit, unit)),
    ]
