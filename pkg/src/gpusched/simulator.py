"""Discrete-event simulation of partitioned fixed-priority scheduling with one shared GPU.

Two arbitration policies are modeled:

* ``sync_lock``: one MPCP mutex guards the GPU. The holder runs at its
  boosted ceiling priority and busy-waits on its core for the whole segment.
* ``gpu_server``: the requesting task suspends; a server task (highest
  priority on its core) spends ``epsilon`` receiving the request, runs the
  segment's CPU-side work itself, and spends another ``epsilon`` notifying
  the task on completion. Pending requests are served in task-priority order.
  The server's own CPU work is ordered too: work of the segment on the GPU
  first, then notifications, then receiving new requests; the next request
  is taken off the queue only once every arrived request has been received,
  so a late high-priority request is never overtaken by one received earlier.

Time is integer microseconds. Ties at one instant are resolved as:
completions, then deadline checks, then releases, then dispatching.
"""

from __future__ import annotations

import csv
import heapq
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .sync_baseline import MpcpLockState
from .task_model import AccessMode, Policy, Task, Taskset

SERVER = "server"
GPU_LANE = -1
MAX_HORIZON = 2**62

EVENT_KINDS = (
    "release", "dispatch", "preempt", "suspend", "resume", "lock_acquire", "lock_release",
    "gpu_submit", "gpu_start", "gpu_finish", "server_wake", "server_notify", "job_complete",
    "deadline_miss",
)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class JobSpec:
    """One explicit job: ``chunks`` are the normal-execution pieces around its GPU segments.

    ``len(chunks) == eta + 1``; segment j runs between chunks j and j+1.
    ``None`` uses the default even split.
    """

    task_id: int
    release: int
    chunks: Optional[tuple] = None


@dataclass(frozen=True)
class SimEvent:
    time: int
    core: int
    actor: Union[int, str]
    kind: str


@dataclass
class SimResult:
    taskset: Taskset
    horizon: int
    trace: list
    responses: dict  # task id -> list of completed-job response times
    deadline_misses: list  # (task id, release, absolute deadline)
    core_busy: list
    gpu_busy: int
    server_busy: int = 0

    def worst_response(self, task_id) -> Optional[int]:
        r = self.responses.get(task_id)
        return max(r) if r else None

    def mean_response(self, task_id) -> Optional[float]:
        r = self.responses.get(task_id)
        return sum(r) / len(r) if r else None

    @property
    def miss_free(self) -> bool:
        return not self.deadline_misses

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_us", "core", "actor", "event"])
        for e in self.trace:
            w.writerow([e.time, e.core, e.actor, e.kind])
        return buf.getvalue()


def default_chunks(task: Task) -> tuple:
    """Split C_i evenly into eta_i + 1 normal chunks (remainder goes to the first ones)."""
    n = task.eta + 1
    q, r = divmod(task.c_wcet, n)
    return tuple(q + (1 if k < r else 0) for k in range(n))


# job states
READY, BLOCKED, SUSPENDED, WAITING, DONE = range(5)


class _Job:
    __slots__ = ("task", "release", "deadline", "phases", "pi", "rem", "state", "boosted", "seq")

    def __init__(self, task, release, phases, seq):
        self.task = task
        self.release = release
        self.deadline = release + task.deadline
        self.phases = phases
        self.pi = -1
        self.rem = 0
        self.state = WAITING
        self.boosted = False
        self.seq = seq


class _Item:
    """A piece of server CPU work."""

    __slots__ = ("kind", "rem", "job", "seg")

    def __init__(self, kind, rem, job=None, seg=None):
        self.kind, self.rem, self.job, self.seg = kind, rem, job, seg


class _ServerWork:
    """Server CPU work by class: in-flight segment misc work, then notifications, then
    incoming requests. A higher class preempts a partly done lower-class item."""

    CLASSES = {"head": 0, "tail": 0, "misc": 0, "notify": 1, "submit": 2}

    def __init__(self):
        self.lanes = (deque(), deque(), deque())

    @property
    def submits(self):
        return self.lanes[2]

    def push(self, item: _Item):
        self.lanes[self.CLASSES[item.kind]].append(item)

    def current(self) -> Optional[_Item]:
        for lane in self.lanes:
            if lane:
                return lane[0]
        return None

    def pop(self, item: _Item):
        lane = self.lanes[self.CLASSES[item.kind]]
        assert lane[0] is item
        lane.popleft()

    def size(self) -> int:
        return sum(len(x) for x in self.lanes)


class _Engine:
    def __init__(self, taskset: Taskset, horizon: int, record: bool):
        self.ts = taskset
        p = taskset.platform
        self.policy = p.policy
        self.async_mode = p.access_mode is AccessMode.ASYNCHRONOUS
        self.eps = p.epsilon
        self.acq_oh = p.lock_overhead - p.lock_overhead // 2
        self.rel_oh = p.lock_overhead // 2
        self.n_cores = p.num_cores
        self.server_core = p.server_core if self.policy is Policy.GPU_SERVER else None
        self.horizon = horizon
        self.record = record
        self.trace: list = []
        self.t = 0
        self.running: list = [None] * self.n_cores
        self.ready: list = [set() for _ in range(self.n_cores)]
        self.busy = [0] * self.n_cores
        self.server_busy = 0
        self.task_jobs: dict = {t.id: deque() for t in taskset.tasks}
        self.responses: dict = {t.id: [] for t in taskset.tasks}
        self.misses: list = []
        self.deadlines: list = []
        self.lock = MpcpLockState(base_ceiling=taskset.base_ceiling)
        self.jobs_by_id: dict = {}
        # server state
        self.work = _ServerWork()
        self.queue: list = []  # heap of (-priority, seq, job, seg)
        self.gpu_job = None  # job whose segment holds the GPU (incl. server notify)
        self.gpu_timer: Optional[int] = None
        self.gpu_timer_done = True
        self.misc_done = True
        self.gpu_busy = 0
        self.gpu_started_at = 0
        if self.server_core is not None and not 0 <= self.server_core < self.n_cores:
            raise SimulationError("server core outside platform")
        for t in taskset.tasks:
            if t.core is None or t.priority is None or not 0 <= t.core < self.n_cores:
                raise SimulationError(f"task {t.label}: needs an assigned core and priority")

    # -- bookkeeping ---------------------------------------------------

    def emit(self, core, actor, kind):
        if self.record:
            self.trace.append(SimEvent(self.t, core, actor, kind))

    def phases_for(self, task: Task, chunks) -> list:
        ph = [("cpu", chunks[0], None)]
        for j, seg in enumerate(task.gpu_segments):
            if self.policy is Policy.SYNC_LOCK:
                ph += [
                    ("lock", 0, j),
                    ("cs", self.acq_oh, j),
                    ("csgpu", seg.total, j),
                    ("cs", self.rel_oh, j),
                    ("unlock", 0, j),
                ]
            else:
                ph.append(("req", 0, j))
            ph.append(("cpu", chunks[j + 1], None))
        return ph

    def prio(self, actor) -> float:
        if actor is SERVER:
            return float("inf")
        if actor.boosted:
            return self.lock.base_ceiling + actor.task.priority
        return actor.task.priority

    def actor_rem(self, actor) -> int:
        if actor is SERVER:
            return self.work.current().rem
        return actor.rem

    # -- jobs ----------------------------------------------------------

    def release(self, job: _Job):
        self.emit(job.task.core, job.task.id, "release")
        heapq.heappush(self.deadlines, (job.deadline, job.seq, job))
        q = self.task_jobs[job.task.id]
        q.append(job)
        if len(q) == 1:
            self.activate(job)

    def activate(self, job: _Job):
        job.state = READY
        self.ready[job.task.core].add(job)
        self.enter(job, 0)

    def enter(self, job: _Job, pi: int):
        if pi >= len(job.phases):
            self.complete(job)
            return
        job.pi = pi
        kind, dur, seg = job.phases[pi]
        job.rem = dur
        if kind == "csgpu":
            self.gpu_job = job
            self.gpu_started_at = self.t
            self.emit(GPU_LANE, job.task.id, "gpu_start")

    def stop_running(self, job: _Job, kind: str):
        core = job.task.core
        self.ready[core].discard(job)
        if self.running[core] is job:
            self.running[core] = None
        self.emit(core, job.task.id, kind)

    def complete(self, job: _Job):
        job.state = DONE
        self.stop_running(job, "job_complete")
        self.responses[job.task.id].append(self.t - job.release)
        q = self.task_jobs[job.task.id]
        q.popleft()
        if q:
            self.activate(q[0])

    def make_ready(self, job: _Job, pi: int):
        job.state = READY
        self.ready[job.task.core].add(job)
        self.emit(job.task.core, job.task.id, "resume")
        self.enter(job, pi)

    def job_step(self, job: _Job):
        """End the job's current phase (its remaining time is zero)."""
        kind, _, seg = job.phases[job.pi]
        tid = job.task.id
        core = job.task.core
        if kind in ("cpu", "cs"):
            self.enter(job, job.pi + 1)
        elif kind == "csgpu":
            self.emit(GPU_LANE, tid, "gpu_finish")
            self.gpu_busy += self.t - self.gpu_started_at
            self.gpu_job = None
            self.enter(job, job.pi + 1)
        elif kind == "lock":
            self.emit(core, tid, "gpu_submit")
            if self.lock.acquire(tid, job.task.priority):
                job.boosted = True
                self.emit(core, tid, "lock_acquire")
                self.enter(job, job.pi + 1)
            else:
                job.state = BLOCKED
                self.stop_running(job, "suspend")
        elif kind == "unlock":
            self.emit(core, tid, "lock_release")
            job.boosted = False
            nxt = self.lock.release(tid)
            self.enter(job, job.pi + 1)
            if nxt is not None:
                other = self.jobs_by_id[nxt]
                other.boosted = True
                self.emit(other.task.core, nxt, "lock_acquire")
                self.make_ready(other, other.pi + 1)
        elif kind == "req":
            job.state = SUSPENDED
            self.stop_running(job, "suspend")
            self.emit(self.server_core, tid, "server_wake")
            self.push(_Item("submit", self.eps, job, seg))
        else:  # pragma: no cover
            raise AssertionError(kind)

    # -- server --------------------------------------------------------

    def push(self, item: _Item):
        self.work.push(item)
        self.kick()

    def kick(self):
        """Finish zero-length server work, then hand the GPU to the best pending request."""
        while True:
            item = self.work.current()
            if item is not None and item.rem == 0:
                self.work.pop(item)
                self.server_action(item)
                continue
            if self.gpu_job is None and self.queue and not self.work.submits:
                self.start_next()
                continue
            break
        if item is None and self.running[self.server_core] is SERVER:
            self.running[self.server_core] = None
            self.emit(self.server_core, SERVER, "suspend")

    def server_action(self, item: _Item):
        job = item.job
        if item.kind == "submit":
            heapq.heappush(self.queue, (-job.task.priority, job.seq, job, item.seg))
            self.emit(self.server_core, job.task.id, "gpu_submit")
        elif item.kind == "head":
            self.gpu_timer = self.t + self.gpu_phase_len(job, item.seg)
            self.gpu_timer_done = False
        elif item.kind == "misc":  # asynchronous mode: runs alongside the GPU
            self.misc_done = True
            if self.gpu_timer_done:
                self.finish_segment(job)
        elif item.kind == "tail":
            self.finish_segment(job)
        elif item.kind == "notify":
            self.emit(self.server_core, job.task.id, "server_notify")
            self.gpu_job = None
            self.make_ready(job, job.pi + 1)

    def split(self, job, seg):
        s = job.task.gpu_segments[seg]
        m = min(s.m_wcet, s.total)
        return m, s.total - m

    def gpu_phase_len(self, job, seg) -> int:
        m, e = self.split(job, seg)
        return e

    def start_next(self):
        _, _, job, seg = heapq.heappop(self.queue)
        self.gpu_job = job
        self.gpu_started_at = self.t
        self.emit(GPU_LANE, job.task.id, "gpu_start")
        m, e = self.split(job, seg)
        if self.async_mode:
            self.gpu_timer = self.t + job.task.gpu_segments[seg].total
            self.gpu_timer_done = False
            self.misc_done = False
            self.gpu_seg = seg
            self.work.push(_Item("misc", m, job, seg))
        else:
            self.gpu_seg = seg
            self.work.push(_Item("head", m - m // 2, job, seg))

    def gpu_timer_fired(self):
        job = self.gpu_job
        self.gpu_timer = None
        self.gpu_timer_done = True
        if self.async_mode:
            if self.misc_done:
                self.finish_segment(job)
        else:
            m, _ = self.split(job, self.gpu_seg)
            self.work.push(_Item("tail", m // 2, job, self.gpu_seg))
        self.kick()

    def finish_segment(self, job):
        self.emit(GPU_LANE, job.task.id, "gpu_finish")
        self.gpu_busy += self.t - self.gpu_started_at
        self.work.push(_Item("notify", self.eps, job, None))

    # -- main loop -----------------------------------------------------

    def settle(self):
        """Run zero-time work on running actors and redispatch until stable."""
        for _ in range(1_000_000):
            progressed = False
            for core in range(self.n_cores):
                actor = self.running[core]
                if actor is None or actor is SERVER:
                    continue
                while self.running[core] is actor and actor.rem == 0 and actor.state == READY:
                    self.job_step(actor)
                    progressed = True
            if self.server_core is not None:
                before = self.work.size()
                self.kick()
                progressed |= self.work.size() != before
            changed = self.dispatch()
            if not progressed and not changed:
                return
        raise SimulationError("zero-time livelock")  # pragma: no cover

    def dispatch(self) -> bool:
        changed = False
        for core in range(self.n_cores):
            best = None
            best_p = None
            if core == self.server_core and self.work.current() is not None:
                best, best_p = SERVER, float("inf")
            else:
                for j in self.ready[core]:
                    p = self.prio(j)
                    if best_p is None or p > best_p:
                        best, best_p = j, p
            cur = self.running[core]
            if best is cur:
                continue
            changed = True
            if cur is not None:
                self.emit(core, SERVER if cur is SERVER else cur.task.id, "preempt")
            self.running[core] = best
            if best is not None:
                self.emit(core, SERVER if best is SERVER else best.task.id, "dispatch")
        return changed

    def run(self, releases: list):
        releases.sort(key=lambda r: (r[0], r[1].task.priority * -1, r[1].seq))
        ri = 0
        n_rel = len(releases)
        horizon = self.horizon
        while True:
            nxt = horizon
            if ri < n_rel and releases[ri][0] < nxt:
                nxt = releases[ri][0]
            for core in range(self.n_cores):
                a = self.running[core]
                if a is not None:
                    r = self.t + self.actor_rem(a)
                    if r < nxt:
                        nxt = r
            if self.gpu_timer is not None and self.gpu_timer < nxt:
                nxt = self.gpu_timer
            if self.deadlines and self.deadlines[0][0] < nxt:
                nxt = self.deadlines[0][0]

            dt = nxt - self.t
            if dt:
                for core in range(self.n_cores):
                    a = self.running[core]
                    if a is not None:
                        self.busy[core] += dt
                        if a is SERVER:
                            self.work.current().rem -= dt
                            self.server_busy += dt
                        else:
                            a.rem -= dt
                self.t = nxt

            # completions
            if self.gpu_timer is not None and self.gpu_timer == self.t:
                self.gpu_timer_fired()
            for core in range(self.n_cores):
                a = self.running[core]
                if a is SERVER:
                    if self.work.current().rem == 0:
                        self.kick()
                elif a is not None:
                    while self.running[core] is a and a.rem == 0 and a.state == READY:
                        self.job_step(a)
            # deadlines
            while self.deadlines and self.deadlines[0][0] <= self.t:
                d, _, job = heapq.heappop(self.deadlines)
                if job.state != DONE:
                    self.misses.append((job.task.id, job.release, d))
                    self.emit(job.task.core, job.task.id, "deadline_miss")
            if self.t >= horizon:
                break
            # releases
            while ri < n_rel and releases[ri][0] == self.t:
                self.release(releases[ri][1])
                ri += 1
            self.settle()


def _releases(ts: Taskset, engine: _Engine, horizon: int, model, seed: int, jitter: float) -> list:
    out = []
    seq = 0

    def mk(task, t, chunks):
        nonlocal seq
        job = _Job(task, t, engine.phases_for(task, chunks), seq)
        seq += 1
        return (t, job)

    if isinstance(model, str):
        if model in ("periodic", "synchronous-periodic"):
            for task in ts.tasks:
                ch = default_chunks(task)
                for t in range(0, horizon, task.period):
                    out.append(mk(task, t, ch))
        elif model in ("sporadic", "sporadic-random"):
            rng = np.random.Generator(np.random.PCG64(seed))
            for task in ts.tasks:
                ch = default_chunks(task)
                t = 0
                while t < horizon:
                    out.append(mk(task, t, ch))
                    extra = int(rng.integers(0, int(task.period * jitter) + 1))
                    t += task.period + extra
        else:
            raise SimulationError(f"unknown release model {model!r}")
    else:
        last: dict = {}
        for spec in model:
            try:
                task = ts.by_id(spec.task_id)
            except KeyError:
                raise SimulationError(f"job spec for unknown task {spec.task_id}") from None
            ch = default_chunks(task) if spec.chunks is None else tuple(spec.chunks)
            if len(ch) != task.eta + 1:
                raise SimulationError(f"task {task.label}: layout needs {task.eta + 1} chunks, got {len(ch)}")
            if any(c < 0 for c in ch) or sum(ch) != task.c_wcet:
                raise SimulationError(f"task {task.label}: chunks {ch} must be >= 0 and sum to C={task.c_wcet}")
            if spec.release < 0:
                raise SimulationError("negative release time")
            prev = last.get(task.id)
            if prev is not None and spec.release < prev:
                raise SimulationError(f"task {task.label}: job specs must be in release order")
            last[task.id] = spec.release
            if spec.release < horizon:
                out.append(mk(task, spec.release, ch))
    return out


def simulate(taskset: Taskset, horizon: int, release_model: Union[str, Sequence[JobSpec]] = "periodic",
             seed: int = 0, jitter: float = 0.2, record_trace: bool = True) -> SimResult:
    """Simulate ``[0, horizon)`` under the taskset's platform policy.

    ``release_model`` is ``"periodic"`` (all tasks at 0, strictly periodic),
    ``"sporadic"`` (inter-arrival drawn from ``[T, T*(1+jitter)]`` using
    ``seed``) or an explicit sequence of :class:`JobSpec`.
    """
    if not isinstance(horizon, int) or horizon <= 0 or horizon > MAX_HORIZON:
        raise SimulationError(f"horizon {horizon!r} must be a positive integer below {MAX_HORIZON}")
    eng = _Engine(taskset, horizon, record_trace)
    rel = _releases(taskset, eng, horizon, release_model, seed, jitter)
    # lock grants look a waiting job up by task id; only the head job of a task can wait
    eng.jobs_by_id = _HeadJobs(eng.task_jobs)
    eng.run(rel)
    return SimResult(
        taskset=taskset,
        horizon=horizon,
        trace=eng.trace,
        responses=eng.responses,
        deadline_misses=eng.misses,
        core_busy=eng.busy,
        gpu_busy=eng.gpu_busy,
        server_busy=eng.server_busy,
    )


class _HeadJobs:
    def __init__(self, task_jobs):
        self.task_jobs = task_jobs

    def __getitem__(self, task_id):
        return self.task_jobs[task_id][0]


# -- trace checking ------------------------------------------------------


def trace_check(result: SimResult) -> list:
    """Return violations of the scheduling/arbitration rules found in ``result.trace``."""
    ts = result.taskset
    prio = {t.id: t.priority for t in ts.tasks}
    core_of = {t.id: t.core for t in ts.tasks}
    policy = ts.platform.policy
    out: list = []
    running: dict = {}
    gpu_active: list = []
    pending: dict = {}
    holder = None
    awaiting: set = set()
    last_time = None

    for k, e in enumerate(result.trace):
        where = f"t={e.time} #{k}"
        if last_time is not None and e.time < last_time:
            out.append(f"{where}: trace not time-ordered")
        last_time = e.time
        a = e.actor
        if e.kind == "dispatch":
            cur = running.get(e.core)
            if cur is not None:
                out.append(f"{where}: core {e.core} dispatches {a} while {cur} runs")
            if policy is Policy.SYNC_LOCK and holder is not None and core_of.get(holder) == e.core and a != holder:
                out.append(f"{where}: {a} dispatched on core {e.core} during {holder}'s critical section")
            if a in awaiting:
                out.append(f"{where}: {a} runs while awaiting its GPU request")
            running[e.core] = a
        elif e.kind in ("preempt", "suspend", "job_complete"):
            if running.get(e.core) == a:
                running[e.core] = None
            if e.kind == "preempt" and a == SERVER:
                out.append(f"{where}: server preempted on core {e.core}")
            if policy is Policy.SYNC_LOCK and a == holder and e.kind != "job_complete":
                out.append(f"{where}: lock holder {a} left its core inside the critical section")
            if policy is Policy.GPU_SERVER and e.kind == "suspend" and a != SERVER:
                awaiting.add(a)
        elif e.kind == "resume":
            awaiting.discard(a)
        elif e.kind == "gpu_submit":
            pending[a] = e.time
        elif e.kind == "lock_acquire":
            if holder is not None:
                out.append(f"{where}: {a} acquires lock held by {holder}")
            _check_dequeue(a, pending, prio, where, out)
            holder = a
        elif e.kind == "lock_release":
            if holder != a:
                out.append(f"{where}: {a} releases lock held by {holder}")
            holder = None
        elif e.kind == "gpu_start":
            if gpu_active:
                out.append(f"{where}: GPU start for {a} while {gpu_active[0]} executes")
            if policy is Policy.GPU_SERVER:
                _check_dequeue(a, pending, prio, where, out)
            gpu_active.append(a)
        elif e.kind == "gpu_finish":
            if a in gpu_active:
                gpu_active.remove(a)
            else:
                out.append(f"{where}: GPU finish for {a} without start")
    return out


def _check_dequeue(a, pending, prio, where, out):
    if a not in pending:
        out.append(f"{where}: {a} served without a pending request")
        return
    best = max(pending, key=lambda x: prio[x])
    if prio[best] > prio[a]:
        out.append(f"{where}: {a} served before higher-priority pending {best}")
    del pending[a]
