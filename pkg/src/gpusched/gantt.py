"""Gantt-style SVG timelines from simulator traces: one row per core plus a GPU row."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .simulator import GPU_LANE, SERVER, SimResult  # noqa: E402
from .task_model import Policy  # noqa: E402

SVG_META = {"Date": None, "Creator": None}


@dataclass(frozen=True)
class Bar:
    row: int  # core index, or GPU_LANE
    actor: object
    start: int
    end: int
    hatched: bool = False  # busy-waiting inside a critical section


def trace_bars(result: SimResult) -> list:
    """Rebuild execution intervals from dispatch/stop events and GPU start/finish pairs."""
    bars = []
    open_run: dict = {}  # core -> (actor, since)
    gpu_open: dict = {}
    cs_core: dict = {}  # core -> busy-wait start (sync lock)
    core_of = {t.id: t.core for t in result.taskset.tasks}
    sync = result.taskset.platform.policy is Policy.SYNC_LOCK

    def close(core, t):
        if core in open_run:
            actor, since = open_run.pop(core)
            if t > since:
                bars.append(Bar(core, actor, since, t))

    for e in result.trace:
        if e.kind == "dispatch":
            close(e.core, e.time)
            open_run[e.core] = (e.actor, e.time)
        elif e.kind in ("preempt", "suspend", "job_complete"):
            if open_run.get(e.core, (None,))[0] == e.actor:
                close(e.core, e.time)
        elif e.kind == "gpu_start":
            gpu_open[e.actor] = e.time
            if sync:
                cs_core[core_of[e.actor]] = e.time
        elif e.kind == "gpu_finish" and e.actor in gpu_open:
            bars.append(Bar(GPU_LANE, e.actor, gpu_open.pop(e.actor), e.time))
            if sync:
                c = core_of[e.actor]
                start = cs_core.pop(c, None)
                if start is not None and e.time > start:
                    bars.append(Bar(c, e.actor, start, e.time, hatched=True))
    for core in list(open_run):
        close(core, result.horizon)
    return bars


def render_gantt(result: SimResult, path, unit: int = 1000, title: Optional[str] = None,
                 until: Optional[int] = None) -> Path:
    """Write an SVG timeline. ``unit`` is the number of microseconds per x-axis tick unit."""
    ts = result.taskset
    cores = list(range(ts.platform.num_cores))
    rows = cores + [GPU_LANE]
    ypos = {r: len(rows) - 1 - k for k, r in enumerate(rows)}
    ids = sorted(t.id for t in ts.tasks)
    cmap = plt.get_cmap("tab10")
    color = {tid: cmap(k % 10) for k, tid in enumerate(ids)}
    color[SERVER] = (0.35, 0.35, 0.35, 1.0)
    end = until if until is not None else result.horizon

    with plt.rc_context({"svg.hashsalt": "gpusched", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(10, 0.6 * len(rows) + 1.2))
        for b in trace_bars(result):
            if b.start >= end:
                continue
            stop = min(b.end, end)
            y = ypos[b.row]
            ax.broken_barh([(b.start / unit, (stop - b.start) / unit)], (y - 0.35, 0.7),
                           facecolors=color.get(b.actor, "white"), edgecolor="black", linewidth=0.4,
                           hatch="///" if b.hatched else None, alpha=0.5 if b.hatched else 1.0)
        for e in result.trace:
            if e.kind == "release" and e.time < end:
                ax.plot([e.time / unit], [ypos[e.core] + 0.42], marker="v", markersize=3,
                        color=color.get(e.actor, "black"))
            elif e.kind == "deadline_miss" and e.time < end:
                ax.plot([e.time / unit], [ypos[e.core]], marker="x", color="red")
        ax.set_yticks([ypos[r] for r in rows])
        ax.set_yticklabels([f"core {r}" if r != GPU_LANE else "GPU" for r in rows])
        ax.set_xlim(0, end / unit)
        ax.set_xlabel("time" if unit == 1 else f"time (x{unit} us)")
        handles = [plt.Rectangle((0, 0), 1, 1, color=color[t.id]) for t in sorted(ts.tasks, key=lambda t: t.id)]
        labels = [t.label for t in sorted(ts.tasks, key=lambda t: t.id)]
        if ts.platform.policy is Policy.GPU_SERVER:
            handles.append(plt.Rectangle((0, 0), 1, 1, color=color[SERVER]))
            labels.append("server")
        ax.legend(handles, labels, loc="upper right", fontsize=7, ncol=min(len(labels), 6))
        ax.set_title(title or f"{ts.platform.policy.value} timeline")
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out, format="svg", metadata=SVG_META)
        plt.close(fig)
    return out
