"""Random taskset generation for schedulability sweeps.

Each taskset ``index`` under a ``seed`` draws from its own PCG64 stream, and
each task inside it from a further sub-stream, so sweeping one parameter
keeps every other draw fixed (common random numbers across sweep points).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .priority_alloc import assign_rm_priorities
from .task_model import DEFAULT_EPSILON_US, GpuSegment, Platform, Policy, Task, Taskset

RNG_NAME = "numpy.random.PCG64 via SeedSequence(seed, spawn_key=(taskset, task))"
MS = 1000
MAX_SPLIT_RETRIES = 100


@dataclass(frozen=True)
class Bimodal:
    small_range: tuple = (0.05, 0.2)
    large_range: tuple = (0.2, 0.5)
    small_fraction: float = 0.5


@dataclass(frozen=True)
class GenConfig:
    num_cores: int = 4
    n_range: Optional[tuple] = None  # defaults to [2 N_P, 5 N_P]
    util_range: tuple = (0.05, 0.2)
    bimodal: Optional[Bimodal] = None
    period_range_ms: tuple = (30, 500)
    gpu_task_pct: tuple = (0.10, 0.30)
    gpu_ratio: tuple = (0.10, 0.30)  # G_i / C_i
    eta_range: tuple = (1, 3)
    misc_ratio: tuple = (0.10, 0.20)  # G^m / G per segment
    epsilon_us: int = DEFAULT_EPSILON_US
    seed: int = 0

    @property
    def tasks_range(self) -> tuple:
        return tuple(self.n_range) if self.n_range else (2 * self.num_cores, 5 * self.num_cores)

    def check(self) -> list:
        errs = []
        named = {
            "tasks_range": self.tasks_range,
            "util_range": self.util_range,
            "period_range_ms": self.period_range_ms,
            "gpu_task_pct": self.gpu_task_pct,
            "gpu_ratio": self.gpu_ratio,
            "eta_range": self.eta_range,
            "misc_ratio": self.misc_ratio,
        }
        if self.bimodal:
            named["bimodal.small_range"] = self.bimodal.small_range
            named["bimodal.large_range"] = self.bimodal.large_range
        for k, (lo, hi) in named.items():
            if lo > hi:
                errs.append(f"{k}: empty range [{lo}, {hi}]")
        for k in ("util_range", "gpu_task_pct", "misc_ratio"):
            lo, hi = named[k]
            if lo < 0 or hi > 1:
                errs.append(f"{k}: fractions must lie in [0, 1]")
        if self.bimodal and not 0 <= self.bimodal.small_fraction <= 1:
            errs.append("bimodal.small_fraction must lie in [0, 1]")
        if self.gpu_ratio[0] < 0:
            errs.append("gpu_ratio must be non-negative")
        if self.num_cores < 1 or self.tasks_range[0] < 1:
            errs.append("need at least one core and one task")
        if self.eta_range[0] < 1:
            errs.append("eta_range must start at 1 or more")
        if self.period_range_ms[0] <= 0:
            errs.append("periods must be positive")
        if self.epsilon_us < 0:
            errs.append("epsilon must be non-negative")
        return errs

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_json(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k == "bimodal" and v is not None:
                v = Bimodal(**{bk: tuple(bv) if isinstance(bv, list) else bv for bk, bv in v.items()})
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        return cls(**kw)


def load_config(path) -> GenConfig:
    return GenConfig.from_json(json.loads(Path(path).read_text()))


def _uniform(rng, lo, hi) -> float:
    u = rng.random()
    return lo + u * (hi - lo)


def _task_rng(seed: int, index: int, task: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index, task))))


def _split(rng, total: int, eta: int) -> list:
    if eta == 1:
        return [total]
    for _ in range(MAX_SPLIT_RETRIES):
        cuts = sorted(int(round(x)) for x in rng.random(eta - 1) * total)
        pieces = [b - a for a, b in zip([0] + cuts, cuts + [total])]
        if min(pieces) >= 1:
            return pieces
    q, r = divmod(total, eta)
    return [q + (1 if k < r else 0) for k in range(eta)]


def _make_task(cfg: GenConfig, rng, tid: int, gpu: bool) -> Task:
    # fixed draw order; unused draws are still consumed so sub-streams stay aligned
    u_period, u_util, u_kind, u_ratio, u_eta = rng.random(5)
    lo, hi = cfg.period_range_ms
    period = int(round((lo + u_period * (hi - lo)) * MS))
    urange = cfg.util_range
    if cfg.bimodal is not None:
        urange = cfg.bimodal.small_range if u_kind < cfg.bimodal.small_fraction else cfg.bimodal.large_range
    util = urange[0] + u_util * (urange[1] - urange[0])
    budget = int(round(util * period))
    if not gpu:
        return Task(tid, max(budget, 1), period, period)
    r = cfg.gpu_ratio[0] + u_ratio * (cfg.gpu_ratio[1] - cfg.gpu_ratio[0])
    e_lo, e_hi = cfg.eta_range
    eta = e_lo + min(int(u_eta * (e_hi - e_lo + 1)), e_hi - e_lo)
    g = int(round(budget * r / (1 + r)))
    g = max(g, eta)
    c = max(budget - g, 0)
    segs = []
    for piece in _split(rng, g, eta):
        m_ratio = _uniform(rng, *cfg.misc_ratio)
        segs.append(GpuSegment.from_total(piece, m_ratio))
    return Task(tid, c, period, period, tuple(segs))


def generate(config: GenConfig, index: int = 0) -> Taskset:
    """One taskset; ``index`` selects the sub-stream within ``config.seed``."""
    errs = config.check()
    if errs:
        raise ValueError("; ".join(errs))
    top = _task_rng(config.seed, index, 0)
    n_lo, n_hi = config.tasks_range
    n = int(top.integers(n_lo, n_hi + 1))
    pct = _uniform(top, *config.gpu_task_pct)
    order = top.permutation(n)
    n_gpu = int(round(pct * n))
    gpu_ids = set(int(x) for x in order[:n_gpu])
    tasks = [_make_task(config, _task_rng(config.seed, index, k + 1), k, k in gpu_ids) for k in range(n)]
    tasks = assign_rm_priorities(tasks)
    platform = Platform(num_cores=config.num_cores, epsilon=config.epsilon_us, policy=Policy.GPU_SERVER)
    return Taskset(tuple(tasks), platform, {"rng": RNG_NAME, "seed": config.seed, "index": index})


def generate_batch(config: GenConfig, count: int, start: int = 0) -> Iterator[Taskset]:
    if count < 1:
        raise ValueError("count must be >= 1")
    for i in range(start, start + count):
        yield generate(config, i)
