"""Exact event-driven simulation of the restrained BRW and its immortal variant.

A single run is sequential. Replicas are independent: replica ``r`` of master
seed ``s`` draws from ``numpy.random.default_rng(SeedSequence(s, spawn_key=(r,)))``,
which is what ``SeedSequence(s).spawn(R)[r]`` produces, so any replica can be
rerun on its own.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _engine
from .graph import AlphaWeights, Graph, Kernel, region_mask
from .profiles import RateProfile

STATISTICS = ("site-mean", "total-mass", "extinct-flag", "occupancy-histogram")
EVENT_KINDS = ("death", "birth")


class Configuration:
    """Sparse occupancy map ``vertex -> count`` with cached total and norm."""

    __slots__ = ("_occ", "_total", "_alpha", "_norm")

    def __init__(self, occupancy: Mapping[int, int] | None = None,
                 alpha: AlphaWeights | None = None):
        self._occ: dict[int, int] = {}
        self._total = 0
        self._alpha = alpha
        self._norm = 0.0
        for x, v in (occupancy or {}).items():
            self[x] = v

    @classmethod
    def zeros(cls, alpha=None) -> "Configuration":
        return cls({}, alpha)

    @classmethod
    def constant(cls, graph: Graph, value: int, region=None, alpha=None) -> "Configuration":
        mask = region_mask(graph, region)
        return cls({int(x): value for x in np.flatnonzero(mask)}, alpha)

    @classmethod
    def delta(cls, x: int, alpha=None) -> "Configuration":
        return cls({int(x): 1}, alpha)

    @classmethod
    def from_array(cls, arr, alpha=None) -> "Configuration":
        arr = np.asarray(arr)
        return cls({int(x): int(arr[x]) for x in np.flatnonzero(arr)}, alpha)

    def __getitem__(self, x: int) -> int:
        return self._occ.get(int(x), 0)

    def __setitem__(self, x: int, value: int) -> None:
        x, value = int(x), int(value)
        if value < 0:
            raise ValueError("occupancies are nonnegative")
        old = self._occ.pop(x, 0)
        if value:
            self._occ[x] = value
        self._total += value - old
        if self._alpha is not None:
            self._norm += (value - old) * float(self._alpha.alpha[x])

    def items(self):
        return sorted(self._occ.items())

    @property
    def support(self) -> list[int]:
        return sorted(self._occ)

    @property
    def total(self) -> int:
        return self._total

    @property
    def norm(self) -> float:
        """alpha-norm; requires the configuration to carry alpha-weights."""
        if self._alpha is None:
            raise ValueError("configuration has no alpha-weights attached")
        return self._norm

    def to_array(self, n_vertices: int) -> np.ndarray:
        a = np.zeros(n_vertices, dtype=np.int64)
        for x, v in self._occ.items():
            if x >= n_vertices:
                raise ValueError("configuration exceeds the graph")
            a[x] = v
        return a

    def __le__(self, other: "Configuration") -> bool:
        return all(v <= other[x] for x, v in self._occ.items())

    def __eq__(self, other) -> bool:
        return isinstance(other, Configuration) and self._occ == other._occ

    def __repr__(self) -> str:
        return f"Configuration({dict(self.items())})"


@dataclass(frozen=True)
class SimParams:
    """Parameters of one run.

    ``gamma=1, k=0`` and ``region=None`` (whole graph) is the main model.
    With ``frozen_exterior`` the initial configuration may place particles
    outside the region; they never act.
    """

    profile: RateProfile
    t_end: float
    seed: int
    gamma: float = 1.0
    k: int = 0
    region: object = None
    sample_times: tuple = ()
    frozen_exterior: bool = False
    max_events: int | None = None
    log_events: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sample_times", tuple(float(s) for s in self.sample_times))
        if not math.isfinite(self.t_end) or self.t_end < 0:
            raise ValueError("t_end must be finite and nonnegative")
        if self.gamma < 0 or self.k < 0:
            raise ValueError("gamma and k must be nonnegative")
        st = np.asarray(self.sample_times)
        if st.size and ((np.diff(st) <= 0).any() or st[0] < 0 or st[-1] > self.t_end):
            raise ValueError("sample times must increase strictly within [0, t_end]")


@dataclass
class Trajectory:
    sample_times: np.ndarray
    samples: np.ndarray
    final: np.ndarray
    t_final: float
    extinction_time: float | None
    n_events: int
    n_accepted: int
    max_occupancy: int
    seed: int = 0
    replica: int = 0
    region: np.ndarray | None = None
    k: int = 0
    events: list = field(default_factory=list)
    window_means: np.ndarray | None = None
    occupancy_time: np.ndarray | None = None

    @property
    def extinct(self) -> bool:
        return self.extinction_time is not None


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica,)))


def _prepare(graph: Graph, kernel: Kernel, params: SimParams, eta0) -> tuple:
    if kernel.graph is not graph:
        raise ValueError("kernel belongs to a different graph")
    active = region_mask(graph, params.region)
    if not active.any():
        raise ValueError("empty active region")
    eta = eta0.to_array(graph.n_vertices) if isinstance(eta0, Configuration) \
        else np.array(eta0, dtype=np.int64)
    if eta.shape != (graph.n_vertices,) or (eta < 0).any():
        raise ValueError("initial configuration has the wrong shape or sign")
    if not params.frozen_exterior and eta[~active].any():
        raise ValueError("initial configuration has particles outside the region")
    if params.k > 0 and (eta[active] < params.k).any():
        raise ValueError("initial configuration is below the immortal floor")
    return active, eta


def _run_one(graph, kernel, params, active, eta0, replica, windows=None, hist_bins=0):
    rng = replica_rng(params.seed, replica)
    indptr, indices, cum = kernel.cumulative_rows
    eta = eta0.copy()
    st = np.asarray(params.sample_times, dtype=float)
    out = np.full((len(st), graph.n_vertices), -1, dtype=np.int64)
    edges = np.asarray(windows if windows is not None else [], dtype=float)
    nb = max(len(edges) - 1, 0)
    acc = np.zeros((nb, graph.n_vertices))
    hist = np.zeros((graph.n_vertices if hist_bins else 0, hist_bins))
    cap = params.log_events
    log_t = np.zeros(cap)
    log_site = np.zeros(cap, dtype=np.int64)
    log_kind = np.zeros(cap, dtype=np.int64)
    log_target = np.zeros(cap, dtype=np.int64)
    log_acc = np.zeros(cap, dtype=np.bool_)
    max_events = params.max_events if params.max_events is not None else np.iinfo(np.int64).max
    prof = params.profile
    t, n_ev, n_acc, ext, max_occ, n_log = _engine.run_single(
        indptr, indices, cum, active, eta, float(params.gamma), int(params.k),
        prof.lam, prof.table(), prof.tail, float(params.t_end), int(max_events),
        st, out, rng, edges, acc, hist, log_t, log_site, log_kind, log_target, log_acc)
    events = [
        {"time": float(log_t[i]), "site": int(log_site[i]),
         "kind": EVENT_KINDS[log_kind[i]],
         "target": None if log_target[i] < 0 else int(log_target[i]),
         "accepted": bool(log_acc[i])}
        for i in range(n_log)
    ]
    widths = np.diff(edges)
    return Trajectory(
        sample_times=st, samples=out, final=eta, t_final=float(t),
        extinction_time=None if ext < 0 else float(ext), n_events=int(n_ev),
        n_accepted=int(n_acc), max_occupancy=int(max_occ), seed=params.seed,
        replica=replica, region=active, k=params.k, events=events,
        window_means=acc / widths[:, None] if nb else None,
        occupancy_time=hist if hist_bins else None,
    )


def run_sim(graph: Graph, kernel: Kernel, params: SimParams, eta0,
            replica: int = 0) -> Trajectory:
    """Run one exact realization of the dynamics.

    Deaths at ``x`` in the region happen at rate ``gamma * (eta(x) - k)^+``;
    each particle attempts births at rate ``c(0)``, the target drawn from
    ``p(x, .)`` and accepted with probability ``c(eta(y)) / c(0)`` when ``y``
    lies in the region.
    """
    active, eta = _prepare(graph, kernel, params, eta0)
    return _run_one(graph, kernel, params, active, eta, replica)


def _chunk(args):
    graph, kernel, params, active, eta, reps, windows, hist_bins = args
    return [_run_one(graph, kernel, params, active, eta, r, windows, hist_bins) for r in reps]


def run_replicas(graph: Graph, kernel: Kernel, params: SimParams, eta0,
                 n_replicas: int, jobs: int = 1, windows=None,
                 hist_bins: int = 0) -> list[Trajectory]:
    """Independent replicas ``0..n_replicas-1`` of the same master seed.

    ``windows`` (increasing time edges) turns on time-averaged per-site means
    per window; ``hist_bins`` turns on time-weighted occupancy histograms over
    the whole windowed span.
    """
    active, eta = _prepare(graph, kernel, params, eta0)
    reps = list(range(n_replicas))
    if jobs <= 1 or n_replicas < 2 * jobs:
        return _chunk((graph, kernel, params, active, eta, reps, windows, hist_bins))
    chunks = [reps[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_chunk, [(graph, kernel, params, active, eta, c, windows,
                                        hist_bins) for c in chunks]))
    merged = [t for part in parts for t in part]
    return sorted(merged, key=lambda t: t.replica)


def summarize(trajectory: Trajectory, what: str, time_index: int = -1) -> np.ndarray:
    """Statistic at each sample time.

    ``site-mean`` averages over the active region, ``total-mass`` sums over it,
    ``extinct-flag`` is 1 once the region has emptied. ``occupancy-histogram``
    pools the region's sites at ``sample_times[time_index]`` and returns counts
    indexed by occupancy.
    """
    if what not in STATISTICS:
        raise ValueError(f"unknown statistic {what!r}")
    region = trajectory.region if trajectory.region is not None else \
        np.ones(trajectory.samples.shape[1], dtype=bool)
    s = trajectory.samples[:, region]
    if what == "site-mean":
        return s.mean(axis=1).astype(float)
    if what == "total-mass":
        return s.sum(axis=1).astype(float)
    if what == "extinct-flag":
        if trajectory.extinction_time is None:
            return np.zeros(len(trajectory.sample_times))
        return (trajectory.sample_times >= trajectory.extinction_time).astype(float)
    row = s[time_index]
    return np.bincount(row, minlength=1).astype(float)


def stack(trajectories: Sequence[Trajectory], what: str) -> np.ndarray:
    """``(replicas, times)`` array of a per-time statistic."""
    return np.array([summarize(t, what) for t in trajectories])


def site_samples(trajectories: Sequence[Trajectory], site: int) -> np.ndarray:
    """``(replicas, times)`` occupancies of one site."""
    return np.array([t.samples[:, site] for t in trajectories])


def write_trajectory_csv(trajectories: Iterable[Trajectory], path,
                         statistics: Sequence[str] = ("site-mean", "total-mass", "extinct-flag")) -> None:
    """Columns ``time,statistic,value,replica,seed``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "statistic", "value", "replica", "seed"])
        for tr in trajectories:
            for stat in statistics:
                for t, v in zip(tr.sample_times, summarize(tr, stat)):
                    w.writerow([repr(float(t)), stat, repr(float(v)), tr.replica, tr.seed])


def write_event_log(trajectory: Trajectory, path) -> None:
    """JSON lines with keys ``time, site, kind, target, accepted``."""
    with open(path, "w") as fh:
        for ev in trajectory.events:
            fh.write(json.dumps(ev) + "\n")


def with_seed(params: SimParams, seed: int) -> SimParams:
    return replace(params, seed=seed)
