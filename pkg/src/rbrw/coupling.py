"""Monotone coupling of nested processes on one probability space.

Component ``h`` runs on region ``Lambda_h`` with immortal floor ``k_h``, death
rate ``gamma_h`` and profile ``c_h``. All components share the site clocks,
the death uniform ``U``, the birth uniform ``V`` and the birth target ``y``
(drawn from the unrestricted kernel). Under the conditions checked by
:func:`validate_spec` the acceptance thresholds are ordered in ``h`` whenever
two neighbouring components agree at the site being updated, so the ordering
``eta_1 <= ... <= eta_N`` is preserved event by event.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _engine
from .graph import Graph, Kernel, region_mask
from .profiles import RateProfile
from .simulate import Configuration, replica_rng


@dataclass(frozen=True)
class Component:
    profile: RateProfile
    eta0: object
    k: int = 0
    gamma: float = 1.0
    region: object = None


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    graph: Graph
    kernel: Kernel
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("a coupling needs at least one component")
        if self.kernel.graph is not self.graph:
            raise ValueError("kernel belongs to a different graph")
        if self.kernel.region is not None:
            raise ValueError("targets are drawn from the unrestricted kernel")

    @property
    def N(self) -> int:
        return len(self.components)

    def masks(self) -> np.ndarray:
        return np.array([region_mask(self.graph, c.region) for c in self.components])

    def initial(self) -> np.ndarray:
        V = self.graph.n_vertices
        rows = []
        for c in self.components:
            e = c.eta0.to_array(V) if isinstance(c.eta0, Configuration) \
                else np.array(c.eta0, dtype=np.int64)
            if e.shape != (V,):
                raise ValueError("initial configuration has the wrong length")
            rows.append(e)
        return np.array(rows, dtype=np.int64)


def validate_spec(spec: CouplingSpec) -> list[str]:
    """Every violated ordering condition, as text; empty when the spec is valid.

    Besides the nesting of regions, floors, death rates, profiles and initial
    states, a component frozen at a site that the next component still
    updates must sit at or below the next component's floor there.
    Otherwise a death in the larger process could cross it.
    """
    out: list[str] = []
    masks = spec.masks()
    eta = spec.initial()
    for h, c in enumerate(spec.components):
        if (eta[h] < 0).any():
            out.append(f"component {h}: negative initial occupancy")
        if (eta[h][masks[h]] < c.k).any():
            out.append(f"component {h}: initial state below floor k={c.k} inside its region")
        if c.gamma < 0 or c.k < 0:
            out.append(f"component {h}: negative gamma or k")
    for h in range(spec.N - 1):
        a, b = spec.components[h], spec.components[h + 1]
        if (masks[h] & ~masks[h + 1]).any():
            out.append(f"regions {h} and {h + 1} are not nested")
        if a.k > b.k:
            out.append(f"k_{h} = {a.k} exceeds k_{h + 1} = {b.k}")
        if a.gamma < b.gamma:
            out.append(f"gamma_{h} = {a.gamma} is below gamma_{h + 1} = {b.gamma}")
        bad = [j for j in range(b.k, max(a.profile.K, b.profile.K, b.k) + 2)
               if a.profile(j) > b.profile(j)]
        if bad:
            out.append(f"c_{h}(j) > c_{h + 1}(j) at j = {bad[0]} (j >= k_{h + 1})")
        if (eta[h] > eta[h + 1]).any():
            x = int(np.flatnonzero(eta[h] > eta[h + 1])[0])
            out.append(f"initial states {h}, {h + 1} not ordered at site {x}")
        shell = masks[h + 1] & ~masks[h]
        if (eta[h][shell] > b.k).any():
            x = int(np.flatnonzero(shell & (eta[h] > b.k))[0])
            out.append(f"frozen occupancy of component {h} at site {x} exceeds k_{h + 1}")
    return out


@dataclass(frozen=True)
class Certificate:
    n_events: int
    n_violations: int
    n_inversions: int
    first_violation: dict | None

    @property
    def ok(self) -> bool:
        return self.n_violations == 0 and self.n_inversions == 0

    def summary(self) -> str:
        head = (f"coupling: {self.n_events} events, {self.n_violations} ordering violations, "
                f"{self.n_inversions} threshold inversions")
        if self.first_violation is None:
            return head
        v = self.first_violation
        return head + (f"; first at t={v['time']:.6g} site {v['site']} components "
                       f"{v['component']},{v['component'] + 1} occupancies "
                       f"{v['lower']},{v['upper']}")


@dataclass
class CoupledRun:
    sample_times: np.ndarray
    samples: np.ndarray
    final: np.ndarray
    t_final: float
    extinction_times: list
    certificate: Certificate
    seed: int
    replica: int


def _prepared(spec: CouplingSpec):
    problems = validate_spec(spec)
    if problems:
        raise ValueError("invalid coupling: " + "; ".join(problems))
    tabs = [c.profile for c in spec.components]
    width = max(p.K for p in tabs) + 1
    ctabs = np.array([p.table(width) for p in tabs])
    ctails = np.array([p.tail for p in tabs])
    gammas = np.array([float(c.gamma) for c in spec.components])
    ks = np.array([int(c.k) for c in spec.components], dtype=np.int64)
    return spec.masks(), spec.initial(), gammas, ks, ctabs, ctails


def _run_coupled_one(spec, prepared, t_end, seed, replica, sample_times, max_events):
    masks, eta0, gammas, ks, ctabs, ctails = prepared
    N, V = eta0.shape
    eta = eta0.copy()
    st = np.asarray(sample_times, dtype=float)
    out = np.full((len(st), N, V), -1, dtype=np.int64)
    viol = np.zeros(5 + N)
    indptr, indices, cum = spec.kernel.cumulative_rows
    cap = np.iinfo(np.int64).max if max_events is None else int(max_events)
    t, n_ev, n_viol, n_inv = _engine.run_coupled(
        indptr, indices, cum, masks, eta, gammas, ks, ctabs, ctails,
        float(gammas.max()), float(ctabs[:, 0].max()), float(t_end), cap,
        st, out, replica_rng(seed, replica), viol)
    first = None
    if n_viol:
        first = {"time": float(viol[0]), "site": int(viol[1]), "component": int(viol[2]),
                 "lower": int(viol[3]), "upper": int(viol[4])}
    cert = Certificate(int(n_ev), int(n_viol), int(n_inv), first)
    ext = [None if e < 0 else float(e) for e in viol[5:]]
    return CoupledRun(st, out, eta, float(t), ext, cert, seed, replica)


def run_coupled(spec: CouplingSpec, t_end: float, seed: int, replica: int = 0,
                sample_times=(), max_events: int | None = None) -> CoupledRun:
    """One coupled realization; ``t_end`` may be infinite if ``max_events`` is set.

    Raises ``ValueError`` on an invalid spec. Ordering violations are never
    raised; they are counted in the certificate together with the first one.
    """
    if not (np.isfinite(t_end) or max_events is not None):
        raise ValueError("an infinite horizon needs max_events")
    return _run_coupled_one(spec, _prepared(spec), t_end, seed, replica,
                            sample_times, max_events)


def _coupled_chunk(args):
    spec, prepared, t_end, seed, reps, sample_times, max_events = args
    return [_run_coupled_one(spec, prepared, t_end, seed, r, sample_times, max_events)
            for r in reps]


def run_coupled_replicas(spec: CouplingSpec, t_end: float, seed: int, n_replicas: int,
                         sample_times=(), max_events: int | None = None,
                         jobs: int = 1) -> list[CoupledRun]:
    prepared = _prepared(spec)
    reps = list(range(n_replicas))
    if jobs <= 1 or n_replicas < 2 * jobs:
        return _coupled_chunk((spec, prepared, t_end, seed, reps, sample_times, max_events))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_coupled_chunk, [(spec, prepared, t_end, seed, reps[i::jobs],
                                          sample_times, max_events) for i in range(jobs)])
        merged = [r for part in parts for r in part]
    return sorted(merged, key=lambda r: r.replica)


def merge_certificates(runs) -> Certificate:
    n_ev = sum(r.certificate.n_events for r in runs)
    n_viol = sum(r.certificate.n_violations for r in runs)
    n_inv = sum(r.certificate.n_inversions for r in runs)
    first = next((r.certificate.first_violation for r in runs
                  if r.certificate.first_violation is not None), None)
    return Certificate(n_ev, n_viol, n_inv, first)
