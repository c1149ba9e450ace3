"""Long-run estimates of the invariant measures of truncated dynamics.

Under ``c_n = c * 1_{[0, n-1]}`` no site can exceed ``n`` particles once it
starts at or below ``n``. Starting from ``n`` everywhere the process relaxes
downward to its invariant law ``mu_n``, estimated here by time averages over
``[t_burn, t_burn + t_sample]`` pooled across independent replicas.
Standard errors come from the spread between replicas.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .graph import Graph, Kernel
from .moments import MomentSystem, steady_state
from .profiles import RateProfile, truncate
from .simulate import SimParams, run_replicas
from .spectral import theta_estimate

Z = 3.0


@dataclass(frozen=True, eq=False)
class MuEstimate:
    n: int
    profile: RateProfile
    t_burn: float
    t_sample: float
    seed: int
    n_replicas: int
    replica_site_means: np.ndarray   # (replicas, sites)
    replica_half_means: np.ndarray   # (replicas, 2) pooled over sites
    replica_tails: np.ndarray        # (replicas, n + 1) pooled P(eta >= j)
    site_hist: np.ndarray            # (sites, n + 1) time fractions
    max_occupancy: int
    graph: Graph = field(repr=False, default=None)
    kernel: Kernel = field(repr=False, default=None)

    @property
    def site_means(self) -> np.ndarray:
        return self.replica_site_means.mean(axis=0)

    @property
    def site_se(self) -> np.ndarray:
        return self.replica_site_means.std(axis=0, ddof=1) / math.sqrt(self.n_replicas)

    @property
    def pooled_means(self) -> np.ndarray:
        return self.replica_site_means.mean(axis=1)

    @property
    def pooled_mean(self) -> float:
        return float(self.pooled_means.mean())

    @property
    def pooled_se(self) -> float:
        return float(self.pooled_means.std(ddof=1) / math.sqrt(self.n_replicas))

    @property
    def pooled_hist(self) -> np.ndarray:
        return self.site_hist.mean(axis=0)

    @property
    def cap_violations(self) -> int:
        return int(self.max_occupancy > self.n)

    def tail(self, r: float) -> float:
        """Pooled ``P(eta(x) > r)``."""
        h = self.pooled_hist
        return float(h[np.arange(len(h)) > r].sum())

    def write_histogram_csv(self, path) -> None:
        """Columns ``site,occupancy,frequency``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site", "occupancy", "frequency"])
            for x, row in enumerate(self.site_hist):
                for j, v in enumerate(row):
                    w.writerow([x, j, repr(float(v))])


def estimate_mu_n(n: int, graph: Graph, kernel: Kernel, profile: RateProfile,
                  t_burn: float | None = None, t_sample: float = 100.0, seed: int = 0,
                  n_replicas: int = 10, jobs: int = 1) -> MuEstimate:
    """Run the ``c_n`` dynamics from ``n`` everywhere and time-average.

    ``t_burn`` defaults to ``10 n``.
    """
    if n < 1:
        raise ValueError("truncation level must be >= 1")
    if not t_sample > 0:
        raise ValueError("t_sample must be positive")
    if n_replicas < 2:
        raise ValueError("need at least two replicas for standard errors")
    if t_burn is None:
        t_burn = 10.0 * n
    if profile.lam <= 1.0 or profile.tail >= 1.0:
        warnings.warn("profile is outside the regime with a nontrivial bounded invariant law",
                      stacklevel=2)
    prof_n = truncate(profile, n)
    t_end = t_burn + t_sample
    edges = [t_burn, t_burn + t_sample / 2, t_end]
    params = SimParams(prof_n, t_end, seed)
    eta0 = np.full(graph.n_vertices, n, dtype=np.int64)
    trajs = run_replicas(graph, kernel, params, eta0, n_replicas, jobs=jobs,
                         windows=edges, hist_bins=n + 2)
    site_means = np.array([t.window_means.mean(axis=0) for t in trajs])
    halves = np.array([t.window_means.mean(axis=1) for t in trajs])
    hists = np.array([t.occupancy_time / t_sample for t in trajs])
    max_occ = max(t.max_occupancy for t in trajs)
    if hists[:, :, n + 1:].any():
        max_occ = max(max_occ, n + 1)
    pooled = hists[:, :, :n + 1].mean(axis=1)
    tails = np.cumsum(pooled[:, ::-1], axis=1)[:, ::-1]
    return MuEstimate(n, profile, float(t_burn), float(t_sample), seed, n_replicas,
                      site_means, halves, tails, hists[:, :, :n + 1].mean(axis=0),
                      int(max_occ), graph, kernel)


def tightness_bound(kernel: Kernel, profile: RateProfile, theta: float | None = None):
    """``(kbar, U1)``: ``kbar = min{k : c(k) < 1/theta}`` and the steady-state
    bound of the BRW with ``kbar`` immortal particles, rate ``c(kbar)`` and
    ``gamma = 1``."""
    if theta is None:
        theta = theta_estimate(kernel, n_max=40).value
    kbar = next((j for j in range(profile.K + 2) if profile(j) * theta < 1), None)
    if kbar is None:
        raise ValueError("the profile tail is not below 1/theta")
    ss = steady_state(MomentSystem(kernel, profile(kbar), 1.0, kbar))
    return kbar, ss.U1


@dataclass
class Diagnostic:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class MuReport:
    diagnostics: list
    kbar: int
    U1: float

    @property
    def passed(self) -> bool:
        return all(d.passed for d in self.diagnostics)

    def get(self, name: str) -> Diagnostic:
        return next(d for d in self.diagnostics if d.name == name)

    def text(self) -> str:
        head = f"mu_n diagnostics (kbar={self.kbar}, U1={self.U1:.6g})"
        return "\n".join([head] + [d.line() for d in self.diagnostics])


def mu_sequence_diagnostics(estimates, radii=(5, 10, 20), theta: float | None = None) -> MuReport:
    """Monotonicity in ``n``, tightness, tail bounds, stationarity and symmetry."""
    est = sorted(estimates, key=lambda e: e.n)
    if not est:
        raise ValueError("no estimates")
    ref = est[0]
    for e in est[1:]:
        if e.graph is not ref.graph or e.kernel is not ref.kernel or e.profile != ref.profile:
            raise ValueError("estimates come from different configurations")
    kbar, U1 = tightness_bound(ref.kernel, ref.profile, theta)
    diags = []

    worst = 0.0
    for a, b in zip(est, est[1:]):
        se = np.sqrt(a.site_se ** 2 + b.site_se ** 2)
        worst = max(worst, float(((a.site_means - b.site_means) / np.maximum(se, 1e-300)).max()))
    diags.append(Diagnostic("monotone-means", worst <= Z,
                            f"largest decrease between consecutive n is {worst:.3g} SE"))

    worst = 0.0
    for a, b in zip(est, est[1:]):
        m = a.n + 1
        ta, tb = a.replica_tails[:, :m], b.replica_tails[:, :m]
        se = np.sqrt(ta.var(axis=0, ddof=1) / a.n_replicas + tb.var(axis=0, ddof=1) / b.n_replicas)
        gap = ta.mean(axis=0) - tb.mean(axis=0)
        z = np.where(se > 0, gap / np.maximum(se, 1e-300), np.where(gap > 1e-12, np.inf, 0.0))
        worst = max(worst, float(z.max()))
    diags.append(Diagnostic("stochastic-order", worst <= Z,
                            f"largest tail decrease is {worst:.3g} SE"))

    caps = sum(e.cap_violations for e in est)
    diags.append(Diagnostic("occupancy-cap", caps == 0,
                            f"{caps} estimates exceeded their cap n"))

    top = max(e.pooled_mean for e in est)
    diags.append(Diagnostic("tightness", top <= U1,
                            f"largest pooled mean {top:.4g} vs U1 {U1:.4g}"))

    for r in radii:
        t = max(e.tail(r) for e in est)
        diags.append(Diagnostic(f"chebyshev-r{r}", t <= U1 / r,
                                f"P(eta > {r}) = {t:.3g} vs U1/r = {U1 / r:.3g}"))

    worst = 0.0
    for e in est:
        h = e.replica_half_means
        d = h[:, 1] - h[:, 0]
        se = d.std(ddof=1) / math.sqrt(e.n_replicas)
        worst = max(worst, abs(float(d.mean())) / se if se > 0 else 0.0)
    diags.append(Diagnostic("stationarity", worst < Z,
                            f"largest window-half difference is {worst:.3g} SE"))

    if ref.graph is not None and ref.graph.family == "lattice-torus":
        pvals = []
        for e in est:
            # every site has the same law, so one shared variance is used
            se = math.sqrt(float((e.site_se ** 2).mean()))
            if se == 0:
                continue
            z = (e.site_means - e.pooled_mean) / se
            pvals.append(float(chi2.sf(float((z ** 2).sum()), len(z) - 1)))
        p = min(pvals, default=1.0)
        diags.append(Diagnostic("translation-symmetry", p > 1e-3,
                                f"smallest chi-square p-value across n is {p:.3g}"))
    return MuReport(diags, kbar, U1)
