"""Regime experiments: classification of replica ensembles, the four canonical
scenarios, and stabilization of local statistics as the volume grows."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .graph import Graph, Kernel
from .invariant_measure import tightness_bound
from .moments import MomentSystem, first_moment
from .profiles import RateProfile, make_profile, truncate
from .simulate import SimParams, Trajectory, run_replicas, stack
from .spectral import rho_estimate, theta_estimate

LABELS = ("extinct", "exploding-mean", "surviving", "bounded-mean")


@dataclass(frozen=True)
class Thresholds:
    """Classifier conventions, all in one place."""

    extinct_fraction: float = 0.95
    min_slope: float = 0.05
    slope_z: float = 3.0
    flat_band: float = 0.01
    survive_fraction: float = 0.20
    fit_fraction: float = 0.60
    min_replicas: int = 50
    jackknife_groups: int = 10


@dataclass(frozen=True)
class RunSummary:
    """What the classifier looks at, extracted from a replica ensemble."""

    times: np.ndarray
    total_mass: np.ndarray      # (replicas, times)
    site_mean: np.ndarray       # (replicas, times)
    extinct: np.ndarray         # (replicas,) bool, extinct by the last time
    site_occupied: np.ndarray   # (replicas,) bool, watched site occupied at the end

    @property
    def n_replicas(self) -> int:
        return len(self.extinct)

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], site: int) -> "RunSummary":
        times = trajs[0].sample_times
        return cls(times, stack(trajs, "total-mass"), stack(trajs, "site-mean"),
                   np.array([t.extinct for t in trajs]),
                   np.array([t.samples[-1, site] > 0 for t in trajs]))


def _log_slope(times: np.ndarray, mass: np.ndarray) -> float:
    mean = mass.mean(axis=0)
    if (mean <= 0).any():
        return -math.inf
    return float(np.polyfit(times, np.log(mean), 1)[0])


def fit_growth(summary: RunSummary, thresholds: Thresholds = Thresholds()) -> tuple[float, float]:
    """Least-squares slope of log mean total mass over the final part of the
    horizon, with a delete-one-group jackknife standard error."""
    t = summary.times
    keep = t >= t[-1] - thresholds.fit_fraction * (t[-1] - t[0])
    if keep.sum() < 3:
        raise ValueError("need at least 3 sample times in the fit window")
    t, mass = t[keep], summary.total_mass[:, keep]
    slope = _log_slope(t, mass)
    if not math.isfinite(slope):
        return slope, math.nan
    G = min(thresholds.jackknife_groups, summary.n_replicas)
    groups = np.arange(summary.n_replicas) % G
    loo = np.array([_log_slope(t, mass[groups != g]) for g in range(G)])
    if not np.isfinite(loo).all():
        return slope, math.inf
    se = math.sqrt((G - 1) / G * float(((loo - loo.mean()) ** 2).sum()))
    return slope, se


@dataclass(frozen=True)
class Evidence:
    extinct_fraction: float
    slope: float
    slope_se: float
    occupied_fraction: float
    late_mean: float
    late_mean_se: float

    def supports(self, thresholds: Thresholds = Thresholds()) -> list[str]:
        """Every label the evidence supports, in precedence order."""
        out = []
        extinct = self.extinct_fraction >= thresholds.extinct_fraction
        if extinct:
            out.append("extinct")
        finite = math.isfinite(self.slope) and math.isfinite(self.slope_se)
        lower = self.slope - thresholds.slope_z * self.slope_se
        if finite and lower > thresholds.min_slope:
            out.append("exploding-mean")
        if self.occupied_fraction >= thresholds.survive_fraction:
            out.append("surviving")
        flat = finite and (abs(self.slope) <= thresholds.flat_band
                           or abs(self.slope) <= thresholds.slope_z * self.slope_se)
        if flat and not extinct and "exploding-mean" not in out:
            out.append("bounded-mean")
        return out


def gather_evidence(summary: RunSummary, thresholds: Thresholds = Thresholds()) -> Evidence:
    if summary.n_replicas < thresholds.min_replicas:
        raise ValueError(f"need at least {thresholds.min_replicas} replicas, "
                         f"got {summary.n_replicas}")
    slope, se = fit_growth(summary, thresholds)
    t = summary.times
    late = t >= t[-1] - thresholds.fit_fraction * (t[-1] - t[0])
    per_rep = summary.site_mean[:, late].mean(axis=1)
    return Evidence(
        extinct_fraction=float(summary.extinct.mean()),
        slope=slope, slope_se=se,
        occupied_fraction=float(summary.site_occupied.mean()),
        late_mean=float(per_rep.mean()),
        late_mean_se=float(per_rep.std(ddof=1) / math.sqrt(len(per_rep))),
    )


def classify_run(summary: RunSummary, thresholds: Thresholds = Thresholds(),
                 target: str | None = None) -> str:
    """One label: ``target`` if the evidence supports it, otherwise the first
    supported label in the order ``extinct, exploding-mean, surviving,
    bounded-mean``; ``undetermined`` if none is supported."""
    labels = gather_evidence(summary, thresholds).supports(thresholds)
    if target is not None and target in labels:
        return target
    return labels[0] if labels else "undetermined"


@dataclass(frozen=True)
class Scenario:
    name: str
    target: str
    profile: RateProfile
    start: str          # "delta" (one particle at the root) or "ones"
    t_end: float
    n_replicas: int
    seed: int
    n_times: int = 41
    pilot_replicas: int = 100

    def __post_init__(self):
        if self.target not in LABELS:
            raise ValueError(f"unknown regime {self.target!r}")
        if self.start not in ("delta", "ones"):
            raise ValueError(f"unknown start {self.start!r}")
        if not isinstance(self.profile, RateProfile):
            raise ValueError(f"scenario {self.name!r} has no valid profile")

    def initial(self, graph: Graph) -> np.ndarray:
        eta = np.zeros(graph.n_vertices, dtype=np.int64)
        if self.start == "delta":
            eta[graph.root] = 1
        else:
            eta[:] = 1
        return eta

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_times)


def canonical_scenarios(seed: int = 2024) -> list[Scenario]:
    """One scenario per regime, tuned for the simple walk on a 1D torus
    (``rho = theta = 1``)."""
    step = make_profile("step", high=8.0, threshold=3, low=0.5)
    return [
        Scenario("i", "extinct", make_profile("constant", lam=0.5), "delta", 50.0, 200, seed),
        Scenario("ii", "surviving", step, "delta", 30.0, 200, seed + 1),
        Scenario("iii", "exploding-mean", make_profile("constant", lam=2.0), "delta", 8.0, 200,
                 seed + 2),
        Scenario("iv", "bounded-mean", step, "ones", 40.0, 100, seed + 3),
    ]


@dataclass
class RegimeReport:
    scenario: str
    target: str
    label: str
    supported: list
    evidence: Evidence
    params: dict
    rho: float
    theta: float
    extras: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict, repr=False)

    @property
    def matches(self) -> bool:
        return self.label == self.target and all(self.extras.get("checks", {}).values())

    def text(self) -> str:
        ev = self.evidence
        checks = " ".join(f"{k}={'ok' if v else 'FAILED'}"
                          for k, v in self.extras.get("checks", {}).items())
        return (f"[{'PASS' if self.matches else 'FAIL'}] scenario {self.scenario}: "
                f"label={self.label} target={self.target} supported={','.join(self.supported)} "
                f"extinct={ev.extinct_fraction:.3f} slope={ev.slope:.4g}+-{ev.slope_se:.2g} "
                f"occupied={ev.occupied_fraction:.3f} late_mean={ev.late_mean:.4g} {checks}").rstrip()


def pilot_cp_survival(graph: Graph, kernel: Kernel, profile: RateProfile, t_end: float,
                      seed: int, n_replicas: int, jobs: int = 1) -> float:
    """Fraction of replicas of the ``n = 1`` truncation, started from one
    particle at the root, that still have the root occupied at ``t_end``."""
    params = SimParams(truncate(profile, 1), t_end, seed, sample_times=(t_end,))
    eta = np.zeros(graph.n_vertices, dtype=np.int64)
    eta[graph.root] = 1
    trajs = run_replicas(graph, kernel, params, eta, n_replicas, jobs=jobs)
    return float(np.mean([t.samples[-1, graph.root] > 0 for t in trajs]))


def run_scenario(graph: Graph, kernel: Kernel, scenario: Scenario, rho: float, theta: float,
                 thresholds: Thresholds = Thresholds(), jobs: int = 1) -> RegimeReport:
    times = scenario.times()
    params = SimParams(scenario.profile, scenario.t_end, scenario.seed, sample_times=tuple(times))
    trajs = run_replicas(graph, kernel, params, scenario.initial(graph), scenario.n_replicas,
                         jobs=jobs)
    summary = RunSummary.from_trajectories(trajs, graph.root)
    ev = gather_evidence(summary, thresholds)
    supported = ev.supports(thresholds)
    label = scenario.target if scenario.target in supported else \
        (supported[0] if supported else "undetermined")
    extras: dict = {"checks": {}}
    if scenario.target == "surviving":
        frac = pilot_cp_survival(graph, kernel, scenario.profile, scenario.t_end,
                                 scenario.seed + 10_000, scenario.pilot_replicas, jobs)
        extras["pilot_cp_occupied_fraction"] = frac
        extras["checks"]["pilot_cp_survives"] = frac >= thresholds.survive_fraction
    if scenario.target == "bounded-mean":
        kbar, U1 = tightness_bound(kernel, scenario.profile, theta)
        extras.update(kbar=kbar, U1=U1)
        extras["checks"]["late_mean_below_U1"] = ev.late_mean <= U1
    series = {
        "time": times,
        "mean_total_mass": summary.total_mass.mean(axis=0),
        "extinct_fraction": stack(trajs, "extinct-flag").mean(axis=0),
        "site_occupied_fraction": np.mean([t.samples[:, graph.root] > 0 for t in trajs], axis=0),
    }
    params_out = {"profile": scenario.profile.to_dict(), "start": scenario.start,
                  "t_end": scenario.t_end, "n_replicas": scenario.n_replicas,
                  "seed": scenario.seed, "thresholds": asdict(thresholds)}
    return RegimeReport(scenario.name, scenario.target, label, supported, ev, params_out,
                        rho, theta, extras, series)


def regime_suite(graph: Graph, kernel: Kernel, scenarios: list[Scenario] | None = None,
                 thresholds: Thresholds = Thresholds(), jobs: int = 1) -> list[RegimeReport]:
    """Run every scenario; ``rho`` and ``theta`` come from the spectral module."""
    if scenarios is None:
        scenarios = canonical_scenarios()
    theta = theta_estimate(kernel, n_max=40).value
    rho = rho_estimate(kernel, n_max=200).value
    return [run_scenario(graph, kernel, s, rho, theta, thresholds, jobs) for s in scenarios]


def write_suite_csv(reports: list[RegimeReport], path) -> None:
    """Columns ``scenario,time,mean_total_mass,extinct_fraction,site_occupied_fraction``."""
    cols = ["mean_total_mass", "extinct_fraction", "site_occupied_fraction"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "time"] + cols)
        for r in reports:
            for i, t in enumerate(r.series["time"]):
                w.writerow([r.scenario, repr(float(t))] + [repr(float(r.series[c][i])) for c in cols])


@dataclass
class VolumeReport:
    radii: list
    sizes: list
    stats: np.ndarray          # mean occupancy at x0 per level
    ses: np.ndarray
    diffs: np.ndarray          # paired differences between successive levels
    diff_ses: np.ndarray
    kinds: list                # "systematic" or "noise" per difference
    shrinking: bool
    top_agree: bool
    exact: np.ndarray | None = None

    def text(self) -> str:
        lines = ["radius,size,statistic,se" + (",exact" if self.exact is not None else "")]
        for i, r in enumerate(self.radii):
            row = f"{r},{self.sizes[i]},{self.stats[i]:.6g},{self.ses[i]:.3g}"
            if self.exact is not None:
                row += f",{self.exact[i]:.6g}"
            lines.append(row)
        for i, d in enumerate(self.diffs):
            lines.append(f"diff {self.radii[i]}->{self.radii[i + 1]}: {d:.4g} +- "
                         f"{self.diff_ses[i]:.2g} ({self.kinds[i]})")
        lines.append(f"differences shrink: {self.shrinking}; largest two levels agree: "
                     f"{self.top_agree}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        """Columns ``radius,size,statistic,se,diff,diff_se,kind``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["radius", "size", "statistic", "se", "diff", "diff_se", "kind"])
            for i, r in enumerate(self.radii):
                d = (repr(float(self.diffs[i - 1])), repr(float(self.diff_ses[i - 1])),
                     self.kinds[i - 1]) if i else ("", "", "")
                w.writerow([r, self.sizes[i], repr(float(self.stats[i])),
                            repr(float(self.ses[i])), *d])


def volume_convergence(graph: Graph, kernel: Kernel, profile: RateProfile, radii, t: float,
                       seed: int, n_replicas: int, x0: int | None = None, eta0=None,
                       max_events: int | None = None, z: float = 3.0,
                       jobs: int = 1) -> VolumeReport:
    """Mean occupancy at ``x0`` at time ``t`` for the dynamics restricted to the
    balls ``B(x0, r)``, with the same seeds at every level so that successive
    differences are paired."""
    radii = sorted(int(r) for r in radii)
    if len(radii) < 3 or len(set(radii)) != len(radii):
        raise ValueError("need at least 3 distinct ladder levels")
    x0 = graph.root if x0 is None else int(x0)
    if eta0 is None:
        eta0 = np.zeros(graph.n_vertices, dtype=np.int64)
        eta0[x0] = 1
    eta0 = np.asarray(eta0, dtype=np.int64)
    per_level, sizes, exact = [], [], []
    for r in radii:
        ball = graph.ball(r, x0)
        mask = np.zeros(graph.n_vertices, dtype=bool)
        mask[ball] = True
        sizes.append(int(mask.sum()))
        params = SimParams(profile, t, seed, region=mask, sample_times=(t,),
                           frozen_exterior=True, max_events=max_events)
        trajs = run_replicas(graph, kernel, params, eta0, n_replicas, jobs=jobs)
        # a replica cut short by max_events is read at its stopping state
        per_level.append(np.array([tr.samples[-1, x0] if tr.samples[-1, x0] >= 0
                                   else tr.final[x0] for tr in trajs], dtype=float))
        if profile.tail == profile.lam and max_events is None:
            sys_ = MomentSystem(kernel, profile.lam, 1.0, 0, region=mask)
            m = first_moment(sys_, eta0[mask], [t])[0]
            exact.append(float(m[np.searchsorted(sys_.region, x0)]))
    X = np.array(per_level)
    stats = X.mean(axis=1)
    ses = X.std(axis=1, ddof=1) / math.sqrt(n_replicas)
    D = np.diff(X, axis=0)
    diffs = D.mean(axis=1)
    dses = D.std(axis=1, ddof=1) / math.sqrt(n_replicas)
    kinds = ["systematic" if abs(d) > z * s else "noise" for d, s in zip(diffs, dses)]
    shrinking = all(abs(diffs[i + 1]) <= abs(diffs[i]) + z * math.hypot(dses[i], dses[i + 1])
                    for i in range(len(diffs) - 1))
    top_agree = abs(diffs[-1]) <= z * dses[-1] if dses[-1] > 0 else diffs[-1] == 0
    return VolumeReport(radii, sizes, stats, ses, diffs, dses, kinds, shrinking, bool(top_agree),
                        np.array(exact) if exact else None)
