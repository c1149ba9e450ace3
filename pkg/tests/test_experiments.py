import json
import math
from pathlib import Path

import numpy as np
import pytest

from rbrw.experiments import (Evidence, RunSummary, Scenario, Thresholds, canonical_scenarios,
                              classify_run, fit_growth, pilot_cp_survival,
                              regime_suite, volume_convergence, write_suite_csv)
from rbrw.graph import build_graph, build_kernel
from rbrw.profiles import make_profile

PILOT = json.loads((Path(__file__).parent / "fixtures" / "pilot.json").read_text())


def _summary(mass, extinct=None, occupied=None, site=None, t_end=10.0):
    mass = np.asarray(mass, dtype=float)
    R, T = mass.shape
    times = np.linspace(0, t_end, T)
    return RunSummary(times, mass, mass / 10 if site is None else site,
                      np.zeros(R, bool) if extinct is None else extinct,
                      np.zeros(R, bool) if occupied is None else occupied)


def test_exact_exponential_growth_gives_its_slope():
    t = np.linspace(0, 10, 21)
    rng = np.random.default_rng(0)
    mass = np.exp(0.7 * t)[None, :] * rng.uniform(0.9, 1.1, (60, 1))
    slope, se = fit_growth(_summary(mass))
    assert slope == pytest.approx(0.7, rel=1e-9)
    assert se < 1e-9


def test_classifier_labels():
    t = np.linspace(0, 10, 21)
    R = 60
    grow = np.tile(np.exp(0.5 * t), (R, 1))
    assert classify_run(_summary(grow)) == "exploding-mean"
    dead = np.zeros((R, 21))
    dead[:, 0] = 1
    assert classify_run(_summary(dead, extinct=np.ones(R, bool))) == "extinct"
    flat = np.full((R, 21), 50.0) + np.random.default_rng(1).normal(0, 1, (R, 21))
    assert classify_run(_summary(flat)) == "bounded-mean"
    occ = np.ones(R, bool)
    assert classify_run(_summary(flat, occupied=occ)) == "surviving"
    assert classify_run(_summary(flat, occupied=occ), target="bounded-mean") == "bounded-mean"
    assert classify_run(_summary(grow), target="extinct") == "exploding-mean"


def test_classifier_needs_enough_replicas():
    with pytest.raises(ValueError):
        classify_run(_summary(np.ones((10, 21))))


def test_undetermined_when_nothing_fits():
    ev = Evidence(0.5, -0.2, 0.01, 0.0, 1.0, 0.1)
    assert ev.supports() == []
    R = 60
    t = np.linspace(0, 10, 21)
    decay = np.tile(np.exp(-0.2 * t), (R, 1))
    ext = np.zeros(R, bool)
    ext[:20] = True
    assert classify_run(_summary(decay, extinct=ext)) == "undetermined"


def test_thresholds_are_configurable():
    ev = Evidence(0.9, 0.0, 0.0, 0.0, 1.0, 0.0)
    assert "extinct" not in ev.supports()
    assert "extinct" in ev.supports(Thresholds(extinct_fraction=0.9))


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario("x", "thriving", make_profile("cp", lam=1.0), "delta", 1.0, 50, 0)
    with pytest.raises(ValueError):
        Scenario("x", "extinct", make_profile("cp", lam=1.0), "everywhere", 1.0, 50, 0)


@pytest.fixture(scope="module")
def torus100():
    g = build_graph("lattice-torus", d=1, L=100)
    return g, build_kernel(g)


@pytest.fixture(scope="module")
def suite(torus100):
    g, k = torus100
    return regime_suite(g, k)


def test_canonical_suite_matches_targets(suite):
    assert [r.scenario for r in suite] == ["i", "ii", "iii", "iv"]
    for r in suite:
        assert r.matches, r.text()
    assert suite[0].rho == pytest.approx(1.0, abs=0.02) and suite[0].theta == pytest.approx(1.0)


def test_bounded_scenario_sits_below_the_bound(suite):
    iv = suite[3]
    assert iv.extras["kbar"] == 3 and iv.extras["U1"] == pytest.approx(6.0)
    assert iv.evidence.late_mean <= iv.extras["U1"]


def test_surviving_scenario_pilot_agrees_with_fixture(suite):
    ii = suite[1]
    ref = PILOT["cp_pilot"]["root_occupied_fraction"]
    frac = ii.extras["pilot_cp_occupied_fraction"]
    n = canonical_scenarios()[1].pilot_replicas
    assert abs(frac - ref) <= 4 * math.sqrt(ref * (1 - ref) / n)


def test_suite_is_deterministic(torus100, suite):
    g, k = torus100
    again = regime_suite(g, k, canonical_scenarios()[:1])
    assert again[0].label == suite[0].label
    assert np.array_equal(again[0].series["mean_total_mass"], suite[0].series["mean_total_mass"])


def test_suite_csv(tmp_path, suite):
    write_suite_csv(suite, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "scenario,time,mean_total_mass,extinct_fraction,site_occupied_fraction"
    assert len(lines) == 1 + 4 * 41


def test_pilot_cp_survival_bounds(torus100):
    g, k = torus100
    assert pilot_cp_survival(g, k, make_profile("constant", lam=0.3), 20.0, 1, 50) <= 0.1


def test_volume_ladder_matches_exact_mean():
    g = build_graph("lattice-torus", d=1, L=60)
    k = build_kernel(g)
    rep = volume_convergence(g, k, make_profile("constant", lam=0.5), [2, 5, 10, 20], 5.0,
                             seed=4, n_replicas=4000)
    assert rep.exact is not None
    assert np.all(np.abs(rep.stats - rep.exact) <= 4 * rep.ses)
    assert np.all(np.diff(rep.exact) >= -1e-12)
    assert rep.shrinking and rep.top_agree
    assert "differences shrink" in rep.text()


def test_finite_speed_makes_large_boxes_identical():
    # with at most two events the state never leaves B(x0, 2), so every box
    # that contains that ball produces the same replica
    g = build_graph("lattice-torus", d=2, L=15)
    k = build_kernel(g)
    rep = volume_convergence(g, k, make_profile("constant", lam=3.0), [2, 4, 7], 50.0,
                             seed=8, n_replicas=300, max_events=2)
    assert rep.diffs == pytest.approx([0.0, 0.0])
    assert rep.diff_ses == pytest.approx([0.0, 0.0])
    assert rep.kinds == ["noise", "noise"] and rep.top_agree


def test_ladder_needs_three_levels():
    g = build_graph("lattice-torus", d=1, L=20)
    k = build_kernel(g)
    with pytest.raises(ValueError):
        volume_convergence(g, k, make_profile("cp", lam=1.0), [2, 4], 1.0, 0, 10)


def test_volume_csv(tmp_path):
    g = build_graph("lattice-torus", d=1, L=20)
    k = build_kernel(g)
    rep = volume_convergence(g, k, make_profile("cp", lam=2.0), [1, 3, 5], 2.0, 0, 20)
    rep.write_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "radius,size,statistic,se,diff,diff_se,kind"
    assert len(lines) == 4
    assert rep.exact is None
