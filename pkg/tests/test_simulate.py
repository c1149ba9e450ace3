import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ctmc_distribution, ctmc_states, empirical_distribution, total_variation
from rbrw.graph import alpha_weights, build_graph, build_kernel, kernel_from_matrix
from rbrw.profiles import make_profile, truncate
from rbrw.simulate import (Configuration, SimParams, replica_rng, run_replicas, run_sim, stack,
                           summarize, write_event_log, write_trajectory_csv)


@pytest.fixture(scope="module")
def torus():
    g = build_graph("lattice-torus", d=1, L=12)
    return g, build_kernel(g)


def _path3():
    g = build_graph("custom", edges=[(0, 1), (1, 2)])
    P = np.array([[0, 0.8, 0], [0.5, 0, 0.5], [0, 0.7, 0]])
    return g, kernel_from_matrix(g, P), P


def test_configuration_basics():
    g = build_graph("tree", n=2, depth=2)
    alpha = alpha_weights(g)
    c = Configuration({0: 2, 3: 1}, alpha)
    assert c.total == 3
    assert c.norm == pytest.approx(2 + alpha.alpha[3])
    c[3] = 0
    assert c.support == [0] and c.total == 2
    assert Configuration.delta(0) <= c
    assert not c <= Configuration.delta(0)
    assert Configuration.from_array(c.to_array(g.n_vertices)) == c
    with pytest.raises(ValueError):
        c[1] = -1


def test_initial_sample_is_the_start(torus):
    g, k = torus
    params = SimParams(make_profile("constant", lam=1.0), 1.0, 3, sample_times=(0.0, 1.0))
    tr = run_sim(g, k, params, Configuration.delta(0))
    assert tr.samples[0, 0] == 1 and tr.samples[0].sum() == 1


def test_replicas_follow_the_rng_contract(torus):
    g, k = torus
    params = SimParams(make_profile("step", high=3.0, threshold=2, low=0.5), 2.0, 11,
                       sample_times=(1.0, 2.0))
    eta0 = Configuration.constant(g, 1)
    reps = run_replicas(g, k, params, eta0, 6)
    alone = run_sim(g, k, params, eta0, replica=4)
    assert np.array_equal(reps[4].samples, alone.samples)
    assert reps[4].n_events == alone.n_events
    parallel = run_replicas(g, k, params, eta0, 6, jobs=2)
    assert all(np.array_equal(a.samples, b.samples) for a, b in zip(reps, parallel))
    # the contract is the same stream SeedSequence.spawn hands out
    spawned = np.random.SeedSequence(11).spawn(6)[4]
    assert replica_rng(11, 4).random() == np.random.default_rng(spawned).random()


def test_different_seeds_differ(torus):
    g, k = torus
    p1 = SimParams(make_profile("constant", lam=1.5), 2.0, 1, sample_times=(2.0,))
    p2 = SimParams(make_profile("constant", lam=1.5), 2.0, 2, sample_times=(2.0,))
    a = run_replicas(g, k, p1, Configuration.constant(g, 1), 5)
    b = run_replicas(g, k, p2, Configuration.constant(g, 1), 5)
    assert not all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))


def test_extinction_is_absorbing(torus):
    g, k = torus
    params = SimParams(make_profile("constant", lam=0.2), 30.0, 5,
                       sample_times=tuple(np.linspace(0, 30, 31)))
    trajs = run_replicas(g, k, params, Configuration.delta(0), 50)
    dead = [t for t in trajs if t.extinct]
    assert len(dead) >= 45
    for t in dead:
        flag = summarize(t, "extinct-flag")
        mass = summarize(t, "total-mass")
        assert np.all(mass[flag == 1] == 0)
        assert np.all(np.diff(flag) >= 0)


def test_floor_and_frozen_exterior():
    g = build_graph("lattice-torus", d=1, L=10)
    k = build_kernel(g)
    region = g.ball(2, 0)
    eta0 = np.full(g.n_vertices, 2, dtype=np.int64)
    params = SimParams(make_profile("constant", lam=0.8), 5.0, 9, k=1, region=region,
                       sample_times=tuple(np.linspace(0, 5, 11)), frozen_exterior=True)
    for tr in run_replicas(g, k, params, eta0, 20):
        inside = np.zeros(g.n_vertices, dtype=bool)
        inside[region] = True
        assert (tr.samples[:, inside] >= 1).all()
        assert (tr.samples[:, ~inside] == 2).all()
        assert not tr.extinct


def test_invalid_starts_are_rejected(torus):
    g, k = torus
    prof = make_profile("constant", lam=1.0)
    with pytest.raises(ValueError):
        run_sim(g, k, SimParams(prof, 1.0, 0, region=[0, 1]), Configuration.delta(5))
    with pytest.raises(ValueError):
        run_sim(g, k, SimParams(prof, 1.0, 0, k=1), Configuration.delta(0))
    with pytest.raises(ValueError):
        SimParams(prof, 1.0, 0, sample_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        SimParams(prof, float("inf"), 0)


def test_event_cap_leaves_later_samples_unknown(torus):
    g, k = torus
    params = SimParams(make_profile("constant", lam=2.0), 10.0, 1, sample_times=(5.0, 10.0),
                       max_events=3)
    tr = run_sim(g, k, params, Configuration.constant(g, 1))
    assert tr.n_events == 3
    assert (tr.samples == -1).all()


def test_event_log(tmp_path, torus):
    g, k = torus
    params = SimParams(make_profile("cp", lam=2.0), 1.0, 4, log_events=10)
    tr = run_sim(g, k, params, Configuration.constant(g, 1))
    write_event_log(tr, tmp_path / "ev.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "ev.jsonl").read_text().splitlines()]
    assert len(rows) == min(10, tr.n_events)
    assert set(rows[0]) == {"time", "site", "kind", "target", "accepted"}
    assert all(r["kind"] in ("death", "birth") for r in rows)
    times = [r["time"] for r in rows]
    assert times == sorted(times)


def test_trajectory_csv_schema(tmp_path, torus):
    g, k = torus
    params = SimParams(make_profile("constant", lam=1.0), 1.0, 4, sample_times=(0.5, 1.0))
    trajs = run_replicas(g, k, params, Configuration.delta(0), 2)
    write_trajectory_csv(trajs, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "time,statistic,value,replica,seed"
    assert len(lines) == 1 + 2 * 3 * 2


def test_occupancy_histogram(torus):
    g, k = torus
    params = SimParams(make_profile("constant", lam=1.0), 0.0, 0, sample_times=(0.0,))
    tr = run_sim(g, k, params, Configuration.constant(g, 2))
    assert list(summarize(tr, "occupancy-histogram")) == [0, 0, 12]


def test_cp_occupancy_never_exceeds_one(torus):
    g, k = torus
    params = SimParams(make_profile("cp", lam=4.0), 5.0, 2, sample_times=tuple(np.linspace(0, 5, 26)))
    trajs = run_replicas(g, k, params, Configuration.delta(0), 20)
    assert max(t.max_occupancy for t in trajs) == 1


def test_brw_total_mass_mean(torus):
    g, k = torus
    params = SimParams(make_profile("constant", lam=1.5), 1.0, 8, sample_times=(1.0,))
    mass = stack(run_replicas(g, k, params, Configuration.delta(0), 4000), "total-mass")[:, 0]
    se = mass.std(ddof=1) / np.sqrt(len(mass))
    assert abs(mass.mean() - np.exp(0.5)) < 3 * se


def test_two_site_matches_ctmc():
    g = build_graph("custom", edges=[(0, 1)])
    k = build_kernel(g)
    prof = truncate(make_profile("step", high=2.0, threshold=2, low=0.7), 3)
    params = SimParams(prof, 1.0, 21)
    trajs = run_replicas(g, k, params, np.array([2, 0]), 20_000)
    states, exact = ctmc_distribution(k.dense(), prof, 1.0, 0, [True, True], 3, (2, 0), 1.0)
    emp = empirical_distribution([t.final for t in trajs], states)
    assert total_variation(emp, exact) < 0.02


def test_restricted_immortal_dynamics_match_ctmc():
    # substochastic rows, a restriction, a floor and gamma != 1
    g, k, P = _path3()
    prof = truncate(make_profile("constant", lam=1.3), 3)
    region = [0, 1]
    params = SimParams(prof, 0.8, 5, gamma=1.7, k=1, region=region, frozen_exterior=True)
    start = (2, 1, 3)
    trajs = run_replicas(g, k, params, np.array(start), 20_000)
    states, exact = ctmc_distribution(P, prof, 1.7, 1, [True, True, False], 3, start, 0.8)
    emp = empirical_distribution([t.final for t in trajs], states)
    assert total_variation(emp, exact) < 0.02


def test_oracle_state_space():
    assert len(ctmc_states(2, 3)) == 16


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.1, 3.0), k=st.integers(0, 2))
def test_invariants_hold_for_random_parameters(seed, lam, k):
    g = build_graph("lattice-torus", d=1, L=6)
    kern = build_kernel(g)
    prof = truncate(make_profile("constant", lam=lam), 4)
    params = SimParams(prof, 2.0, seed, k=k, sample_times=tuple(np.linspace(0, 2, 9)))
    tr = run_sim(g, kern, params, np.full(6, k + 1, dtype=np.int64))
    assert (tr.samples >= k).all()
    assert tr.max_occupancy <= max(4, k + 1)
    assert tr.n_accepted <= tr.n_events
