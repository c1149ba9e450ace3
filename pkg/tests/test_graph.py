import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbrw.graph import (alpha_weights, build_graph, build_kernel, default_M, kernel_from_matrix,
                        read_graph_csv, read_kernel_csv, region_mask, restrict_kernel,
                        write_graph_csv, write_kernel_csv)


def test_tree_sizes_and_degrees():
    g = build_graph("tree", n=2, depth=3)
    assert g.n_vertices == 1 + 3 + 6 + 12
    assert g.degree(g.root) == 3
    inner = np.flatnonzero((g.dist > 0) & (g.dist < 3))
    assert all(g.degree(x) == 3 for x in inner)
    assert all(g.degree(x) == 1 for x in np.flatnonzero(g.dist == 3))
    assert g.D == 3


def test_lattice_box_and_torus():
    box = build_graph("lattice-box", d=2, L=5)
    assert box.n_vertices == 25
    assert box.labels[box.root] == (2, 2)
    assert box.D == 4
    torus = build_graph("lattice-torus", d=1, L=6)
    assert all(torus.degree(x) == 2 for x in range(6))
    assert torus.dist.max() == 3


def test_custom_graph_checks_connectivity():
    with pytest.raises(ValueError):
        build_graph("custom", edges=[(0, 1), (2, 3)])
    g = build_graph("custom", edges=[(0, 1), (1, 2)], root=1)
    assert list(g.dist) == [1, 0, 1]


def test_unknown_family():
    with pytest.raises(ValueError):
        build_graph("hypercube", d=3)


def test_ball_and_interior():
    g = build_graph("lattice-torus", d=1, L=20)
    ball = g.ball(2, 5)
    assert sorted(ball) == [3, 4, 5, 6, 7]
    assert sorted(g.interior(ball)) == [4, 5, 6]


def test_simple_kernels_are_stochastic_where_expected():
    torus = build_kernel(build_graph("lattice-torus", d=2, L=4))
    assert not torus.substochastic
    assert np.allclose(torus.row_sums, 1) and np.allclose(torus.col_sums, 1)
    box = build_kernel(build_graph("lattice-box", d=1, L=5))
    assert box.substochastic
    assert box.row_sums[0] == pytest.approx(0.5)


def test_two_site_torus_keeps_both_directions():
    k = build_kernel(build_graph("lattice-torus", d=1, L=2))
    assert k.p(0, 1) == pytest.approx(1.0)


def test_biased_tree_kernel():
    g = build_graph("tree", n=2, depth=3)
    k = build_kernel(g, "biased-tree", p=0.45)
    child = g.neighbors(g.root)[0]
    assert k.p(g.root, child) == pytest.approx(1 / 3)
    assert k.p(child, g.root) == pytest.approx(1 - 2 * 0.45)
    grandchild = [y for y in g.neighbors(child) if g.dist[y] == 2][0]
    assert k.p(child, grandchild) == pytest.approx(0.45)
    inner = np.flatnonzero(g.dist < 3)
    assert np.allclose(k.row_sums[inner], 1)
    with pytest.raises(ValueError):
        build_kernel(g, "biased-tree", p=0.6)


def test_restriction_is_nested():
    g = build_graph("lattice-torus", d=1, L=10)
    k = build_kernel(g)
    r1 = restrict_kernel(k, g.ball(3, 0))
    r2 = restrict_kernel(r1, g.ball(1, 0))
    assert r1.substochastic
    assert r2.region.sum() == 3
    assert r2.matrix.nnz == 4


def test_kernel_rejects_non_edges_and_excess_mass():
    g = build_graph("custom", edges=[(0, 1), (1, 2)])
    with pytest.raises(ValueError):
        kernel_from_matrix(g, np.array([[0, 0, 1.0], [1, 0, 0], [0, 1, 0]]))
    with pytest.raises(ValueError):
        kernel_from_matrix(g, np.array([[0, 1.5, 0], [1, 0, 0], [0, 1, 0]]))


def test_region_mask_validation():
    g = build_graph("lattice-torus", d=1, L=4)
    assert region_mask(g, None).all()
    assert list(region_mask(g, [1, 2])) == [False, True, True, False]
    with pytest.raises(ValueError):
        region_mask(g, [7])


def test_csv_round_trip(tmp_path):
    g = build_graph("tree", n=2, depth=2)
    k = build_kernel(g, "biased-tree", p=0.3)
    write_kernel_csv(k, tmp_path / "k.csv")
    k2 = read_kernel_csv(g, tmp_path / "k.csv")
    assert (k.matrix != k2.matrix).nnz == 0
    write_graph_csv(g, tmp_path / "g.csv")
    g2 = read_graph_csv(tmp_path / "g.csv")
    assert (g.adjacency() != g2.adjacency()).nnz == 0


def test_alpha_weights_require_large_M():
    g = build_graph("tree", n=3, depth=2)
    assert default_M(g) == (g.D - 1) ** 2 + 1
    with pytest.raises(ValueError):
        alpha_weights(g, M=(g.D - 1) ** 2)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 4), depth=st.integers(1, 4), frac=st.floats(0, 1))
def test_alpha_inequality_on_tree_kernels(n, depth, frac):
    g = build_graph("tree", n=n, depth=depth)
    w = alpha_weights(g)
    for k in (build_kernel(g), build_kernel(g, "biased-tree", p=frac / n)):
        assert w.inequality_ratio(k) <= 1 + 1e-12


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 3), L=st.integers(2, 6), torus=st.booleans())
def test_alpha_inequality_on_lattices(d, L, torus):
    g = build_graph("lattice-torus" if torus else "lattice-box", d=d, L=L)
    assert alpha_weights(g).inequality_ratio(build_kernel(g)) <= 1 + 1e-12
