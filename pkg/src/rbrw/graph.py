"""Finite graphs, transition kernels, restrictions and alpha-weights.

Vertices are indexed densely ``0..V-1``. Lattice coordinates and tree paths
are kept in ``Graph.labels`` for I/O only.
"""
from __future__ import annotations

import csv
import itertools
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

FAMILIES = ("lattice-box", "lattice-torus", "tree", "custom")
ROW_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Connected, undirected finite graph with a root.

    ``indptr``/``indices`` hold the symmetric neighbour lists in CSR form.
    ``dist[x]`` is the graph distance from ``root``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    root: int
    dist: np.ndarray
    D: int
    family: str
    params: dict = field(default_factory=dict)
    labels: tuple = ()

    @property
    def n_vertices(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, x: int) -> np.ndarray:
        return self.indices[self.indptr[x]:self.indptr[x + 1]]

    def degree(self, x: int) -> int:
        return int(self.indptr[x + 1] - self.indptr[x])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        n = self.n_vertices
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def ball(self, radius: int, center: int | None = None) -> np.ndarray:
        """Vertices within graph distance ``radius`` of ``center`` (default root)."""
        if center is None or center == self.root:
            d = self.dist
        else:
            d = distances_from(self, center)
        return np.flatnonzero(d <= radius)

    def interior(self, region: Iterable[int]) -> np.ndarray:
        """Vertices of ``region`` whose neighbours all lie in ``region``."""
        mask = region_mask(self, region)
        out = [x for x in np.flatnonzero(mask) if mask[self.neighbors(x)].all()]
        return np.asarray(out, dtype=np.int64)


def distances_from(graph: Graph, source: int) -> np.ndarray:
    d = shortest_path(graph.adjacency(), unweighted=True, indices=source)
    if not np.isfinite(d).all():
        raise ValueError("graph is not connected")
    return d.astype(np.int64)


def region_mask(graph: Graph, region: Iterable[int] | np.ndarray | None) -> np.ndarray:
    """Boolean mask over vertices; ``None`` means the whole graph."""
    n = graph.n_vertices
    if region is None:
        return np.ones(n, dtype=bool)
    region = np.asarray(region)
    if region.dtype == bool:
        if region.shape != (n,):
            raise ValueError("boolean region has wrong length")
        return region.copy()
    mask = np.zeros(n, dtype=bool)
    idx = region.astype(np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("region contains vertices outside the graph")
    mask[idx] = True
    return mask


def _from_neighbor_lists(nbrs: Sequence[Sequence[int]], root: int, family: str,
                         params: dict, labels: tuple) -> Graph:
    n = len(nbrs)
    sets = [sorted(set(int(y) for y in ys)) for ys in nbrs]
    for x, ys in enumerate(sets):
        for y in ys:
            if not 0 <= y < n:
                raise ValueError(f"neighbour {y} of {x} out of range")
            if x not in sets[y]:
                raise ValueError(f"adjacency not symmetric at ({x}, {y})")
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(ys) for ys in sets])
    indices = np.fromiter(itertools.chain.from_iterable(sets), dtype=np.int64,
                          count=int(indptr[-1]))
    if not 0 <= root < n:
        raise ValueError("root out of range")
    g = Graph(_frozen(indptr), _frozen(indices), int(root),
              np.zeros(n, dtype=np.int64), 0, family, dict(params), labels)
    dist = distances_from(g, root)
    D = int(np.diff(indptr).max()) if n else 0
    return Graph(g.indptr, g.indices, g.root, _frozen(dist), D, family, dict(params), labels)


def _lattice(d: int, L: int, torus: bool) -> Graph:
    shape = (L,) * d
    coords = list(itertools.product(range(L), repeat=d))
    index = {c: i for i, c in enumerate(coords)}
    nbrs: list[list[int]] = []
    for c in coords:
        ys = []
        for axis in range(d):
            for step in (-1, 1):
                z = list(c)
                z[axis] += step
                if torus:
                    z[axis] %= L
                elif not 0 <= z[axis] < L:
                    continue
                ys.append(index[tuple(z)])
        nbrs.append(ys)
    if torus:
        root = 0
    else:
        root = index[tuple(L // 2 for _ in shape)]
    family = "lattice-torus" if torus else "lattice-box"
    return _from_neighbor_lists(nbrs, root, family, {"d": d, "L": L}, tuple(coords))


def _tree(n: int, depth: int) -> Graph:
    labels: list[tuple] = [()]
    parent = [-1]
    layer = [0]
    for level in range(1, depth + 1):
        nxt = []
        for v in layer:
            n_children = n + 1 if level == 1 else n
            for j in range(n_children):
                labels.append(labels[v] + (j,))
                parent.append(v)
                nxt.append(len(labels) - 1)
        layer = nxt
    nbrs: list[list[int]] = [[] for _ in labels]
    for v, u in enumerate(parent):
        if u >= 0:
            nbrs[v].append(u)
            nbrs[u].append(v)
    return _from_neighbor_lists(nbrs, 0, "tree", {"n": n, "depth": depth}, tuple(labels))


def build_graph(family: str, **params) -> Graph:
    """Build a lattice box/torus (``d``, ``L``), a truncated tree (``n``, ``depth``)
    or a custom graph (``edges``, optional ``n_vertices`` and ``root``).

    >>> build_graph("tree", n=2, depth=2).n_vertices
    10
    """
    if family in ("lattice-box", "lattice-torus"):
        d, L = int(params.get("d", 0)), int(params.get("L", 0))
        if d < 1 or L < 2:
            raise ValueError("lattices need d >= 1 and L >= 2")
        return _lattice(d, L, torus=family == "lattice-torus")
    if family == "tree":
        n, depth = int(params.get("n", 0)), int(params.get("depth", -1))
        if n < 2 or depth < 0:
            raise ValueError("trees need n >= 2 and depth >= 0")
        return _tree(n, depth)
    if family == "custom":
        edges = [tuple(map(int, e)) for e in params["edges"]]
        n_vertices = int(params.get("n_vertices",
                                    1 + max((max(e) for e in edges), default=0)))
        nbrs: list[list[int]] = [[] for _ in range(n_vertices)]
        for a, b in edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        return _from_neighbor_lists(nbrs, int(params.get("root", 0)), "custom",
                                    {"edges": edges, "n_vertices": n_vertices},
                                    tuple(range(n_vertices)))
    raise ValueError(f"unknown graph family {family!r}")


@dataclass(frozen=True, eq=False)
class Kernel:
    """Nonnegative (sub)stochastic transition matrix supported on graph edges."""

    graph: Graph
    matrix: sp.csr_matrix
    substochastic: bool
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    region: np.ndarray | None = None

    def __post_init__(self):
        for a in (self.matrix.data, self.matrix.indices, self.matrix.indptr):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.graph.n_vertices

    def p(self, x: int, y: int) -> float:
        return float(self.matrix[x, y])

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def col_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def cumulative_rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR ``(indptr, indices, cumweights)`` used for target sampling."""
        m = self.matrix
        cum = np.empty_like(m.data)
        for x in range(m.shape[0]):
            a, b = m.indptr[x], m.indptr[x + 1]
            cum[a:b] = np.cumsum(m.data[a:b])
        return (np.asarray(m.indptr, dtype=np.int64),
                np.asarray(m.indices, dtype=np.int64), cum)

    def is_tree_radial(self) -> bool:
        """True for an unrestricted biased/simple kernel on a truncated tree."""
        return (self.graph.family == "tree" and self.region is None
                and self.kind in ("biased-tree", "simple"))


def _make_kernel(graph: Graph, rows: dict[tuple[int, int], float], kind: str,
                 params: dict, region=None) -> Kernel:
    n = graph.n_vertices
    keys = sorted(k for k, w in rows.items() if w > 0)
    r = np.array([k[0] for k in keys], dtype=np.int64)
    c = np.array([k[1] for k in keys], dtype=np.int64)
    w = np.array([rows[k] for k in keys], dtype=float)
    m = sp.csr_matrix((w, (r, c)), shape=(n, n))
    m.sort_indices()
    sums = np.asarray(m.sum(axis=1)).ravel()
    if (sums > 1 + ROW_TOL).any():
        raise ValueError("kernel rows exceed 1")
    sub = bool((sums < 1 - ROW_TOL).any())
    return Kernel(graph, m, sub, kind, dict(params), region)


def build_kernel(graph: Graph, kind: str = "simple", **params) -> Kernel:
    """Simple random walk or the biased tree walk.

    On lattices the simple walk moves to each of the ``2d`` lattice directions
    with weight ``1/(2d)`` (boxes lose the mass pointing outside). On trees it
    uses ``1/(n+1)``, so leaves of the truncation are substochastic. Custom
    graphs use ``1/deg(x)``.
    """
    rows: dict[tuple[int, int], float] = {}
    if kind == "simple":
        if params:
            raise ValueError("simple kernel takes no parameters")
        if graph.family in ("lattice-box", "lattice-torus"):
            d, L = graph.params["d"], graph.params["L"]
            index = {c: i for i, c in enumerate(graph.labels)}
            for x, cx in enumerate(graph.labels):
                for axis in range(d):
                    for step in (-1, 1):
                        z = list(cx)
                        z[axis] += step
                        if graph.family == "lattice-torus":
                            z[axis] %= L
                        elif not 0 <= z[axis] < L:
                            continue
                        y = index[tuple(z)]
                        rows[x, y] = rows.get((x, y), 0.0) + 1.0 / (2 * d)
        elif graph.family == "tree":
            w = 1.0 / (graph.params["n"] + 1)
            for x in range(graph.n_vertices):
                for y in graph.neighbors(x):
                    rows[x, int(y)] = w
        else:
            for x in range(graph.n_vertices):
                ys = graph.neighbors(x)
                if len(ys) == 0:
                    raise ValueError(f"vertex {x} has no neighbours")
                for y in ys:
                    rows[x, int(y)] = 1.0 / len(ys)
        return _make_kernel(graph, rows, "simple", {})
    if kind == "biased-tree":
        if graph.family != "tree":
            raise ValueError("biased-tree kernel needs a tree graph")
        n = graph.params["n"]
        p = float(params.get("p", np.nan))
        if not 0.0 <= p <= 1.0 / n:
            raise ValueError(f"p must lie in [0, 1/n], got {p}")
        dist = graph.dist
        for x in range(graph.n_vertices):
            for y in graph.neighbors(x):
                y = int(y)
                if dist[x] + 1 == dist[y] >= 2:
                    w = p
                elif x == graph.root:
                    w = 1.0 / (n + 1)
                else:
                    w = 1.0 - n * p
                rows[x, y] = w
        return _make_kernel(graph, rows, "biased-tree", {"n": n, "p": p})
    raise ValueError(f"unknown kernel kind {kind!r}")


def restrict_kernel(kernel: Kernel, region) -> Kernel:
    """Zero every entry outside ``region x region``."""
    mask = region_mask(kernel.graph, region)
    if not mask.any():
        raise ValueError("empty region")
    if kernel.region is not None:
        mask &= kernel.region
    m = kernel.matrix.tocoo()
    keep = mask[m.row] & mask[m.col]
    mat = sp.csr_matrix((m.data[keep], (m.row[keep], m.col[keep])), shape=m.shape)
    mat.sort_indices()
    mask.setflags(write=False)
    return Kernel(kernel.graph, mat, True, kernel.kind, dict(kernel.params), mask)


def kernel_from_matrix(graph: Graph, matrix, kind: str = "custom") -> Kernel:
    """Wrap an arbitrary nonnegative matrix supported on the edges of ``graph``."""
    m = sp.csr_matrix(matrix, dtype=float)
    m.eliminate_zeros()
    if (m.data < 0).any():
        raise ValueError("negative kernel entries")
    adj = graph.adjacency()
    if (m.multiply(adj) != m).nnz:
        raise ValueError("kernel has weight on a non-edge")
    rows = {(int(i), int(j)): float(w) for i, j, w in zip(*sp.find(m))}
    return _make_kernel(graph, rows, kind, {})


@dataclass(frozen=True, eq=False)
class AlphaWeights:
    M: float
    alpha: np.ndarray
    verified_ratio: float

    def norm(self, eta) -> float:
        return float(np.dot(np.asarray(eta, dtype=float), self.alpha))

    def inequality_ratio(self, kernel: Kernel) -> float:
        """``max_x sum_y q(x,y) alpha(y) / (M alpha(x))``; at most 1 when the weights are admissible."""
        lhs = kernel.matrix @ self.alpha
        return float(np.max(lhs / (self.M * self.alpha)))


def default_M(graph: Graph) -> float:
    return float((graph.D - 1) ** 2 + 1)


def alpha_weights(graph: Graph, M: float | None = None) -> AlphaWeights:
    if M is None:
        M = default_M(graph)
    if not M > (graph.D - 1) ** 2:
        raise ValueError(f"M must exceed (D-1)^2 = {(graph.D - 1) ** 2}")
    alpha = _frozen(float(M) ** (-graph.dist.astype(float)))
    w = AlphaWeights(float(M), alpha, np.nan)
    if graph.degrees.min() > 0:
        ratio = w.inequality_ratio(build_kernel(graph, "simple"))
        if ratio > 1 + ROW_TOL:
            raise ValueError("alpha inequality fails on the simple walk")
    else:
        ratio = 0.0
    return AlphaWeights(float(M), alpha, ratio)


def write_kernel_csv(kernel: Kernel, path) -> None:
    """Edge list with columns ``src,dst,weight``."""
    m = kernel.matrix.tocoo()
    order = np.lexsort((m.col, m.row))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for i in order:
            w.writerow([int(m.row[i]), int(m.col[i]), repr(float(m.data[i]))])


def read_kernel_csv(graph: Graph, path) -> Kernel:
    rows, cols, vals = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["src", "dst", "weight"]:
            raise ValueError(f"bad header {reader.fieldnames}")
        for rec in reader:
            rows.append(int(rec["src"]))
            cols.append(int(rec["dst"]))
            vals.append(float(rec["weight"]))
    n = graph.n_vertices
    return kernel_from_matrix(graph, sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


def write_graph_csv(graph: Graph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for x in range(graph.n_vertices):
            for y in graph.neighbors(x):
                w.writerow([x, int(y), 1])


def read_graph_csv(path, root: int = 0) -> Graph:
    edges = []
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            edges.append((int(rec["src"]), int(rec["dst"])))
    return build_graph("custom", edges=edges, root=root)
