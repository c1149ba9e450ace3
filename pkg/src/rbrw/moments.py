"""First and second moments of the BRW with immortal particles.

With a constant profile ``lam``, death rate ``gamma`` and floor ``k`` on a
finite region, the excess ``xi = eta - k`` has closed moment equations

    m' = lam P^T m - gamma m + f,             f = k lam s,
    C' = -2 gamma C + lam (P^T C + C P) + F(m),

where ``P`` is the kernel restricted to the region, ``s`` its column sums and

    F(x, y) = lam k (m(x) s(y) + m(y) s(x))
              + [x == y] (lam (k s(x) + (P^T m)(x)) + gamma m(x)).

``C(x, y) = E[xi(x) xi(y)]``. Both systems are integrated together.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.integrate import quad_vec, solve_ivp
from scipy.stats import poisson

from .graph import Kernel, region_mask
from .spectral import radial_column_sums, spectral_radius

STABILITY_MARGIN = 1e-12
PAIR_BUDGET = 200
SERIES_TAIL = 1e-12


class UnstableError(ValueError):
    """The steady state does not exist (gamma <= lam * theta)."""


@dataclass(frozen=True, eq=False)
class MomentSystem:
    kernel: Kernel
    lam: float
    gamma: float
    k: int = 0
    region: object = None

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.lam, self.gamma)):
            raise ValueError("rates must be finite")
        if self.lam < 0 or self.gamma < 0 or self.k < 0:
            raise ValueError("lam, gamma and k must be nonnegative")
        region = self.region if self.region is not None else self.kernel.region
        mask = region_mask(self.kernel.graph, region)
        if not mask.any():
            raise ValueError("empty region")
        object.__setattr__(self, "region", np.flatnonzero(mask))

    @property
    def size(self) -> int:
        return len(self.region)

    @cached_property
    def P(self) -> sp.csr_matrix:
        idx = self.region
        return self.kernel.matrix[idx][:, idx].tocsr()

    @cached_property
    def PT(self) -> sp.csr_matrix:
        return self.P.T.tocsr()

    @cached_property
    def col_sums(self) -> np.ndarray:
        return np.asarray(self.P.sum(axis=0)).ravel()

    @property
    def forcing(self) -> np.ndarray:
        return self.k * self.lam * self.col_sums

    @cached_property
    def theta(self) -> float:
        return spectral_radius(self.PT)

    @property
    def stable(self) -> bool:
        return self.gamma > self.lam * self.theta * (1 + STABILITY_MARGIN)

    def pair_operator(self) -> sp.csr_matrix:
        """``B`` on row-major pair vectors: ``(P^T (x) I + I (x) P^T) / 2``."""
        eye = sp.identity(self.size, format="csr")
        return (0.5 * (sp.kron(self.PT, eye) + sp.kron(eye, self.PT))).tocsr()

    def restrict(self, values) -> np.ndarray:
        """Values on the whole graph, cut down to the region's coordinates."""
        v = np.asarray(values, dtype=float)
        return v[self.region] if v.shape == (self.kernel.n_vertices,) else v

    def pair_forcing(self, m: np.ndarray) -> np.ndarray:
        s = self.col_sums
        F = self.lam * self.k * (np.outer(m, s) + np.outer(s, m))
        F[np.diag_indices_from(F)] += (self.lam * (self.k * s + self.PT @ m)
                                       + self.gamma * m)
        return F


def _check_initial(system: MomentSystem, xi0) -> np.ndarray:
    xi0 = system.restrict(xi0)
    if xi0.shape != (system.size,):
        raise ValueError("initial excess has the wrong length")
    if not np.isfinite(xi0).all() or (xi0 < 0).any():
        raise ValueError("initial excess must be finite and nonnegative")
    return xi0


def _grid(t_grid) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if not np.isfinite(t).all() or (t < 0).any() or (np.diff(t) < 0).any():
        raise ValueError("time grid must be finite, nonnegative and nondecreasing")
    return t


def _integrate(rhs, y0, t, system: MomentSystem) -> np.ndarray:
    if t[-1] == 0:
        return np.tile(y0, (len(t), 1))
    sol = solve_ivp(rhs, (0.0, float(t[-1])), y0, method="RK45", t_eval=t,
                    rtol=1e-10, atol=1e-12,
                    max_step=0.1 / max(system.lam + system.gamma, 1e-300))
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y.T


def first_moment(system: MomentSystem, xi0, t_grid) -> np.ndarray:
    """``m(t, x) = E[xi_t(x)]`` at each time in ``t_grid`` (rows) for each
    region site (columns). Add ``k`` for the occupancy mean."""
    xi0 = _check_initial(system, xi0)
    t = _grid(t_grid)
    PT, lam, gamma, f = system.PT, system.lam, system.gamma, system.forcing

    def rhs(_, m):
        return lam * (PT @ m) - gamma * m + f

    return _integrate(rhs, xi0, t, system)


@dataclass(frozen=True)
class SecondMoment:
    times: np.ndarray
    m: np.ndarray
    C: np.ndarray

    def variance(self) -> np.ndarray:
        return np.diagonal(self.C, axis1=1, axis2=2) - self.m ** 2


def second_moment(system: MomentSystem, xi0, t_grid,
                  budget: int = PAIR_BUDGET) -> SecondMoment:
    """``C(t, x, y) = E[xi_t(x) xi_t(y)]`` together with ``m``.

    The initial state is deterministic, so ``C(0) = xi0 xi0^T``.
    """
    if system.size > budget:
        raise ValueError(f"pair system over {system.size} sites exceeds the budget of {budget}")
    xi0 = _check_initial(system, xi0)
    t = _grid(t_grid)
    n = system.size
    PT, P, lam, gamma, f = system.PT, system.P, system.lam, system.gamma, system.forcing

    def rhs(_, y):
        m = y[:n]
        C = y[n:].reshape(n, n)
        dm = lam * (PT @ m) - gamma * m + f
        dC = -2 * gamma * C + lam * (PT @ C + (P.T @ C.T).T) + system.pair_forcing(m)
        return np.concatenate([dm, dC.ravel()])

    y0 = np.concatenate([xi0, np.outer(xi0, xi0).ravel()])
    ys = _integrate(rhs, y0, t, system)
    return SecondMoment(t, ys[:, :n], ys[:, n:].reshape(len(t), n, n))


@dataclass(frozen=True)
class SteadyState:
    m: np.ndarray
    C: np.ndarray
    U1: float
    U2: float
    condition: float


def steady_state(system: MomentSystem, cond_limit: float = 1e12) -> SteadyState:
    """Limits of ``m`` and ``C`` by linear solves; refused unless stable.

    ``U1 = max_x E[eta(x)]`` and ``U2 = max_x E[eta(x)^2]`` in the limit.
    """
    if not system.stable:
        raise UnstableError(
            f"gamma = {system.gamma} does not exceed lam * theta = {system.lam * system.theta}")
    G = system.gamma * np.eye(system.size) - system.lam * system.PT.toarray()
    cond = float(np.linalg.cond(G))
    if not cond < cond_limit:
        raise np.linalg.LinAlgError(f"steady-state matrix is near singular (cond {cond:.3g})")
    m = np.linalg.solve(G, system.forcing)
    C = la.solve_sylvester(G, G.T, system.pair_forcing(m))
    k = system.k
    U1 = float(m.max() + k)
    U2 = float((np.diag(C) + 2 * k * m + k * k).max())
    return SteadyState(m, C, U1, U2, cond)


def poisson_cutoff(mean: float) -> int:
    """Smallest ``n`` whose Poisson tail beyond ``n`` is below the series
    tolerance, capped at ``mean + 12 sqrt(mean) + 20``."""
    cap = int(math.ceil(mean + 12 * math.sqrt(mean) + 20))
    if mean == 0:
        return 0
    ns = np.arange(cap + 1)
    tail = poisson.sf(ns, mean)
    hit = np.flatnonzero(tail < SERIES_TAIL)
    return int(hit[0]) if hit.size else cap


def poissonized_apply(Q, lam: float, t: float, phi) -> np.ndarray:
    """``(q_t phi)(x) = sum_n Pois(lam t; n) (Q^n phi)(x)``."""
    Q = sp.csr_matrix(Q)
    v = np.asarray(phi, dtype=float).copy()
    mu = lam * t
    n_star = poisson_cutoff(mu)
    weights = poisson.pmf(np.arange(n_star + 1), mu)
    out = weights[0] * v
    for n in range(1, n_star + 1):
        v = Q @ v
        out += weights[n] * v
    return out


def poissonized_kernel(Q, lam: float, t: float) -> np.ndarray:
    """Dense ``q_t``, one column per basis vector."""
    n = Q.shape[0]
    return np.column_stack([poissonized_apply(Q, lam, t, e) for e in np.eye(n)])


def explicit_solution(Q, lam: float, beta: float, phi, f, t: float) -> np.ndarray:
    """Solution of ``u' = lam (Q - I) u + beta u + f`` with ``u(0) = phi``.

    ``u(t) = e^{beta t} q_t phi + int_0^t e^{beta (t-s)} q_{t-s} f(s) ds``.
    ``f`` is an array (constant in time) or a callable ``s -> array``. The
    first moment corresponds to ``Q = P^T`` and ``beta = lam - gamma``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if isinstance(Q, Kernel):
        Q = Q.matrix
    phi = np.asarray(phi, dtype=float)
    u = math.exp(beta * t) * poissonized_apply(Q, lam, t, phi)
    if f is None or t == 0:
        return u
    fs = f if callable(f) else (lambda _s, _f=np.asarray(f, dtype=float): _f)

    def integrand(s):
        r = t - s
        return math.exp(beta * r) * poissonized_apply(Q, lam, r, fs(s))

    conv, _ = quad_vec(integrand, 0.0, t, epsabs=1e-13, epsrel=1e-12)
    return u + conv


def pair_norms_matrix(system: MomentSystem, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """``(||B^n||^{1/n}, ||(P^T)^n||^{1/n})`` for ``n = 1..n_max`` by direct
    iteration of both operators."""
    B = system.pair_operator()
    wb = np.ones(B.shape[0])
    wp = np.ones(system.size)
    nb, npt = np.empty(n_max), np.empty(n_max)
    for i in range(n_max):
        wb = B @ wb
        wp = system.PT @ wp
        nb[i] = wb.max() ** (1.0 / (i + 1))
        npt[i] = wp.max() ** (1.0 / (i + 1))
    return nb, npt


def pair_norms_from_columns(columns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The same two sequences from column sums alone.

    ``columns[j]`` holds ``(P^T)^j 1`` (row 0 is all ones). The two halves of
    ``B`` commute, so ``B^n 1 (x, y) = 2^-n sum_j binom(n, j) v_j(x) v_{n-j}(y)``.
    """
    n_max = columns.shape[0] - 1
    nb, npt = np.empty(n_max), np.empty(n_max)
    for n in range(1, n_max + 1):
        w = np.array([math.comb(n, j) for j in range(n + 1)]) / 2.0 ** n
        pair = np.einsum("j,jx,jy->xy", w, columns[:n + 1], columns[n::-1])
        nb[n - 1] = pair.max() ** (1.0 / n)
        npt[n - 1] = columns[n].max() ** (1.0 / n)
    return nb, npt


def tree_pair_norms(n: int, p: float, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Pair and single norms for the biased walk on the infinite tree."""
    return pair_norms_from_columns(radial_column_sums(n, p, n_max))


def write_first_moment_csv(system: MomentSystem, times, m, path) -> None:
    """Columns ``t,x,m``; ``x`` is the graph vertex."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "m"])
        for t, row in zip(times, m):
            for x, v in zip(system.region, row):
                w.writerow([repr(float(t)), int(x), repr(float(v))])


def write_second_moment_csv(system: MomentSystem, sol: SecondMoment, path) -> None:
    """Columns ``t,x,y,C``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "C"])
        for t, C in zip(sol.times, sol.C):
            for i, x in enumerate(system.region):
                for j, y in enumerate(system.region):
                    w.writerow([repr(float(t)), int(x), int(y), repr(float(C[i, j]))])
