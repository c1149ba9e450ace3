"""Phase parameters of a transition kernel.

``theta`` is the growth rate of the largest column sum of ``P^n`` and ``rho``
the growth rate of return probabilities. Both are extrapolated from ratios of
consecutive terms; n-th roots are reported alongside for diagnostics.

Kernels on truncated trees (simple or biased) are handled through the radial
projection, which gives the infinite-tree quantities exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Kernel, ROW_TOL

UNDERFLOW = 1e-300
RELIABLE = 1e-250


class TruncationError(RuntimeError):
    """The finite truncation cannot represent the requested horizon."""


@dataclass(frozen=True)
class SpectralEstimate:
    parameter: str
    steps: np.ndarray
    values: np.ndarray
    root_estimates: np.ndarray
    ratio_estimates: np.ndarray
    value: float
    n_max: int
    estimator: str = "ratio"

    def write_csv(self, path) -> None:
        """Columns ``n,value,root_estimate,ratio_estimate``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "value", "root_estimate", "ratio_estimate"])
            for row in zip(self.steps, self.values, self.root_estimates, self.ratio_estimates):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _tree_params(kernel: Kernel) -> tuple[int, float] | None:
    if not kernel.is_tree_radial():
        return None
    n = kernel.graph.params["n"]
    if kernel.kind == "biased-tree":
        return n, kernel.params["p"]
    return n, 1.0 / (n + 1)


def boundary_distance(kernel: Kernel) -> np.ndarray:
    """Distance from each vertex to the nearest row that has lost mass.

    ``inf`` everywhere when the kernel is stochastic.
    """
    lossy = np.flatnonzero(kernel.row_sums < 1 - ROW_TOL)
    n = kernel.n_vertices
    if lossy.size == 0:
        return np.full(n, np.inf)
    from scipy.sparse.csgraph import shortest_path
    d = shortest_path(kernel.graph.adjacency(), unweighted=True, indices=lossy)
    return np.atleast_2d(d).min(axis=0)


def radial_column_sums(n: int, p: float, n_max: int) -> np.ndarray:
    """Column sums ``w_k(m)`` of ``P^k`` on the infinite tree, by depth.

    Row ``k`` (``0..n_max``) holds depths ``0..2 n_max + 3``; the walk looks
    the same from every depth past ``k + 1``, so the last entry continues
    itself.
    """
    size = 2 * n_max + 4
    q = 1.0 - n * p
    w = np.ones(size)
    out = np.empty((n_max + 1, size))
    out[0] = w
    for k in range(1, n_max + 1):
        ahead = np.empty(size + 1)
        ahead[:size] = w
        ahead[size] = w[-1]
        nxt = np.empty(size)
        nxt[0] = (n + 1) * q * ahead[1]
        nxt[1] = ahead[0] / (n + 1) + n * q * ahead[2]
        nxt[2:] = p * ahead[1:size - 1] + n * q * ahead[3:size + 1]
        w = nxt
        out[k] = w
    return out


def _ratio_and_roots(values: np.ndarray, steps: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = np.where(values > 0, values ** (1.0 / steps), 0.0)
        ratios = np.full(len(values), np.nan)
        ratios[1:] = values[1:] / values[:-1]
    return roots, ratios


def theta_estimate(kernel: Kernel, n_max: int = 40, method: str = "auto",
                   guard: bool = True) -> SpectralEstimate:
    """Estimate ``theta`` from ``v_n = max_x sum_y p^(n)(y, x)``.

    ``method="radial"`` (the default for tree kernels) returns infinite-tree
    values; ``"matrix"`` iterates ``w <- P^T w`` on the finite kernel. With
    ``guard`` the maximum at step ``n`` only ranges over vertices at distance
    ``> n`` from any mass-losing row, so truncation never leaks in.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    steps = np.arange(1, n_max + 1)
    tree = _tree_params(kernel)
    if method == "radial" or (method == "auto" and tree is not None):
        if tree is None:
            raise ValueError("radial method needs an unrestricted tree kernel")
        values = radial_column_sums(*tree, n_max)[1:].max(axis=1)
    elif method in ("auto", "matrix"):
        PT = kernel.matrix.T.tocsr()
        w = np.ones(kernel.n_vertices)
        if guard:
            dist = boundary_distance(kernel)
            if dist.max() < n_max + 2:
                raise TruncationError(
                    f"no vertex lies {n_max + 2} steps away from the truncation boundary")
        values = np.empty(n_max)
        for i, k in enumerate(steps):
            w = PT @ w
            usable = w[dist >= k + 1] if guard else w
            values[i] = usable.max()
    else:
        raise ValueError(f"unknown method {method!r}")
    if values[-1] < UNDERFLOW:
        raise TruncationError("column sums underflowed; truncation too shallow")
    roots, ratios = _ratio_and_roots(values, steps)
    return SpectralEstimate("theta", steps, values, roots, ratios, float(ratios[-1]), n_max)


def radial_return_log_probs(n: int, p: float, n_steps: int) -> np.ndarray:
    """``log p^(j)(o, o)`` for ``j = 0..n_steps`` on the infinite tree.

    Propagates the log-distribution of the distance to the root, so the
    return probability keeps full relative precision however small it is
    compared with the bulk. Odd steps are ``-inf``.
    """
    with np.errstate(divide="ignore"):
        log_up = math.log(n * p) if n * p > 0 else -np.inf
        log_down = math.log(1.0 - n * p) if n * p < 1 else -np.inf
        size = n_steps // 2 + 2
        lv = np.full(size, -np.inf)
        lv[0] = 0.0
        out = np.empty(n_steps + 1)
        out[0] = 0.0
        for j in range(1, n_steps + 1):
            up = np.full(size, -np.inf)
            up[1] = lv[0]
            up[2:] = log_up + lv[1:-1]
            down = np.full(size, -np.inf)
            down[:-1] = log_down + lv[1:]
            lv = np.logaddexp(up, down)
            out[j] = lv[0]
    return out


def _matrix_return_log_probs(kernel: Kernel, x: int, n_steps: int) -> np.ndarray:
    P = kernel.matrix.tocsr()
    PT = P.T.tocsr()
    v = np.zeros(kernel.n_vertices)
    v[x] = 1.0
    log_scale = 0.0
    out = np.empty(n_steps + 1)
    out[0] = 0.0
    for j in range(1, n_steps + 1):
        v = PT @ v
        s = v.max()
        if s <= 0:
            out[j:] = -np.inf
            return out
        v /= s
        log_scale += math.log(s)
        # below this relative size the entry has lost its precision
        out[j] = math.log(v[x]) + log_scale if v[x] > RELIABLE else -np.inf
    return out


def rho_estimate(kernel: Kernel, x: int | None = None, n_max: int = 400,
                 method: str = "auto", guard: bool = True) -> SpectralEstimate:
    """Estimate ``rho`` from even-step return probabilities at ``x``.

    The extrapolated value is ``sqrt(p^(2j+2)(x,x) / p^(2j)(x,x))`` at the
    largest ``j`` where both terms are positive. ``values`` holds the return
    probabilities themselves, which may underflow to 0 for large ``n_max``;
    the ratios are computed in log space.
    """
    if n_max < 4 or n_max % 2:
        raise ValueError("n_max must be even and >= 4")
    if x is None:
        x = kernel.graph.root
    tree = _tree_params(kernel)
    if method == "radial" or (method == "auto" and tree is not None):
        if tree is None:
            raise ValueError("radial method needs an unrestricted tree kernel")
        if x != kernel.graph.root:
            raise ValueError("radial return probabilities are tracked at the root")
        logs = radial_return_log_probs(*tree, n_max)
    elif method in ("auto", "matrix"):
        if guard and boundary_distance(kernel)[x] < n_max + 2:
            raise TruncationError(
                f"vertex {x} is closer than {n_max + 2} steps to the truncation boundary")
        logs = _matrix_return_log_probs(kernel, x, n_max)
    else:
        raise ValueError(f"unknown method {method!r}")
    steps = np.arange(2, n_max + 1, 2)
    even = logs[steps]
    with np.errstate(invalid="ignore"):
        log_ratio = np.full(len(steps), np.nan)
        log_ratio[1:] = even[1:] - even[:-1]
        roots = np.exp(even / steps)
    ok = np.flatnonzero(np.isfinite(log_ratio))
    ratios = np.exp(log_ratio / 2.0)
    if ok.size:
        value = float(ratios[ok[-1]])
    elif np.isneginf(even).all():
        # the walk never returns: every term is an exact zero
        value = 0.0
    else:
        raise TruncationError("no two consecutive positive return probabilities")
    return SpectralEstimate("rho", steps, np.exp(even), roots, ratios, value, n_max)


@dataclass(frozen=True)
class TreeClosedForms:
    rho: float
    theta_lo: float
    theta_hi: float

    @property
    def theta(self) -> float | None:
        return self.theta_lo if self.theta_lo == self.theta_hi else None


def tree_closed_forms(n: int, p: float) -> TreeClosedForms:
    """``rho`` and ``theta`` (or bounds on it) for the biased walk on the
    ``(n+1)``-regular tree."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0.0 <= p <= 1.0 / n:
        raise ValueError("p must lie in [0, 1/n]")
    rho = 1.0 if p <= 1.0 / (2 * n) else 2.0 * math.sqrt(n * p * (1.0 - n * p))
    lo = n - (n * n - 1) * p
    if math.isclose(p, 1.0 / (n + 1), rel_tol=0, abs_tol=1e-15):
        return TreeClosedForms(rho, 1.0, 1.0)
    if p > 1.0 / (n + 1):
        return TreeClosedForms(rho, lo, lo)
    return TreeClosedForms(rho, lo, (n + 1) * (1.0 - n * p))


def theta_sign_via_test_function(kernel: Kernel, nu, tol: float = 1e-12) -> dict:
    """Bound ``theta`` against 1 with a positive test function.

    On the support ``S`` of ``nu``: if ``nu >= nu P`` everywhere on ``S`` then
    ``(P^T)^n nu <= nu``, so ``theta <= 1``; if ``nu <= nu P`` then
    ``theta >= 1``. Both means ``theta = 1``.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (kernel.n_vertices,):
        raise ValueError("test function has the wrong length")
    if (nu < 0).any() or not nu.any():
        raise ValueError("test function must be nonnegative and not identically 0")
    support = nu > 0
    C = float(nu[support].max() / nu[support].min())
    pushed = kernel.matrix.T @ nu
    diff = (nu - pushed)[support]
    le = bool((diff >= -tol).all())
    ge = bool((diff <= tol).all())
    if le and ge:
        verdict = "=1"
    elif le:
        verdict = "<=1"
    elif ge:
        verdict = ">=1"
    else:
        verdict = "inconclusive"
    return {"verdict": verdict, "C": C, "max_excess": float(-diff.min()),
            "max_deficit": float(diff.max())}


def spectral_radius(matrix) -> float:
    """Exact spectral radius of a finite matrix."""
    a = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(a)).max())


def operator_norms(matrix, n_max: int) -> np.ndarray:
    """``||A^n|| = max_x sum_y |a^(n)_{xy}|`` for ``n = 1..n_max`` (A nonnegative)."""
    A = sp.csr_matrix(matrix)
    w = np.ones(A.shape[0])
    out = np.empty(n_max)
    for i in range(n_max):
        w = A @ w
        out[i] = w.max()
    return out
