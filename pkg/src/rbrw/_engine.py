"""Compiled event loops for the single and the coupled dynamics.

Both loops use global-rate thinning: every particle in the active region
carries a dominating clock, sites are picked through a Fenwick tree over
their occupancies, and the true rates are recovered by acceptance tests.
"""
import numpy as np
from numba import njit

DEATH = 0
BIRTH = 1


@njit(cache=True)
def _fen_build(weights):
    n = weights.shape[0]
    tree = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        j = i + 1
        tree[j] += weights[i]
        k = j + (j & (-j))
        if k <= n:
            tree[k] += tree[j]
    return tree


@njit(cache=True)
def _fen_add(tree, i, delta):
    n = tree.shape[0] - 1
    j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & (-j)


@njit(cache=True)
def _fen_find(tree, r):
    # smallest index whose prefix sum exceeds r
    n = tree.shape[0] - 1
    step = 1
    while step * 2 <= n:
        step *= 2
    pos = 0
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= r:
            pos = nxt
            r -= tree[nxt]
        step //= 2
    return pos


@njit(cache=True)
def _pick(tree, total, rng):
    r = np.int64(rng.random() * total)
    if r >= total:
        r = total - 1
    return _fen_find(tree, r)


@njit(cache=True)
def _target(indptr, indices, cum, x, u):
    # -1 when the draw falls into the mass missing from a substochastic row
    for j in range(indptr[x], indptr[x + 1]):
        if u < cum[j]:
            return indices[j]
    return -1


@njit(cache=True)
def _rate(ctab, ctail, j):
    if j < ctab.shape[0]:
        return ctab[j]
    return ctail


@njit(cache=True)
def _accumulate(edges, acc, hist, x, a, b, val):
    nb = edges.shape[0] - 1
    if nb <= 0 or b <= edges[0] or a >= edges[nb]:
        return
    lo = a if a > edges[0] else edges[0]
    hi = b if b < edges[nb] else edges[nb]
    if hi <= lo:
        return
    if hist.shape[1] > 0:
        col = val if val < hist.shape[1] else hist.shape[1] - 1
        hist[x, col] += hi - lo
    j = np.searchsorted(edges, lo, side="right") - 1
    while j < nb and edges[j] < hi:
        s = lo if lo > edges[j] else edges[j]
        e = hi if hi < edges[j + 1] else edges[j + 1]
        if e > s:
            acc[j, x] += val * (e - s)
        j += 1


@njit(cache=True)
def run_single(indptr, indices, cum, active, eta, gamma, k, lam, ctab, ctail,
               t_end, max_events, sample_times, out, rng,
               edges, acc, hist, log_t, log_site, log_kind, log_target, log_acc):
    """Simulate one trajectory in place on ``eta``.

    Returns ``(t_final, n_events, n_accepted, ext_time, max_occ, n_logged)``.
    ``ext_time`` is ``-1`` when no extinction occurred.
    """
    n = eta.shape[0]
    w = np.zeros(n, dtype=np.int64)
    for x in range(n):
        if active[x]:
            w[x] = eta[x]
    tree = _fen_build(w)
    total = 0
    for x in range(n):
        total += w[x]
    last = np.zeros(n)
    max_occ = 0
    for x in range(n):
        if active[x] and eta[x] > max_occ:
            max_occ = eta[x]
    ns = sample_times.shape[0]
    si = 0
    t = 0.0
    n_events = 0
    n_acc = 0
    n_log = 0
    cap = log_t.shape[0]
    ext_time = -1.0
    if total == 0:
        ext_time = 0.0
    rtot = gamma + lam
    while total > 0 and n_events < max_events:
        t_next = t + rng.exponential(1.0 / (rtot * total))
        while si < ns and sample_times[si] < t_next:
            out[si, :] = eta
            si += 1
        if t_next > t_end:
            break
        t = t_next
        n_events += 1
        x = _pick(tree, total, rng)
        site = x
        kind = DEATH
        target = -1
        accepted = False
        if rng.random() * rtot < gamma:
            # death clock at dominating rate gamma * eta(x); floor by thinning
            if rng.random() * eta[x] < eta[x] - k:
                accepted = True
        else:
            kind = BIRTH
            y = _target(indptr, indices, cum, x, rng.random())
            target = y
            if y >= 0 and active[y]:
                if rng.random() * lam < _rate(ctab, ctail, eta[y]):
                    accepted = True
                    site = y
        if accepted:
            n_acc += 1
            _accumulate(edges, acc, hist, site, last[site], t, eta[site])
            last[site] = t
            if kind == DEATH:
                eta[site] -= 1
                _fen_add(tree, site, -1)
                total -= 1
            else:
                eta[site] += 1
                _fen_add(tree, site, 1)
                total += 1
                if eta[site] > max_occ:
                    max_occ = eta[site]
            if total == 0:
                ext_time = t
        if n_log < cap:
            log_t[n_log] = t
            log_site[n_log] = x
            log_kind[n_log] = kind
            log_target[n_log] = target
            log_acc[n_log] = accepted
            n_log += 1
    if n_events < max_events:
        while si < ns and sample_times[si] <= t_end:
            out[si, :] = eta
            si += 1
    t_stop = t_end
    if n_events >= max_events:
        t_stop = t
    for x in range(n):
        _accumulate(edges, acc, hist, x, last[x], t_stop, eta[x])
    return t, n_events, n_acc, ext_time, max_occ, n_log


@njit(cache=True)
def run_coupled(indptr, indices, cum, act, eta, gammas, ks, ctabs, ctails,
                gbar, cbar, t_end, max_events, sample_times, out, rng, viol):
    """Nested coupling of ``N`` processes sharing clocks and uniforms.

    ``act[h]`` is the region mask of component ``h``; clocks live on the
    union of regions. ``viol`` receives the first ordering violation as
    ``(time, site, h, eta_h, eta_{h+1})``.

    Returns ``(t_final, n_events, n_violations, n_inversions)`` and writes
    per-component extinction times into ``viol[5:5+N]``.
    """
    N = eta.shape[0]
    n = eta.shape[1]
    region = np.zeros(n, dtype=np.bool_)
    for h in range(N):
        for x in range(n):
            if act[h, x]:
                region[x] = True
    A = np.zeros(n, dtype=np.int64)
    for x in range(n):
        if region[x]:
            m = 0
            for h in range(N):
                if eta[h, x] > m:
                    m = eta[h, x]
            A[x] = m
    tree = _fen_build(A)
    total = 0
    for x in range(n):
        total += A[x]
    count = np.zeros(N, dtype=np.int64)
    for h in range(N):
        for x in range(n):
            if act[h, x]:
                count[h] += eta[h, x]
        viol[5 + h] = 0.0 if count[h] == 0 else -1.0
    n_viol = 0
    n_inv = 0
    for x in range(n):
        for h in range(N - 1):
            if eta[h, x] > eta[h + 1, x]:
                if n_viol == 0:
                    viol[0] = 0.0
                    viol[1] = x
                    viol[2] = h
                    viol[3] = eta[h, x]
                    viol[4] = eta[h + 1, x]
                n_viol += 1
    thr = np.zeros(N)
    ns = sample_times.shape[0]
    si = 0
    t = 0.0
    n_events = 0
    rtot = gbar + cbar
    while total > 0 and n_events < max_events:
        t_next = t + rng.exponential(1.0 / (rtot * total))
        while si < ns and sample_times[si] < t_next:
            out[si, :, :] = eta
            si += 1
        if t_next > t_end:
            break
        t = t_next
        n_events += 1
        x = _pick(tree, total, rng)
        ax = A[x]
        site = -1
        if rng.random() * rtot < gbar:
            U = rng.random()
            for h in range(N):
                d = eta[h, x] - ks[h]
                if act[h, x] and d > 0:
                    thr[h] = gammas[h] * d / (gbar * ax)
                else:
                    thr[h] = 0.0
            for h in range(N - 1):
                if eta[h, x] == eta[h + 1, x] and thr[h] < thr[h + 1] - 1e-14:
                    n_inv += 1
            for h in range(N):
                if U < thr[h]:
                    eta[h, x] -= 1
                    count[h] -= 1
                    if count[h] == 0 and viol[5 + h] < 0:
                        viol[5 + h] = t
                    site = x
        else:
            y = _target(indptr, indices, cum, x, rng.random())
            if y >= 0:
                V = rng.random()
                for h in range(N):
                    if act[h, x] and act[h, y]:
                        thr[h] = eta[h, x] * _rate(ctabs[h], ctails[h], eta[h, y]) / (cbar * ax)
                    else:
                        thr[h] = 0.0
                for h in range(N - 1):
                    if eta[h, y] == eta[h + 1, y] and thr[h] > thr[h + 1] + 1e-14:
                        n_inv += 1
                for h in range(N):
                    if V < thr[h]:
                        eta[h, y] += 1
                        count[h] += 1
                        site = y
        if site >= 0:
            m = 0
            for h in range(N):
                if eta[h, site] > m:
                    m = eta[h, site]
            if region[site] and m != A[site]:
                _fen_add(tree, site, m - A[site])
                total += m - A[site]
                A[site] = m
            for h in range(N - 1):
                if eta[h, site] > eta[h + 1, site]:
                    if n_viol == 0:
                        viol[0] = t
                        viol[1] = site
                        viol[2] = h
                        viol[3] = eta[h, site]
                        viol[4] = eta[h + 1, site]
                    n_viol += 1
    if n_events < max_events:
        while si < ns and sample_times[si] <= t_end:
            out[si, :, :] = eta
            si += 1
    return t, n_events, n_viol, n_inv
