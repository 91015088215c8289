"""Numpy implementations of the hot kernels.

Reference versions of everything in ``_ckernels.pyx``; the two must agree
to rounding. Status codes returned by the integrators:

    0  reached the end of the parameter interval
    1  within ``boundary_eps`` of a chart boundary
    2  step size fell below ``MIN_STEP`` without meeting the tolerance
    3  ``max_steps`` exhausted
"""

from itertools import combinations, permutations
from functools import lru_cache

import numpy as np

MIN_STEP = 1e-12
SAFETY = 0.9
GROW_MAX = 5.0
SHRINK_MIN = 0.2
# rounding allowance on a Richardson difference, in units of |y|
NOISE = 8.0 * np.finfo(float).eps

REACHED, BOUNDARY, UNDERFLOW, MAX_STEPS = 0, 1, 2, 3


def _step_factor(ratio):
    if ratio == 0.0:
        return GROW_MAX
    return min(GROW_MAX, max(SHRINK_MIN, SAFETY * ratio ** -0.25))


def _richardson_error(coarse, fine, y):
    # rounding in fine - coarse would otherwise dominate once h is tiny,
    # because the tolerance is per unit parameter
    noise = NOISE * np.maximum(np.abs(y), np.abs(fine))
    return np.maximum(np.abs(fine - coarse) - noise, 0.0) / 15.0


def _wrap(x, lower, period):
    mask = period > 0
    if mask.any():
        x = x.copy()
        x[mask] = lower[mask] + np.mod(x[mask] - lower[mask], period[mask])
    return x


# --------------------------------------------------------------------------
# geodesics: c'' + Gamma(c)(c', c') = 0


def _geo_rhs(gamma, x, v):
    if gamma is None:
        return v, np.zeros_like(v)
    G = np.asarray(gamma(x), dtype=float)
    return v, -np.einsum("kij,i,j->k", G, v, v)


def _geo_rk4(gamma, x, v, h):
    k1x, k1v = _geo_rhs(gamma, x, v)
    k2x, k2v = _geo_rhs(gamma, x + 0.5 * h * k1x, v + 0.5 * h * k1v)
    k3x, k3v = _geo_rhs(gamma, x + 0.5 * h * k2x, v + 0.5 * h * k2v)
    k4x, k4v = _geo_rhs(gamma, x + h * k3x, v + h * k3v)
    return (
        x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def _hermite_residual(gamma, x0, v0, x1, v1, h):
    """Geodesic residual of the quintic Hermite interpolant at the midpoint.

    The interpolant matches position, velocity and the acceleration implied
    by the geodesic equation at both step ends, so its own defect at the
    midpoint is O(h^4) for an exact trajectory.
    """
    if gamma is None:
        return float(np.max(np.abs(1.5 * (v1 - v0) / h)))
    a0 = -np.einsum("kij,i,j->k", np.asarray(gamma(x0), dtype=float), v0, v0)
    a1 = -np.einsum("kij,i,j->k", np.asarray(gamma(x1), dtype=float), v1, v1)
    xm = 0.5 * (x0 + x1) + 5.0 * h * (v0 - v1) / 32.0 + h * h * (a0 + a1) / 64.0
    vm = 15.0 * (x1 - x0) / (8.0 * h) - 7.0 * (v0 + v1) / 16.0 + h * (a1 - a0) / 32.0
    am = 1.5 * (v1 - v0) / h - 0.25 * (a0 + a1)
    G = np.asarray(gamma(xm), dtype=float)
    return float(np.max(np.abs(am + np.einsum("kij,i,j->k", G, vm, vm))))


def geodesic_run(gamma, x, v, s, s_end, atol, rtol, max_step, h, lower, period,
                 dist, boundary_eps, sample_every, max_steps):
    """Integrate a geodesic with step-doubling RK4 until ``s_end`` or a boundary.

    Returns ``(x, v, s, h, status, samples, residual_max, steps)`` where
    ``samples`` is a list of ``(s, x, v)`` taken every ``sample_every``
    accepted steps (and at the last accepted step).
    """
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    lower = np.asarray(lower, dtype=float)
    period = np.asarray(period, dtype=float)
    samples = []
    resid = 0.0
    steps = 0
    status = REACHED
    since_sample = 0
    while s < s_end:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        speed = float(np.sqrt(v @ v))
        hmax = max_step / speed if speed > 0.0 else s_end - s
        if dist is not None:
            d = float(dist(x))
            if d < boundary_eps:
                status = BOUNDARY
                break
            if speed > 0.0:
                hmax = min(hmax, 0.5 * d / speed)
        h = min(h, hmax, s_end - s)
        x1, v1 = _geo_rk4(gamma, x, v, h)
        xa, va = _geo_rk4(gamma, x, v, 0.5 * h)
        x2, v2 = _geo_rk4(gamma, xa, va, 0.5 * h)
        ex = _richardson_error(x1, x2, x)
        ev = _richardson_error(v1, v2, v)
        sx = atol + rtol * np.maximum(np.abs(x), np.abs(x2))
        sv = atol + rtol * np.maximum(np.abs(v), np.abs(v2))
        ratio = max(float(np.max(ex / sx)), float(np.max(ev / sv))) / h
        if ratio <= 1.0:
            xn = x2 + (x2 - x1) / 15.0
            vn = v2 + (v2 - v1) / 15.0
            resid = max(resid, _hermite_residual(gamma, x, v, xn, vn, h))
            s = s + h
            x = _wrap(xn, lower, period)
            v = vn
            steps += 1
            since_sample += 1
            if since_sample >= sample_every:
                samples.append((s, x.copy(), v.copy()))
                since_sample = 0
            h = h * _step_factor(ratio)
        else:
            h = h * _step_factor(ratio)
            if h < MIN_STEP:
                status = UNDERFLOW
                break
    if since_sample:
        samples.append((s, x.copy(), v.copy()))
    return x, v, s, h, status, samples, resid, steps


# --------------------------------------------------------------------------
# parallel transport along a prescribed curve: w' = -Gamma(c)(c', w)


def _coefficient(gamma, path, vel, s):
    c = np.asarray(path(s), dtype=float)
    dc = np.asarray(vel(s), dtype=float)
    G = np.asarray(gamma(c), dtype=float)
    return -np.einsum("kij,i->kj", G, dc), float(np.sqrt(dc @ dc))


def transport_run(gamma, path, vel, w, s0, s1, atol, rtol, max_step, h, max_steps):
    """Transport the columns of ``w`` along ``path`` from ``s0`` to ``s1``.

    Returns ``(w, h, status, steps)``. A ``None`` connection means the
    right-hand side vanishes and ``w`` is returned unchanged.
    """
    w = np.array(w, dtype=float)
    if gamma is None:
        return w, h, REACHED, 0
    s = s0
    A0, speed = _coefficient(gamma, path, vel, s)
    steps = 0
    status = REACHED
    while s < s1:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        hmax = max_step / speed if speed > 0.0 else s1 - s
        h = min(h, hmax, s1 - s)
        Aq, _ = _coefficient(gamma, path, vel, s + 0.25 * h)
        Ah, _ = _coefficient(gamma, path, vel, s + 0.5 * h)
        A3, _ = _coefficient(gamma, path, vel, s + 0.75 * h)
        A1, speed1 = _coefficient(gamma, path, vel, s + h)
        # full step
        k1 = A0 @ w
        k2 = Ah @ (w + 0.5 * h * k1)
        k3 = Ah @ (w + 0.5 * h * k2)
        k4 = A1 @ (w + h * k3)
        wf = w + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        # two half steps
        g = 0.5 * h
        k2 = Aq @ (w + 0.5 * g * k1)
        k3 = Aq @ (w + 0.5 * g * k2)
        k4 = Ah @ (w + g * k3)
        wm = w + g / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        k1 = Ah @ wm
        k2 = A3 @ (wm + 0.5 * g * k1)
        k3 = A3 @ (wm + 0.5 * g * k2)
        k4 = A1 @ (wm + g * k3)
        wh = wm + g / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        err = _richardson_error(wf, wh, w)
        scale = atol + rtol * np.maximum(np.abs(w), np.abs(wh))
        ratio = float(np.max(err / scale)) / h
        if ratio <= 1.0:
            w = wh + (wh - wf) / 15.0
            s = s + h
            A0, speed = A1, speed1
            steps += 1
        h = h * _step_factor(ratio)
        if ratio > 1.0 and h < MIN_STEP:
            status = UNDERFLOW
            break
    return w, h, status, steps


# --------------------------------------------------------------------------
# curvature


def bivector_pairs(n):
    return list(combinations(range(n), 2))


def frame_curvature(G, dG, F, Finv):
    """Curvature 2-forms in a frame, packed over coordinate bivectors.

    ``G[p, k, i, j]`` is Gamma^k_ij, ``dG[p, m, k, i, j]`` its derivative
    along x^m, ``F[p]`` has the frame vectors as columns. Returns
    ``W[p, a, b, q]``: coefficient of dx^i ^ dx^j (q-th pair, i < j) in
    Omega_ab.
    """
    R = (
        np.einsum("pilkj->plkij", dG)
        - np.einsum("pjlki->plkij", dG)
        + np.einsum("plim,pmjk->plkij", G, G)
        - np.einsum("pljm,pmik->plkij", G, G)
    )
    n = G.shape[-1]
    pairs = bivector_pairs(n)
    ii = [i for i, _ in pairs]
    jj = [j for _, j in pairs]
    Rp = R[..., ii, jj]  # (p, l, k, q)
    return np.einsum("pal,plkq,pkb->pabq", Finv, Rp, F)


@lru_cache(maxsize=None)
def matchings(n):
    """Perfect matchings of range(n) as (sign, ((i, j), ...)) with i < j."""
    def rec(items):
        if not items:
            return [(1, ())]
        first, rest = items[0], items[1:]
        out = []
        for pos, other in enumerate(rest):
            # moving `other` next to `first` costs `pos` transpositions
            sign = -1 if pos % 2 else 1
            remaining = rest[:pos] + rest[pos + 1:]
            for s, m in rec(remaining):
                out.append((sign * s, ((first, other),) + m))
        return out
    return tuple(rec(tuple(range(n))))


@lru_cache(maxsize=None)
def pfaffian_tables(n):
    """Index tables for the top coefficient of the Pfaffian of a 2-form matrix.

    Each row is ``(sign, frame pairs (a_k, b_k), coordinate pair indices q_k)``
    for one frame matching, one coordinate matching, and one assignment of
    coordinate pairs to frame pairs.
    """
    index = {p: q for q, p in enumerate(bivector_pairs(n))}
    rows = []
    for sf, mf in matchings(n):
        for sc, mc in matchings(n):
            qs = [index[p] for p in mc]
            for perm in permutations(range(len(mc))):
                rows.append((sf * sc, mf, tuple(qs[t] for t in perm)))
    return tuple(rows)


def pfaffian_top(W):
    """Coefficient of dx^1 ^ ... ^ dx^n in Pf(Omega), for ``W[p, a, b, q]``."""
    n = W.shape[1]
    out = np.zeros(W.shape[0])
    for sign, frame_pairs, qs in pfaffian_tables(n):
        term = np.ones(W.shape[0])
        for (a, b), q in zip(frame_pairs, qs):
            term = term * W[:, a, b, q]
        out += sign * term
    return out


def pairwise_sum(a):
    """Fixed-order pairwise summation (sequential blocks of at most 8)."""
    a = np.ascontiguousarray(a, dtype=float).ravel()
    return _pairwise(a, 0, a.shape[0])


def _pairwise(a, lo, hi):
    if hi - lo <= 8:
        total = 0.0
        for k in range(lo, hi):
            total += float(a[k])
        return total
    mid = lo + (hi - lo) // 2
    return _pairwise(a, lo, mid) + _pairwise(a, mid, hi)
