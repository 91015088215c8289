# cython: language_level=3
"""Compiled versions of the kernels in ``_pykernels``.

Same signatures, same step-control arithmetic, same status codes. Fields
are still Python callables; what moves to C is the Runge-Kutta stage
arithmetic, the error norm, the curvature contraction and the Pfaffian
sum over matchings. A ``None`` connection skips the callbacks entirely.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, fmod, pow
from libc.stdlib cimport malloc, free

from affgeom._kernels._pykernels import bivector_pairs, pfaffian_tables

cnp.import_array()

cdef double MIN_STEP = 1e-12
cdef double SAFETY = 0.9
cdef double GROW_MAX = 5.0
cdef double SHRINK_MIN = 0.2
cdef double NOISE = 8.0 * 2.220446049250313e-16

cdef int REACHED = 0
cdef int BOUNDARY = 1
cdef int UNDERFLOW = 2
cdef int MAX_STEPS = 3


cdef inline double _step_factor(double ratio) noexcept:
    cdef double f
    if ratio == 0.0:
        return GROW_MAX
    f = SAFETY * pow(ratio, -0.25)
    if f > GROW_MAX:
        return GROW_MAX
    if f < SHRINK_MIN:
        return SHRINK_MIN
    return f


cdef class _Field:
    """Holds a callback and a C buffer for Gamma^k_ij."""
    cdef object fn
    cdef int n
    cdef double *G
    cdef cnp.ndarray xbuf

    def __cinit__(self, fn, int n):
        self.fn = fn
        self.n = n
        self.G = <double *> malloc(n * n * n * sizeof(double))
        self.xbuf = np.empty(n)

    def __dealloc__(self):
        free(self.G)

    cdef void load(self, double *x) except *:
        cdef int k
        cdef double[::1] xb = self.xbuf
        cdef double[::1] g
        for k in range(self.n):
            xb[k] = x[k]
        arr = np.ascontiguousarray(self.fn(self.xbuf.copy()), dtype=np.float64).ravel()
        g = arr
        for k in range(self.n * self.n * self.n):
            self.G[k] = g[k]


# ---------------------------------------------------------------------------
# geodesics


cdef void _geo_rhs(_Field field, int n, double *x, double *v,
                   double *dx, double *dv) except *:
    cdef int k, i, j
    cdef double acc
    for k in range(n):
        dx[k] = v[k]
        dv[k] = 0.0
    if field is None:
        return
    field.load(x)
    for k in range(n):
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += field.G[(k * n + i) * n + j] * v[i] * v[j]
        dv[k] = -acc


cdef void _geo_rk4(_Field field, int n, double *x, double *v, double h,
                   double *xo, double *vo, double *work) except *:
    # work holds 8n doubles for stage derivatives and 2n for the probe state
    cdef double *k1x = work
    cdef double *k1v = work + n
    cdef double *k2x = work + 2 * n
    cdef double *k2v = work + 3 * n
    cdef double *k3x = work + 4 * n
    cdef double *k3v = work + 5 * n
    cdef double *k4x = work + 6 * n
    cdef double *k4v = work + 7 * n
    cdef double *px = work + 8 * n
    cdef double *pv = work + 9 * n
    cdef int k
    _geo_rhs(field, n, x, v, k1x, k1v)
    for k in range(n):
        px[k] = x[k] + 0.5 * h * k1x[k]
        pv[k] = v[k] + 0.5 * h * k1v[k]
    _geo_rhs(field, n, px, pv, k2x, k2v)
    for k in range(n):
        px[k] = x[k] + 0.5 * h * k2x[k]
        pv[k] = v[k] + 0.5 * h * k2v[k]
    _geo_rhs(field, n, px, pv, k3x, k3v)
    for k in range(n):
        px[k] = x[k] + h * k3x[k]
        pv[k] = v[k] + h * k3v[k]
    _geo_rhs(field, n, px, pv, k4x, k4v)
    for k in range(n):
        xo[k] = x[k] + h / 6.0 * (k1x[k] + 2 * k2x[k] + 2 * k3x[k] + k4x[k])
        vo[k] = v[k] + h / 6.0 * (k1v[k] + 2 * k2v[k] + 2 * k3v[k] + k4v[k])


cdef void _accel(_Field field, int n, double *x, double *v, double *a) except *:
    cdef int k, i, j
    cdef double acc
    field.load(x)
    for k in range(n):
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += field.G[(k * n + i) * n + j] * v[i] * v[j]
        a[k] = -acc


cdef double _hermite_residual(_Field field, int n, double *x0, double *v0,
                              double *x1, double *v1, double h,
                              double *xm, double *vm) except *:
    # quintic Hermite through (x, v, Gamma-implied acceleration) at both ends;
    # xm/vm must have room for 2n doubles each (the tail holds a0/a1)
    cdef int k, i, j
    cdef double r, acc, worst = 0.0
    cdef double *a0 = xm + n
    cdef double *a1 = vm + n
    if field is None:
        for k in range(n):
            r = fabs(1.5 * (v1[k] - v0[k]) / h)
            if r > worst:
                worst = r
        return worst
    _accel(field, n, x0, v0, a0)
    _accel(field, n, x1, v1, a1)
    for k in range(n):
        xm[k] = (0.5 * (x0[k] + x1[k]) + 5.0 * h * (v0[k] - v1[k]) / 32.0
                 + h * h * (a0[k] + a1[k]) / 64.0)
        vm[k] = (15.0 * (x1[k] - x0[k]) / (8.0 * h) - 7.0 * (v0[k] + v1[k]) / 16.0
                 + h * (a1[k] - a0[k]) / 32.0)
    field.load(xm)
    for k in range(n):
        acc = 0.0
        for i in range(n):
            for j in range(n):
                acc += field.G[(k * n + i) * n + j] * vm[i] * vm[j]
        r = fabs(1.5 * (v1[k] - v0[k]) / h - 0.25 * (a0[k] + a1[k]) + acc)
        if r > worst:
            worst = r
    return worst


def geodesic_run(gamma, x, v, double s, double s_end, double atol, double rtol,
                 double max_step, double h, lower, period, dist,
                 double boundary_eps, long sample_every, long max_steps):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.array(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] va = np.array(v, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lo = np.asarray(lower, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] per = np.asarray(period, dtype=np.float64)
    cdef int n = xa.shape[0]
    cdef _Field field = None if gamma is None else _Field(gamma, n)
    cdef double *buf = <double *> malloc(24 * n * sizeof(double))
    cdef double *X = buf
    cdef double *V = buf + n
    cdef double *x1 = buf + 2 * n
    cdef double *v1 = buf + 3 * n
    cdef double *xh = buf + 4 * n
    cdef double *vh = buf + 5 * n
    cdef double *x2 = buf + 6 * n
    cdef double *v2 = buf + 7 * n
    cdef double *xm = buf + 8 * n
    cdef double *vm = buf + 10 * n
    cdef double *work = buf + 12 * n
    cdef int k
    cdef long steps = 0, since_sample = 0
    cdef int status = REACHED
    cdef double speed, hmax, d, ratio, e, sc, resid = 0.0, r
    samples = []
    for k in range(n):
        X[k] = xa[k]
        V[k] = va[k]
    try:
        while s < s_end:
            if steps >= max_steps:
                status = MAX_STEPS
                break
            speed = 0.0
            for k in range(n):
                speed += V[k] * V[k]
            speed = sqrt(speed)
            hmax = max_step / speed if speed > 0.0 else s_end - s
            if dist is not None:
                for k in range(n):
                    xa[k] = X[k]
                d = float(dist(xa.copy()))
                if d < boundary_eps:
                    status = BOUNDARY
                    break
                if speed > 0.0 and 0.5 * d / speed < hmax:
                    hmax = 0.5 * d / speed
            if hmax < h:
                h = hmax
            if s_end - s < h:
                h = s_end - s
            _geo_rk4(field, n, X, V, h, x1, v1, work)
            _geo_rk4(field, n, X, V, 0.5 * h, xh, vh, work)
            _geo_rk4(field, n, xh, vh, 0.5 * h, x2, v2, work)
            ratio = 0.0
            for k in range(n):
                e = max(fabs(x2[k] - x1[k]) - NOISE * max(fabs(X[k]), fabs(x2[k])), 0.0) / 15.0
                sc = atol + rtol * max(fabs(X[k]), fabs(x2[k]))
                if e / sc > ratio:
                    ratio = e / sc
                e = max(fabs(v2[k] - v1[k]) - NOISE * max(fabs(V[k]), fabs(v2[k])), 0.0) / 15.0
                sc = atol + rtol * max(fabs(V[k]), fabs(v2[k]))
                if e / sc > ratio:
                    ratio = e / sc
            ratio = ratio / h
            if ratio <= 1.0:
                for k in range(n):
                    x2[k] = x2[k] + (x2[k] - x1[k]) / 15.0
                    v2[k] = v2[k] + (v2[k] - v1[k]) / 15.0
                r = _hermite_residual(field, n, X, V, x2, v2, h, xm, vm)
                if r > resid:
                    resid = r
                s = s + h
                for k in range(n):
                    if per[k] > 0.0:
                        e = fmod(x2[k] - lo[k], per[k])
                        if e < 0.0:
                            e = e + per[k]
                        X[k] = lo[k] + e
                    else:
                        X[k] = x2[k]
                    V[k] = v2[k]
                steps += 1
                since_sample += 1
                if since_sample >= sample_every:
                    samples.append((s, _copy(X, n), _copy(V, n)))
                    since_sample = 0
                h = h * _step_factor(ratio)
            else:
                h = h * _step_factor(ratio)
                if h < MIN_STEP:
                    status = UNDERFLOW
                    break
        if since_sample:
            samples.append((s, _copy(X, n), _copy(V, n)))
        return _copy(X, n), _copy(V, n), s, h, status, samples, resid, steps
    finally:
        free(buf)


cdef object _copy(double *a, int n):
    out = np.empty(n)
    cdef double[::1] o = out
    cdef int k
    for k in range(n):
        o[k] = a[k]
    return out


# ---------------------------------------------------------------------------
# parallel transport


cdef double _coefficient(_Field field, path, vel, double s, int n, double *A) except -1:
    """Fill A = -Gamma(c(s))(c'(s), .) and return |c'(s)|."""
    cdef double[::1] c = np.ascontiguousarray(path(s), dtype=np.float64)
    cdef double[::1] dc = np.ascontiguousarray(vel(s), dtype=np.float64)
    cdef int k, i, j
    cdef double acc, speed = 0.0
    cdef double *cx = <double *> malloc(n * sizeof(double))
    for k in range(n):
        cx[k] = c[k]
        speed += dc[k] * dc[k]
    try:
        field.load(cx)
    finally:
        free(cx)
    for k in range(n):
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += field.G[(k * n + i) * n + j] * dc[i]
            A[k * n + j] = -acc
    return sqrt(speed)


cdef inline void _matmul_axpy(int n, int m, double *A, double *w, double *k,
                              double c, double *dst, double *tmp) noexcept:
    """dst = A @ (w + c * k)."""
    cdef int i, j, l
    cdef double acc
    for i in range(n * m):
        tmp[i] = w[i] + c * k[i]
    for i in range(n):
        for l in range(m):
            acc = 0.0
            for j in range(n):
                acc += A[i * n + j] * tmp[j * m + l]
            dst[i * m + l] = acc


def transport_run(gamma, path, vel, w, double s0, double s1, double atol,
                  double rtol, double max_step, double h, long max_steps):
    wa = np.array(w, dtype=np.float64)
    if gamma is None:
        return wa, h, REACHED, 0
    if wa.ndim == 1:
        wa = wa[:, None]
        flat = True
    else:
        flat = False
    wa = np.ascontiguousarray(wa)
    cdef int n = wa.shape[0]
    cdef int m = wa.shape[1]
    cdef int nm = n * m
    cdef _Field field = _Field(gamma, n)
    cdef double *buf = <double *> malloc((5 * n * n + 10 * nm) * sizeof(double))
    cdef double *A0 = buf
    cdef double *Aq = buf + n * n
    cdef double *Ah = buf + 2 * n * n
    cdef double *A3 = buf + 3 * n * n
    cdef double *A1 = buf + 4 * n * n
    cdef double *W = buf + 5 * n * n
    cdef double *k1 = W + nm
    cdef double *k2 = W + 2 * nm
    cdef double *k3 = W + 3 * nm
    cdef double *k4 = W + 4 * nm
    cdef double *wf = W + 5 * nm
    cdef double *wm = W + 6 * nm
    cdef double *wh = W + 7 * nm
    cdef double *tmp = W + 8 * nm
    cdef double *zero = W + 9 * nm
    cdef double[:, ::1] wv = wa
    cdef double s = s0, speed, speed1, hmax, g, ratio, e, sc
    cdef long steps = 0
    cdef int status = REACHED
    cdef int i, j
    try:
        for i in range(n):
            for j in range(m):
                W[i * m + j] = wv[i, j]
        for i in range(nm):
            zero[i] = 0.0
        speed = _coefficient(field, path, vel, s, n, A0)
        while s < s1:
            if steps >= max_steps:
                status = MAX_STEPS
                break
            hmax = max_step / speed if speed > 0.0 else s1 - s
            if hmax < h:
                h = hmax
            if s1 - s < h:
                h = s1 - s
            _coefficient(field, path, vel, s + 0.25 * h, n, Aq)
            _coefficient(field, path, vel, s + 0.5 * h, n, Ah)
            _coefficient(field, path, vel, s + 0.75 * h, n, A3)
            speed1 = _coefficient(field, path, vel, s + h, n, A1)
            # full step
            _matmul_axpy(n, m, A0, W, zero, 0.0, k1, tmp)
            _matmul_axpy(n, m, Ah, W, k1, 0.5 * h, k2, tmp)
            _matmul_axpy(n, m, Ah, W, k2, 0.5 * h, k3, tmp)
            _matmul_axpy(n, m, A1, W, k3, h, k4, tmp)
            for i in range(nm):
                wf[i] = W[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            # two half steps
            g = 0.5 * h
            _matmul_axpy(n, m, Aq, W, k1, 0.5 * g, k2, tmp)
            _matmul_axpy(n, m, Aq, W, k2, 0.5 * g, k3, tmp)
            _matmul_axpy(n, m, Ah, W, k3, g, k4, tmp)
            for i in range(nm):
                wm[i] = W[i] + g / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            _matmul_axpy(n, m, Ah, wm, zero, 0.0, k1, tmp)
            _matmul_axpy(n, m, A3, wm, k1, 0.5 * g, k2, tmp)
            _matmul_axpy(n, m, A3, wm, k2, 0.5 * g, k3, tmp)
            _matmul_axpy(n, m, A1, wm, k3, g, k4, tmp)
            for i in range(nm):
                wh[i] = wm[i] + g / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            ratio = 0.0
            for i in range(nm):
                e = max(fabs(wh[i] - wf[i]) - NOISE * max(fabs(W[i]), fabs(wh[i])), 0.0) / 15.0
                sc = atol + rtol * max(fabs(W[i]), fabs(wh[i]))
                if e / sc > ratio:
                    ratio = e / sc
            ratio = ratio / h
            if ratio <= 1.0:
                for i in range(nm):
                    W[i] = wh[i] + (wh[i] - wf[i]) / 15.0
                s = s + h
                for i in range(n * n):
                    A0[i] = A1[i]
                speed = speed1
                steps += 1
            h = h * _step_factor(ratio)
            if ratio > 1.0 and h < MIN_STEP:
                status = UNDERFLOW
                break
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                out[i, j] = W[i * m + j]
        if flat:
            out = out[:, 0]
        return out, h, status, steps
    finally:
        free(buf)


# ---------------------------------------------------------------------------
# curvature and Pfaffian


def frame_curvature(G, dG, F, Finv):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=5] dg = np.ascontiguousarray(dG, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] f = np.ascontiguousarray(F, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] fi = np.ascontiguousarray(Finv, dtype=np.float64)
    cdef Py_ssize_t N = g.shape[0]
    cdef int n = g.shape[1]
    pairs = bivector_pairs(n)
    cdef int P = len(pairs)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] pi = np.array([ij[0] for ij in pairs], dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] pj = np.array([ij[1] for ij in pairs], dtype=np.int32)
    out = np.zeros((N, n, n, P))
    cdef double[:, :, :, ::1] W = out
    cdef double *R = <double *> malloc(n * n * sizeof(double))
    cdef double *T = <double *> malloc(n * n * sizeof(double))
    cdef Py_ssize_t p
    cdef int q, i, j, l, k, m, a, b
    cdef double acc
    try:
        for p in range(N):
            for q in range(P):
                i = pi[q]
                j = pj[q]
                # R[l, k] = R^l_{k i j}
                for l in range(n):
                    for k in range(n):
                        acc = dg[p, i, l, j, k] - dg[p, j, l, i, k]
                        for m in range(n):
                            acc += g[p, l, i, m] * g[p, m, j, k] - g[p, l, j, m] * g[p, m, i, k]
                        R[l * n + k] = acc
                # T = R @ F
                for l in range(n):
                    for b in range(n):
                        acc = 0.0
                        for k in range(n):
                            acc += R[l * n + k] * f[p, k, b]
                        T[l * n + b] = acc
                for a in range(n):
                    for b in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc += fi[p, a, l] * T[l * n + b]
                        W[p, a, b, q] = acc
        return out
    finally:
        free(R)
        free(T)


def pfaffian_top(W):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t N = w.shape[0]
    cdef int n = w.shape[1]
    cdef int half = n // 2
    rows = pfaffian_tables(n)
    cdef int R = len(rows)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] idx = np.zeros((max(R, 1), 3 * half + 1), dtype=np.int32)
    cdef int r, t
    for r, (sign, frame_pairs, qs) in enumerate(rows):
        idx[r, 0] = sign
        for t in range(half):
            idx[r, 1 + 3 * t] = frame_pairs[t][0]
            idx[r, 2 + 3 * t] = frame_pairs[t][1]
            idx[r, 3 + 3 * t] = qs[t]
    out = np.zeros(N)
    cdef double[::1] o = out
    cdef Py_ssize_t p
    cdef double total, term
    for p in range(N):
        total = 0.0
        for r in range(R):
            term = 1.0
            for t in range(half):
                term = term * w[p, idx[r, 1 + 3 * t], idx[r, 2 + 3 * t], idx[r, 3 + 3 * t]]
            total += idx[r, 0] * term
        o[p] = total
    return out


cdef double _pairwise(double[::1] a, Py_ssize_t lo, Py_ssize_t hi) noexcept:
    cdef double total
    cdef Py_ssize_t k, mid
    if hi - lo <= 8:
        total = 0.0
        for k in range(lo, hi):
            total += a[k]
        return total
    mid = lo + (hi - lo) // 2
    return _pairwise(a, lo, mid) + _pairwise(a, mid, hi)


def pairwise_sum(a):
    cdef double[::1] arr = np.ascontiguousarray(a, dtype=np.float64).ravel()
    return _pairwise(arr, 0, arr.shape[0])
