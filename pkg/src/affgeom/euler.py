"""Orthonormal frames, Cartan forms, the Pfaffian Euler form and its integral.

Conventions. A frame ``F`` has the frame vectors e_a as columns in the
coordinate basis. Connection forms are ``theta[..., a, b, i]``, the
coefficient of dx^i in theta_ab, with nabla e_b = theta_ab e_a. Curvature
forms are ``omega[..., a, b, q]``, the coefficient of dx^i ^ dx^j in
Omega_ab for the q-th pair (i, j), i < j, in lexicographic order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from affgeom import _kernels
from affgeom.atlas.catalog import ChartedManifold
from affgeom.atlas.cover import QuadratureCover
from affgeom.connection import (
    ChristoffelField,
    MetricField,
    central_difference,
    compatibility_defect,
    levi_civita,
    metric_interpolate,
    riemann_tensor,
)

COMPATIBILITY_TOL = 1e-6
SKEW_TOL = 1e-6
CARTAN_FD_STEP = 1e-4
DEFAULT_T_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
NORMALIZATIONS = ("raw", "chern_gauss_bonnet")


class MetricNotPositiveError(ValueError):
    pass


class OddDimensionError(ValueError):
    pass


def _require_even(n: int) -> None:
    if n % 2:
        raise OddDimensionError(f"Euler form needs even dimension; got n = {n} (the Euler class vanishes)")


def bivector_pairs(n: int) -> list[tuple[int, int]]:
    return list(combinations(range(n), 2))


# --------------------------------------------------------------------------
# frames and forms


def orthonormal_frame(metric: MetricField, chart, x, order=None) -> np.ndarray:
    """Gram-Schmidt of the coordinate basis (in ``order``), flipped to positive orientation.

    Vectorized over leading axes of ``x``; returns ``F[..., :, a]`` = e_a.
    """
    G = metric.g(chart, x)
    n = G.shape[-1]
    perm = np.arange(n) if order is None else np.asarray(order)
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError(f"order must be a permutation of 0..{n - 1}")
    Gp = G[..., perm[:, None], perm[None, :]]
    try:
        L = np.linalg.cholesky(Gp)
    except np.linalg.LinAlgError:
        raise MetricNotPositiveError(f"metric is not positive definite on chart {chart!r}") from None
    # Gram-Schmidt of e_1..e_n is the upper triangular inverse of L^T
    Fp = np.linalg.inv(np.swapaxes(L, -1, -2))
    F = np.empty_like(Fp)
    F[..., perm, :] = Fp
    neg = np.linalg.det(F) < 0
    if np.any(neg):
        F[neg, :, -1] *= -1.0
    return F


@dataclass(eq=False)
class ConnectionForms:
    theta: np.ndarray

    def skew_defect(self) -> float:
        return float(np.max(np.abs(self.theta + np.swapaxes(self.theta, -2, -3))))


@dataclass(eq=False)
class CurvatureMatrix:
    omega: np.ndarray

    @property
    def dim(self) -> int:
        return self.omega.shape[-2]

    def skew_defect(self) -> float:
        return float(np.max(np.abs(self.omega + np.swapaxes(self.omega, -2, -3))))

    def as_tensor(self) -> np.ndarray:
        """Dense ``[..., a, b, i, j]`` array, antisymmetric in (i, j)."""
        n = self.dim
        out = np.zeros(self.omega.shape[:-1] + (n, n))
        for q, (i, j) in enumerate(bivector_pairs(n)):
            out[..., i, j] = self.omega[..., q]
            out[..., j, i] = -self.omega[..., q]
        return out


def _frame_derivative(metric, chart, x, order, step=None):
    """d_i F stacked as [..., i, :, a], from the derivative of the Cholesky factor.

    With G = L L^T, dL = L Phi(L^-1 dG L^-T) where Phi keeps the strict lower
    triangle and half the diagonal; F = L^-T so dF = -F dL^T F.
    """
    x = np.asarray(x, dtype=float)
    G = metric.g(chart, x)
    dG = metric.dg(chart, x, step)
    n = G.shape[-1]
    perm = np.arange(n) if order is None else np.asarray(order)
    Gp = G[..., perm[:, None], perm[None, :]]
    dGp = dG[..., perm[:, None], perm[None, :]]
    L0 = np.linalg.cholesky(Gp)
    L = L0[..., None, :, :]
    Linv = np.linalg.inv(L)
    inner = Linv @ dGp @ np.swapaxes(Linv, -1, -2)
    dL = L @ (np.tril(inner, -1) + 0.5 * inner * np.eye(n))
    Fp = np.swapaxes(Linv, -1, -2)
    dFp = -Fp @ np.swapaxes(dL, -1, -2) @ Fp
    dF = np.empty_like(dFp)
    dF[..., perm, :] = dFp
    F0 = np.empty_like(L0)
    F0[..., perm, :] = np.linalg.inv(np.swapaxes(L0, -1, -2))
    # same orientation correction as orthonormal_frame
    flip = (np.linalg.det(F0) < 0)[..., None, None]
    dF[..., -1] = np.where(flip, -dF[..., -1], dF[..., -1])
    return dF


def _theta_matrices(conn, metric, chart, x, order, step):
    """theta_i = F^-1 (d_i F + Gamma_i F), stacked as [..., i, a, b]."""
    x = np.asarray(x, dtype=float)
    F = orthonormal_frame(metric, chart, x, order)
    dF = _frame_derivative(metric, chart, x, order, step)  # [..., i, :, a]
    Gam = conn.gamma(chart, x)  # [..., l, i, k]
    GF = np.einsum("...lik,...kb->...ilb", Gam, F)
    Finv = np.linalg.inv(F)
    return np.einsum("...al,...ilb->...iab", Finv, dF + GF)


def connection_forms(conn: ChristoffelField, metric: MetricField, chart, x, order=None,
                     step: float | None = None) -> ConnectionForms:
    """theta_ab in the orthonormal frame of ``metric``.

    The frame derivative uses the metric's analytic derivatives unless
    ``step`` forces central differences.
    """
    th = _theta_matrices(conn, metric, chart, x, order, step)
    return ConnectionForms(np.moveaxis(th, -3, -1))


def _check_pair(conn: ChristoffelField, metric: MetricField, chart, x) -> None:
    if conn.kind == "levi_civita" and conn.provenance[1] is metric:
        return
    defect = float(np.max(compatibility_defect(conn, metric, chart, x)))
    if not defect <= COMPATIBILITY_TOL:
        raise ValueError(f"connection is not compatible with metric {metric.label!r} "
                         f"(defect {defect:.3g} > {COMPATIBILITY_TOL:.0e})")


def curvature_forms(conn: ChristoffelField, metric: MetricField, chart, x, step=None,
                    order=None, check: bool = True) -> CurvatureMatrix:
    """Omega_ab from the coordinate Riemann tensor, converted to the orthonormal frame.

    ``step`` forces central differences of Gamma with that step;
    otherwise analytic derivatives are used where the field provides them.
    """
    x = np.asarray(x, dtype=float)
    if check:
        _check_pair(conn, metric, chart, x)
    batch = x.shape[:-1]
    n = x.shape[-1]
    pts = x.reshape(-1, n)
    G = conn.gamma(chart, pts)
    dG = conn.dgamma(chart, pts, step)
    F = orthonormal_frame(metric, chart, pts, order)
    W = _kernels.backend().frame_curvature(
        np.ascontiguousarray(G), np.ascontiguousarray(dG),
        np.ascontiguousarray(F), np.ascontiguousarray(np.linalg.inv(F)))
    W = np.asarray(W)
    if not np.all(np.isfinite(W)):
        raise FloatingPointError("curvature evaluation produced non-finite values")
    return CurvatureMatrix(W.reshape(batch + W.shape[1:]))


def curvature_forms_cartan(conn: ChristoffelField, metric: MetricField, chart, x, order=None,
                           step: float = CARTAN_FD_STEP, frame_step: float | None = None) -> CurvatureMatrix:
    """Omega = d theta + theta ^ theta with d theta by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    th = _theta_matrices(conn, metric, chart, x, order, frame_step)  # [..., i, a, b]
    dth = central_difference(lambda y: _theta_matrices(conn, metric, chart, y, order, frame_step), x, step)
    # dth[..., m, i, a, b] = d_m theta_i
    out = np.zeros(x.shape[:-1] + (n, n, len(bivector_pairs(n))))
    for q, (i, j) in enumerate(bivector_pairs(n)):
        out[..., q] = (dth[..., i, j, :, :] - dth[..., j, i, :, :]
                       + th[..., i, :, :] @ th[..., j, :, :] - th[..., j, :, :] @ th[..., i, :, :])
    return CurvatureMatrix(out)


def bianchi_defect(conn: ChristoffelField, chart, x, step=None) -> float:
    """max |R^l_kij + R^l_ijk + R^l_jki| (first Bianchi identity, torsion-free case)."""
    R = riemann_tensor(conn, chart, x, step)
    cyc = R + np.einsum("...lijk->...lkij", R) + np.einsum("...ljki->...lkij", R)
    return float(np.max(np.abs(cyc)))


# --------------------------------------------------------------------------
# Pfaffian


def pfaffian(omega: CurvatureMatrix) -> np.ndarray:
    """Coefficient of dx^1 ^ ... ^ dx^n in Pf(Omega)."""
    n = omega.dim
    _require_even(n)
    if omega.skew_defect() > SKEW_TOL:
        raise ValueError(f"curvature matrix is not skew (defect {omega.skew_defect():.3g})")
    W = omega.omega
    flat = np.ascontiguousarray(W.reshape((-1,) + W.shape[-3:]))
    return np.asarray(_kernels.backend().pfaffian_top(flat)).reshape(W.shape[:-3])


def pfaffian_matrix(A) -> float:
    """Pfaffian of a numeric skew matrix by expansion along the first row."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("pfaffian_matrix needs a square matrix")
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    total = 0.0
    for j in range(1, n):
        if A[0, j] == 0.0:
            continue
        keep = [k for k in range(1, n) if k != j]
        total += (-1) ** (j + 1) * A[0, j] * pfaffian_matrix(A[np.ix_(keep, keep)])
    return total


# --------------------------------------------------------------------------
# Euler form and its integral


@dataclass(eq=False)
class EulerFormValue:
    value: np.ndarray
    normalization: str


def euler_form_at(conn: ChristoffelField, metric: MetricField, chart, x,
                  normalization: str = "chern_gauss_bonnet", order=None, step=None,
                  check: bool = True) -> EulerFormValue:
    """Pf(Omega) in a positive orthonormal frame, optionally divided by (2 pi)^(n/2)."""
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    _require_even(n)
    if conn.is_zero(chart):
        if check:
            _check_pair(conn, metric, chart, x)
        val = np.zeros(x.shape[:-1])
    else:
        val = pfaffian(curvature_forms(conn, metric, chart, x, step, order, check))
    if normalization == "chern_gauss_bonnet":
        val = val / (2.0 * math.pi) ** (n // 2)
    return EulerFormValue(val, normalization)


def integrate_form(manifold: ChartedManifold, form, cover: QuadratureCover | None = None,
                   workers: int = 1) -> float:
    """Integral of an n-form given by ``form(chart, x)`` -> density on dx^1 ^ ... ^ dx^n."""
    _require_even(manifold.dim)
    cover = cover if cover is not None else manifold.cover
    if cover is None:
        raise ValueError(f"{manifold.key!r} has no quadrature cover")
    return cover.integrate(form, workers)


def euler_density(conn: ChristoffelField, metric: MetricField, normalization: str = "chern_gauss_bonnet"):
    """``form(chart, x)`` evaluator of the Euler form for :func:`integrate_form`."""
    def form(chart, x):
        return euler_form_at(conn, metric, chart, x, normalization).value
    return form


def euler_integral(manifold: ChartedManifold, conn: ChristoffelField | None = None,
                   metric: MetricField | None = None, cover: QuadratureCover | None = None,
                   normalization: str = "chern_gauss_bonnet", workers: int = 1) -> float:
    """Integral of the Euler form; defaults to the flat structure with its local metric, else Levi-Civita."""
    if conn is None:
        if manifold.affine is not None:
            conn, metric = manifold.affine, metric or manifold.local_metric
        else:
            metric = metric or manifold.metric
            if metric is None:
                raise ValueError(f"{manifold.key!r} carries neither a connection nor a metric")
            conn = levi_civita(metric)
    elif metric is None:
        if conn.kind != "levi_civita":
            raise ValueError("a metric compatible with the connection is required")
        metric = conn.provenance[1]
    return integrate_form(manifold, euler_density(conn, metric, normalization), cover, workers)


@dataclass
class DeformationReport:
    manifold: str
    t_grid: list
    integrals: list
    max_deviation: float
    grid: list

    def summary(self) -> dict:
        return {"manifold": self.manifold, "t_grid": self.t_grid, "integrals": self.integrals,
                "max_deviation": self.max_deviation, "grid": self.grid}


def euler_characteristic_experiment(manifold: ChartedManifold, g: MetricField, h: MetricField,
                                    t_grid=DEFAULT_T_GRID, cover: QuadratureCover | None = None,
                                    workers: int = 1) -> DeformationReport:
    """Integral of the normalized Euler form of Levi-Civita(t g + (1 - t) h) for each t."""
    if not manifold.compact:
        raise ValueError(f"{manifold.key!r} is not compact")
    _require_even(manifold.dim)
    cover = cover if cover is not None else manifold.cover
    ts = [float(t) for t in t_grid]
    if not ts:
        raise ValueError("t_grid is empty")
    values = []
    for t in ts:
        gt = metric_interpolate(g, h, t)
        values.append(euler_integral(manifold, levi_civita(gt), gt, cover, workers=workers))
    return DeformationReport(manifold.key, ts, values, float(max(values) - min(values)),
                             cover.resolution if cover is not None else [])
