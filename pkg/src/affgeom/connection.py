"""Metric and Christoffel fields on a chart atlas.

Index conventions used throughout the package:

* ``metric.g(c, x)[..., i, j]``        g_ij
* ``metric.dg(c, x)[..., m, i, j]``    d_m g_ij
* ``metric.d2g(c, x)[..., m, p, i, j]`` d_m d_p g_ij
* ``conn.gamma(c, x)[..., k, i, j]``   Gamma^k_ij, so that
  nabla_{d_i} d_j = Gamma^k_ij d_k
* ``conn.dgamma(c, x)[..., m, k, i, j]`` d_m Gamma^k_ij

All evaluators are vectorized over leading axes of ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from affgeom.atlas.charts import Atlas, AtlasError

DEFAULT_FD_STEP = 1e-5
# derivative of a Christoffel field that is itself finite-differenced
NESTED_FD_STEP = 1e-4
# fourth-order second differences of the metric
SECOND_FD_STEP = 1e-3
MAX_CONDITION = 1e12


class SingularMetricError(ValueError):
    pass


def central_difference(fn, x, step):
    """Stack d_m fn(x) for every coordinate m at axis ``x.ndim - 1``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    parts = []
    for m in range(n):
        e = np.zeros(n)
        e[m] = step
        parts.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * step))
    return np.stack(parts, axis=x.ndim - 1)


def second_difference(fn, x, step):
    """Fourth-order d_m d_p fn(x), stacked at axes ``x.ndim - 1`` and ``x.ndim``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    f0 = np.asarray(fn(x))
    out = np.empty(x.shape[:-1] + (n, n) + f0.shape[x.ndim - 1:])
    lead = (slice(None),) * (x.ndim - 1)
    eye = np.eye(n) * step

    def d1(y, m):
        e = eye[m]
        return (-np.asarray(fn(y + 2 * e)) + 8 * np.asarray(fn(y + e))
                - 8 * np.asarray(fn(y - e)) + np.asarray(fn(y - 2 * e))) / (12.0 * step)

    for m in range(n):
        e = eye[m]
        out[lead + (m, m)] = (-np.asarray(fn(x + 2 * e)) + 16 * np.asarray(fn(x + e)) - 30 * f0
                              + 16 * np.asarray(fn(x - e)) - np.asarray(fn(x - 2 * e))) / (12.0 * step * step)
        for p in range(m):
            e = eye[p]
            val = (-d1(x + 2 * e, m) + 8 * d1(x + e, m) - 8 * d1(x - e, m) + d1(x - 2 * e, m)) / (12.0 * step)
            out[lead + (m, p)] = val
            out[lead + (p, m)] = val
    return out


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True, eq=False)
class MetricEval:
    """One chart's metric: ``g`` plus optional analytic derivatives."""

    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray] | None = None
    d2g: Callable[[np.ndarray], np.ndarray] | None = None
    expressions: tuple | None = None


@dataclass(frozen=True, eq=False)
class MetricField:
    atlas: Atlas
    charts: Mapping[str, MetricEval]
    provenance: tuple = ("analytic",)
    label: str = "g"

    def __post_init__(self):
        for cid in self.charts:
            self.atlas.chart(cid)

    def _eval(self, chart) -> MetricEval:
        try:
            return self.charts[chart]
        except KeyError:
            raise AtlasError(f"metric {self.label!r} is not defined on chart {chart!r}") from None

    def g(self, chart, x) -> np.ndarray:
        return np.asarray(self._eval(chart).g(np.asarray(x, dtype=float)), dtype=float)

    def has_analytic(self, chart, order: int = 1) -> bool:
        ev = self._eval(chart)
        return ev.dg is not None and (order < 2 or ev.d2g is not None)

    def dg(self, chart, x, step: float | None = None) -> np.ndarray:
        ev = self._eval(chart)
        x = np.asarray(x, dtype=float)
        if step is None and ev.dg is not None:
            return np.asarray(ev.dg(x), dtype=float)
        return central_difference(ev.g, x, step or DEFAULT_FD_STEP)

    def d2g(self, chart, x, step: float | None = None) -> np.ndarray:
        ev = self._eval(chart)
        x = np.asarray(x, dtype=float)
        if step is None and ev.d2g is not None:
            return np.asarray(ev.d2g(x), dtype=float)
        if step is None:
            if ev.dg is not None:
                return central_difference(ev.dg, x, NESTED_FD_STEP)
            return second_difference(ev.g, x, SECOND_FD_STEP)
        return central_difference(lambda y: central_difference(ev.g, y, step), x, step)


def constant_metric_eval(matrix) -> MetricEval:
    G0 = np.array(matrix, dtype=float)
    n = G0.shape[0]

    def g(x):
        return np.broadcast_to(G0, np.shape(x)[:-1] + (n, n)).copy()

    return MetricEval(
        g=g,
        dg=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n)),
        d2g=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n, n)),
        expressions=tuple(tuple(repr(float(v)) for v in row) for row in G0),
    )


def conformal_metric_eval(base: MetricEval, factor, dfactor, d2factor) -> MetricEval:
    """``phi * base`` from phi, its gradient (..., n) and Hessian (..., n, n)."""
    if base.dg is None or base.d2g is None:
        raise ValueError("conformal rescaling needs a base metric with analytic derivatives")

    def g(x):
        return factor(x)[..., None, None] * base.g(x)

    def dg(x):
        f, df = factor(x), dfactor(x)
        return df[..., :, None, None] * base.g(x)[..., None, :, :] + f[..., None, None, None] * base.dg(x)

    def d2g(x):
        f, df, ddf = factor(x), dfactor(x), d2factor(x)
        g0, dg0 = base.g(x), base.dg(x)
        return (
            ddf[..., :, :, None, None] * g0[..., None, None, :, :]
            + df[..., :, None, None, None] * dg0[..., None, :, :, :]
            + df[..., None, :, None, None] * dg0[..., :, None, :, :]
            + f[..., None, None, None, None] * base.d2g(x)
        )

    return MetricEval(g=g, dg=dg, d2g=d2g)


def metric_interpolate(g: MetricField, h: MetricField, t: float) -> MetricField:
    """Pointwise ``t*g + (1-t)*h``; derivatives combine the same way."""
    if g.atlas is not h.atlas:
        raise AtlasError("metric_interpolate: metrics live on different atlases")
    if set(g.charts) != set(h.charts):
        raise AtlasError("metric_interpolate: metrics are defined on different charts")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter must lie in [0, 1], got {t}")
    charts = {}
    for cid in g.charts:
        eg, eh = g.charts[cid], h.charts[cid]

        def mix(a, b):
            if a is None or b is None:
                return None
            return lambda x, a=a, b=b: t * np.asarray(a(x)) + (1.0 - t) * np.asarray(b(x))

        charts[cid] = MetricEval(g=mix(eg.g, eh.g), dg=mix(eg.dg, eh.dg), d2g=mix(eg.d2g, eh.d2g))
    return MetricField(g.atlas, charts, provenance=("interpolated", t, g, h), label=f"{g.label}({t})")


# --------------------------------------------------------------------------
# connections


@dataclass(frozen=True, eq=False)
class ChristoffelEval:
    gamma: Callable[[np.ndarray], np.ndarray]
    dgamma: Callable[[np.ndarray], np.ndarray] | None = None
    zero: bool = False
    expressions: tuple | None = None


@dataclass(frozen=True, eq=False)
class ChristoffelField:
    atlas: Atlas
    charts: Mapping[str, ChristoffelEval]
    symmetric: bool = True
    provenance: tuple = ("custom",)
    fd_step: float = NESTED_FD_STEP

    def _eval(self, chart) -> ChristoffelEval:
        try:
            return self.charts[chart]
        except KeyError:
            raise AtlasError(f"connection is not defined on chart {chart!r}") from None

    @property
    def kind(self) -> str:
        return self.provenance[0]

    def gamma(self, chart, x) -> np.ndarray:
        return np.asarray(self._eval(chart).gamma(np.asarray(x, dtype=float)), dtype=float)

    def dgamma(self, chart, x, step: float | None = None) -> np.ndarray:
        ev = self._eval(chart)
        x = np.asarray(x, dtype=float)
        if step is None and ev.dgamma is not None:
            return np.asarray(ev.dgamma(x), dtype=float)
        return central_difference(ev.gamma, x, step or self.fd_step)

    def is_zero(self, chart) -> bool:
        return self._eval(chart).zero

    def callback(self, chart):
        """Single-point evaluator for the integration kernels (None if zero)."""
        ev = self._eval(chart)
        if ev.zero:
            return None
        return ev.gamma


def _zero_eval(n: int) -> ChristoffelEval:
    return ChristoffelEval(
        gamma=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n)),
        dgamma=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n, n)),
        zero=True,
        expressions=tuple(tuple(("0",) * n for _ in range(n)) for _ in range(n)),
    )


def flat_connection(atlas: Atlas) -> ChristoffelField:
    """The connection that makes every affine coordinate frame parallel."""
    bad = [c.id for c in atlas.charts.values() if c.coordinate_kind != "affine"]
    if bad:
        raise AtlasError(f"atlas {atlas.name!r} has non-affine charts {bad}")
    for t in atlas.transitions.values():
        if not t.affine:
            raise AtlasError(f"transition {t.name!r} is not affine")
    n = atlas.dim
    return ChristoffelField(atlas, {cid: _zero_eval(n) for cid in atlas.charts}, True, ("flat_affine",))


def _check_conditioning(G):
    cond = np.linalg.cond(G)
    if not np.all(np.isfinite(cond)) or np.any(cond > MAX_CONDITION):
        worst = float(np.nanmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise SingularMetricError(f"metric condition number {worst:.3g} exceeds {MAX_CONDITION:.0e}")


def _christoffel_from(G, dG):
    # Gamma_{l,ij} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    first = 0.5 * (
        np.einsum("...ijl->...lij", dG)
        + np.einsum("...jil->...lij", dG)
        - dG
    )
    n = G.shape[-1]
    flat = first.reshape(first.shape[:-2] + (n * n,))
    return np.linalg.solve(G, flat).reshape(first.shape)


def _christoffel_derivative(G, dG, d2G, Gam):
    # d_m Gamma^k_ij = g^{kl} (d_m Gamma_{l,ij} - d_m g_la Gamma^a_ij)
    dfirst = 0.5 * (
        np.einsum("...mijl->...mlij", d2G)
        + np.einsum("...mjil->...mlij", d2G)
        - d2G
    )
    corr = np.einsum("...mla,...aij->...mlij", dG, Gam)
    rhs = dfirst - corr
    n = G.shape[-1]
    flat = rhs.reshape(rhs.shape[:-3] + (n, n * n))
    Gm = np.broadcast_to(G[..., None, :, :], G.shape[:-2] + (n, n, n))
    return np.linalg.solve(Gm, flat).reshape(rhs.shape)


def _metric_second_fd(metric, cid, x, use_dg):
    ev = metric.charts[cid]
    if use_dg and ev.dg is not None:
        return central_difference(ev.dg, x, NESTED_FD_STEP)
    return second_difference(ev.g, x, SECOND_FD_STEP)


def levi_civita(metric: MetricField, differentiation: str = "auto", step: float = DEFAULT_FD_STEP) -> ChristoffelField:
    """Torsion-free metric connection of ``metric``.

    ``differentiation`` is ``"analytic"`` (requires derivative callables),
    ``"finite_difference"`` (central differences with ``step``), or
    ``"auto"`` (analytic where available).
    """
    if differentiation not in ("auto", "analytic", "finite_difference"):
        raise ValueError(f"unknown differentiation mode {differentiation!r}")
    charts = {}
    for cid in metric.charts:
        analytic1 = differentiation != "finite_difference" and metric.has_analytic(cid, 1)
        analytic2 = differentiation != "finite_difference" and metric.has_analytic(cid, 2)
        if differentiation == "analytic" and not analytic1:
            raise ValueError(f"metric {metric.label!r} has no analytic derivatives on chart {cid!r}")
        dstep = None if analytic1 else step

        def gamma(x, cid=cid, dstep=dstep):
            G = metric.g(cid, x)
            _check_conditioning(G)
            return _christoffel_from(G, metric.dg(cid, x, dstep))

        # without analytic second derivatives only g is differenced; the
        # inverse metric stays exact, which matters where g degenerates
        def dgamma(x, cid=cid, dstep=dstep, analytic2=analytic2):
            G = metric.g(cid, x)
            _check_conditioning(G)
            dG = metric.dg(cid, x, dstep)
            Gam = _christoffel_from(G, dG)
            d2G = metric.d2g(cid, x) if analytic2 else _metric_second_fd(metric, cid, x, dstep is None)
            return _christoffel_derivative(G, dG, d2G, Gam)

        charts[cid] = ChristoffelEval(gamma=gamma, dgamma=dgamma)
    return ChristoffelField(metric.atlas, charts, True, ("levi_civita", metric))


def convex_combine(nabla: ChristoffelField, d: ChristoffelField, t: float) -> ChristoffelField:
    """``(1-t)*nabla + t*d``, pointwise on Christoffel symbols."""
    if nabla.atlas is not d.atlas or set(nabla.charts) != set(d.charts):
        raise AtlasError("convex_combine: connections live on different atlases")
    if not (nabla.symmetric and d.symmetric):
        raise ValueError("convex_combine: both connections must be symmetric")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"combination parameter must lie in [0, 1], got {t}")
    charts = {}
    for cid in nabla.charts:
        a, b = nabla.charts[cid], d.charts[cid]
        if (a.zero or t == 1.0) and (b.zero or t == 0.0):
            charts[cid] = _zero_eval(nabla.atlas.dim)
            continue

        def gamma(x, a=a, b=b):
            return (1.0 - t) * a.gamma(x) + t * b.gamma(x)

        def dgamma(x, cid=cid):
            return (1.0 - t) * nabla.dgamma(cid, x) + t * d.dgamma(cid, x)

        charts[cid] = ChristoffelEval(gamma=gamma, dgamma=dgamma)
    return ChristoffelField(nabla.atlas, charts, True, ("convex_combination", t, nabla, d))


@dataclass
class CompatibilityReport:
    max_defect: float
    chart: str | None
    point: np.ndarray | None
    samples: int = 0
    per_chart: dict = field(default_factory=dict)


def compatibility_defect(conn: ChristoffelField, metric: MetricField, chart, x, step=None) -> np.ndarray:
    """max_ij,k |d_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il| at each point."""
    G = metric.g(chart, x)
    dG = metric.dg(chart, x, step)
    Gam = conn.gamma(chart, x)
    defect = dG - np.einsum("...lki,...lj->...kij", Gam, G) - np.einsum("...lkj,...il->...kij", Gam, G)
    return np.max(np.abs(defect), axis=(-3, -2, -1))


def check_locally_metric(conn: ChristoffelField, metric: MetricField, samples: int = 1000,
                         seed: int = 0, points: dict | None = None, step=None) -> CompatibilityReport:
    """Largest metric-compatibility defect of ``conn`` against ``metric``."""
    if conn.atlas is not metric.atlas:
        raise AtlasError("check_locally_metric: connection and metric live on different atlases")
    if points is None:
        points = metric.atlas.sample_points(np.random.default_rng(seed), samples)
    report = CompatibilityReport(0.0, None, None)
    for cid, pts in points.items():
        if cid not in metric.charts or cid not in conn.charts:
            continue
        d = compatibility_defect(conn, metric, cid, pts, step)
        k = int(np.argmax(d))
        report.per_chart[cid] = float(d[k])
        report.samples += len(d)
        if d[k] >= report.max_defect:
            report.max_defect, report.chart, report.point = float(d[k]), cid, np.asarray(pts[k])
    return report


def riemann_tensor(conn: ChristoffelField, chart, x, step=None) -> np.ndarray:
    """Coordinate curvature ``R[..., l, k, i, j]`` with R(d_i, d_j) d_k = R^l_kij d_l."""
    G = conn.gamma(chart, x)
    dG = conn.dgamma(chart, x, step)
    return (
        np.einsum("...iljk->...lkij", dG)
        - np.einsum("...jlik->...lkij", dG)
        + np.einsum("...lim,...mjk->...lkij", G, G)
        - np.einsum("...ljm,...mik->...lkij", G, G)
    )
