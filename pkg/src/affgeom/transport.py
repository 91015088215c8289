"""Parallel transport, holonomy and geodesics on chart atlases.

Curves are lists of segments, each living in one chart with an explicit
path ``c(s)`` and velocity ``c'(s)``. A segment may end with a transition
into the chart of the next segment; vectors are pushed through the
transition jacobian there. Transport solves

    dw^k/ds = -Gamma^k_ij(c(s)) dc^i/ds w^j

and geodesics solve c''^k + Gamma^k_ij c'^i c'^j = 0, both with adaptive
step-doubling RK4 from the kernel backend.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from affgeom import _kernels
from affgeom._kernels._pykernels import MAX_STEPS, REACHED, UNDERFLOW
from affgeom.atlas.charts import Atlas, AtlasError, TransitionMap, compose
from affgeom.connection import ChristoffelEval, ChristoffelField, MetricField, convex_combine, riemann_tensor

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_MAX_STEP = 1e-2
BOUNDARY_EPSILON = 1e-9
# a transition is only taken if it lands at least this far inside the target
TRANSITION_COLLAR = 1e-3
JUNCTION_TOL = 1e-10


class TransportError(ValueError):
    """Curve leaves the atlas, or the integrator could not meet tolerance."""


# --------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class Segment:
    chart: str
    start: float
    end: float
    path: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]
    transition: TransitionMap | None = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"segment parameter interval ({self.start}, {self.end}) is empty")

    def point(self, s) -> np.ndarray:
        return np.asarray(self.path(s), dtype=float)

    def reversed(self, transition: TransitionMap | None = None) -> "Segment":
        a, b = self.start, self.end
        path, vel = self.path, self.velocity
        return Segment(self.chart, a, b, lambda s: path(a + b - s),
                       lambda s: -np.asarray(vel(a + b - s), dtype=float), transition)


def _push_point(atlas: Atlas, tmap: TransitionMap | None, chart: str, x) -> tuple[str, np.ndarray]:
    if tmap is None:
        return chart, np.asarray(x, dtype=float)
    if tmap.source != chart:
        raise AtlasError(f"transition {tmap.name!r} starts in {tmap.source!r}, not {chart!r}")
    if not np.all(tmap.overlap(np.asarray(x, dtype=float))):
        raise TransportError(f"point {np.asarray(x).tolist()} is outside the overlap of {tmap.name!r}")
    return tmap.target, atlas.chart(tmap.target).wrap(tmap.forward(x))


@dataclass(frozen=True, eq=False)
class Curve:
    """Piecewise curve; ``entry`` optionally maps the base chart into the first segment's chart."""

    segments: tuple[Segment, ...]
    closed: bool = False
    entry: TransitionMap | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("curve needs at least one segment")

    @property
    def base_chart(self) -> str:
        return self.entry.source if self.entry is not None else self.segments[0].chart

    @property
    def base_point(self) -> np.ndarray:
        first = self.segments[0]
        x = first.point(first.start)
        if self.entry is not None:
            if self.entry.backward is None:
                raise AtlasError(f"entry transition {self.entry.name!r} has no inverse")
            return np.asarray(self.entry.backward(x), dtype=float)
        return x

    def end(self, atlas: Atlas) -> tuple[str, np.ndarray]:
        last = self.segments[-1]
        return _push_point(atlas, last.transition, last.chart, last.point(last.end))

    def validate(self, atlas: Atlas, samples: int = 33, tol: float = JUNCTION_TOL) -> None:
        """Raise TransportError unless the curve lies in the atlas and is continuous."""
        if self.entry is not None:
            _, y = _push_point(atlas, self.entry, self.entry.source, self.base_point)
            first = self.segments[0]
            gap = atlas.chart(first.chart).displacement(y, first.point(first.start))
            if np.max(np.abs(gap)) > tol:
                raise TransportError(f"entry transition misses the first segment by {np.max(np.abs(gap)):.3g}")
        for k, seg in enumerate(self.segments):
            try:
                chart = atlas.chart(seg.chart)
            except AtlasError as exc:
                raise TransportError(str(exc)) from None
            ss = np.linspace(seg.start, seg.end, samples)
            pts = np.array([seg.point(s) for s in ss])
            if pts.shape[-1] != chart.dim:
                raise TransportError(f"segment {k} returns points of dimension {pts.shape[-1]}")
            inside = chart.contains(pts)
            if not np.all(inside):
                bad = pts[int(np.argmin(inside))]
                raise TransportError(f"segment {k} leaves chart {seg.chart!r} at {bad.tolist()}")
            cid, y = _push_point(atlas, seg.transition, seg.chart, seg.point(seg.end))
            if k + 1 < len(self.segments):
                nxt = self.segments[k + 1]
                if cid != nxt.chart:
                    raise TransportError(f"segment {k} ends in chart {cid!r} but segment {k + 1} is in {nxt.chart!r}")
                gap = atlas.chart(cid).displacement(y, nxt.point(nxt.start))
                if np.max(np.abs(gap)) > tol:
                    raise TransportError(f"junction {k}->{k + 1} is discontinuous by {np.max(np.abs(gap)):.3g}")
        if self.closed:
            cid, y = self.end(atlas)
            if cid != self.base_chart:
                raise TransportError(f"closed curve ends in chart {cid!r}, not its base chart {self.base_chart!r}")
            gap = atlas.chart(cid).displacement(y, self.base_point)
            if np.max(np.abs(gap)) > tol:
                raise TransportError(f"closed curve misses its base point by {np.max(np.abs(gap)):.3g}")

    def velocity_defect(self, samples: int = 17, step: float = 1e-6) -> float:
        """Largest relative gap between c'(s) and central differences of c(s)."""
        worst = 0.0
        for seg in self.segments:
            span = seg.end - seg.start
            h = step * span
            for s in np.linspace(seg.start + 2 * h, seg.end - 2 * h, samples):
                fd = (seg.point(s + h) - seg.point(s - h)) / (2 * h)
                v = np.asarray(seg.velocity(s), dtype=float)
                worst = max(worst, float(np.max(np.abs(fd - v)) / max(1.0, float(np.max(np.abs(v))))))
        return worst

    def reversed(self) -> "Curve":
        segs = self.segments
        out = []
        for k in range(len(segs) - 1, -1, -1):
            if k > 0:
                prev = segs[k - 1].transition
            else:
                prev = self.entry
            out.append(segs[k].reversed(prev.inverted() if prev is not None else None))
        last = segs[-1].transition
        return Curve(tuple(out), self.closed, last.inverted() if last is not None else None)

    def then(self, other: "Curve") -> "Curve":
        """Concatenation: this curve first, then ``other``."""
        last = self.segments[-1]
        joint = last.transition
        if other.entry is not None:
            joint = other.entry if joint is None else compose(joint, other.entry)
        head = Segment(last.chart, last.start, last.end, last.path, last.velocity, joint)
        return Curve(self.segments[:-1] + (head,) + other.segments, self.closed and other.closed, self.entry)

    def reparametrized(self, phi: Callable[[float], float], dphi: Callable[[float], float]) -> "Curve":
        """Each segment rerun over u in [0, 1] through ``s = start + (end - start) phi(u)``.

        ``phi`` must be an increasing map of [0, 1] onto itself.
        """
        segs = []
        for seg in self.segments:
            a, span, path, vel = seg.start, seg.end - seg.start, seg.path, seg.velocity
            segs.append(Segment(
                seg.chart, 0.0, 1.0,
                lambda u, a=a, span=span, path=path: path(a + span * phi(u)),
                lambda u, a=a, span=span, vel=vel: np.asarray(vel(a + span * phi(u)), dtype=float) * span * dphi(u),
                seg.transition,
            ))
        return Curve(tuple(segs), self.closed, self.entry)


def straight_segment(chart: str, a, b, transition: TransitionMap | None = None) -> Segment:
    a = np.array(a, dtype=float)
    d = np.array(b, dtype=float) - a
    return Segment(chart, 0.0, 1.0, lambda s: a + s * d, lambda s: d.copy(), transition)


def straight_curve(chart: str, a, b) -> Curve:
    return Curve((straight_segment(chart, a, b),))


def rectangle_loop(chart: str, base, width: float, height: float, axes=(0, 1)) -> Curve:
    """Counterclockwise rectangle in the coordinate plane ``axes`` with a corner at ``base``."""
    base = np.array(base, dtype=float)
    i, j = axes
    ei, ej = np.zeros(len(base)), np.zeros(len(base))
    ei[i], ej[j] = width, height
    corners = [base, base + ei, base + ei + ej, base + ej, base]
    return Curve(tuple(straight_segment(chart, p, q) for p, q in zip(corners[:-1], corners[1:])), closed=True)


def bump_circle_loop(chart: str, base, radius: float, amplitude: float = 0.0,
                     frequency: int = 3, axes=(0, 1), direction: int = 1) -> Curve:
    """Circle through ``base`` with radius ``radius * (1 + amplitude sin^2(pi s) sin(2 pi k s))``."""
    base = np.array(base, dtype=float)
    i, j = axes
    ei, ej = np.zeros(len(base)), np.zeros(len(base))
    ei[i], ej[j] = 1.0, 1.0
    center = base - radius * ei
    k = float(frequency)
    sgn = 1.0 if direction >= 0 else -1.0

    def rho(s):
        return radius * (1.0 + amplitude * math.sin(math.pi * s) ** 2 * math.sin(2 * math.pi * k * s))

    def drho(s):
        sp, cp = math.sin(math.pi * s), math.cos(math.pi * s)
        return radius * amplitude * (2 * math.pi * sp * cp * math.sin(2 * math.pi * k * s)
                                     + sp * sp * 2 * math.pi * k * math.cos(2 * math.pi * k * s))

    def path(s):
        a = 2 * math.pi * s * sgn
        return center + rho(s) * (math.cos(a) * ei + math.sin(a) * ej)

    def vel(s):
        a = 2 * math.pi * s * sgn
        return (drho(s) * (math.cos(a) * ei + math.sin(a) * ej)
                + rho(s) * 2 * math.pi * sgn * (-math.sin(a) * ei + math.cos(a) * ej))

    return Curve((Segment(chart, 0.0, 1.0, path, vel),), closed=True)


def random_loops(chart: str, base, count: int, seed: int = 0, max_size: float = 1.0) -> list[Curve]:
    """Seeded mix of rectangles and bump circles through ``base``.

    Every loop stays within ``max_size`` of ``base`` in each coordinate,
    so it is contractible whenever that box lies in the chart.
    """
    rng = np.random.default_rng(seed)
    n = len(base)
    loops = []
    for _ in range(count):
        axes = tuple(sorted(rng.choice(n, size=2, replace=False).tolist()))
        if rng.integers(2) == 0:
            w, h = rng.uniform(0.1, max_size, size=2) * rng.choice([-1.0, 1.0], size=2)
            loops.append(rectangle_loop(chart, base, float(w), float(h), axes))
        else:
            r = float(rng.uniform(0.05, max_size / 2.6))
            loops.append(bump_circle_loop(chart, base, r, float(rng.uniform(0.0, 0.3)),
                                          int(rng.integers(1, 5)), axes, int(rng.choice([-1, 1]))))
    return loops


def latitude_loop(theta0: float, chart: str = "S", phi0: float = 0.0) -> Curve:
    """The circle theta = theta0 on the sphere chart, traversed once eastward."""
    theta0 = float(theta0)
    return Curve((Segment(chart, 0.0, 2 * math.pi,
                          lambda s: np.array([theta0, phi0 + s]),
                          lambda s: np.array([0.0, 1.0])),), closed=True)


def hopf_core_loop(manifold, base=None, reverse: bool = False) -> Curve:
    """Radial loop from ``base`` to ``deck * base`` in the cover, closed by the deck transition."""
    deck = manifold.deck
    if deck is None:
        raise AtlasError(f"{manifold.key!r} has no deck group")
    if base is None:
        base = np.zeros(deck.dim)
        base[0] = 1.0
    p0 = np.array(base, dtype=float)
    lam = deck.scale
    lg = math.log(lam)
    seg = Segment("A", 0.0, 1.0, lambda s: lam ** s * p0, lambda s: lg * lam ** s * p0,
                  manifold.atlas.transition_map("deck_in"))
    loop = Curve((seg,), closed=True)
    return loop.reversed() if reverse else loop


# --------------------------------------------------------------------------
# parallel transport


def _transport_columns(conn: ChristoffelField, curve: Curve, W, rtol, atol, max_step, max_steps):
    kern = _kernels.backend()
    atlas = conn.atlas
    W = np.array(W, dtype=float)
    if curve.entry is not None:
        W = curve.entry.jacobian(curve.base_point) @ W
    for k, seg in enumerate(curve.segments):
        span = seg.end - seg.start
        h0 = min(span, 1e-3 * span + max_step)
        W, _, status, _ = kern.transport_run(conn.callback(seg.chart), seg.path, seg.velocity, W,
                                             float(seg.start), float(seg.end), atol, rtol, max_step,
                                             h0, max_steps)
        if status == UNDERFLOW:
            raise TransportError(f"transport step underflow on segment {k}")
        if status != REACHED:
            raise TransportError(f"transport exhausted {max_steps} steps on segment {k}")
        if seg.transition is not None:
            W = seg.transition.jacobian(seg.point(seg.end)) @ W
    return W


def parallel_transport(conn: ChristoffelField, curve: Curve, v0, tol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL, max_step: float = DEFAULT_MAX_STEP,
                       max_steps: int = 10_000_000, validate: bool = True) -> np.ndarray:
    """Vector at the end of ``curve`` obtained by transporting ``v0`` from its start.

    ``v0`` may also be an (n, k) array of column vectors.
    """
    v0 = np.asarray(v0, dtype=float)
    if v0.shape[0] != conn.atlas.dim:
        raise ValueError(f"vector of dimension {v0.shape[0]} on a {conn.atlas.dim}-manifold")
    if validate:
        curve.validate(conn.atlas)
    W = v0.reshape(v0.shape[0], -1)
    out = _transport_columns(conn, curve, W, tol, atol, max_step, max_steps)
    return out.reshape(v0.shape)


@dataclass(eq=False)
class HolonomyElement:
    matrix: np.ndarray
    base: tuple[str, np.ndarray]
    loop: Curve

    def __post_init__(self):
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        if not np.all(np.isfinite(sv)) or sv[-1] <= 1e-12 * sv[0]:
            raise TransportError("holonomy matrix is numerically singular")

    def distance_to_identity(self) -> float:
        return float(np.linalg.norm(self.matrix - np.eye(len(self.matrix)), 2))

    def orthogonality_defect(self, metric: MetricField) -> float:
        """max |H^T g H - g| at the base point."""
        g = metric.g(self.base[0], self.base[1])
        return float(np.max(np.abs(self.matrix.T @ g @ self.matrix - g)))

    def rotation_angle(self, metric: MetricField) -> float:
        """Rotation angle of a 2x2 holonomy in a g-orthonormal frame at the base."""
        if self.matrix.shape != (2, 2):
            raise ValueError("rotation angle is defined for 2x2 holonomy only")
        L = np.linalg.cholesky(metric.g(self.base[0], self.base[1]))
        R = L.T @ self.matrix @ np.linalg.inv(L.T)
        return math.atan2(R[1, 0], R[0, 0])


def holonomy(conn: ChristoffelField, loop: Curve, tol: float = DEFAULT_RTOL, **kw) -> HolonomyElement:
    """Parallel transport of the coordinate basis around ``loop``."""
    if not loop.closed:
        raise TransportError("holonomy needs a closed loop")
    n = conn.atlas.dim
    H = parallel_transport(conn, loop, np.eye(n), tol, **kw)
    return HolonomyElement(H, (loop.base_chart, loop.base_point), loop)


def _single_affine_chart(conn: ChristoffelField, curve: Curve) -> str:
    cid = curve.base_chart
    if curve.entry is not None or any(seg.chart != cid for seg in curve.segments):
        raise TransportError("curve must stay in a single chart")
    for seg in curve.segments:
        t = seg.transition
        if t is not None and not (t.matrix is not None and np.allclose(t.matrix, np.eye(len(t.matrix)))
                                  and (t.offset is None or not np.any(t.offset))):
            raise TransportError(f"curve changes coordinates through {t.name!r}")
    if conn.atlas.chart(cid).coordinate_kind != "affine":
        raise TransportError(f"chart {cid!r} is not an affine chart")
    return cid


def scaled_connection(conn: ChristoffelField, t: float, chart: str) -> ChristoffelField:
    """``t * Gamma`` on one affine chart: the convex combination with the flat connection there."""
    t = float(t)
    ev = conn.charts[chart]
    if t == 0.0 or ev.zero:
        n = conn.atlas.dim
        scaled = ChristoffelEval(gamma=lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n)), zero=True)
    else:
        scaled = ChristoffelEval(gamma=lambda x: t * ev.gamma(x),
                                 dgamma=lambda x: t * conn.dgamma(chart, x))
    return ChristoffelField(conn.atlas, {chart: scaled}, conn.symmetric, ("convex_combination", t, None, conn))


def transport_pair(gamma: Curve, conn_d: ChristoffelField, t: float, a, tol: float = DEFAULT_RTOL, **kw):
    """Transport ``a`` around ``gamma`` by D(t) = t*Gamma_D and by D; returns (v(1), w(1))."""
    if not gamma.closed:
        raise TransportError("transport_pair needs a closed curve")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    cid = _single_affine_chart(conn_d, gamma)
    gamma.validate(conn_d.atlas)
    a = np.asarray(a, dtype=float)
    v1 = parallel_transport(scaled_connection(conn_d, t, cid), gamma, a, tol, validate=False, **kw)
    w1 = parallel_transport(conn_d, gamma, a, tol, validate=False, **kw)
    return v1, w1


@dataclass
class HolonomyMapReport:
    t: float
    epsilon: float
    h_dt: list
    h_d: list
    well_defined_defect: float
    well_defined_pairs: int
    injectivity_defect: float
    injectivity_pairs: int
    homomorphism_defect_dt: float
    homomorphism_defect_d: float
    concatenations: int

    def summary(self) -> dict:
        return {
            "t": self.t,
            "epsilon": self.epsilon,
            "well_defined_defect": self.well_defined_defect,
            "well_defined_pairs": self.well_defined_pairs,
            "injectivity_defect": self.injectivity_defect,
            "injectivity_pairs": self.injectivity_pairs,
            "homomorphism_defect_dt": self.homomorphism_defect_dt,
            "homomorphism_defect_d": self.homomorphism_defect_d,
            "concatenations": self.concatenations,
            "loops": len(self.h_d),
        }


def holonomy_map_experiment(conn_nabla: ChristoffelField, conn_d: ChristoffelField, t: float,
                            loops: Sequence[Curve], tol: float = DEFAULT_RTOL, epsilon: float = 1e-6,
                            max_concatenations: int = 10) -> HolonomyMapReport:
    """Evidence that A_t: H_{D(t)} -> H_D, H_{D(t)}(loop) -> H_D(loop), is a well-defined injective homomorphism."""
    if not loops:
        raise ValueError("holonomy_map_experiment needs at least one loop")
    base_chart, base_point = loops[0].base_chart, loops[0].base_point
    chart = conn_d.atlas.chart(base_chart)
    for lp in loops:
        _single_affine_chart(conn_d, lp)
        if lp.base_chart != base_chart or np.max(np.abs(chart.displacement(lp.base_point, base_point))) > 1e-12:
            raise TransportError("loops are not based at the same point")
    if not conn_nabla.is_zero(base_chart):
        raise TransportError(f"reference connection is not flat in chart {base_chart!r}")
    dt = convex_combine(conn_nabla, conn_d, t)
    h1 = [holonomy(dt, lp, tol).matrix for lp in loops]
    h2 = [holonomy(conn_d, lp, tol).matrix for lp in loops]

    def norm(a):
        return float(np.linalg.norm(a, 2))

    wd, wd_pairs, inj, inj_pairs = 0.0, 0, 0.0, 0
    for i in range(len(loops)):
        for j in range(i + 1, len(loops)):
            if norm(h1[i] - h1[j]) <= epsilon:
                wd, wd_pairs = max(wd, norm(h2[i] - h2[j])), wd_pairs + 1
            if norm(h2[i] - h2[j]) <= epsilon:
                inj, inj_pairs = max(inj, norm(h1[i] - h1[j])), inj_pairs + 1
    hom1 = hom2 = 0.0
    pairs = [(i, j) for i in range(len(loops)) for j in range(len(loops)) if i != j][:max_concatenations]
    for i, j in pairs:
        joined = loops[i].then(loops[j])
        hom1 = max(hom1, norm(holonomy(dt, joined, tol).matrix - h1[j] @ h1[i]))
        hom2 = max(hom2, norm(holonomy(conn_d, joined, tol).matrix - h2[j] @ h2[i]))
    return HolonomyMapReport(float(t), float(epsilon), h1, h2, wd, wd_pairs, inj, inj_pairs,
                             hom1, hom2, len(pairs))


# --------------------------------------------------------------------------
# geodesics

COMPLETED = "completed_horizon"
ESCAPED = "escaped"
UNDERFLOWED = "step_underflow"


@dataclass(eq=False)
class GeodesicRecord:
    s: np.ndarray
    charts: list
    coords: np.ndarray
    velocity: np.ndarray
    status: str
    escape_parameter: float | None
    residual_max: float
    steps: int
    transitions: int
    horizon: float
    tolerance: float

    def summary(self) -> dict:
        return {
            "status": self.status,
            "escape_parameter": self.escape_parameter,
            "final_parameter": float(self.s[-1]),
            "final_chart": self.charts[-1],
            "final_coordinates": self.coords[-1].tolist(),
            "final_velocity": self.velocity[-1].tolist(),
            "residual_max": self.residual_max,
            "steps": self.steps,
            "transitions": self.transitions,
            "horizon": self.horizon,
            "tolerance": self.tolerance,
            "samples": len(self.s),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)

    def to_csv(self, target=None) -> str | None:
        """Write ``s, chart, x0.., v0..`` rows; returns the text if no target is given."""
        n = self.coords.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "chart"] + [f"x{k}" for k in range(n)] + [f"v{k}" for k in range(n)])
        for s, c, x, v in zip(self.s, self.charts, self.coords, self.velocity):
            w.writerow([repr(float(s)), c] + [repr(float(a)) for a in x] + [repr(float(a)) for a in v])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", newline="") as fh:
            fh.write(text)
        return None


def geodesic_integrate(conn: ChristoffelField, start, velocity, horizon: float,
                       tol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                       max_step: float = DEFAULT_MAX_STEP, boundary_epsilon: float = BOUNDARY_EPSILON,
                       max_samples: int = 10_000, max_steps: int = 100_000_000) -> GeodesicRecord:
    """Integrate the geodesic from ``start = (chart, coords)`` up to parameter ``horizon``.

    Near a chart boundary the first registered transition whose image lies
    well inside its target chart is applied. If none does, the geodesic is
    reported as escaped with the parameter at which the boundary would be
    reached at the current speed.
    """
    kern = _kernels.backend()
    atlas = conn.atlas
    horizon = float(horizon)
    if not horizon > 0.0 or not math.isfinite(horizon):
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    cid, x = start
    try:
        chart = atlas.chart(cid)
    except AtlasError as exc:
        raise TransportError(str(exc)) from None
    x = chart.wrap(np.asarray(x, dtype=float))
    if x.shape != (chart.dim,) or not chart.contains(x):
        raise TransportError(f"start point {np.asarray(start[1]).tolist()} is not inside chart {cid!r}")
    v = np.array(velocity, dtype=float)
    if v.shape != (chart.dim,):
        raise ValueError(f"velocity must have {chart.dim} components")
    speed = float(np.linalg.norm(v))
    est = horizon * speed / max_step
    sample_every = max(1, int(math.ceil(est / max_samples)))

    s = 0.0
    h = min(horizon, max_step / speed if speed > 0 else horizon)
    ss, cs, xs, vs = [0.0], [cid], [x.copy()], [v.copy()]
    resid, steps, jumps = 0.0, 0, 0
    status, escape = COMPLETED, None
    while True:
        chart = atlas.chart(cid)
        bounded = not all(chart.periodic) or bool(chart.punctures)
        dist = (lambda y, c=chart: float(c.boundary_distance(y))) if bounded else None
        x, v, s, h, code, samples, r, k = kern.geodesic_run(
            conn.callback(cid), x, v, s, horizon, atol, tol, max_step, h,
            np.array(chart.lower), chart.period, dist, boundary_epsilon, sample_every, max_steps - steps)
        resid, steps = max(resid, r), steps + k
        for sa, xa, va in samples:
            ss.append(sa), cs.append(cid), xs.append(np.asarray(xa)), vs.append(np.asarray(va))
        if code == REACHED:
            break
        if code == UNDERFLOW:
            status = UNDERFLOWED
            break
        if code == MAX_STEPS:
            raise TransportError(f"geodesic exhausted {max_steps} steps before s = {horizon}")
        moved = False
        for tmap in atlas.transitions_from(cid):
            if not np.all(tmap.overlap(x)):
                continue
            target = atlas.chart(tmap.target)
            y = target.wrap(tmap.forward(x))
            if target.boundary_distance(y) > TRANSITION_COLLAR:
                v = np.asarray(tmap.jacobian(x), dtype=float) @ v
                x, cid, moved = y, tmap.target, True
                sp = float(np.linalg.norm(v))
                h = min(horizon - s, max_step / sp) if sp > 0 else h
                jumps += 1
                ss.append(s), cs.append(cid), xs.append(x.copy()), vs.append(v.copy())
                break
        if not moved:
            status = ESCAPED
            sp = float(np.linalg.norm(v))
            escape = s + float(chart.boundary_distance(x)) / sp if sp > 0 else s
            break
    return GeodesicRecord(np.array(ss), cs, np.array(xs), np.array(vs), status, escape, resid,
                          steps, jumps, horizon, tol)


# --------------------------------------------------------------------------
# parallel frame


@dataclass(eq=False)
class FrameReport:
    base: tuple[str, np.ndarray]
    points: np.ndarray
    parents: np.ndarray
    frames: np.ndarray
    path_independence_defect: float
    loop_defects: list
    tree_defect: float
    coefficient_drift: float | None
    coefficients: np.ndarray | None
    flatness_defect: float
    certified: bool = field(default=False)

    def summary(self) -> dict:
        return {
            "path_independence_defect": self.path_independence_defect,
            "loop_defects": self.loop_defects,
            "tree_defect": self.tree_defect,
            "coefficient_drift": self.coefficient_drift,
            "flatness_defect": self.flatness_defect,
            "tree_points": len(self.points),
            "certified": self.certified,
        }


def _spanning_tree(chart, points):
    """Prim's tree on chart displacements; parents[0] = -1 (the root)."""
    m = len(points)
    parents = np.full(m, -1)
    best = np.full(m, np.inf)
    done = np.zeros(m, dtype=bool)
    best[0] = 0.0
    order = []
    for _ in range(m):
        k = int(np.argmin(np.where(done, np.inf, best)))
        done[k] = True
        order.append(k)
        d = np.linalg.norm(chart.displacement(points[k], points), axis=-1)
        closer = ~done & (d < best)
        best[closer] = d[closer]
        parents[closer] = k
    return parents, order


def build_parallel_frame(conn: ChristoffelField, base, frame0, probe_loops: Sequence[Curve] = (),
                         tree_points: int = 32, seed: int = 0, tol: float = DEFAULT_RTOL,
                         coefficients=None, geodesic_horizon: float = 2.0,
                         flatness_samples: int = 50, flatness_tol: float = 1e-6,
                         certify: float = 1e-6) -> FrameReport:
    """Spread ``frame0`` over a tree of sample points by parallel transport and test path independence."""
    atlas = conn.atlas
    cid, p0 = base[0], np.asarray(base[1], dtype=float)
    chart = atlas.chart(cid)
    E0 = np.array(frame0, dtype=float)
    if E0.shape != (atlas.dim, atlas.dim) or abs(np.linalg.det(E0)) < 1e-12:
        raise ValueError("frame0 must be an invertible n x n matrix (columns are the frame vectors)")
    rng = np.random.default_rng(seed)

    flat = 0.0
    for c, pts in atlas.sample_points(rng, flatness_samples).items():
        if not conn.is_zero(c):
            flat = max(flat, float(np.max(np.abs(riemann_tensor(conn, c, pts)))))
    if flat > flatness_tol:
        raise ValueError(f"connection is not flat: curvature {flat:.3g} exceeds {flatness_tol:.0e}")

    extra = atlas.sample_points(rng, tree_points).get(cid)
    if extra is None:
        extra = chart.sample(rng, tree_points)
    points = np.vstack([p0[None, :], extra[:tree_points]])
    parents, order = _spanning_tree(chart, points)
    frames = np.zeros((len(points),) + E0.shape)
    frames[0] = E0

    def carry(i, j, E):
        a = points[i]
        return parallel_transport(conn, straight_curve(cid, a, a + chart.displacement(a, points[j])), E, tol)

    for k in order[1:]:
        frames[k] = carry(parents[k], k, frames[parents[k]])
    tree_defect = 0.0
    for k in order[1:]:
        d = np.linalg.norm(chart.displacement(points[k], points), axis=-1)
        d[k] = np.inf
        d[parents[k]] = np.inf
        j = int(np.argmin(d))
        if np.isfinite(d[j]):
            tree_defect = max(tree_defect, float(np.max(np.abs(carry(j, k, frames[j]) - frames[k]))))

    loop_defects = []
    for lp in probe_loops:
        loop_defects.append(holonomy(conn, lp, tol).distance_to_identity())
    path_defect = max(loop_defects, default=0.0)

    drift, coeffs = None, None
    a0 = np.ones(atlas.dim) if coefficients is None else np.asarray(coefficients, dtype=float)
    rec = geodesic_integrate(conn, (cid, p0), E0 @ a0, geodesic_horizon, tol=tol)
    keep = np.cumsum([c != cid for c in rec.charts]) == 0
    if np.count_nonzero(keep) >= 3:
        coeffs = []
        for x, v in zip(rec.coords[keep], rec.velocity[keep]):
            E = parallel_transport(conn, straight_curve(cid, p0, p0 + chart.displacement(p0, x)), E0, tol) \
                if np.any(chart.displacement(p0, x)) else E0
            coeffs.append(np.linalg.solve(E, v))
        coeffs = np.array(coeffs)
        ds = np.diff(rec.s[keep])
        good = ds > 0
        drift = float(np.max(np.abs(np.diff(coeffs, axis=0)[good] / ds[good, None]), initial=0.0))
    return FrameReport((cid, p0), points, parents, frames, path_defect, loop_defects, tree_defect,
                       drift, coeffs, flat, certified=path_defect <= certify)
