"""Built-in manifolds: flat torus, round sphere, open box and Hopf manifolds."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from affgeom.atlas.charts import Atlas, AtlasError, Chart, TransitionMap
from affgeom.atlas.cover import QuadraturePiece, QuadratureCover
from affgeom.connection import (
    ChristoffelField,
    MetricEval,
    MetricField,
    conformal_metric_eval,
    constant_metric_eval,
    flat_connection,
)

HOPF_DECK = math.exp(2.0 * math.pi)
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DeckGroup:
    """Cyclic group generated by x -> scale * x on R^{n+1} minus the origin."""

    scale: float
    dim: int

    def __post_init__(self):
        if not self.scale > 1.0:
            raise AtlasError(f"deck scalar must exceed 1, got {self.scale}")

    @property
    def fundamental_annulus(self) -> tuple[float, float]:
        return (1.0, self.scale)

    @property
    def generator(self) -> np.ndarray:
        return self.scale * np.eye(self.dim)

    def apply(self, x, power: int = 1) -> np.ndarray:
        return self.scale ** power * np.asarray(x, dtype=float)

    def renormalize(self, x):
        """Move ``x`` into the annulus 1 <= |x| < scale; returns (point, power used)."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if r == 0.0:
            raise AtlasError("the origin is not a point of the Hopf cover")
        power = -int(math.floor(math.log(r) / math.log(self.scale)))
        y = self.apply(x, power)
        # guard the floor against rounding at the annulus edges
        ry = np.linalg.norm(y)
        if ry >= self.scale:
            y, power = y / self.scale, power - 1
        elif ry < 1.0:
            y, power = y * self.scale, power + 1
        return y, power


def hopf_covering_point(x, deck: float = HOPF_DECK):
    """Image of x under the covering R^{n+1} minus 0 -> S^n x S^1.

    Returns the unit vector x/|x| and the circle angle in [0, 2pi). For
    the default deck scalar e^{2pi} the angle is log|x| mod 2pi.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise AtlasError("hopf_covering_point: zero vector")
    angle = math.fmod(TWO_PI * math.log(r) / math.log(deck), TWO_PI)
    if angle < 0.0:
        angle += TWO_PI
    if angle >= TWO_PI:
        angle = 0.0
    return x / r, angle


@dataclass(frozen=True, eq=False)
class ChartedManifold:
    key: str
    atlas: Atlas
    cover: QuadratureCover | None = None
    affine: ChristoffelField | None = None
    metric: MetricField | None = None
    local_metric: MetricField | None = None
    alternate_metric: MetricField | None = None
    deck: DeckGroup | None = None
    compact: bool = True
    euler_characteristic: int | None = None
    volume: float | None = None
    embedding: object = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.atlas.dim

    @property
    def name(self) -> str:
        return self.atlas.name

    @property
    def euler_ops(self) -> bool:
        return self.dim % 2 == 0 and self.compact

    def chart(self, cid):
        return self.atlas.chart(cid)

    @property
    def base_chart(self) -> str:
        return next(iter(self.atlas.charts))


# ---------------------------------------------------------------------------
# builders


def _wrap_transition(chart: Chart) -> TransitionMap:
    n = chart.dim
    eye = np.eye(n)
    return TransitionMap(
        name="wrap",
        source=chart.id,
        target=chart.id,
        overlap=lambda x: np.ones(np.shape(x)[:-1], dtype=bool),
        forward=chart.wrap,
        jacobian=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (n, n)).copy(),
        backward=chart.wrap,
        affine=True,
        matrix=eye,
    )


def _flat_torus(side: float = TWO_PI) -> ChartedManifold:
    side = float(side)
    if not side > 0:
        raise AtlasError(f"torus side must be positive, got {side}")
    chart = Chart("U", (0.0, 0.0), (side, side), (True, True), "affine", names=("x", "y"))
    atlas = Atlas("flat_torus_2d", {"U": chart}, {"wrap": _wrap_transition(chart)})
    metric = MetricField(atlas, {"U": constant_metric_eval(np.eye(2))}, label="delta")
    k = TWO_PI / side
    amp = 0.3

    def phi(x):
        return 1.0 + amp * np.sin(k * x[..., 0]) * np.sin(k * x[..., 1])

    def dphi(x):
        sx, cx = np.sin(k * x[..., 0]), np.cos(k * x[..., 0])
        sy, cy = np.sin(k * x[..., 1]), np.cos(k * x[..., 1])
        return amp * k * np.stack([cx * sy, sx * cy], axis=-1)

    def d2phi(x):
        sx, cx = np.sin(k * x[..., 0]), np.cos(k * x[..., 0])
        sy, cy = np.sin(k * x[..., 1]), np.cos(k * x[..., 1])
        h = amp * k * k * np.stack([np.stack([-sx * sy, cx * cy], -1), np.stack([cx * cy, -sx * sy], -1)], -2)
        return h

    bump = conformal_metric_eval(constant_metric_eval(np.eye(2)), phi, dphi, d2phi)
    bump = MetricEval(bump.g, bump.dg, bump.d2g, expressions=(
        (f"1 + {amp}*sin({k!r}*x)*sin({k!r}*y)", "0"),
        ("0", f"1 + {amp}*sin({k!r}*x)*sin({k!r}*y)"),
    ))
    alternate = MetricField(atlas, {"U": bump}, label="bump")
    cover = QuadratureCover((QuadraturePiece("U", (0.0, 0.0), (side, side), (200, 200)),))
    return ChartedManifold(
        key="flat_torus_2d", atlas=atlas, cover=cover, affine=flat_connection(atlas),
        metric=metric, local_metric=metric, alternate_metric=alternate,
        euler_characteristic=0, volume=side * side, params={"side": side},
    )


def _sphere_metric_eval(radius: float) -> MetricEval:
    r2 = radius * radius

    def g(x):
        th = x[..., 0]
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 0, 0] = r2
        out[..., 1, 1] = r2 * np.sin(th) ** 2
        return out

    def dg(x):
        th = x[..., 0]
        out = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = r2 * 2.0 * np.sin(th) * np.cos(th)
        return out

    def d2g(x):
        th = x[..., 0]
        out = np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2))
        out[..., 0, 0, 1, 1] = r2 * 2.0 * np.cos(2.0 * th)
        return out

    return MetricEval(g, dg, d2g, expressions=((repr(r2), "0"), ("0", f"{r2!r}*sin(theta)^2")))


def _round_sphere(radius: float = 1.0) -> ChartedManifold:
    radius = float(radius)
    if not radius > 0:
        raise AtlasError(f"sphere radius must be positive, got {radius}")
    chart = Chart("S", (0.0, 0.0), (math.pi, TWO_PI), (False, True), "general", names=("theta", "phi"))
    atlas = Atlas("round_sphere_2d", {"S": chart}, {"wrap": _wrap_transition(chart)})
    round_eval = _sphere_metric_eval(radius)
    metric = MetricField(atlas, {"S": round_eval}, label="round")
    amp = 0.3

    # conformal factor 1 + amp * X, X the first embedding coordinate / radius
    def phi(x):
        return 1.0 + amp * np.sin(x[..., 0]) * np.cos(x[..., 1])

    def dphi(x):
        th, ph = x[..., 0], x[..., 1]
        return amp * np.stack([np.cos(th) * np.cos(ph), -np.sin(th) * np.sin(ph)], -1)

    def d2phi(x):
        th, ph = x[..., 0], x[..., 1]
        a = -np.sin(th) * np.cos(ph)
        b = -np.cos(th) * np.sin(ph)
        return amp * np.stack([np.stack([a, b], -1), np.stack([b, a], -1)], -2)

    bump = conformal_metric_eval(round_eval, phi, dphi, d2phi)
    alternate = MetricField(atlas, {"S": bump}, label="bump")

    def embedding(x):
        th, ph = x[..., 0], x[..., 1]
        return radius * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)

    cover = QuadratureCover((QuadraturePiece("S", (0.0, 0.0), (math.pi, TWO_PI), (200, 400)),))
    return ChartedManifold(
        key="round_sphere_2d", atlas=atlas, cover=cover, metric=metric, alternate_metric=alternate,
        euler_characteristic=2, volume=4.0 * math.pi * radius * radius, embedding=embedding,
        params={"radius": radius},
    )


def _open_box(side: float = 1.0) -> ChartedManifold:
    chart = Chart("B", (0.0, 0.0), (side, side), (False, False), "affine", names=("x", "y"))
    atlas = Atlas("open_box_2d", {"B": chart})
    metric = MetricField(atlas, {"B": constant_metric_eval(np.eye(2))}, label="delta")
    return ChartedManifold(
        key="open_box_2d", atlas=atlas, affine=flat_connection(atlas), metric=metric,
        local_metric=metric, compact=False, params={"side": side},
    )


def _sphere_coordinates(angles):
    """Unit vectors in R^{m+1} from hyperspherical angles (..., m)."""
    m = angles.shape[-1]
    out = []
    sin_prod = np.ones(angles.shape[:-1])
    for k in range(m):
        out.append(sin_prod * np.cos(angles[..., k]))
        sin_prod = sin_prod * np.sin(angles[..., k])
    out.append(sin_prod)
    return np.stack(out, axis=-1)


def _hopf(n: int, deck: float = HOPF_DECK, key: str | None = None, resolution=None) -> ChartedManifold:
    n = int(n)
    if n < 1:
        raise AtlasError(f"Hopf sphere dimension must be positive, got {n}")
    deck = float(deck)
    group = DeckGroup(deck, n + 1)
    N = n + 1
    L = 2.0 * deck
    chart = Chart("A", (-L,) * N, (L,) * N, (False,) * N, "affine",
                  punctures=((0.0,) * N,), names=tuple(f"x{k}" for k in range(N)))
    eye = np.eye(N)
    deck_in = TransitionMap.affine_map("deck_in", "A", "A", eye / deck, np.zeros(N),
                                       overlap=lambda x: chart.contains(x))
    deck_out = TransitionMap.affine_map("deck_out", "A", "A", eye * deck, np.zeros(N),
                                        overlap=lambda x: chart.contains(deck * np.asarray(x)))

    def sampler(rng, count):
        rho = rng.uniform(0.0, math.log(deck), size=count)
        u = rng.normal(size=(count, N))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        return {"A": np.exp(rho)[:, None] * u}

    name = key or f"hopf_manifold({n})"
    atlas = Atlas(name, {"A": chart}, {"deck_in": deck_in, "deck_out": deck_out}, sampler=sampler)
    euclid = constant_metric_eval(eye)

    def phi(x):
        return 1.0 / np.sum(x * x, axis=-1)

    def dphi(x):
        r2 = np.sum(x * x, axis=-1)
        return -2.0 * x / r2[..., None] ** 2

    def d2phi(x):
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        return -2.0 * eye / r2 ** 2 + 8.0 * x[..., :, None] * x[..., None, :] / r2 ** 3

    invariant = MetricField(atlas, {"A": conformal_metric_eval(euclid, phi, dphi, d2phi)}, label="dx2/|x|2")
    local = MetricField(atlas, {"A": euclid}, label="delta")

    def to_chart(u):
        return np.exp(u[..., :1]) * _sphere_coordinates(u[..., 1:])

    def jac_det(u):
        det = np.exp(N * u[..., 0])
        for k in range(n - 1):
            det = det * np.sin(u[..., 1 + k]) ** (n - 1 - k)
        return det

    lower = (0.0,) + (0.0,) * n
    upper = (math.log(deck),) + (math.pi,) * (n - 1) + (TWO_PI,)
    if resolution is None:
        if n == 1:
            resolution = (200, 200)
        else:
            resolution = (8,) + (96,) * (n - 1) + (8,)
    cover = QuadratureCover((QuadraturePiece("A", lower, upper, tuple(resolution), to_chart, jac_det),))
    sphere_volume = 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)
    return ChartedManifold(
        key=name, atlas=atlas, cover=cover, affine=flat_connection(atlas), metric=invariant,
        local_metric=local, deck=group, euler_characteristic=0,
        volume=math.log(deck) * sphere_volume, params={"n": n, "deck": deck},
    )


_BUILDERS = {
    "flat_torus_2d": lambda **p: _flat_torus(**p),
    "round_sphere_2d": lambda **p: _round_sphere(**p),
    "open_box_2d": lambda **p: _open_box(**p),
    "hopf_torus_2d": lambda **p: _hopf(1, key="hopf_torus_2d", **p),
    "hopf_manifold": lambda **p: _hopf(**p),
}

_HOPF_KEY = re.compile(r"^hopf_manifold\((\-?\d+)\)$")


def builtin_manifold(name: str, **params) -> ChartedManifold:
    """Catalog lookup. ``hopf_manifold(n)`` may also be spelled with ``n=``.

    Parameters by entry: flat_torus_2d ``side``; round_sphere_2d ``radius``;
    open_box_2d ``side``; hopf_torus_2d ``deck``; hopf_manifold ``n``, ``deck``.
    """
    m = _HOPF_KEY.match(name)
    if m:
        name = "hopf_manifold"
        params = {"n": int(m.group(1)), **params}
    if name not in _BUILDERS:
        raise AtlasError(f"unknown manifold {name!r}; known: {sorted(_BUILDERS)}")
    try:
        return _BUILDERS[name](**params)
    except TypeError as exc:
        raise AtlasError(f"bad parameters for {name!r}: {exc}") from None


CATALOG_KEYS = (
    "flat_torus_2d",
    "hopf_manifold(2)",
    "hopf_manifold(3)",
    "hopf_torus_2d",
    "open_box_2d",
    "round_sphere_2d",
)


@dataclass(frozen=True)
class CatalogEntry:
    key: str
    dim: int
    affine: bool
    metric: bool
    compact: bool
    euler_ops: bool
    note: str


def list_catalog(filter: str = "") -> list[CatalogEntry]:
    """Catalog rows sorted by key; ``filter`` keeps keys containing it."""
    rows = []
    for key in sorted(CATALOG_KEYS):
        if filter and filter not in key:
            continue
        m = builtin_manifold(key)
        if m.dim % 2:
            note = "odd total dimension: Euler ops disabled"
        elif not m.compact:
            note = "non-compact: no quadrature cover"
        else:
            note = f"chi = {m.euler_characteristic}"
        rows.append(CatalogEntry(key, m.dim, m.affine is not None, m.metric is not None,
                                 m.compact, m.euler_ops, note))
    return rows
