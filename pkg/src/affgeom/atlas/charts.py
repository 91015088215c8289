"""Charts, transition maps and the atlas that wires them together."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class AtlasError(ValueError):
    """Malformed atlas, unknown chart, or a point outside a chart/overlap."""


@dataclass(frozen=True, eq=False)
class Chart:
    """Open coordinate box, optionally periodic per axis and punctured.

    Periodic axes accept any real coordinate and are wrapped into
    ``[lower, upper)``. ``punctures`` are isolated points removed from the
    domain (the origin of a Hopf cover); they are part of the chart
    boundary for geodesic escape detection.
    """

    id: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periodic: tuple[bool, ...] = ()
    coordinate_kind: str = "general"
    punctures: tuple[tuple[float, ...], ...] = ()
    names: tuple[str, ...] = ()

    def __post_init__(self):
        lower = tuple(float(a) for a in self.lower)
        upper = tuple(float(b) for b in self.upper)
        if len(lower) != len(upper) or not lower:
            raise AtlasError(f"chart {self.id!r}: bounds must be nonempty and of equal length")
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * len(lower)
        if len(periodic) != len(lower):
            raise AtlasError(f"chart {self.id!r}: periodic flags do not match dimension")
        for a, b in zip(lower, upper):
            if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
                raise AtlasError(f"chart {self.id!r}: interval ({a}, {b}) is empty or infinite")
        if self.coordinate_kind not in ("affine", "general"):
            raise AtlasError(f"chart {self.id!r}: unknown coordinate kind {self.coordinate_kind!r}")
        names = tuple(self.names) or tuple(f"x{k}" for k in range(len(lower)))
        if len(names) != len(lower):
            raise AtlasError(f"chart {self.id!r}: coordinate names do not match dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "punctures", tuple(tuple(float(c) for c in p) for p in self.punctures))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def period(self) -> np.ndarray:
        """Period per axis, 0 for non-periodic axes."""
        lo, hi = np.array(self.lower), np.array(self.upper)
        return np.where(self.periodic, hi - lo, 0.0)

    def _check_shape(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise AtlasError(f"chart {self.id!r} takes {self.dim} coordinates, got {x.shape[-1]}")
        return x

    def boundary_distance(self, x) -> np.ndarray:
        """Distance to the nearest non-glued boundary (inf if there is none).

        Negative when ``x`` lies outside the box.
        """
        x = self._check_shape(x)
        d = np.full(x.shape[:-1], np.inf)
        for k in range(self.dim):
            if self.periodic[k]:
                continue
            d = np.minimum(d, np.minimum(x[..., k] - self.lower[k], self.upper[k] - x[..., k]))
        for p in self.punctures:
            d = np.minimum(d, np.linalg.norm(x - np.asarray(p), axis=-1))
        return d

    def contains(self, x) -> np.ndarray:
        return self.boundary_distance(x) > 0.0

    def wrap(self, x) -> np.ndarray:
        """Reduce periodic coordinates into ``[lower, upper)``."""
        x = np.array(self._check_shape(x), dtype=float)
        for k in range(self.dim):
            if self.periodic[k]:
                lo, per = self.lower[k], self.upper[k] - self.lower[k]
                x[..., k] = lo + np.mod(x[..., k] - lo, per)
        return x

    def displacement(self, x, y) -> np.ndarray:
        """y - x with periodic axes reduced to the shortest representative."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        per = self.period
        mask = per > 0
        if mask.any():
            d = np.array(d)
            d[..., mask] = d[..., mask] - per[mask] * np.round(d[..., mask] / per[mask])
        return d

    def sample(self, rng: np.random.Generator, count: int, margin: float = 0.05) -> np.ndarray:
        """Uniform points in the box shrunk by ``margin`` of each side."""
        lo, hi = np.array(self.lower), np.array(self.upper)
        pad = margin * (hi - lo)
        pts = rng.uniform(lo + pad, hi - pad, size=(count, self.dim))
        for p in self.punctures:
            # keep samples off punctures
            close = np.linalg.norm(pts - np.asarray(p), axis=-1) < 1e-3
            pts[close] += 1e-2
        return pts


@dataclass(frozen=True, eq=False)
class TransitionMap:
    """Coordinate change from ``source`` chart to ``target`` chart.

    ``forward`` and ``jacobian`` are vectorized over leading axes. An
    optional ``backward`` makes the inverse transition available.
    """

    name: str
    source: str
    target: str
    overlap: Callable[[np.ndarray], np.ndarray]
    forward: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    backward: Callable[[np.ndarray], np.ndarray] | None = None
    affine: bool = False
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None

    @classmethod
    def affine_map(cls, name, source, target, matrix, offset, overlap=None):
        """``y = matrix @ x + offset``; constant jacobian."""
        A = np.array(matrix, dtype=float)
        b = np.array(offset, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise AtlasError(f"transition {name!r}: matrix must be square and match offset")
        if abs(np.linalg.det(A)) < 1e-14:
            raise AtlasError(f"transition {name!r}: matrix is singular")
        Ainv = np.linalg.inv(A)

        def jac(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

        return cls(
            name=name,
            source=source,
            target=target,
            overlap=overlap if overlap is not None else (lambda x: np.ones(np.shape(x)[:-1], dtype=bool)),
            forward=lambda x: np.asarray(x, dtype=float) @ A.T + b,
            jacobian=jac,
            backward=lambda y: (np.asarray(y, dtype=float) - b) @ Ainv.T,
            affine=True,
            matrix=A,
            offset=b,
        )

    def inverted(self) -> "TransitionMap":
        if self.backward is None:
            raise AtlasError(f"transition {self.name!r} has no registered inverse")
        fwd, bwd, jac, ovl = self.forward, self.backward, self.jacobian, self.overlap
        return TransitionMap(
            name=f"{self.name}^-1",
            source=self.target,
            target=self.source,
            overlap=lambda y: ovl(bwd(y)),
            forward=bwd,
            jacobian=lambda y: np.linalg.inv(jac(bwd(y))),
            backward=fwd,
            affine=self.affine,
            matrix=None if self.matrix is None else np.linalg.inv(self.matrix),
            offset=None if self.matrix is None else -np.linalg.solve(self.matrix, self.offset),
        )


def compose(first: TransitionMap, second: TransitionMap) -> TransitionMap:
    """Apply ``first`` then ``second``."""
    if first.target != second.source:
        raise AtlasError(f"cannot compose {first.name!r} -> {second.name!r}: charts differ")
    backward = None
    if first.backward is not None and second.backward is not None:
        backward = lambda y: first.backward(second.backward(y))  # noqa: E731
    return TransitionMap(
        name=f"{first.name}*{second.name}",
        source=first.source,
        target=second.target,
        overlap=lambda x: first.overlap(x) & second.overlap(first.forward(x)),
        forward=lambda x: second.forward(first.forward(x)),
        jacobian=lambda x: second.jacobian(first.forward(x)) @ first.jacobian(x),
        backward=backward,
        affine=first.affine and second.affine,
    )


@dataclass(frozen=True, eq=False)
class Atlas:
    name: str
    charts: Mapping[str, Chart]
    transitions: Mapping[str, TransitionMap] = field(default_factory=dict)
    sampler: Callable[[np.random.Generator, int], dict] | None = None

    def __post_init__(self):
        dims = {c.dim for c in self.charts.values()}
        if len(dims) != 1:
            raise AtlasError(f"atlas {self.name!r}: charts must share one dimension, got {sorted(dims)}")
        for t in self.transitions.values():
            for cid in (t.source, t.target):
                if cid not in self.charts:
                    raise AtlasError(f"transition {t.name!r} references unknown chart {cid!r}")

    @property
    def dim(self) -> int:
        return next(iter(self.charts.values())).dim

    @property
    def is_affine(self) -> bool:
        return all(c.coordinate_kind == "affine" for c in self.charts.values()) and all(
            t.affine for t in self.transitions.values()
        )

    def chart(self, cid: str) -> Chart:
        try:
            return self.charts[cid]
        except KeyError:
            raise AtlasError(f"atlas {self.name!r} has no chart {cid!r}") from None

    def transition_map(self, name: str) -> TransitionMap:
        try:
            return self.transitions[name]
        except KeyError:
            raise AtlasError(f"atlas {self.name!r} has no transition {name!r}") from None

    def sample_points(self, rng: np.random.Generator, count: int) -> dict[str, np.ndarray]:
        """About ``count`` points spread over the charts, keyed by chart id."""
        if self.sampler is not None:
            return self.sampler(rng, count)
        per = max(1, count // len(self.charts))
        return {cid: c.sample(rng, per) for cid, c in self.charts.items()}

    def transitions_from(self, cid: str) -> list[TransitionMap]:
        return [t for t in self.transitions.values() if t.source == cid]


def transition(point, tmap: TransitionMap, atlas: Atlas | None = None) -> np.ndarray:
    """Map ``point`` through ``tmap``; periodic target axes are wrapped.

    Raises AtlasError if the point is outside the overlap.
    """
    x = np.asarray(point, dtype=float)
    if not np.all(tmap.overlap(x)):
        raise AtlasError(f"point {x.tolist()} is outside the overlap of {tmap.name!r}")
    y = np.asarray(tmap.forward(x), dtype=float)
    if atlas is not None:
        target = atlas.chart(tmap.target)
        y = target.wrap(y)
        if not np.all(target.contains(y)):
            raise AtlasError(f"transition {tmap.name!r} left chart {target.id!r}")
    return y
