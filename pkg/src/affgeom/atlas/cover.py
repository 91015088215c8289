"""Quadrature covers: midpoint grids on parameter boxes, mapped into charts.

A piece integrates an n-form given by its density with respect to
dx^1 ^ ... ^ dx^n in the piece's chart. The parameter box may differ from
the chart (log-polar parameters for the Hopf cover); ``to_chart`` and
``jacobian_det`` account for that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from affgeom import _kernels

# points per summation chunk; fixed so the reduction order does not depend
# on the number of workers
CHUNK = 16384


@dataclass(frozen=True, eq=False)
class QuadraturePiece:
    chart: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]
    to_chart: Callable[[np.ndarray], np.ndarray] | None = None
    jacobian_det: Callable[[np.ndarray], np.ndarray] | None = None
    weight: Callable[[np.ndarray], np.ndarray] | None = None
    orientation: int = 1

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or len(self.lower) != len(self.resolution):
            raise ValueError(f"piece on {self.chart!r}: box and resolution disagree in dimension")
        if any(r < 2 for r in self.resolution):
            raise ValueError(f"piece on {self.chart!r}: grid needs at least 2 cells per axis")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    def with_resolution(self, resolution) -> "QuadraturePiece":
        return QuadraturePiece(self.chart, self.lower, self.upper, tuple(int(r) for r in resolution),
                               self.to_chart, self.jacobian_det, self.weight, self.orientation)

    def nodes(self):
        """Midpoint nodes in parameter space and the cell volume."""
        axes = []
        cell = 1.0
        for lo, hi, r in zip(self.lower, self.upper, self.resolution):
            h = (hi - lo) / r
            axes.append(lo + (np.arange(r) + 0.5) * h)
            cell *= h
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1), cell

    def chart_points(self, u):
        return u if self.to_chart is None else self.to_chart(u)

    def weights(self, u, x):
        """Quadrature weight per node, excluding the form itself."""
        w = np.ones(len(u))
        if self.jacobian_det is not None:
            w = w * np.abs(self.jacobian_det(u))
        if self.weight is not None:
            w = w * self.weight(x)
        return w


@dataclass(frozen=True, eq=False)
class QuadratureCover:
    pieces: tuple[QuadraturePiece, ...]

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("quadrature cover needs at least one piece")

    def with_resolution(self, resolution) -> "QuadratureCover":
        """Same cover, every piece on the given grid (one entry per axis)."""
        return QuadratureCover(tuple(p.with_resolution(resolution) for p in self.pieces))

    @property
    def resolution(self):
        return [list(p.resolution) for p in self.pieces]

    def integrate(self, density: Callable[[str, np.ndarray], np.ndarray], workers: int = 1) -> float:
        """Sum of weighted midpoint rules over all pieces.

        ``density(chart_id, x)`` returns the form's coefficient at chart
        points ``x`` (shape (N, n)). Chunks of fixed size are reduced with
        pairwise summation in a fixed order, so the result does not depend
        on ``workers``.
        """
        jobs = []
        for piece in self.pieces:
            u, cell = piece.nodes()
            for start in range(0, len(u), CHUNK):
                jobs.append((piece, u[start:start + CHUNK], cell))

        def run(job):
            piece, u, cell = job
            x = piece.chart_points(u)
            vals = np.asarray(density(piece.chart, x), dtype=float)
            contrib = piece.orientation * cell * piece.weights(u, x) * vals
            return _kernels.backend().pairwise_sum(contrib)

        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                partial = list(pool.map(run, jobs))
        else:
            partial = [run(job) for job in jobs]
        return float(_kernels.backend().pairwise_sum(np.array(partial)))

    def weight_sum(self, chart: str, x) -> np.ndarray:
        """Sum of partition weights of all pieces on ``chart`` at points ``x``."""
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for p in self.pieces:
            if p.chart == chart:
                total = total + (np.ones(x.shape[:-1]) if p.weight is None else p.weight(x))
        return total
