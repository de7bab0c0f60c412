"""Interface geometries and their signed-distance functions.

Distances are measured to the exact interface curve.  Closed interfaces
(circle, square) are negative inside and positive outside; the open segment
used for fibers returns the unsigned distance, i.e. it is positive off-fiber
and zero on it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGeometryError


def _as_points(points):
    p = np.asarray(points, dtype=float)
    return p.reshape(-1, 2), p.ndim == 1


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    kind = "circle"
    closed = True

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidGeometryError(f"circle radius must be positive, got {self.radius}")

    def signed_distance(self, points):
        p, single = _as_points(points)
        c = np.asarray(self.center, dtype=float)
        d = np.hypot(p[:, 0] - c[0], p[:, 1] - c[1]) - self.radius
        return d[0] if single else d

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r, cx + r, cy + r)


@dataclass(frozen=True)
class Square:
    center: tuple[float, float]
    half_edge: float

    kind = "square"
    closed = True

    def __post_init__(self):
        if not self.half_edge > 0:
            raise InvalidGeometryError(f"square half edge must be positive, got {self.half_edge}")

    def signed_distance(self, points):
        p, single = _as_points(points)
        c = np.asarray(self.center, dtype=float)
        q = np.abs(p - c) - self.half_edge
        outside = np.hypot(np.maximum(q[:, 0], 0.0), np.maximum(q[:, 1], 0.0))
        inside = np.minimum(np.maximum(q[:, 0], q[:, 1]), 0.0)
        d = outside + inside
        return d[0] if single else d

    def bounds(self):
        cx, cy = self.center
        a = self.half_edge
        return (cx - a, cy - a, cx + a, cy + a)


@dataclass(frozen=True)
class Segment:
    start: tuple[float, float]
    end: tuple[float, float]

    kind = "segment"
    closed = False

    def __post_init__(self):
        if not self.length > 0:
            raise InvalidGeometryError("segment must have positive length")

    @property
    def length(self):
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    def signed_distance(self, points):
        p, single = _as_points(points)
        a = np.asarray(self.start, dtype=float)
        b = np.asarray(self.end, dtype=float)
        ab = b - a
        t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
        foot = a + t[:, None] * ab
        d = np.hypot(p[:, 0] - foot[:, 0], p[:, 1] - foot[:, 1])
        return d[0] if single else d

    def bounds(self):
        return (min(self.start[0], self.end[0]), min(self.start[1], self.end[1]),
                max(self.start[0], self.end[0]), max(self.start[1], self.end[1]))


InterfaceGeometry = Circle | Square | Segment


def signed_distance(geometry, points):
    """Signed distance of ``points`` (shape (2,) or (n, 2)) to ``geometry``."""
    return geometry.signed_distance(points)


def check_inside_domain(geometry, half_extent):
    x0, y0, x1, y1 = geometry.bounds()
    if min(x0, y0) < -half_extent or max(x1, y1) > half_extent:
        raise InvalidGeometryError(
            f"{geometry.kind} interface extends outside the domain [-{half_extent}, {half_extent}]^2")
