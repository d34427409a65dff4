"""Quadrilateral primitives, homographies and affine transforms.

Coordinates are image pixels with ``x`` to the right and ``y`` down. Pixel
centers sit at integer coordinates, so pixel ``(c, r)`` covers the square
``[c - 0.5, c + 0.5] x [r - 0.5, r + 0.5]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGeometryError

MIN_AREA = 1e-6
TIE_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _signed_area(pts) -> float:
    p = pts.tolist() if isinstance(pts, np.ndarray) else pts
    total = 0.0
    for (x0, y0), (x1, y1) in zip(p, p[1:] + p[:1]):
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_segment(a, b, p):
        return (
            min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
        )

    return (
        (d1 == 0 and on_segment(q1, q2, p1))
        or (d2 == 0 and on_segment(q1, q2, p2))
        or (d3 == 0 and on_segment(p1, p2, q1))
        or (d4 == 0 and on_segment(p1, p2, q2))
    )


def canonical_order(points, signed_area: float | None = None) -> np.ndarray:
    """Return the 4 vertices clockwise (y down), starting at the min ``(y, x)``."""
    pts = np.array(points, dtype=np.float64).reshape(4, 2)
    if (_signed_area(pts) if signed_area is None else signed_area) < 0:
        pts = pts[::-1]
    # y ties within TIE_TOL fall through to x so float noise cannot flip the start
    top = pts[:, 1].min() + TIE_TOL
    start = min((i for i in range(4) if pts[i, 1] <= top), key=lambda i: pts[i, 0])
    return pts[[(start + k) % 4 for k in range(4)]]


@dataclass(frozen=True, eq=False)
class Quadrilateral:
    """Four-vertex parking-space outline in canonical winding.

    The constructor accepts the vertices in either cyclic direction and from
    any starting vertex; they are stored clockwise (in y-down image
    coordinates) starting from the vertex with the smallest ``y``, ties broken
    by smallest ``x``.
    """

    vertices: np.ndarray

    def __init__(self, points: Iterable[Sequence[float]]):
        pts = np.array(list(points), dtype=np.float64)
        if pts.shape != (4, 2):
            raise DegenerateGeometryError(f"expected 4 (x, y) vertices, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateGeometryError("vertex coordinates must be finite")
        # plain floats: the checks below are scalar and numpy scalars are slow
        p = pts.tolist()
        if _segments_cross(p[0], p[1], p[2], p[3]) or _segments_cross(p[1], p[2], p[3], p[0]):
            raise DegenerateGeometryError("quadrilateral is self-intersecting")
        area = _signed_area(p)
        if abs(area) < MIN_AREA:
            raise DegenerateGeometryError(f"quadrilateral area {abs(area):.3g} px^2 is below {MIN_AREA}")
        object.__setattr__(self, "vertices", _readonly(canonical_order(pts, area)))

    @classmethod
    def _trusted(cls, vertices: np.ndarray) -> "Quadrilateral":
        # for callers that build vertices already valid and in canonical order
        q = object.__new__(cls)
        object.__setattr__(q, "vertices", _readonly(vertices))
        return q

    def __eq__(self, other):
        if not isinstance(other, Quadrilateral):
            return NotImplemented
        return bool(np.array_equal(self.vertices, other.vertices))

    def __hash__(self):
        return hash(self.vertices.tobytes())

    def __repr__(self):
        pts = ", ".join(f"({x:g}, {y:g})" for x, y in self.vertices)
        return f"Quadrilateral([{pts}])"

    def tolist(self) -> list[list[float]]:
        return self.vertices.tolist()

    @property
    def centroid(self) -> np.ndarray:
        """Area centroid of the polygon."""
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = 0.5 * cross.sum()
        return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)

    def contains(self, xs, ys, slack: float = 0.0) -> np.ndarray:
        """Point-in-polygon test for a convex quad, ``slack`` pixels of tolerance."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        inside = np.ones(np.broadcast(xs, ys).shape, dtype=bool)
        v = self.vertices
        for i in range(4):
            a, b = v[i], v[(i + 1) % 4]
            ex, ey = b[0] - a[0], b[1] - a[1]
            # clockwise in y-down coordinates keeps the interior on the right
            # of each edge, i.e. a non-negative cross product
            cross = ex * (ys - a[1]) - ey * (xs - a[0])
            inside &= cross >= -slack * math.hypot(ex, ey)
        return inside


@dataclass(frozen=True, eq=False)
class Homography3x3:
    """Projective map ``[x, y, 1] ~ m @ [u, v, 1]`` with ``m[2, 2] == 1``."""

    m: np.ndarray

    def __init__(self, m):
        m = np.array(m, dtype=np.float64).reshape(3, 3)
        if m[2, 2] == 0 or not np.all(np.isfinite(m)):
            raise DegenerateGeometryError("homography cannot be normalized")
        m = m / m[2, 2]
        (a, b, c), (d, e, f), (g, h, i) = m.tolist()
        if abs(a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)) < 1e-300:
            raise DegenerateGeometryError("homography is singular")
        object.__setattr__(self, "m", _readonly(m))

    def apply(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        m = self.m
        w = m[2, 0] * u + m[2, 1] * v + m[2, 2]
        return (m[0, 0] * u + m[0, 1] * v + m[0, 2]) / w, (
            m[1, 0] * u + m[1, 1] * v + m[1, 2]
        ) / w

    def inverse(self) -> "Homography3x3":
        return Homography3x3(np.linalg.inv(self.m))


def homography_from_points(pts) -> Homography3x3:
    """Map the unit square corners (0,0),(1,0),(1,1),(0,1) onto ``pts`` in order.

    Closed-form square-to-quad construction; no linear solve is involved.
    """
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = np.asarray(pts, dtype=np.float64).reshape(4, 2).tolist()
    sx = x0 - x1 + x2 - x3
    sy = y0 - y1 + y2 - y3
    dx1, dx2 = x1 - x2, x3 - x2
    dy1, dy2 = y1 - y2, y3 - y2
    det = dx1 * dy2 - dx2 * dy1
    if abs(det) < 1e-12:
        raise DegenerateGeometryError("vertices are collinear; no homography")
    g = (sx * dy2 - dx2 * sy) / det
    h = (dx1 * sy - sx * dy1) / det
    m = np.array(
        [
            [x1 - x0 + g * x1, x3 - x0 + h * x3, x0],
            [y1 - y0 + g * y1, y3 - y0 + h * y3, y0],
            [g, h, 1.0],
        ]
    )
    return Homography3x3(m)


def homography_from_unit_square(quad: Quadrilateral) -> Homography3x3:
    return homography_from_points(quad.vertices)


def quad_area(quad: Quadrilateral) -> float:
    return abs(_signed_area(quad.vertices))


def min_bounding_square(quad: Quadrilateral) -> Quadrilateral:
    """Smallest axis-aligned square centered on the quad's bounding box."""
    lo = quad.vertices.min(axis=0)
    hi = quad.vertices.max(axis=0)
    side = float(max(hi - lo))
    cx, cy = ((lo + hi) / 2.0).tolist()
    half = side / 2.0
    # listed clockwise from the top-left corner, i.e. already canonical
    pts = [[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half], [cx - half, cy + half]]
    area = _signed_area(pts)
    if area < MIN_AREA:
        raise DegenerateGeometryError(f"quadrilateral area {area:.3g} px^2 is below {MIN_AREA}")
    return Quadrilateral._trusted(np.array(pts))


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """``p -> linear @ p + translation`` on image coordinates."""

    linear: np.ndarray
    translation: np.ndarray

    def __init__(self, linear, translation=(0.0, 0.0)):
        linear = np.array(linear, dtype=np.float64).reshape(2, 2)
        translation = np.array(translation, dtype=np.float64).reshape(2)
        object.__setattr__(self, "linear", _readonly(linear))
        object.__setattr__(self, "translation", _readonly(translation))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2))

    @classmethod
    def rotation(cls, degrees: float, center=(0.0, 0.0)) -> "AffineTransform":
        """Rotation by ``degrees`` about ``center``; positive turns +x toward +y."""
        t = math.radians(degrees)
        c, s = math.cos(t), math.sin(t)
        lin = np.array([[c, -s], [s, c]])
        center = np.asarray(center, dtype=np.float64)
        return cls(lin, center - lin @ center)

    @classmethod
    def flip_x(cls, width: int) -> "AffineTransform":
        """Left-right mirror of an image ``width`` pixels wide."""
        return cls([[-1.0, 0.0], [0.0, 1.0]], (width - 1.0, 0.0))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def apply(self, xs, ys) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        a = self.linear
        return (
            a[0, 0] * xs + a[0, 1] * ys + self.translation[0],
            a[1, 0] * xs + a[1, 1] * ys + self.translation[1],
        )

    def then(self, other: "AffineTransform") -> "AffineTransform":
        """Composition applying ``self`` first, then ``other``."""
        return AffineTransform(
            other.linear @ self.linear, other.linear @ self.translation + other.translation
        )

    def inverse(self) -> "AffineTransform":
        if abs(self.det) < 1e-12:
            raise DegenerateGeometryError("affine transform is singular")
        inv = np.linalg.inv(self.linear)
        return AffineTransform(inv, -inv @ self.translation)


def apply_transform(quad: Quadrilateral, t: AffineTransform) -> Quadrilateral:
    if abs(t.det) < 1e-12:
        raise DegenerateGeometryError("affine transform is singular")
    xs, ys = t.apply(quad.vertices[:, 0], quad.vertices[:, 1])
    return Quadrilateral(np.stack([xs, ys], axis=1))
