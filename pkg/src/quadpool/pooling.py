"""Per-space pooling: quadrilateral warp, bounding-square crop and level assignment."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, InvalidParameterError
from .geometry import (
    MIN_AREA,
    TIE_TOL,
    Quadrilateral,
    homography_from_unit_square,
    min_bounding_square,
    quad_area,
)
from .imaging import ImageBuffer, ImagePyramid, sample

PYRAMID_POOL_SIZE = 7


class PoolingMethod(str, enum.Enum):
    QUADRILATERAL = "quadrilateral"
    SQUARE = "square"

    @classmethod
    def parse(cls, name: str) -> "PoolingMethod":
        if isinstance(name, cls):
            return name
        aliases = {"quad": cls.QUADRILATERAL, "quadrilateral": cls.QUADRILATERAL, "square": cls.SQUARE}
        try:
            return aliases[str(name).lower()]
        except KeyError:
            raise InvalidParameterError(f"unknown pooling method {name!r}") from None


@dataclass(frozen=True, eq=False)
class PooledPatch:
    data: np.ndarray

    @property
    def size(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class LevelAssignConfig:
    """Constants of the FPN level heuristic.

    Pyramid level ``k`` plays the role of FPN level ``P(k+2)``, so the
    heuristic's canonical level 4 becomes ``k0 = 2`` here.
    """

    k0: int = 2
    canonical_size: float = 224.0
    level_min: int = 0
    level_max: int = 3

    def __post_init__(self):
        if not self.level_min <= self.k0 <= self.level_max:
            raise InvalidParameterError(f"inconsistent level configuration {self}")
        if self.canonical_size <= 0:
            raise InvalidParameterError("canonical_size must be positive")


def sample_grid(quad: Quadrilateral, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Image coordinates of the S x S cell centers warped into ``quad``.

    Cell ``(i, j)`` maps from unit-square point ``((j + .5) / S, (i + .5) / S)``.
    The 1/S scale is folded into the homography so that an axis-aligned
    S-pixel square lands exactly on pixel centers.
    """
    if S < 1:
        raise InvalidParameterError(f"patch size must be >= 1, got {S}")
    (a, b, c0), (d, e, f), (g, h, i) = homography_from_unit_square(quad).m.tolist()
    c = np.arange(S, dtype=np.float64) + 0.5
    u = c[None, :]
    v = c[:, None]
    w = (g / S) * u + (h / S) * v + i
    xs = ((a / S) * u + (b / S) * v + c0) / w
    ys = ((d / S) * u + (e / S) * v + f) / w
    return xs, ys


def pool_quadrilateral(img: ImageBuffer, quad: Quadrilateral, S: int) -> PooledPatch:
    xs, ys = sample_grid(quad, S)
    return PooledPatch(sample(img, xs, ys))


def pool_square(img: ImageBuffer, quad: Quadrilateral, S: int) -> PooledPatch:
    return pool_quadrilateral(img, min_bounding_square(quad), S)


def pool(img: ImageBuffer, quad: Quadrilateral, S: int, method: PoolingMethod) -> PooledPatch:
    if method is PoolingMethod.SQUARE:
        return pool_square(img, quad, S)
    return pool_quadrilateral(img, quad, S)


def pool_many(
    img: ImageBuffer,
    quads: Sequence[Quadrilateral],
    S: int,
    method: PoolingMethod,
    threads: int = 1,
) -> np.ndarray:
    """Pool every quad into an ``(N, S, S, 3)`` array, optionally in parallel."""
    out = np.empty((len(quads), S, S, 3))
    if threads > 1 and len(quads) > 1:

        def work(i):
            out[i] = pool(img, quads[i], S, method).data

        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, range(len(quads))))
    else:
        for i, q in enumerate(quads):
            out[i] = pool(img, q, S, method).data
    return out


def assign_level(quad: Quadrilateral, cfg: LevelAssignConfig) -> int:
    return level_of_area(quad_area(quad), cfg)


def scale_quad(quad: Quadrilateral, sx: float, sy: float | None = None) -> Quadrilateral:
    """Scale about the origin; same result as ``apply_transform`` with ``diag(sx, sy)``."""
    sy = sx if sy is None else sy
    if abs(sx * sy) < 1e-12:
        raise DegenerateGeometryError("affine transform is singular")
    return Quadrilateral(quad.vertices * np.array([sx, sy]))


def _row_error(row: int, reason: str) -> DegenerateGeometryError:
    err = DegenerateGeometryError(f"space {row}: {reason}")
    err.row, err.reason = int(row), reason
    return err


def _batch_signed_area(V: np.ndarray) -> np.ndarray:
    # same accumulation order as the scalar shoelace loop in geometry
    x, y = V[..., 0], V[..., 1]
    total = x[:, 0] * y[:, 1] - x[:, 1] * y[:, 0]
    for k in (1, 2, 3):
        total = total + (x[:, k] * y[:, (k + 1) % 4] - x[:, (k + 1) % 4] * y[:, k])
    return 0.5 * total


def _batch_bounding_squares(V: np.ndarray) -> np.ndarray:
    lo, hi = V.min(axis=1), V.max(axis=1)
    half = (hi - lo).max(axis=1) / 2.0
    cx, cy = ((lo + hi) / 2.0).T
    sq = np.stack([
        np.stack([cx - half, cy - half], axis=1),
        np.stack([cx + half, cy - half], axis=1),
        np.stack([cx + half, cy + half], axis=1),
        np.stack([cx - half, cy + half], axis=1),
    ], axis=1)
    small = np.flatnonzero(~(_batch_signed_area(sq) >= MIN_AREA))
    if small.size:
        raise _row_error(small[0], f"bounding square area is below {MIN_AREA}")
    return sq


def _batch_grids(V: np.ndarray, S: int) -> tuple[np.ndarray, np.ndarray]:
    # elementwise transcription of homography_from_points + sample_grid, so
    # each quad's grid is bit-identical to the one-at-a-time path
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = (V[:, k].T for k in range(4))
    sx = x0 - x1 + x2 - x3
    sy = y0 - y1 + y2 - y3
    dx1, dx2 = x1 - x2, x3 - x2
    dy1, dy2 = y1 - y2, y3 - y2
    det = dx1 * dy2 - dx2 * dy1
    bad = np.flatnonzero(~(np.abs(det) >= 1e-12))
    if bad.size:
        raise _row_error(bad[0], "vertices are collinear; no homography")
    g = (sx * dy2 - dx2 * sy) / det
    h = (dx1 * sy - sx * dy1) / det
    a, b = x1 - x0 + g * x1, x3 - x0 + h * x3
    d, e = y1 - y0 + g * y1, y3 - y0 + h * y3
    c = np.arange(S, dtype=np.float64) + 0.5
    u, v = c[None, None, :], c[None, :, None]
    col = lambda t: t[:, None, None]  # noqa: E731
    w = col(g / S) * u + col(h / S) * v + 1.0
    xs = (col(a / S) * u + col(b / S) * v + col(x0)) / w
    ys = (col(d / S) * u + col(e / S) * v + col(y0)) / w
    return xs, ys


def canonical_vertices(V: np.ndarray) -> np.ndarray:
    """Row-wise ``canonical_order`` for an ``(N, 4, 2)`` vertex array."""
    V = np.where((_batch_signed_area(V) < 0)[:, None, None], V[:, ::-1], V)
    y = V[..., 1]
    near_top = y <= (y.min(axis=1) + TIE_TOL)[:, None]
    start = np.where(near_top, V[..., 0], np.inf).argmin(axis=1)
    return V[np.arange(len(V))[:, None], (start[:, None] + np.arange(4)) % 4]


def scale_vertices(V: np.ndarray, sx, sy=None) -> np.ndarray:
    """Row-wise ``scale_quad``: scale factors may be scalars or one per row.

    Raises with the first row whose result is too small to be a quad.
    """
    sx = np.broadcast_to(np.asarray(sx, dtype=np.float64), (len(V),))
    sy = sx if sy is None else np.broadcast_to(np.asarray(sy, dtype=np.float64), (len(V),))
    bad = np.flatnonzero(~(np.abs(sx * sy) >= 1e-12))
    if bad.size:
        raise _row_error(bad[0], "affine transform is singular")
    out = V * np.stack([sx, sy], axis=1)[:, None, :]
    small = np.flatnonzero(~(np.abs(_batch_signed_area(out)) >= MIN_AREA))
    if small.size:
        raise _row_error(small[0], f"quadrilateral area is below {MIN_AREA} after scaling")
    return canonical_vertices(out)


def pool_vertices(img: ImageBuffer, V: np.ndarray, S: int, method: PoolingMethod) -> np.ndarray:
    """Pool canonical ``(N, 4, 2)`` vertex rows into ``(N, S, S, 3)`` patches."""
    method = PoolingMethod.parse(method)
    if S < 1:
        raise InvalidParameterError(f"patch size must be >= 1, got {S}")
    if len(V) == 0:
        return np.empty((0, S, S, 3))
    if method is PoolingMethod.SQUARE:
        V = _batch_bounding_squares(V)
    xs, ys = _batch_grids(V, S)
    return sample(img, xs, ys)


def pool_batch(img: ImageBuffer, quads: Sequence[Quadrilateral], S: int, method: PoolingMethod) -> np.ndarray:
    """``(N, S, S, 3)`` patches in one vectorized pass; equal to pooling each quad alone."""
    V = np.stack([q.vertices for q in quads]) if quads else np.empty((0, 4, 2))
    return pool_vertices(img, V, S, method)


def level_of_area(area: float, cfg: LevelAssignConfig) -> int:
    k = math.floor(cfg.k0 + math.log2(math.sqrt(area) / cfg.canonical_size))
    return min(max(k, cfg.level_min), cfg.level_max)


def pool_batch_from_pyramid(
    pyr: ImagePyramid, V: np.ndarray, method: PoolingMethod, cfg: LevelAssignConfig
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Level-0 vertex rows to 7x7 patches, one vectorized pass per pyramid level.

    Row ``i`` of the result equals ``pool_from_pyramid(pyr, quad_i, ...)``.
    """
    areas = np.abs(_batch_signed_area(V)).tolist() if len(V) else []
    levels = tuple(level_of_area(a, cfg) for a in areas)
    if any(not 0 <= k < len(pyr) for k in levels):
        raise InvalidParameterError(f"levels {sorted(set(levels))} not all in a {len(pyr)}-level pyramid")
    out = np.empty((len(V), PYRAMID_POOL_SIZE, PYRAMID_POOL_SIZE, 3))
    lv = np.array(levels, dtype=int)
    for k in sorted(set(levels)):
        idx = np.flatnonzero(lv == k)
        try:
            Vk = V[idx] if k == 0 else scale_vertices(V[idx], 1.0 / 2**k)
            out[idx] = pool_vertices(pyr[k], Vk, PYRAMID_POOL_SIZE, method)
        except DegenerateGeometryError as e:
            if not hasattr(e, "row"):
                raise
            # report the caller's row number, not the position within the level
            raise _row_error(idx[e.row], e.reason) from e
    return out, levels


def pool_from_pyramid(
    pyr: ImagePyramid,
    quad: Quadrilateral,
    method: PoolingMethod,
    cfg: LevelAssignConfig,
    level: int | None = None,
) -> PooledPatch:
    """Pool a 7x7 patch from the level chosen by ``assign_level`` (or ``level``)."""
    k = assign_level(quad, cfg) if level is None else level
    if not 0 <= k < len(pyr):
        raise InvalidParameterError(f"level {k} not in a {len(pyr)}-level pyramid")
    q = quad if k == 0 else scale_quad(quad, 1.0 / 2**k)
    return pool(pyr[k], q, PYRAMID_POOL_SIZE, method)
