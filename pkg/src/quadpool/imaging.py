"""RGB image buffers, bilinear resampling and the downsampling pyramid.

Images are float64 arrays of shape ``(height, width, 3)`` holding values in
``[0, 1]``. Pixel centers are at integer coordinates. Sampling outside the
image clamps to the nearest pixel center.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ImageLoadError, InvalidParameterError
from .geometry import AffineTransform

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    data: np.ndarray

    def __init__(self, data, copy: bool = True):
        a = np.array(data, dtype=np.float64, copy=copy)
        if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
            raise InvalidParameterError(f"expected an (H, W, 3) array, got shape {a.shape}")
        if a.size and not (a.min() >= 0.0 and a.max() <= 1.0):
            raise InvalidParameterError("pixel values must lie in [0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @classmethod
    def filled(cls, width: int, height: int, rgb=(0.5, 0.5, 0.5)) -> "ImageBuffer":
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return bool(np.array_equal(self.data, other.data))

    __hash__ = None


def _wrap(a: np.ndarray) -> ImageBuffer:
    # internal constructor: ``a`` is freshly allocated and already in range
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    img = object.__new__(ImageBuffer)
    object.__setattr__(img, "data", a)
    return img


def sample(img: ImageBuffer, xs, ys) -> np.ndarray:
    """Vectorized bilinear sampling; returns an array of shape ``xs.shape + (3,)``."""
    data = img.data
    h, w = data.shape[:2]
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1.0)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs), max(w - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(ys), max(h - 2, 0)).astype(np.intp)
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    flat = data.reshape(-1, 3)
    idx = y0 * w + x0
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    p00 = flat.take(idx, axis=0)
    p01 = flat.take(idx + dx, axis=0)
    p10 = flat.take(idx + dy, axis=0)
    p11 = flat.take(idx + dy + dx, axis=0)
    top = (1.0 - fx) * p00 + fx * p01
    bottom = (1.0 - fx) * p10 + fx * p11
    return (1.0 - fy) * top + fy * bottom


def bilinear_sample(img: ImageBuffer, x: float, y: float) -> tuple[float, float, float]:
    r, g, b = sample(img, x, y)
    return float(r), float(g), float(b)


def resize(img: ImageBuffer, new_w: int, new_h: int) -> ImageBuffer:
    """Bilinear resize with pixel-center alignment."""
    if new_w < 1 or new_h < 1:
        raise InvalidParameterError(f"target size must be positive, got {new_w}x{new_h}")
    if (new_w, new_h) == (img.width, img.height):
        return img
    sx = img.width / new_w
    sy = img.height / new_h
    xs = (np.arange(new_w) + 0.5) * sx - 0.5
    ys = (np.arange(new_h) + 0.5) * sy - 0.5
    return _wrap(_sample_separable(img.data, xs, ys))


def _sample_separable(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # grid sampling factorizes into a column pass then a row pass with the
    # same neighbours and weights as ``sample`` (equal up to rounding)
    h, w = data.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs), max(w - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(ys), max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    cols = data.take(y0, axis=0)
    cols *= 1.0 - fy
    cols += fy * data.take(y1, axis=0)
    out = cols.take(x0, axis=1)
    out *= 1.0 - fx
    out += fx * cols.take(x1, axis=1)
    return out


def resize_smaller_edge(img: ImageBuffer, target: int) -> ImageBuffer:
    if target < 1:
        raise InvalidParameterError(f"target edge must be positive, got {target}")
    w, h = img.width, img.height
    if w <= h:
        new_w, new_h = target, max(1, math.floor(target * h / w + 0.5))
    else:
        new_w, new_h = max(1, math.floor(target * w / h + 0.5)), target
    return resize(img, new_w, new_h)


def warp_affine(img: ImageBuffer, t: AffineTransform, fill=(0.5, 0.5, 0.5)) -> ImageBuffer:
    """Forward-warp ``img`` by ``t`` onto a canvas of the same size.

    Each output pixel samples the source at ``t^-1(p)``. Source points outside
    the image's pixel extent take ``fill``.
    """
    h, w = img.height, img.width
    inv = t.inverse()
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = inv.apply(gx, gy)
    out = sample(img, sx, sy)
    outside = (sx < -0.5) | (sx > w - 0.5) | (sy < -0.5) | (sy > h - 0.5)
    out[outside] = np.asarray(fill, dtype=np.float64)
    return _wrap(out)


def rotate_about_center(img: ImageBuffer, angle: float, fill=(0.5, 0.5, 0.5)) -> ImageBuffer:
    if angle == 0:
        return img
    center = ((img.width - 1) / 2.0, (img.height - 1) / 2.0)
    return warp_affine(img, AffineTransform.rotation(angle, center), fill)


def luma(data: np.ndarray) -> np.ndarray:
    return data @ LUMA


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    delta = maxc - rgb.min(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, delta / maxc, 0.0)
        hue = np.where(r == maxc, (g - b) / delta, np.where(g == maxc, 2.0 + (b - r) / delta, 4.0 + (r - g) / delta))
    hue = np.where(delta > 0, (hue / 6.0) % 1.0, 0.0)
    return np.stack([hue, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    # closed form: channel n is v - v*s*clip(min(k, 4 - k), 0, 1), k = (n + 6h) mod 6
    h6 = hsv[..., 0:1] * 6.0
    s, v = hsv[..., 1:2], hsv[..., 2:3]
    k = (np.array([5.0, 3.0, 1.0]) + h6) % 6.0
    return v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


def adjust_photometric(
    img: ImageBuffer,
    brightness: float = 1.0,
    contrast: float = 1.0,
    saturation: float = 1.0,
    hue: float = 0.0,
) -> ImageBuffer:
    """Brightness, contrast, saturation, then hue; clamped to [0, 1] after each.

    ``hue`` is in degrees and rotates the HSV hue channel. ``saturation=0``
    yields per-pixel luma grayscale.
    """
    for name, f in (("brightness", brightness), ("contrast", contrast)):
        if not f > 0:
            raise InvalidParameterError(f"{name} factor must be positive, got {f}")
    # saturation 0 is allowed: it is plain grayscale conversion
    if not saturation >= 0:
        raise InvalidParameterError(f"saturation factor must be non-negative, got {saturation}")
    if not -180.0 <= hue <= 180.0:
        raise InvalidParameterError(f"hue shift must be in [-180, 180], got {hue}")
    if brightness == 1 and contrast == 1 and saturation == 1 and hue == 0:
        return img
    x = img.data
    if brightness != 1:
        x = np.clip(x * brightness, 0.0, 1.0)
    if contrast != 1:
        mean = luma(x).mean()
        x = np.clip(contrast * x + (1.0 - contrast) * mean, 0.0, 1.0)
    if saturation != 1:
        gray = luma(x)[..., None]
        x = np.clip(saturation * x + (1.0 - saturation) * gray, 0.0, 1.0)
    if hue != 0:
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + hue / 360.0) % 1.0
        x = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return _wrap(np.array(x, dtype=np.float64))


@dataclass(frozen=True)
class ImagePyramid:
    """Level 0 is the input; each further level halves both sides (rounding up)."""

    levels: tuple[ImageBuffer, ...]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k: int) -> ImageBuffer:
        return self.levels[k]


def build_pyramid(img: ImageBuffer, num_levels: int) -> ImagePyramid:
    if num_levels < 1:
        raise InvalidParameterError("a pyramid needs at least one level")
    levels = [img]
    for k in range(1, num_levels):
        prev = levels[-1]
        if prev.width == 1 and prev.height == 1:
            raise InvalidParameterError(
                f"{num_levels} levels requested but level {k - 1} is already 1x1"
            )
        levels.append(resize(prev, math.ceil(prev.width / 2), math.ceil(prev.height / 2)))
    return ImagePyramid(tuple(levels))


def draw_polyline(img: ImageBuffer, points: Sequence, rgb=(1.0, 0.0, 0.0), closed=True) -> ImageBuffer:
    """Rasterize line segments through ``points`` (nearest-pixel, 1 px wide)."""
    out = np.array(img.data)
    h, w = out.shape[:2]
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    segs = n if closed else n - 1
    for i in range(segs):
        a, b = pts[i], pts[(i + 1) % n]
        steps = int(np.ceil(np.abs(b - a).max())) + 1
        t = np.linspace(0.0, 1.0, steps + 1)
        xs = np.rint(a[0] + t * (b[0] - a[0])).astype(np.intp)
        ys = np.rint(a[1] + t * (b[1] - a[1])).astype(np.intp)
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        out[ys[ok], xs[ok]] = rgb
    return _wrap(out)


def to_uint8(img: ImageBuffer) -> np.ndarray:
    # round half up
    return np.floor(img.data * 255.0 + 0.5).astype(np.uint8)


def from_uint8(a: np.ndarray) -> ImageBuffer:
    return _wrap(np.asarray(a, dtype=np.float64) / 255.0)


def write_ppm(img: ImageBuffer, path) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(to_uint8(img).tobytes())


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        tokens.append(int(buf[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path) -> ImageBuffer:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise ImageLoadError(f"cannot read image {os.fspath(path)}: {e.strerror}") from e
    try:
        if buf[:2] != b"P6":
            raise ValueError("not a binary PPM (P6) file")
        (w, h, maxval), offset = _ppm_tokens(buf[2:], 3)
        if maxval != 255:
            raise ValueError(f"unsupported maxval {maxval}")
        raster = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=2 + offset)
    except ValueError as e:
        raise ImageLoadError(f"corrupt image {os.fspath(path)}: {e}") from e
    return from_uint8(raster.reshape(h, w, 3))
