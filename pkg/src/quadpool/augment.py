"""Consistent geometric and photometric augmentation of a scene and its quads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import SpaceLabel
from .errors import InvalidParameterError
from .geometry import AffineTransform, apply_transform
from .imaging import ImageBuffer, adjust_photometric, warp_affine

FILL = (0.5, 0.5, 0.5)


def _check_interval(name: str, lo: float, hi: float, identity: float) -> None:
    if not (np.isfinite(lo) and np.isfinite(hi) and lo <= identity <= hi):
        raise InvalidParameterError(f"{name} must be an interval containing {identity}, got ({lo}, {hi})")


@dataclass(frozen=True)
class AugmentParams:
    flip_prob: float = 0.5
    max_rotation: float = 15.0
    brightness_range: tuple[float, float] = (0.8, 1.2)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    saturation_range: tuple[float, float] = (0.8, 1.2)
    hue_range: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidParameterError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not self.max_rotation >= 0:
            raise InvalidParameterError(f"max_rotation must be >= 0, got {self.max_rotation}")
        _check_interval("brightness_range", *self.brightness_range, 1.0)
        _check_interval("contrast_range", *self.contrast_range, 1.0)
        _check_interval("saturation_range", *self.saturation_range, 1.0)
        _check_interval("hue_range", *self.hue_range, 0.0)
        if self.brightness_range[0] <= 0 or self.contrast_range[0] <= 0 or self.saturation_range[0] < 0:
            raise InvalidParameterError("photometric factors must stay positive")
        if not (-180.0 <= self.hue_range[0] and self.hue_range[1] <= 180.0):
            raise InvalidParameterError("hue shifts must stay within [-180, 180]")

    @classmethod
    def none(cls) -> "AugmentParams":
        """Parameters that always sample the identity."""
        return cls(0.0, 0.0, (1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0))


@dataclass(frozen=True)
class Augmentation:
    """One sampled draw: the geometric map plus photometric factors."""

    flip: bool
    angle: float
    transform: AffineTransform
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0

    @property
    def is_geometric_identity(self) -> bool:
        return not self.flip and self.angle == 0.0


def scene_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one scene, keyed e.g. by (seed, epoch, index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def sample_augmentation(params: AugmentParams, rng: np.random.Generator, width: int, height: int) -> Augmentation:
    """Draw flip, angle, brightness, contrast, saturation and hue in that order.

    All six values are drawn every time, so the stream position does not depend
    on the outcome. The flip is applied before the rotation; both are about the
    image center.
    """
    flip = bool(rng.random() < params.flip_prob)
    angle = float(rng.uniform(-params.max_rotation, params.max_rotation))
    b = float(rng.uniform(*params.brightness_range))
    c = float(rng.uniform(*params.contrast_range))
    s = float(rng.uniform(*params.saturation_range))
    h = float(rng.uniform(*params.hue_range))
    t = AffineTransform.flip_x(width) if flip else AffineTransform.identity()
    if angle != 0.0:
        t = t.then(AffineTransform.rotation(angle, ((width - 1) / 2.0, (height - 1) / 2.0)))
    return Augmentation(flip, angle, t, b, c, s, h)


def apply_augmentation(
    aug: Augmentation, img: ImageBuffer, spaces: Sequence[SpaceLabel]
) -> tuple[ImageBuffer, list[SpaceLabel]]:
    if aug.is_geometric_identity:
        out, new_spaces = img, list(spaces)
    else:
        out = warp_affine(img, aug.transform, FILL)
        new_spaces = [SpaceLabel(apply_transform(s.quad, aug.transform), s.occupied) for s in spaces]
    out = adjust_photometric(out, aug.brightness, aug.contrast, aug.saturation, aug.hue)
    return out, new_spaces


def augment_scene(
    img: ImageBuffer, spaces: Sequence[SpaceLabel], params: AugmentParams, rng: np.random.Generator
) -> tuple[ImageBuffer, list[SpaceLabel]]:
    aug = sample_augmentation(params, rng, img.width, img.height)
    return apply_augmentation(aug, img, spaces)
