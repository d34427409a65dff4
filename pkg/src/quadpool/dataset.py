"""Scene annotations: JSON manifest I/O, validation, split checks and caching.

A manifest is a JSON array of scenes::

    [{"image": "lot_a/0001.ppm", "lot_id": "A", "split": "train",
      "spaces": [{"quad": [[x, y], [x, y], [x, y], [x, y]], "occupied": true}]}]

Image paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ManifestError
from .geometry import Quadrilateral
from .imaging import ImageBuffer, read_ppm

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class SpaceLabel:
    quad: Quadrilateral
    occupied: bool


@dataclass(frozen=True)
class SceneAnnotation:
    image_ref: Path
    lot_id: str
    split: str
    spaces: tuple[SpaceLabel, ...]

    def __post_init__(self):
        if not self.lot_id:
            raise ManifestError("lot_id must be non-empty")
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.spaces:
            raise ManifestError(f"scene {self.image_ref} has no parking spaces")

    @property
    def quads(self) -> list[Quadrilateral]:
        return [s.quad for s in self.spaces]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.occupied for s in self.spaces], dtype=bool)


@dataclass(frozen=True)
class DatasetStats:
    num_images: int
    num_spaces: int
    num_occupied: int
    occupied_fraction: float
    per_split_images: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "num_images": self.num_images,
            "num_spaces": self.num_spaces,
            "num_occupied": self.num_occupied,
            "occupied_fraction": self.occupied_fraction,
            "per_split_images": dict(self.per_split_images),
        }


@dataclass(frozen=True)
class SplitReport:
    """Lots that appear in more than one split, mapped to the splits they hit."""

    leaks: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.leaks

    def to_dict(self) -> dict:
        return {"lot_disjoint": self.ok, "violations": {k: list(v) for k, v in self.leaks.items()}}


def _parse_scene(raw, index: int, base: Path) -> SceneAnnotation:
    where = f"scene {index}"
    if not isinstance(raw, dict):
        raise ManifestError(f"{where}: expected an object, got {type(raw).__name__}")
    missing = {"image", "lot_id", "split", "spaces"} - raw.keys()
    if missing:
        raise ManifestError(f"{where}: missing keys {sorted(missing)}")
    where = f"scene {index} ({raw['image']})"
    if not isinstance(raw["spaces"], list):
        raise ManifestError(f"{where}: 'spaces' must be a list")
    spaces = []
    for j, sp in enumerate(raw["spaces"]):
        try:
            occupied = sp["occupied"]
            if not isinstance(occupied, bool):
                raise ManifestError("'occupied' must be true or false")
            quad = Quadrilateral(sp["quad"])
        except (KeyError, TypeError, ValueError) as e:
            # geometry errors are ValueErrors too
            raise ManifestError(f"{where}, space {j}: {e}") from e
        spaces.append(SpaceLabel(quad, occupied))
    try:
        return SceneAnnotation(
            image_ref=base / raw["image"],
            lot_id=str(raw["lot_id"]),
            split=raw["split"],
            spaces=tuple(spaces),
        )
    except ManifestError as e:
        raise ManifestError(f"{where}: {e}") from e


def parse_manifest(text: str, base: Path = Path(".")) -> list[SceneAnnotation]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, list):
        raise ManifestError("manifest must be a JSON array of scenes")
    return [_parse_scene(raw, i, base) for i, raw in enumerate(doc)]


def load_dataset(manifest_path) -> list[SceneAnnotation]:
    path = Path(manifest_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e.strerror}") from e
    return parse_manifest(text, path.parent)


def scene_to_dict(scene: SceneAnnotation, base: Path | None = None) -> dict:
    image = scene.image_ref
    if base is not None:
        image = Path(os.path.relpath(image, base))
    return {
        "image": image.as_posix(),
        "lot_id": scene.lot_id,
        "split": scene.split,
        "spaces": [{"quad": s.quad.tolist(), "occupied": s.occupied} for s in scene.spaces],
    }


def save_manifest(scenes: Sequence[SceneAnnotation], manifest_path) -> None:
    path = Path(manifest_path)
    doc = [scene_to_dict(s, path.parent) for s in scenes]
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def validate_splits(scenes: Iterable[SceneAnnotation]) -> SplitReport:
    seen: dict[str, set[str]] = defaultdict(set)
    for s in scenes:
        seen[s.lot_id].add(s.split)
    leaks = {
        lot: tuple(sp for sp in SPLITS if sp in splits)
        for lot, splits in sorted(seen.items())
        if len(splits) > 1
    }
    return SplitReport(leaks)


def compute_stats(scenes: Sequence[SceneAnnotation]) -> DatasetStats:
    per_split = {sp: 0 for sp in SPLITS}
    n_spaces = n_occ = 0
    for s in scenes:
        per_split[s.split] += 1
        n_spaces += len(s.spaces)
        n_occ += sum(sp.occupied for sp in s.spaces)
    return DatasetStats(
        num_images=len(scenes),
        num_spaces=n_spaces,
        num_occupied=n_occ,
        occupied_fraction=n_occ / n_spaces if n_spaces else 0.0,
        per_split_images=per_split,
    )


def select_split(scenes: Iterable, split: str) -> list:
    """Scenes (annotations or cached scenes) belonging to ``split``."""
    return [s for s in scenes if s.split == split]


@dataclass(frozen=True)
class CachedScene:
    annotation: SceneAnnotation
    image: ImageBuffer

    @property
    def split(self) -> str:
        return self.annotation.split

    @property
    def lot_id(self) -> str:
        return self.annotation.lot_id

    @property
    def quads(self) -> list[Quadrilateral]:
        return self.annotation.quads

    @property
    def labels(self) -> np.ndarray:
        return self.annotation.labels


def cache_in_memory(scenes: Iterable[SceneAnnotation]) -> tuple[CachedScene, ...]:
    """Decode every referenced image once; the result never touches the disk again."""
    return tuple(CachedScene(s, read_ppm(s.image_ref)) for s in scenes)

