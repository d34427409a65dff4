"""Synthetic parking-lot scenes with exact ground truth.

A lot is a grid of parking spaces on a ground plane (rows stacked in depth,
the camera looking from the near side). The ground plane is projected into
the image through a perspective homography, so far rows appear smaller.
Occupied spaces get a flat dark "vehicle" quad; ``occlusion_strength`` pushes
vehicles toward the camera so they spill into the next space's outline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import SPLITS, DatasetStats, SceneAnnotation, SpaceLabel, save_manifest
from .errors import GenerationError
from .geometry import AffineTransform, Homography3x3, Quadrilateral, homography_from_points
from .imaging import ImageBuffer, write_ppm

ASPHALT_RANGE = (0.45, 0.62)
VEHICLE_RANGE = (0.04, 0.28)
LINE_VALUE = 0.92


@dataclass(frozen=True)
class LotSpec:
    lot_id: str
    seed: int = 0
    rows: int = 2
    spaces_per_row: int = 10
    space_width: float = 22.0
    space_depth: float = 44.0
    tilt: float = 0.35
    yaw: float = 0.0
    occupancy_rate: float = 0.5
    occlusion_strength: float = 0.0
    noise_sigma: float = 0.02
    image_width: int = 256
    image_height: int = 192
    fill: float = 0.88
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.lot_id:
            raise GenerationError("lot_id must be non-empty")
        for name in ("occupancy_rate", "occlusion_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GenerationError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 <= self.tilt < 1.0:
            raise GenerationError(f"tilt must be in [0, 1), got {self.tilt}")
        if min(self.rows, self.spaces_per_row, self.image_width, self.image_height) < 1:
            raise GenerationError("counts and image size must be positive")
        if self.space_width <= 0 or self.space_depth <= 0 or self.noise_sigma < 0:
            raise GenerationError("space size must be positive and noise non-negative")


@dataclass(frozen=True)
class SpaceRecord:
    """What the generator decided for one space."""

    row: int
    col: int
    occupied: bool
    vehicle: Quadrilateral | None
    vehicle_value: float | None


@dataclass(frozen=True)
class GeneratedScene:
    image: ImageBuffer
    annotation: SceneAnnotation
    ledger: tuple[SpaceRecord, ...]
    asphalt_value: float


def ground_homography(spec: LotSpec) -> Homography3x3:
    """Map ground coordinates (x along a row, y toward the camera) to pixels."""
    W = spec.spaces_per_row * spec.space_width
    D = spec.rows * spec.space_depth
    bottom_w = spec.fill * spec.image_width
    top_w = bottom_w * (1.0 - spec.tilt)
    height = D * bottom_w / W * (1.0 - 0.5 * spec.tilt)
    if height > 0.9 * spec.image_height:
        k = 0.9 * spec.image_height / height
        bottom_w, top_w, height = bottom_w * k, top_w * k, height * k
    cx = (spec.image_width - 1) / 2.0 + spec.offset[0]
    cy = (spec.image_height - 1) / 2.0 + spec.offset[1]
    top, bottom = cy - height / 2, cy + height / 2
    trapezoid = np.array(
        [
            (cx - top_w / 2, top),
            (cx + top_w / 2, top),
            (cx + bottom_w / 2, bottom),
            (cx - bottom_w / 2, bottom),
        ]
    )
    if spec.yaw:
        rot = AffineTransform.rotation(spec.yaw, (cx, cy))
        trapezoid = np.stack(rot.apply(trapezoid[:, 0], trapezoid[:, 1]), axis=1)
    unit_to_image = homography_from_points(trapezoid).m
    return Homography3x3(unit_to_image @ np.diag([1.0 / W, 1.0 / D, 1.0]))


def _project(H: Homography3x3, rect) -> Quadrilateral:
    (x0, y0), (x1, y1) = rect
    xs, ys = H.apply([x0, x1, x1, x0], [y0, y0, y1, y1])
    return Quadrilateral(np.stack([xs, ys], axis=1))


def _fill_quad(canvas: np.ndarray, quad: Quadrilateral, rgb) -> None:
    h, w = canvas.shape[:2]
    lo = np.maximum(np.floor(quad.vertices.min(axis=0)).astype(int), 0)
    hi = np.minimum(np.ceil(quad.vertices.max(axis=0)).astype(int), [w - 1, h - 1])
    if np.any(hi < lo):
        return
    ys, xs = np.mgrid[lo[1] : hi[1] + 1, lo[0] : hi[0] + 1]
    mask = quad.contains(xs, ys)
    canvas[ys[mask], xs[mask]] = rgb


def _draw_segment(canvas: np.ndarray, a, b, rgb) -> None:
    h, w = canvas.shape[:2]
    steps = int(np.ceil(np.abs(np.subtract(b, a)).max())) * 2 + 1
    t = np.linspace(0.0, 1.0, steps)
    xs = np.rint(a[0] + t * (b[0] - a[0])).astype(int)
    ys = np.rint(a[1] + t * (b[1] - a[1])).astype(int)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    canvas[ys[ok], xs[ok]] = rgb


def _outside_canvas(q: Quadrilateral, w: int, h: int) -> bool:
    lo = q.vertices.min(axis=0)
    hi = q.vertices.max(axis=0)
    return bool(hi[0] < -0.5 or hi[1] < -0.5 or lo[0] > w - 0.5 or lo[1] > h - 0.5)


def generate_scene(spec: LotSpec, image_ref: Path | str = "scene.ppm", split: str = "train") -> GeneratedScene:
    rng = np.random.default_rng(spec.seed)
    H = ground_homography(spec)
    w, h = spec.image_width, spec.image_height
    sw, sd = spec.space_width, spec.space_depth

    asphalt = rng.uniform(*ASPHALT_RANGE)
    tint = rng.uniform(-0.02, 0.02, 3)
    canvas = np.empty((h, w, 3))
    canvas[:] = np.clip(asphalt + tint, 0, 1)

    quads = {}
    for r in range(spec.rows):
        for c in range(spec.spaces_per_row):
            q = _project(H, ((c * sw, r * sd), ((c + 1) * sw, (r + 1) * sd)))
            if _outside_canvas(q, w, h):
                raise GenerationError(
                    f"lot {spec.lot_id!r}: space (row {r}, col {c}) projects fully outside the image"
                )
            quads[r, c] = q

    # painted boundary lines
    for r in range(spec.rows + 1):
        xs, ys = H.apply([0.0, spec.spaces_per_row * sw], [r * sd, r * sd])
        _draw_segment(canvas, (xs[0], ys[0]), (xs[1], ys[1]), LINE_VALUE)
    for c in range(spec.spaces_per_row + 1):
        xs, ys = H.apply([c * sw, c * sw], [0.0, spec.rows * sd])
        _draw_segment(canvas, (xs[0], ys[0]), (xs[1], ys[1]), LINE_VALUE)

    # decisions are drawn in a fixed order so the stream never depends on outcomes
    occupied = rng.random((spec.rows, spec.spaces_per_row)) < spec.occupancy_rate
    values = rng.uniform(*VEHICLE_RANGE, (spec.rows, spec.spaces_per_row))
    vehicle_tints = rng.uniform(-0.03, 0.03, (spec.rows, spec.spaces_per_row, 3))
    insets = rng.uniform(0.12, 0.2, (spec.rows, spec.spaces_per_row, 2))

    records = {}
    shift = spec.occlusion_strength * sd
    # far rows first: nearer vehicles are painted over farther ones
    for r in range(spec.rows):
        for c in range(spec.spaces_per_row):
            if not occupied[r, c]:
                records[r, c] = SpaceRecord(r, c, False, None, None)
                continue
            mx, my = insets[r, c, 0] * sw, insets[r, c, 1] * sd
            rect = ((c * sw + mx, r * sd + my + shift), ((c + 1) * sw - mx, (r + 1) * sd - my + shift))
            vq = _project(H, rect)
            v = float(values[r, c])
            _fill_quad(canvas, vq, np.clip(v + vehicle_tints[r, c], 0, 1))
            records[r, c] = SpaceRecord(r, c, True, vq, v)

    if spec.noise_sigma > 0:
        canvas += rng.normal(0.0, spec.noise_sigma, canvas.shape)
    np.clip(canvas, 0.0, 1.0, out=canvas)

    order = [(r, c) for r in range(spec.rows) for c in range(spec.spaces_per_row)]
    annotation = SceneAnnotation(
        image_ref=Path(image_ref),
        lot_id=spec.lot_id,
        split=split,
        spaces=tuple(SpaceLabel(quads[k], records[k].occupied) for k in order),
    )
    return GeneratedScene(ImageBuffer(canvas, copy=False), annotation, tuple(records[k] for k in order), asphalt)


def _split_map(split_of) -> dict[str, str]:
    pairs = split_of.items() if isinstance(split_of, Mapping) else split_of
    out: dict[str, str] = {}
    for lot, split in pairs:
        if split not in SPLITS:
            raise GenerationError(f"unknown split {split!r} for lot {lot!r}")
        if out.setdefault(lot, split) != split:
            raise GenerationError(f"lot {lot!r} assigned to both {out[lot]!r} and {split!r}")
    return out


def generate_dataset(
    specs: Sequence[LotSpec],
    split_of: Mapping[str, str] | Iterable[tuple[str, str]],
    out_dir,
    manifest_name: str = "manifest.json",
) -> tuple[Path, DatasetStats]:
    """Render every spec to ``out_dir`` and write the manifest.

    Returns the manifest path and statistics tallied from the generator's own
    decisions (not from re-reading the manifest).
    """
    splits = _split_map(split_of)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = []
    per_split = {sp: 0 for sp in SPLITS}
    n_spaces = n_occ = 0
    counters: dict[str, int] = {}
    for spec in specs:
        if spec.lot_id not in splits:
            raise GenerationError(f"lot {spec.lot_id!r} has no split assignment")
        idx = counters.get(spec.lot_id, 0)
        counters[spec.lot_id] = idx + 1
        rel = Path(spec.lot_id) / f"{idx:04d}.ppm"
        (out / spec.lot_id).mkdir(exist_ok=True)
        gen = generate_scene(spec, out / rel, splits[spec.lot_id])
        write_ppm(gen.image, out / rel)
        scenes.append(gen.annotation)
        per_split[splits[spec.lot_id]] += 1
        n_spaces += len(gen.ledger)
        n_occ += sum(rec.occupied for rec in gen.ledger)
    manifest = out / manifest_name
    save_manifest(scenes, manifest)
    stats = DatasetStats(len(scenes), n_spaces, n_occ, n_occ / n_spaces if n_spaces else 0.0, per_split)
    return manifest, stats


def random_lot_specs(
    lot_id: str,
    n_scenes: int,
    seed: int,
    occupancy_rate: float = 0.5,
    occlusion_strength: float = 0.0,
    **overrides,
) -> list[LotSpec]:
    """Several camera views of one lot: a lot-wide style plus per-view jitter."""
    rng = np.random.default_rng([seed, n_scenes])
    rows = int(rng.integers(2, 4))
    per_row = int(rng.integers(7, 11))
    space_w = float(rng.uniform(18, 26))
    base = LotSpec(
        lot_id=lot_id,
        rows=rows,
        spaces_per_row=per_row,
        space_width=space_w,
        space_depth=space_w * float(rng.uniform(1.8, 2.3)),
        occupancy_rate=occupancy_rate,
        occlusion_strength=occlusion_strength,
    )
    base = replace(base, **overrides)
    specs = []
    for i in range(n_scenes):
        specs.append(
            replace(
                base,
                seed=int(rng.integers(0, 2**31)),
                tilt=float(rng.uniform(0.2, 0.5)),
                yaw=float(rng.uniform(-8, 8)),
                fill=float(rng.uniform(0.75, 0.92)),
                offset=(float(rng.uniform(-6, 6)), float(rng.uniform(-6, 6))),
            )
        )
    return specs


def lot_split_specs(
    n_train: int,
    n_valid: int,
    n_test: int,
    seed: int = 0,
    scenes_per_lot: int = 5,
    **kwargs,
) -> tuple[list[LotSpec], dict[str, str]]:
    """Scene specs for a lot-disjoint train/valid/test dataset of the given sizes."""
    specs: list[LotSpec] = []
    split_of: dict[str, str] = {}
    for split_idx, (split, n) in enumerate((("train", n_train), ("valid", n_valid), ("test", n_test))):
        lots = math.ceil(n / scenes_per_lot)
        made = 0
        for k in range(lots):
            lot = f"{split}-{k:02d}"
            count = min(scenes_per_lot, n - made)
            lot_seed = int(np.random.SeedSequence([seed, split_idx, k]).generate_state(1)[0])
            specs += random_lot_specs(lot, count, seed=lot_seed, **kwargs)
            split_of[lot] = split
            made += count
    return specs, split_of
