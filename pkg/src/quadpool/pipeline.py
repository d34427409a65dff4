"""Scene-level models: direct patch pooling and the image-pyramid variant.

Both share the classifier head; they differ only in where patches come from.
The patch model pools every space straight from the full-resolution image at
``S x S``. The pyramid model resizes the image, builds a 2x pyramid, picks a
level per space from its area and pools ``7 x 7`` there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .augment import AugmentParams, scene_rng
from .classifier import ModelParams, TrainConfig, forward_batch, init_params, sigmoid, train
from .errors import DegenerateGeometryError, InvalidParameterError
from .geometry import Quadrilateral
from .imaging import ImageBuffer, build_pyramid, resize_smaller_edge
from .pooling import (
    PYRAMID_POOL_SIZE,
    LevelAssignConfig,
    PoolingMethod,
    pool,
    pool_batch_from_pyramid,
    pool_many,
    scale_vertices,
)

PAPER_RESOLUTIONS = (64, 128, 256)
PAPER_SMALLER_EDGES = (800, 1100, 1440)
THRESHOLD = 0.5
# key for the parameter-initialization stream, distinct from (seed, epoch) keys
INIT_STREAM = 1_000_003


@dataclass(frozen=True)
class PatchModelConfig:
    pooling: PoolingMethod = PoolingMethod.SQUARE
    resolution: int = 64

    def __post_init__(self):
        object.__setattr__(self, "pooling", PoolingMethod.parse(self.pooling))
        if self.resolution < 4:
            raise InvalidParameterError(f"resolution must be >= 4, got {self.resolution}")

    @property
    def config_id(self) -> str:
        return f"patch/{self.pooling.value}/{self.resolution}"


@dataclass(frozen=True)
class PyramidModelConfig:
    pooling: PoolingMethod = PoolingMethod.SQUARE
    smaller_edge: int = 800
    levels: int = 4
    level_cfg: LevelAssignConfig = field(default_factory=LevelAssignConfig)
    pool_size: int = PYRAMID_POOL_SIZE

    def __post_init__(self):
        object.__setattr__(self, "pooling", PoolingMethod.parse(self.pooling))
        if self.smaller_edge < 1:
            raise InvalidParameterError(f"smaller_edge must be positive, got {self.smaller_edge}")
        if self.levels < 1:
            raise InvalidParameterError("need at least one pyramid level")
        if self.pool_size != PYRAMID_POOL_SIZE:
            raise InvalidParameterError(f"pyramid head pools at {PYRAMID_POOL_SIZE}x{PYRAMID_POOL_SIZE}")
        if self.level_cfg.level_max >= self.levels:
            raise InvalidParameterError(
                f"level_max {self.level_cfg.level_max} needs a pyramid with more than {self.levels} levels"
            )

    @property
    def config_id(self) -> str:
        return f"pyramid/{self.pooling.value}/{self.smaller_edge}"


ModelConfig = Union[PatchModelConfig, PyramidModelConfig]


@dataclass(frozen=True)
class OccupancyPrediction:
    scores: np.ndarray
    labels: np.ndarray
    levels: tuple[int, ...] | None = None

    def __len__(self):
        return len(self.scores)

    def to_records(self) -> list[dict]:
        return [
            {"space_index": i, "score": float(s), "label": bool(l)}
            for i, (s, l) in enumerate(zip(self.scores, self.labels))
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records(), indent=1)


def predict_labels(pred_or_scores) -> np.ndarray:
    """Occupied iff score >= 0.5 (a tie counts as occupied)."""
    scores = getattr(pred_or_scores, "scores", pred_or_scores)
    return np.asarray(scores, dtype=np.float64) >= THRESHOLD


def _pool_one(img, quad, size, method, index):
    try:
        return pool(img, quad, size, method).data
    except (DegenerateGeometryError, InvalidParameterError) as e:
        raise type(e)(f"space {index}: {e}") from e


def pyramid_patches(cfg: PyramidModelConfig, img: ImageBuffer, quads: Sequence[Quadrilateral]):
    """7x7 patches and the pyramid level used for each quad.

    Geometry runs on one vertex array and each level is pooled in a single
    vectorized pass; every row still equals pooling that quad on its own.
    """
    resized = resize_smaller_edge(img, cfg.smaller_edge)
    sx, sy = resized.width / img.width, resized.height / img.height
    pyr = build_pyramid(resized, cfg.levels)
    V = np.stack([q.vertices for q in quads]) if quads else np.empty((0, 4, 2))
    if (sx, sy) != (1.0, 1.0):
        V = scale_vertices(V, sx, sy)
    return pool_batch_from_pyramid(pyr, V, cfg.pooling, cfg.level_cfg)


def make_pool_fn(cfg: ModelConfig, threads: int = 1):
    """``(image, quads) -> (N, S, S, 3)`` patches for training and inference."""
    if isinstance(cfg, PatchModelConfig):
        def pool_fn(img, quads):
            if threads > 1:
                return pool_many(img, quads, cfg.resolution, cfg.pooling, threads=threads)
            out = np.empty((len(quads), cfg.resolution, cfg.resolution, 3))
            for i, q in enumerate(quads):
                out[i] = _pool_one(img, q, cfg.resolution, cfg.pooling, i)
            return out
    else:
        def pool_fn(img, quads):
            return pyramid_patches(cfg, img, quads)[0]
    return pool_fn


def _classify(params: ModelParams, patches: np.ndarray) -> np.ndarray:
    # one forward per space: a space's score never depends on its batch mates
    logits = np.array([forward_batch(params, p[None])[0] for p in patches])
    return sigmoid(logits) if len(logits) else np.zeros(0)


def infer_patch_model(
    cfg: PatchModelConfig, params: ModelParams, img: ImageBuffer, quads: Sequence[Quadrilateral], threads: int = 1
) -> OccupancyPrediction:
    patches = make_pool_fn(cfg, threads)(img, quads)
    scores = _classify(params, patches)
    return OccupancyPrediction(scores, predict_labels(scores))


def infer_pyramid_model(
    cfg: PyramidModelConfig, params: ModelParams, img: ImageBuffer, quads: Sequence[Quadrilateral]
) -> OccupancyPrediction:
    patches, levels = pyramid_patches(cfg, img, quads)
    scores = _classify(params, patches)
    return OccupancyPrediction(scores, predict_labels(scores), levels)


def infer(cfg: ModelConfig, params: ModelParams, img: ImageBuffer, quads, threads: int = 1) -> OccupancyPrediction:
    if isinstance(cfg, PatchModelConfig):
        return infer_patch_model(cfg, params, img, quads, threads)
    return infer_pyramid_model(cfg, params, img, quads)


def evaluate(cfg: ModelConfig, params: ModelParams, scenes: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated (predicted, true) labels over cached scenes."""
    preds, truth = [], []
    for s in scenes:
        preds.append(infer(cfg, params, s.image, s.quads).labels)
        truth.append(s.labels)
    if not preds:
        return np.zeros(0, bool), np.zeros(0, bool)
    return np.concatenate(preds), np.concatenate(truth)


def initial_params(seed: int) -> ModelParams:
    return init_params(scene_rng(seed, INIT_STREAM))


def train_model(
    cfg: ModelConfig,
    train_scenes: Sequence,
    train_cfg: TrainConfig,
    valid_scenes: Sequence = (),
    augment: AugmentParams | None = None,
    params_init: ModelParams | None = None,
    progress=None,
):
    """Train the shared head on patches produced by ``cfg``; seeds come from ``train_cfg.seed``."""
    if params_init is None:
        params_init = initial_params(train_cfg.seed)
    return train(make_pool_fn(cfg), train_scenes, train_cfg, params_init, valid_scenes, augment, progress)
