"""Small convnet occupancy classifier with hand-written backward pass and AdamW.

Architecture, for an ``S x S x 3`` patch::

    conv 3x3 stride 2 pad 1 (3 -> 8), ReLU
    conv 3x3 stride 2 pad 1 (8 -> 16), ReLU
    global average pool, linear 16 -> 1

Everything is batched over patches: ``x`` has shape ``(N, S, S, 3)``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .augment import AugmentParams, augment_scene, scene_rng
from .errors import InvalidParameterError

MIN_PATCH = 4
SHAPES = {
    "conv1_w": (3, 3, 3, 8),
    "conv1_b": (8,),
    "conv2_w": (3, 3, 8, 16),
    "conv2_b": (16,),
    "linear_w": (16,),
    "linear_b": (1,),
}
FAN_IN = {"conv1": 27, "conv2": 72, "linear": 16}


@dataclass
class ModelParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    linear_w: np.ndarray
    linear_b: np.ndarray

    def __post_init__(self):
        for name, shape in SHAPES.items():
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise InvalidParameterError(f"{name} must have shape {shape}, got {a.shape}")
            if not np.isfinite(a).all():
                raise InvalidParameterError(f"{name} has non-finite values")
            setattr(self, name, a)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ModelParams":
        return ModelParams(**{k: fn(v) for k, v in self.items()})

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in self.items()])

    @classmethod
    def zeros(cls) -> "ModelParams":
        return cls(**{k: np.zeros(s) for k, s in SHAPES.items()})

    def __eq__(self, other):
        return isinstance(other, ModelParams) and all(
            np.array_equal(a, b) for (_, a), (_, b) in zip(self.items(), other.items())
        )


def init_params(rng: np.random.Generator) -> ModelParams:
    """Uniform in +-sqrt(1/fan_in) per tensor, biases included."""
    out = {}
    for name, shape in SHAPES.items():
        bound = math.sqrt(1.0 / FAN_IN[name.split("_")[0]])
        out[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(**out)


def _im2col(x: np.ndarray) -> np.ndarray:
    """3x3 stride-2 windows of zero-padded ``x`` as rows: (N, Ho, Wo, 9 * C).

    Row layout is (kernel row, kernel column, channel), matching a weight
    tensor of shape (3, 3, C, O) reshaped to (9 * C, O).
    """
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c))  # np.pad costs ~20x more on small patches
    xp[:, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::2, ::2]  # (N, Ho, Wo, C, 3, 3)
    n, ho, wo, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, ho, wo, 9 * c)


def _conv(x, w, b):
    cols = _im2col(x)
    return cols, cols @ w.reshape(-1, w.shape[3]) + b


def _conv_backward(cols, x_shape, w, dout):
    o = w.shape[3]
    dw = (cols.reshape(-1, cols.shape[3]).T @ dout.reshape(-1, o)).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    n, h, wd, c = x_shape
    ho, wo = dout.shape[1:3]
    dcols = (dout @ w.reshape(-1, o).T).reshape(n, ho, wo, 3, 3, c)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :] += dcols[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _check_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[3] != 3 or x.shape[1] != x.shape[2]:
        raise InvalidParameterError(f"expected square RGB patches, got shape {x.shape}")
    if x.shape[1] < MIN_PATCH:
        raise InvalidParameterError(f"patch size must be >= {MIN_PATCH}, got {x.shape[1]}")
    return x


def forward_batch(params: ModelParams, x) -> np.ndarray:
    """Logits for a stack of patches ``(N, S, S, 3)``."""
    x = _check_batch(x)
    _, a1 = _conv(x, params.conv1_w, params.conv1_b)
    _, a2 = _conv(np.maximum(a1, 0.0), params.conv2_w, params.conv2_b)
    g = np.maximum(a2, 0.0).mean(axis=(1, 2))
    return g @ params.linear_w + params.linear_b[0]


def forward(params: ModelParams, patch) -> float:
    data = getattr(patch, "data", patch)
    return float(forward_batch(params, data)[0])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def loss_and_grad_batch(params: ModelParams, x, labels) -> tuple[float, ModelParams]:
    """Mean binary cross-entropy over the batch and its gradient."""
    x = _check_batch(x)
    y = np.where(np.asarray(labels, dtype=bool), 1.0, -1.0)
    if y.shape != (x.shape[0],):
        raise InvalidParameterError("need exactly one label per patch")
    n = x.shape[0]
    cols1, a1 = _conv(x, params.conv1_w, params.conv1_b)
    h1 = np.maximum(a1, 0.0)
    cols2, a2 = _conv(h1, params.conv2_w, params.conv2_b)
    h2 = np.maximum(a2, 0.0)
    g = h2.mean(axis=(1, 2))
    z = g @ params.linear_w + params.linear_b[0]

    losses = np.logaddexp(0.0, -y * z)
    dz = -y * sigmoid(-y * z) / n
    d_lin_w = g.T @ dz
    d_lin_b = np.array([dz.sum()])
    dg = np.outer(dz, params.linear_w)
    dh2 = np.broadcast_to(dg[:, None, None, :] / (h2.shape[1] * h2.shape[2]), h2.shape)
    da2 = dh2 * (a2 > 0)
    dh1, dw2, db2 = _conv_backward(cols2, h1.shape, params.conv2_w, da2)
    da1 = dh1 * (a1 > 0)
    _, dw1, db1 = _conv_backward(cols1, x.shape, params.conv1_w, da1)
    grads = ModelParams(dw1, db1, dw2, db2, d_lin_w, d_lin_b)
    return float(losses.sum() / n), grads


def loss_and_grad(params: ModelParams, patch, label: bool) -> tuple[float, ModelParams]:
    data = getattr(patch, "data", patch)
    return loss_and_grad_batch(params, data, [label])


@dataclass(frozen=True)
class TrainConfig:
    epochs_phase1: int = 50
    lr_phase1: float = 1e-4
    epochs_phase2: int = 50
    lr_phase2: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise InvalidParameterError("epoch counts must be >= 0")
        if not (self.lr_phase1 > 0 and self.lr_phase2 > 0):
            raise InvalidParameterError("learning rates must be positive")
        if self.weight_decay < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise InvalidParameterError("invalid optimizer hyper-parameters")
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be >= 1")

    @property
    def total_epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def lr_at(self, epoch: int) -> float:
        return self.lr_phase1 if epoch < self.epochs_phase1 else self.lr_phase2


@dataclass
class OptimState:
    m: ModelParams = field(default_factory=ModelParams.zeros)
    v: ModelParams = field(default_factory=ModelParams.zeros)
    step: int = 0


def adamw_step(
    params: ModelParams, grads: ModelParams, state: OptimState, lr: float, cfg: TrainConfig
) -> tuple[ModelParams, OptimState]:
    """One decoupled-weight-decay Adam update; inputs are left untouched."""
    if not isinstance(grads, ModelParams):
        raise InvalidParameterError("grads must be a ModelParams")
    step = state.step + 1
    c1 = 1.0 - cfg.beta1**step
    c2 = 1.0 - cfg.beta2**step
    new_p, new_m, new_v = {}, {}, {}
    for (name, p), (_, g), (_, m), (_, v) in zip(params.items(), grads.items(), state.m.items(), state.v.items()):
        if g.shape != p.shape:
            raise InvalidParameterError(f"gradient shape mismatch for {name}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        new_p[name] = p - lr * ((m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * p)
        new_m[name], new_v[name] = m, v
    return ModelParams(**new_p), OptimState(ModelParams(**new_m), ModelParams(**new_v), step)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    valid_accuracy: float  # nan when no validation scenes were given


PoolFn = Callable[..., np.ndarray]


def evaluate_accuracy(params: ModelParams, pool_fn: PoolFn, scenes: Sequence) -> float:
    correct = total = 0
    for s in scenes:
        z = forward_batch(params, pool_fn(s.image, s.quads))
        correct += int(np.sum((z >= 0.0) == s.labels))
        total += len(s.labels)
    return correct / total if total else float("nan")


def train(
    pool_fn: PoolFn,
    scenes: Sequence,
    cfg: TrainConfig,
    params_init: ModelParams,
    valid_scenes: Sequence = (),
    augment: AugmentParams | None = None,
    progress: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, list[EpochRecord], OptimState]:
    """Scene-batched AdamW training.

    ``pool_fn(image, quads)`` turns a (possibly augmented) scene into an
    ``(N, S, S, 3)`` stack. ``scenes`` items need ``image``, ``quads`` and
    ``labels`` (see ``dataset.CachedScene``). Scene order is shuffled per epoch
    and each scene gets its own augmentation stream keyed by
    ``(seed, epoch, scene index)``, so the run is a pure function of its inputs.
    """
    if not scenes:
        raise InvalidParameterError("training split is empty")
    augment = AugmentParams() if augment is None else augment
    params = params_init.copy()
    state = OptimState()
    history: list[EpochRecord] = []
    for epoch in range(cfg.total_epochs):
        lr = cfg.lr_at(epoch)
        order = scene_rng(cfg.seed, epoch).permutation(len(scenes))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            for idx in batch:
                s = scenes[idx]
                img, spaces = augment_scene(s.image, s.annotation.spaces, augment, scene_rng(cfg.seed, epoch, int(idx)))
                x = pool_fn(img, [sp.quad for sp in spaces])
                loss, g = loss_and_grad_batch(params, x, [sp.occupied for sp in spaces])
                epoch_loss += loss
                acc = g if acc is None else ModelParams(**{k: a + b for (k, a), (_, b) in zip(acc.items(), g.items())})
            if len(batch) > 1:
                acc = acc.map(lambda a: a / len(batch))
            params, state = adamw_step(params, acc, state, lr, cfg)
        valid = evaluate_accuracy(params, pool_fn, valid_scenes) if valid_scenes else float("nan")
        rec = EpochRecord(epoch, lr, epoch_loss / len(scenes), valid)
        history.append(rec)
        if progress:
            progress(rec)
    return params, history, state


def history_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,lr,train_loss,valid_accuracy"]
    lines += [f"{r.epoch},{r.lr!r},{r.train_loss!r},{r.valid_accuracy!r}" for r in history]
    return "\n".join(lines) + "\n"


# checkpoint format: b"QPCK", u32 version, then tensors until EOF, each as
# u32 name length, utf-8 name, u32 rank, rank x u32 dims, little-endian f64 data
MAGIC = b"QPCK"
VERSION = 1


def _write_tensor(buf: io.BytesIO, name: str, a: np.ndarray) -> None:
    raw = name.encode("utf-8")
    a = np.asarray(a, dtype="<f8")
    buf.write(struct.pack("<I", len(raw)) + raw)
    buf.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
    buf.write(a.tobytes(order="C"))


def checkpoint_bytes(params: ModelParams, state: OptimState | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    for name, a in params.items():
        _write_tensor(buf, name, a)
    if state is not None:
        for prefix, p in (("opt.m.", state.m), ("opt.v.", state.v)):
            for name, a in p.items():
                _write_tensor(buf, prefix + name, a)
        _write_tensor(buf, "opt.step", np.array([state.step], dtype=np.float64))
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams, state: OptimState | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, state))


def parse_checkpoint(blob: bytes) -> tuple[ModelParams, OptimState | None]:
    if blob[:4] != MAGIC:
        raise InvalidParameterError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise InvalidParameterError(f"unsupported checkpoint version {version}")
    pos, tensors = 8, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            name = blob[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", blob, pos)
            dims = struct.unpack_from(f"<{rank}I", blob, pos + 4)
            pos += 4 + 4 * rank
            count = math.prod(dims)
            if pos + 8 * count > len(blob):
                raise InvalidParameterError(f"tensor {name!r} is truncated")
            tensors[name] = np.frombuffer(blob, "<f8", count, pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as e:
        raise InvalidParameterError(f"truncated checkpoint: {e}") from e
    try:
        params = ModelParams(**{k: tensors[k] for k in SHAPES})
        state = None
        if "opt.step" in tensors:
            state = OptimState(
                ModelParams(**{k: tensors["opt.m." + k] for k in SHAPES}),
                ModelParams(**{k: tensors["opt.v." + k] for k in SHAPES}),
                int(tensors["opt.step"][0]),
            )
    except KeyError as e:
        raise InvalidParameterError(f"checkpoint is missing tensor {e}") from e
    return params, state


def load_checkpoint(path) -> tuple[ModelParams, OptimState | None]:
    return parse_checkpoint(Path(path).read_bytes())
