"""Accuracy over repeated seeded runs and the inference-latency benchmark."""

from __future__ import annotations

import csv
import gc
import io
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .classifier import TrainConfig
from .errors import InvalidParameterError
from .pipeline import ModelConfig, PatchModelConfig, evaluate, infer, train_model

ARCH_NAMES = {"pyramid": "Faster R-CNN FPN", "patch": "R-CNN"}


def accuracy(preds, labels) -> float:
    p = np.asarray(preds, dtype=bool)
    l = np.asarray(labels, dtype=bool)
    if p.shape != l.shape:
        raise InvalidParameterError(f"length mismatch: {p.shape} vs {l.shape}")
    if p.size == 0:
        raise InvalidParameterError("accuracy of an empty set is undefined")
    return float(np.mean(p == l))


@dataclass(frozen=True)
class RunResult:
    config_id: str
    seed: int
    valid_accuracy: float
    test_accuracy: float

    def __post_init__(self):
        for name in ("valid_accuracy", "test_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameterError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class AggregateResult:
    config_id: str
    mean: float
    stderr: float
    n: int
    degenerate: bool = False  # a single run has no spread estimate

    def format(self, digits: int = 2) -> str:
        return format_mean_stderr(self.mean, self.stderr, digits)


def format_mean_stderr(mean: float, stderr: float, digits: int = 2) -> str:
    """Percent rendering used in the results table, e.g. ``98.58 ± 0.07``."""
    return f"{100 * mean:.{digits}f} ± {100 * stderr:.{digits}f}"


def aggregate_runs(runs: Sequence[RunResult], metric: str = "test_accuracy") -> AggregateResult:
    """Mean and standard error (sample sd over sqrt n) of one metric."""
    if not runs:
        raise InvalidParameterError("need at least one run")
    ids = {r.config_id for r in runs}
    if len(ids) > 1:
        raise InvalidParameterError(f"runs mix configurations: {sorted(ids)}")
    if metric not in ("test_accuracy", "valid_accuracy"):
        raise InvalidParameterError(f"unknown metric {metric!r}")
    # the statistics module sums exactly, so run order cannot change the bits
    values = [getattr(r, metric) for r in runs]
    n = len(values)
    mean = statistics.mean(values)
    if n == 1:
        return AggregateResult(runs[0].config_id, mean, 0.0, 1, degenerate=True)
    return AggregateResult(runs[0].config_id, mean, statistics.stdev(values) / math.sqrt(n), n)


def _arch(cfg: ModelConfig) -> str:
    return "patch" if isinstance(cfg, PatchModelConfig) else "pyramid"


def _resolution(cfg: ModelConfig) -> int:
    return cfg.resolution if isinstance(cfg, PatchModelConfig) else cfg.smaller_edge


def table_order(cfg: ModelConfig):
    """Pyramid rows first, square before quadrilateral, larger resolution first."""
    return (_arch(cfg) != "pyramid", cfg.pooling.value != "square", -_resolution(cfg))


@dataclass(frozen=True)
class SweepRow:
    config: ModelConfig
    runs: tuple[RunResult, ...]
    valid: AggregateResult
    test: AggregateResult


@dataclass
class SweepResult:
    rows: list[SweepRow]
    errors: dict[str, str] = field(default_factory=dict)

    def best(self, arch: str | None = None) -> SweepRow | None:
        """Row with the highest mean validation accuracy (first in table order on ties)."""
        rows = [r for r in self.rows if arch is None or _arch(r.config) == arch]
        return max(rows, key=lambda r: r.valid.mean, default=None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["architecture", "pooling", "resolution", "runs", "valid_mean", "valid_stderr",
                    "test_mean", "test_stderr", "best"])
        best = {id(self.best(a)) for a in ARCH_NAMES}
        for r in self.rows:
            w.writerow([_arch(r.config), r.config.pooling.value, _resolution(r.config), r.valid.n,
                        repr(r.valid.mean), repr(r.valid.stderr), repr(r.test.mean), repr(r.test.stderr),
                        int(id(r) in best)])
        return buf.getvalue()

    def render(self) -> str:
        """Plain-text table in the published layout; ``*`` marks best-by-validation rows."""
        lines = [f"{'Architecture':<18}{'Pooling':<15}{'Resolution':>10}  {'Valid. accuracy [%]':>20}  {'Test accuracy [%]':>18}"]
        best = {id(self.best(a)) for a in ARCH_NAMES}
        for r in self.rows:
            mark = "*" if id(r) in best else " "
            lines.append(
                f"{mark}{ARCH_NAMES[_arch(r.config)]:<17}{r.config.pooling.value:<15}{_resolution(r.config):>10}"
                f"  {r.valid.format():>20}  {r.test.format():>18}"
            )
        for cid, msg in self.errors.items():
            lines.append(f" {cid}: FAILED ({msg})")
        return "\n".join(lines)


def run_config(cfg: ModelConfig, train, valid, test, train_cfg: TrainConfig, seed: int, augment=None) -> RunResult:
    params, _, _ = train_model(cfg, train, replace(train_cfg, seed=seed), augment=augment)
    v = accuracy(*evaluate(cfg, params, valid))
    t = accuracy(*evaluate(cfg, params, test))
    return RunResult(cfg.config_id, seed, v, t)


def sweep_configs(
    train,
    valid,
    test,
    configs: Sequence[ModelConfig],
    seeds: Sequence[int],
    train_cfg: TrainConfig,
    augment=None,
    train_cfgs: dict | None = None,
    progress: Callable[[RunResult], None] | None = None,
) -> SweepResult:
    """Train and evaluate every config with every seed.

    A failing cell is recorded in ``errors`` and the sweep moves on.
    ``train_cfgs`` may override the schedule per ``config_id``.
    """
    if not seeds:
        raise InvalidParameterError("need at least one seed")
    rows, errors = [], {}
    for cfg in sorted(configs, key=table_order):
        tc = (train_cfgs or {}).get(cfg.config_id, train_cfg)
        try:
            runs = []
            for seed in seeds:
                runs.append(run_config(cfg, train, valid, test, tc, seed, augment))
                if progress:
                    progress(runs[-1])
        except Exception as e:  # noqa: BLE001 - one bad cell must not sink the sweep
            errors[cfg.config_id] = f"{type(e).__name__}: {e}"
            continue
        rows.append(SweepRow(cfg, tuple(runs), aggregate_runs(runs, "valid_accuracy"), aggregate_runs(runs)))
    return SweepResult(rows, errors)


@dataclass(frozen=True)
class TimingCurve:
    architecture: str
    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        counts = [n for n, _ in self.points]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise InvalidParameterError("space counts must be strictly increasing")

    @property
    def counts(self) -> np.ndarray:
        return np.array([n for n, _ in self.points], dtype=float)

    @property
    def seconds(self) -> np.ndarray:
        return np.array([t for _, t in self.points], dtype=float)


def replicate_quads(quads: Sequence, n: int) -> list:
    """``n`` quads drawn cyclically from ``quads``."""
    if not quads:
        raise InvalidParameterError("base scene has no quads to replicate")
    return [quads[i % len(quads)] for i in range(n)]


def benchmark_inference(
    cfg: ModelConfig,
    params,
    image,
    base_quads: Sequence,
    space_counts: Sequence[int],
    repeats: int = 5,
    warmup: int = 2,
    threads: int = 1,
    timer: Callable[[], float] = time.perf_counter,
    order_seed: int = 0,
) -> TimingCurve:
    """Median wall time of scene inference for each space count.

    Every pass times each count once, in a fresh seeded random order, so
    drift in machine speed and effects of the previous call land on all
    counts alike instead of bending the curve.
    The garbage collector is paused while timing, as ``timeit`` does.
    """
    if repeats < 1 or warmup < 0:
        raise InvalidParameterError("repeats must be >= 1 and warmup >= 0")
    if any(n < 1 for n in space_counts):
        raise InvalidParameterError("space counts must be >= 1")
    scenes = [replicate_quads(base_quads, n) for n in space_counts]
    for quads in scenes:
        for _ in range(warmup):
            infer(cfg, params, image, quads, threads)
    times: list[list[float]] = [[] for _ in scenes]
    order_rng = np.random.default_rng(order_seed)
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            for i in order_rng.permutation(len(scenes)):
                t0 = timer()
                infer(cfg, params, image, scenes[i], threads)
                times[i].append(timer() - t0)
    finally:
        if gc_was_enabled:
            gc.enable()
    points = [(int(n), statistics.median(ts)) for n, ts in zip(space_counts, times)]
    return TimingCurve(_arch(cfg), tuple(points))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


def linear_fit(curve: TimingCurve) -> LinearFit:
    x, y = curve.counts, curve.seconds
    if len(x) < 2:
        raise InvalidParameterError("a line needs at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2)


def spread(curve: TimingCurve) -> float:
    """(max - min) / median of the timings."""
    s = curve.seconds
    return float((s.max() - s.min()) / np.median(s))


def monotone_violations(curve: TimingCurve, slack: float = 0.9) -> list[tuple[int, int]]:
    """Adjacent count pairs where the larger count ran faster than ``slack`` times the smaller one."""
    pts = curve.points
    return [(a[0], b[0]) for a, b in zip(pts, pts[1:]) if b[1] < slack * a[1]]


def timings_csv(curves: Sequence[TimingCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["architecture", "num_spaces", "seconds"])
    for c in curves:
        for n, t in c.points:
            w.writerow([c.architecture, n, f"{t:.6f}"])
    return buf.getvalue()


R2_MIN = 0.98
SPREAD_MAX = 0.10


def check_curve(curve: TimingCurve) -> tuple[bool, str]:
    """The scaling-shape check for one curve: linear for patch, flat for pyramid."""
    if curve.architecture == "patch":
        fit = linear_fit(curve)
        return fit.r2 >= R2_MIN, f"patch: R^2 = {fit.r2:.4f} (need >= {R2_MIN})"
    s = spread(curve)
    return s <= SPREAD_MAX, f"pyramid: spread = {s:.4f} (need <= {SPREAD_MAX})"


def parse_counts(spec: str) -> list[int]:
    """``"10:100:10"`` (inclusive stop) or ``"5,10,20"``."""
    try:
        if ":" in spec:
            start, stop, step = (int(v) for v in spec.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            return list(range(start, stop + 1, step))
        return [int(v) for v in spec.split(",") if v.strip()]
    except ValueError as e:
        raise InvalidParameterError(f"bad count specification {spec!r}: {e}") from e

