"""quadpool command line: dataset tooling, training, evaluation and benchmarks.

Machine-readable results go to stdout as JSON or CSV, diagnostics to stderr.
Exit status is 0 on success, 1 when validation or a check fails (or an input
is rejected), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .augment import AugmentParams, augment_scene, scene_rng
from .classifier import TrainConfig, history_csv, load_checkpoint, save_checkpoint
from .dataset import cache_in_memory, compute_stats, load_dataset, select_split, validate_splits
from .errors import DegenerateGeometryError, GenerationError, ImageLoadError, InvalidParameterError, ManifestError
from .evalbench import (
    accuracy,
    benchmark_inference,
    check_curve,
    linear_fit,
    monotone_violations,
    parse_counts,
    spread,
    sweep_configs,
    timings_csv,
)
from .imaging import ImageBuffer, draw_polyline, read_ppm, write_ppm
from .pipeline import PatchModelConfig, PyramidModelConfig, evaluate, infer, initial_params, train_model
from .pooling import PoolingMethod, pool
from .synth import LotSpec, generate_dataset, generate_scene, lot_split_specs

EXPECTED_ERRORS = (ManifestError, ImageLoadError, InvalidParameterError, GenerationError,
                   DegenerateGeometryError, OSError)


class CliError(Exception):
    """A user-facing failure reported on stderr with exit status 1."""


def _emit_json(obj) -> None:
    print(json.dumps(obj, indent=1))


def _default_threads() -> int:
    raw = os.environ.get("QUADPOOL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _model_config(args):
    method = PoolingMethod.parse(args.method)
    if args.arch == "patch":
        return PatchModelConfig(method, args.size if args.size is not None else 64)
    return PyramidModelConfig(method, args.size if args.size is not None else 800)


def _scene(scenes, index: int):
    if not 0 <= index < len(scenes):
        raise CliError(f"scene index {index} out of range (manifest has {len(scenes)} scenes)")
    return scenes[index]


def _train_config(args) -> TrainConfig:
    return TrainConfig(args.epochs1, args.lr1, args.epochs2, args.lr2, weight_decay=args.weight_decay, seed=args.seed)


# subcommands -----------------------------------------------------------------


def cmd_validate(args) -> int:
    report = validate_splits(load_dataset(args.manifest))
    _emit_json(report.to_dict())
    return 0 if report.ok else 1


def cmd_stats(args) -> int:
    _emit_json(compute_stats(load_dataset(args.manifest)).to_dict())
    return 0


def cmd_synth(args) -> int:
    specs, split_of = lot_split_specs(
        args.train, args.valid, args.test, seed=args.seed,
        scenes_per_lot=args.scenes_per_lot, occupancy_rate=args.occupancy,
        occlusion_strength=args.occlusion, rows=args.rows, spaces_per_row=args.spaces_per_row,
    )
    manifest, stats = generate_dataset(specs, split_of, args.out)
    _emit_json({"manifest": str(manifest), **stats.to_dict()})
    return 0


def cmd_pool(args) -> int:
    scene = _scene(load_dataset(args.manifest), args.scene)
    img = read_ppm(scene.image_ref)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    method = PoolingMethod.parse(args.method)
    written = []
    for i, sp in enumerate(scene.spaces):
        patch = pool(img, sp.quad, args.size, method)
        path = out / f"space_{i:03d}.ppm"
        write_ppm(ImageBuffer(patch.data, copy=False), path)
        written.append({"space_index": i, "occupied": sp.occupied, "file": str(path)})
    _emit_json(written)
    return 0


def cmd_augment_preview(args) -> int:
    scene = _scene(load_dataset(args.manifest), args.scene)
    img = read_ppm(scene.image_ref)
    aug_img, spaces = augment_scene(img, scene.spaces, AugmentParams(), scene_rng(args.seed, args.scene))
    for sp in spaces:
        color = (1.0, 0.1, 0.1) if sp.occupied else (0.1, 1.0, 0.1)
        aug_img = draw_polyline(aug_img, sp.quad.vertices, color, closed=True)
    write_ppm(aug_img, args.out)
    _emit_json({"image": str(args.out), "spaces": [{"quad": s.quad.tolist(), "occupied": s.occupied} for s in spaces]})
    return 0


def cmd_train(args) -> int:
    scenes = cache_in_memory(load_dataset(args.manifest))
    train, valid = select_split(scenes, "train"), select_split(scenes, "valid")
    if not train:
        raise CliError("manifest has no train scenes")
    cfg = _model_config(args)

    def progress(rec):
        print(f"epoch {rec.epoch} lr {rec.lr:g} loss {rec.train_loss:.4f} valid {rec.valid_accuracy:.4f}",
              file=sys.stderr)

    params, history, state = train_model(cfg, train, _train_config(args), valid,
                                         params_init=initial_params(args.seed),
                                         progress=None if args.quiet else progress)
    save_checkpoint(args.out, params, state)
    if args.history:
        Path(args.history).write_text(history_csv(history))
    _emit_json({"checkpoint": str(args.out), "config": cfg.config_id, "epochs": len(history),
                "final_train_loss": history[-1].train_loss if history else None,
                "final_valid_accuracy": history[-1].valid_accuracy if history and valid else None})
    return 0


def cmd_eval(args) -> int:
    scenes = cache_in_memory(load_dataset(args.manifest))
    splits = {s: select_split(scenes, s) for s in ("train", "valid", "test")}
    if args.sweep:
        configs = []
        for arch in args.archs.split(","):
            sizes = args.patch_sizes if arch == "patch" else args.pyramid_edges
            for method in args.methods.split(","):
                for size in parse_counts(sizes):
                    m = PoolingMethod.parse(method)
                    configs.append(PatchModelConfig(m, size) if arch == "patch" else PyramidModelConfig(m, size))
        result = sweep_configs(splits["train"], splits["valid"], splits["test"], configs,
                               parse_counts(args.seeds), _train_config(args))
        print(result.render(), file=sys.stderr)
        if args.out:
            Path(args.out).write_text(result.to_csv())
        best = result.best()
        sys.stdout.write(result.to_csv())
        if best is not None:
            print(f"best by validation: {best.config.config_id} test {best.test.format()}", file=sys.stderr)
        return 1 if result.errors else 0
    if not args.checkpoint:
        raise CliError("eval needs --checkpoint (or --sweep)")
    params, _ = load_checkpoint(args.checkpoint)
    cfg = _model_config(args)
    out = {"config": cfg.config_id}
    for name in ("valid", "test"):
        if splits[name]:
            out[f"{name}_accuracy"] = accuracy(*evaluate(cfg, params, splits[name]))
    _emit_json(out)
    return 0


def cmd_bench(args) -> int:
    cfg = _model_config(args)
    if args.manifest:
        scene = _scene(load_dataset(args.manifest), args.scene)
        img, quads = read_ppm(scene.image_ref), scene.quads
    else:
        # a large synthetic frame so the fixed per-image cost is realistic
        g = generate_scene(LotSpec("bench", seed=args.seed, image_width=1024, image_height=768,
                                   space_width=88, space_depth=176))
        img, quads = g.image, g.annotation.quads
    params = load_checkpoint(args.checkpoint)[0] if args.checkpoint else initial_params(args.seed)
    curve = benchmark_inference(cfg, params, img, quads, parse_counts(args.counts),
                                repeats=args.repeats, warmup=args.warmup, threads=args.threads)
    csv_text = timings_csv([curve])
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    ok, message = check_curve(curve)
    summary = {"architecture": curve.architecture, "config": cfg.config_id, "points": len(curve.points)}
    if len(curve.points) >= 2:
        fit = linear_fit(curve)
        summary.update(slope=fit.slope, intercept=fit.intercept, r2=fit.r2, spread=spread(curve),
                       monotone_violations=monotone_violations(curve))
    if args.out:
        _emit_json(summary)
    else:
        print(json.dumps(summary), file=sys.stderr)
    if args.check:
        print(("PASS " if ok else "FAIL ") + message, file=sys.stderr)
        return 0 if ok else 1
    return 0


def cmd_predict(args) -> int:
    scenes = load_dataset(args.manifest)
    img = read_ppm(args.image)
    if args.scene is not None:
        scene = _scene(scenes, args.scene)
    else:
        target = Path(args.image).resolve()
        matches = [s for s in scenes if Path(s.image_ref).resolve() == target]
        if not matches and not scenes:
            raise CliError("manifest has no scenes to take quads from")
        scene = matches[0] if matches else scenes[0]
    params, _ = load_checkpoint(args.checkpoint)
    pred = infer(_model_config(args), params, img, scene.quads, args.threads)
    print(pred.to_json())
    return 0


# parser ------------------------------------------------------------------------


def _add_model_flags(p) -> None:
    p.add_argument("--arch", choices=("patch", "pyramid"), default="patch")
    p.add_argument("--method", choices=("quad", "quadrilateral", "square"), default="square")
    p.add_argument("--size", type=int, default=None,
                   help="patch resolution S (patch) or smaller input edge (pyramid); defaults 64 / 800")


def _add_train_flags(p) -> None:
    p.add_argument("--epochs1", type=int, default=50)
    p.add_argument("--lr1", type=float, default=1e-4)
    p.add_argument("--epochs2", type=int, default=50)
    p.add_argument("--lr2", type=float, default=1e-5)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadpool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads for per-space pooling (default: $QUADPOOL_THREADS or 1)")
    parser.add_argument("--config", help="JSON object of flag defaults for the subcommand, e.g. {\"epochs1\": 30}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest and its lot-disjoint splits")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="image, space and occupancy counts")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=60, help="number of train scenes")
    p.add_argument("--valid", type=int, default=10, help="number of validation scenes")
    p.add_argument("--test", type=int, default=10, help="number of test scenes")
    p.add_argument("--scenes-per-lot", type=int, default=5, help="camera views per lot")
    p.add_argument("--occupancy", type=float, default=0.5)
    p.add_argument("--occlusion", type=float, default=0.2)
    p.add_argument("--rows", type=int, default=2)
    p.add_argument("--spaces-per-row", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pool", help="dump the pooled patches of one scene as PPM files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--method", choices=("quad", "quadrilateral", "square"), default="square")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("augment-preview", help="write one augmented scene with its quads drawn")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--manifest", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="per-epoch history CSV path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint, or a full configuration sweep")
    p.add_argument("--manifest", required=True)
    _add_model_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--archs", default="pyramid,patch")
    p.add_argument("--methods", default="square,quadrilateral")
    p.add_argument("--patch-sizes", default="16,32")
    p.add_argument("--pyramid-edges", default="192,256")
    p.add_argument("--seeds", default="0,1,2")
    _add_train_flags(p)
    p.add_argument("--out", help="sweep table CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="inference time against the number of spaces")
    _add_model_flags(p)
    p.add_argument("--counts", default="10:100:10")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--manifest", help="take the base scene from a manifest instead of a synthetic frame")
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timings CSV path (default: stdout)")
    p.add_argument("--check", action="store_true", help="exit 1 unless the curve has the expected shape")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict", help="occupancy scores for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--manifest", required=True, help="quads are taken from the matching scene")
    p.add_argument("--scene", type=int, help="use this scene's quads instead of matching by path")
    p.add_argument("--checkpoint", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_predict)
    return parser


def _config_defaults(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in raw.items()}


def _parse(parser: argparse.ArgumentParser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        command = next((tok for tok in (argv if argv is not None else sys.argv[1:]) if tok in sub.choices), None)
        if command is not None:
            defaults = _config_defaults(known.config)
            subparser = sub.choices[command]
            actions = {a.dest: a for a in subparser._actions}
            unknown = sorted(set(defaults) - set(actions) - {"threads"})
            if unknown:
                subparser.error(f"config {known.config} sets unknown options: {', '.join(unknown)}")
            for dest in defaults:
                if dest in actions:
                    actions[dest].required = False  # a config value satisfies a required flag
            if "threads" in defaults:
                parser.set_defaults(threads=defaults.pop("threads"))
            subparser.set_defaults(**defaults)
    # explicit command-line flags still win over the file
    return parser.parse_args(argv)


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    except CliError as e:
        print(f"quadpool: error: {e}", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("quadpool: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, *EXPECTED_ERRORS) as e:
        print(f"quadpool {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
