"""Command-line entry point: ``lpn gen | train | eval-proposals | eval-counting | score``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from .anchors import AnchorConfigError
from .config import RunConfig, load_config, subseed
from .data_io import (
    AnnotationParseError,
    GridFormatError,
    SceneConfigError,
    read_annotations,
    read_manifest,
    write_manifest,
)
from .detection import DetectionParams, detections_csv
from .experiment import GridCache, count_scenes, evaluate_proposals, make_scenes
from .geometry import to_center
from .kernel import score_map
from .scorer import DivergenceError, ScorerModel, history_csv, train_scorer

logger = logging.getLogger("lpn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_CONFIG)


def _data(fn, *args, **kwargs):
    """Run a loader, mapping its failures to the data-error exit code."""
    try:
        return fn(*args, **kwargs)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None


# ---------------------------------------------------------------------------
# reports


class Reporter:
    def __init__(self, out_dir: Path, cfg: RunConfig, command: str, timestamps: bool):
        self.out_dir = out_dir
        self.cfg = cfg
        self.command = command
        self.timestamps = timestamps
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(f"cannot create output directory {out_dir}: {exc}", EXIT_DATA) from None

    def text(self, name: str, body: str) -> Path:
        path = self.out_dir / name
        try:
            path.write_text(body)
        except OSError as exc:
            raise CliError(f"cannot write {path}: {exc}", EXIT_DATA) from None
        return path

    def json(self, name: str, results: dict, **extra) -> Path:
        doc = {"artifact": "lpn", "version": __version__, "command": self.command}
        if self.timestamps:
            doc["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        doc.update(extra)
        doc["config"] = self.cfg.resolved()
        doc["results"] = results
        return self.text(name, json.dumps(doc, indent=2, allow_nan=True) + "\n")


def _reporter(args, cfg: RunConfig) -> Reporter:
    return Reporter(Path(args.output or cfg.output), cfg, args.command, not args.no_timestamps)


def _load_model(path) -> ScorerModel:
    return _data(lambda p: ScorerModel.from_json(Path(p).read_text()), path)


def _manifest(args, cfg: RunConfig):
    path = args.manifest or cfg.manifest
    if not path:
        raise CliError("no manifest given (--manifest or 'manifest' in the config)", EXIT_CONFIG)
    return _data(read_manifest, path)


def _check_compatible(model: ScorerModel, cfg: RunConfig, scenes) -> GridCache:
    anchors = model.anchors or cfg.anchors.generator_kwargs()
    grids = GridCache(anchors)
    for s in scenes[:1]:
        try:
            grids(s.image_w, s.image_h)
        except AnchorConfigError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
    return grids


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg: RunConfig) -> int:
    if args.n_scenes < 0:
        raise CliError("--n-scenes must be >= 0", EXIT_CONFIG)
    scenes = make_scenes(cfg, args.n_scenes, cfg.seed, args.prefix)
    rep = _reporter(args, cfg)
    try:
        manifest = write_manifest(scenes, rep.out_dir)
    except OSError as exc:
        raise CliError(f"cannot write scenes: {exc}", EXIT_DATA) from None
    counts = [{"scene_id": s.scene_id, "lot": s.lot, "cars": len(s.boxes)} for s in scenes]
    rep.text("scenes.csv", "scene_id,lot,cars\n" + "".join(f"{c['scene_id']},{c['lot']},{c['cars']}\n" for c in counts))
    rep.json("gen.json", {"n_scenes": len(scenes), "manifest": manifest.name, "scenes": counts}, seed=cfg.seed)
    print(f"wrote {len(scenes)} scenes to {manifest}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    scenes = _manifest(args, cfg)
    if not scenes:
        raise CliError("manifest has no scenes to train on", EXIT_DATA)
    kernel = cfg.kernel_enabled if args.kernel is None else args.kernel == "on"
    seed = subseed(cfg.seed, "train")
    start = time.perf_counter()
    try:
        model, history = train_scorer(
            scenes,
            cfg.loss_config(kernel=kernel),
            cfg.train_options(seed),
            cfg.anchors.generator_kwargs(),
            cfg.anchors.exclude_cross_boundary,
        )
    except DivergenceError as exc:
        raise CliError(f"training diverged: {exc}", EXIT_NUMERIC) from None
    except (AnchorConfigError, SceneConfigError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    elapsed = time.perf_counter() - start
    rep = _reporter(args, cfg)
    rep.text("model.json", model.to_json())
    rep.text("loss.csv", history_csv(history))
    results = {
        "kernel": kernel,
        "n_scenes": len(scenes),
        "n_params": model.n_params,
        "initial_loss": history[0].total,
        "final_loss": history[-1].total,
    }
    extra = {"seed": cfg.seed, "train_seed": seed}
    if rep.timestamps:
        extra["wall_clock_s"] = round(elapsed, 3)
    rep.json("train.json", results, **extra)
    print(f"loss {history[0].total:.6f} -> {history[-1].total:.6f} over {len(history) - 1} epochs")
    return EXIT_OK


def cmd_eval_proposals(args, cfg: RunConfig) -> int:
    budgets = tuple(args.budgets) if args.budgets else cfg.metrics.budgets
    if any(b < 1 for b in budgets):
        raise CliError("budgets must be positive", EXIT_CONFIG)
    model = _load_model(args.model)
    scenes = _manifest(args, cfg)
    grids = _check_compatible(model, cfg, scenes)
    table = evaluate_proposals(model, scenes, grids, budgets, cfg.metrics.iou_grid, args.jobs)
    rep = _reporter(args, cfg)
    rep.text("proposals.csv", table.to_csv())
    rep.json("proposals.json", {**table.to_dict(), "iou_grid": list(cfg.metrics.iou_grid)}, seed=cfg.seed)
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_eval_counting(args, cfg: RunConfig) -> int:
    det = cfg.detection
    try:
        params = DetectionParams(det.score_threshold, det.nms_iou, args.budget or det.top_n)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    scenes = _manifest(args, cfg)
    if not scenes:
        raise CliError("manifest has no scenes; counting errors are undefined", EXIT_DATA)
    if args.perfect:
        model, grids, method = None, None, "perfect"
    else:
        if not args.model:
            raise CliError("eval-counting needs --model (or --perfect)", EXIT_CONFIG)
        model = _load_model(args.model)
        grids = _check_compatible(model, cfg, scenes)
        method = "model"
    report, detections = count_scenes(model, scenes, grids, params, args.jobs)
    rep = _reporter(args, cfg)
    rep.text("counting.csv", "scene_id,y,f\n" + "".join(f"{r['scene_id']},{r['y']},{r['f']}\n" for r in report.to_dict()["scenes"]))
    rep.text("counting_summary.csv", f"method,budget,mae,rmse\n{method},{params.top_n},{report.mae:.6f},{report.rmse:.6f}\n")
    rep.text("detections.csv", "scene_id,x1,y1,x2,y2,score\n" + "".join(detections_csv(s.scene_id, d) for s, d in zip(scenes, detections)))
    rep.json("counting.json", {"method": method, "budget": params.top_n, **report.to_dict()}, seed=cfg.seed)
    print(f"{method} budget={params.top_n} MAE={report.mae:.4f} RMSE={report.rmse:.4f} over {report.n} scenes")
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    if args.annotation:
        w, h = cfg.scenes.image_w, cfg.scenes.image_h
        ann = _data(read_annotations, args.annotation, image_w=w, image_h=h)
        scene_id, boxes = Path(args.annotation).stem, ann.boxes
    else:
        scenes = _manifest(args, cfg)
        if not scenes:
            raise CliError("manifest has no scenes", EXIT_DATA)
        pick = [s for s in scenes if args.scene in (None, s.scene_id)]
        if not pick:
            raise CliError(f"scene {args.scene!r} not in manifest", EXIT_DATA)
        scene = pick[0]
        scene_id, boxes, w, h = scene.scene_id, scene.boxes, scene.image_w, scene.image_h
    step = args.step or cfg.anchors.stride
    centers = to_center(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))[:, :2]
    kmap = score_map(centers, cfg.kernel.build(), w, h, step)
    lines = ["x,y,k"]
    for iy in range(kmap.shape[0]):
        for ix in range(kmap.shape[1]):
            lines.append(f"{(ix + 0.5) * step!r},{(iy + 0.5) * step!r},{kmap[iy, ix]!r}")
    rep = _reporter(args, cfg)
    rep.text("kernel_map.csv", "\n".join(lines) + "\n")
    stats = {"scene_id": scene_id, "step": step, "shape": list(kmap.shape), "min": float(kmap.min()), "max": float(kmap.max())}
    rep.json("kernel_map.json", stats, seed=cfg.seed)
    print(f"{scene_id}: kernel map {kmap.shape[1]}x{kmap.shape[0]}, max {kmap.max():.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _budget_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for per-scene work")
    common.add_argument("--output", help="output directory (overrides the config)")
    common.add_argument("--no-timestamps", action="store_true", help="omit wall-clock fields from reports")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lpn", description="Layout-weighted proposal experiments on synthetic parking lots.")
    parser.add_argument("--version", action="version", version=f"lpn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic scenes and a manifest")
    p.add_argument("--n-scenes", type=int, default=10)
    p.add_argument("--prefix", default="scene", help="scene id prefix; also separates seed streams")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train the scorer on a manifest")
    p.add_argument("--manifest")
    p.add_argument("--kernel", choices=("on", "off"), help="layout weighting (default from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-proposals", parents=[common], help="average recall per proposal budget")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--budgets", type=_budget_list, help="comma-separated, e.g. 100,300,500")
    p.set_defaults(func=cmd_eval_proposals)

    p = sub.add_parser("eval-counting", parents=[common], help="count by detection; MAE and RMSE")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--budget", type=int, help="proposal budget before NMS (default detection.top_n)")
    p.add_argument("--perfect", action="store_true", help="use ground truth as the detector")
    p.set_defaults(func=cmd_eval_counting)

    p = sub.add_parser("score", parents=[common], help="dump the layout score map of one scene")
    p.add_argument("--manifest")
    p.add_argument("--scene", help="scene id (default: first in manifest)")
    p.add_argument("--annotation", help="annotation file instead of a manifest")
    p.add_argument("--step", type=int, help="map spacing in pixels (default anchor stride)")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise CliError("--jobs must be >= 1", EXIT_CONFIG)
        try:
            cfg = load_config(args.config, {"seed": args.seed})
        except FileNotFoundError as exc:
            raise CliError(f"config not found: {exc.filename}", EXIT_CONFIG) from None
        except (ValidationError, ValueError, yaml.YAMLError) as exc:
            raise CliError(f"invalid config: {exc}", EXIT_CONFIG) from None
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (AnnotationParseError, GridFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
