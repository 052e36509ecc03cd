"""Command-line entry points for the lifting/annotation/render pipeline.

Logging is JSON lines on stderr. Exit codes:

    0   success
    1   usage or configuration error
    2   input I/O or file-format error
    3   pipeline finished but one or more inputs failed

Every artifact is written atomically (temp-then-rename) and all JSON is
key-sorted, so a rerun with identical inputs and configuration produces
byte-identical data files; run manifests differ only in timing fields.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .annotate import generate_annotations
from .config import PipelineConfig, config_hash, load_config, override
from .errors import (
    FormatError,
    InvalidArgumentError,
    LiftboxError,
    NoDataError,
)
from .evaluate import DetectionSet, GroundTruthSet, mean_ap, ratio_report
from .formats import (
    read_box_set,
    read_camera,
    read_depth,
    read_detections,
    read_json,
    read_ply,
    write_annotations,
    write_box_set,
    write_depth,
    write_json,
    write_ply,
)
from .geometry import CameraModel, intrinsics_from_fov, lift_depth
from .gravity import correct_orientation
from .priors import read_priors
from .render import (
    Viewpoint,
    angle_sweep,
    best_compact_view,
    make_training_renders,
    orbit_camera,
    render_depth,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PARTIAL = 3

_LEVELS = {"debug": 10, "info": 20, "warning": 30, "error": 40}
_log_threshold = 20


def _emit(level: str, event: str, **fields) -> None:
    if _LEVELS.get(level, 20) < _log_threshold:
        return
    doc = {"level": level, "event": event}
    doc.update(fields)
    print(json.dumps(doc, sort_keys=True, default=str), file=sys.stderr, flush=True)


class _JsonLogHandler(logging.Handler):
    """Routes package logging (e.g. weak-consensus warnings) to stderr JSON."""

    def emit(self, record: logging.LogRecord) -> None:
        _emit(record.levelname.lower(), record.getMessage(), logger=record.name)


def _setup_logging(level: str) -> None:
    global _log_threshold
    _log_threshold = _LEVELS[level]
    root = logging.getLogger("liftbox")
    root.setLevel(logging.DEBUG)
    root.handlers = [_JsonLogHandler()]
    root.propagate = False


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors by default; we reserve 2 for I/O."""

    def error(self, message):  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="TOML configuration file")
    common.add_argument("--output-dir", type=Path, default=None,
                        help="where artifacts are written (default: config io.output_dir)")
    common.add_argument("--log-level", choices=sorted(_LEVELS), default="info")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for multi-input commands")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved for future stochastic stages; recorded in manifests")

    parser = _Parser(prog="liftbox",
                     description="Depth-to-cloud lifting, pseudo 3D box annotation, "
                                 "view rendering and detection evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("lift", parents=[common],
                       help="depth image -> gravity-aligned point cloud (PLY)")
    p.add_argument("depth", type=Path, help="16-bit PNG (mm) or PFM (m) depth image")
    p.add_argument("--camera", type=Path, default=None, help="camera JSON (intrinsics+pose)")
    p.add_argument("--fov", type=float, default=None,
                   help="horizontal field of view in degrees (when no camera JSON)")
    p.add_argument("--gravity-align", action=argparse.BooleanOptionalAction, default=None,
                   help="rotate the dominant surface normal onto +Z (default from config)")
    p.set_defaults(handler=cmd_lift)

    p = sub.add_parser("annotate", parents=[common],
                       help="point cloud + 2D detections -> 3D box annotations")
    p.add_argument("--cloud", type=Path, required=True, help="PLY cloud with pixel provenance")
    p.add_argument("--detections", type=Path, required=True, help="2D detections JSON")
    p.add_argument("--priors", type=Path, required=True, help="size-prior JSON")
    p.set_defaults(handler=cmd_annotate)

    p = sub.add_parser("render", parents=[common],
                       help="point cloud -> depth image(s) through a virtual camera")
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--camera", type=Path, default=None, help="camera JSON")
    p.add_argument("--fov", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--mode", choices=("single", "sweep", "partial", "compact"),
                   default="single")
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("evaluate", parents=[common],
                       help="detections vs ground truth -> AP report + volume ratios")
    p.add_argument("--detections", type=Path, required=True, help="scene-keyed box JSON")
    p.add_argument("--ground-truth", type=Path, required=True, help="scene-keyed box JSON")
    p.add_argument("--priors", type=Path, default=None,
                   help="optional size priors for a prior-referenced ratio report")
    p.add_argument("--iou-thresh", type=float, default=None)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("pipeline", parents=[common],
                       help="lift + align + annotate + render for a batch of inputs")
    p.add_argument("--inputs", type=Path, required=True,
                   help='JSON array of {"depth", "detections", "camera"?, "id"?}')
    p.add_argument("--priors", type=Path, required=True)
    p.add_argument("--fov", type=float, default=None,
                   help="horizontal field of view in degrees (when no camera JSON)")
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("priors-check", parents=[common],
                       help="validate a size-prior JSON file")
    p.add_argument("priors", type=Path)
    p.set_defaults(handler=cmd_priors_check)
    return parser


def _effective_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "fov", None) is not None:
        cfg = override(cfg, "camera", fov_deg=args.fov)
    if getattr(args, "gravity_align", None) is not None:
        cfg = override(cfg, "lift", gravity_align=args.gravity_align)
    if getattr(args, "iou_thresh", None) is not None:
        cfg = override(cfg, "evaluate", iou_thresh=args.iou_thresh)
    if args.output_dir is not None:
        cfg = override(cfg, "io", output_dir=str(args.output_dir))
    if args.jobs < 1:
        raise InvalidArgumentError(f"--jobs must be >= 1, got {args.jobs}")
    return cfg


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.io.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _camera_for(depth, camera_path, cfg) -> CameraModel:
    if camera_path is not None:
        camera = read_camera(camera_path)
        if (camera.width, camera.height) != (depth.width, depth.height):
            raise FormatError(
                f"camera is {camera.width}x{camera.height} but depth image is "
                f"{depth.width}x{depth.height}")
        return camera
    return intrinsics_from_fov(depth.width, depth.height, cfg.camera.fov_deg)


def _consensus_doc(consensus) -> dict:
    return {"normal": [float(v) for v in consensus.normal],
            "support": consensus.support,
            "inlier_fraction": consensus.inlier_fraction}


def cmd_lift(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    depth = read_depth(args.depth)
    camera = _camera_for(depth, args.camera, cfg)
    cloud = lift_depth(depth, camera)
    stem = args.depth.stem
    entry = {"source": str(args.depth), "points": len(cloud),
             "gravity_align": cfg.lift.gravity_align,
             "config_hash": config_hash(cfg)}
    if cfg.lift.gravity_align:
        cloud, rotation, consensus = correct_orientation(
            cloud, depth, camera,
            bin_deg=cfg.lift.bin_deg,
            min_inlier_fraction=cfg.lift.min_inlier_fraction)
        entry["rotation"] = [float(v) for v in rotation.reshape(-1)]
        entry["consensus"] = _consensus_doc(consensus)
    else:
        entry["rotation"] = [float(v) for v in np.eye(3).reshape(-1)]
        entry["consensus"] = None
    write_ply(out / f"{stem}.ply", cloud)
    write_json(out / f"{stem}.lift.json", entry)
    _emit("info", "lift complete", source=str(args.depth), points=len(cloud),
          output=str(out / f"{stem}.ply"))
    return EXIT_OK


def cmd_annotate(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    cloud = read_ply(args.cloud)
    boxes2d = read_detections(args.detections)
    priors = read_priors(args.priors)
    boxes, drops = generate_annotations(
        cloud, boxes2d, priors,
        eps=cfg.cluster.eps, min_pts=cfg.cluster.min_pts,
        t=cfg.size_filter.t, unknown_policy=cfg.size_filter.unknown_policy)
    stem = args.cloud.stem
    write_annotations(out / f"{stem}.boxes.json", boxes)
    write_json(out / f"{stem}.drops.json",
               [{"index": d.index, "category": d.category, "reason": d.reason}
                for d in drops])
    _emit("info", "annotate complete", kept=len(boxes), dropped=len(drops),
          output=str(out / f"{stem}.boxes.json"))
    return EXIT_OK


def _render_camera(args, cfg) -> CameraModel:
    if args.camera is not None:
        return read_camera(args.camera)
    if args.width is None or args.height is None:
        raise InvalidArgumentError(
            "render needs --camera, or --width and --height (plus --fov or config)")
    return intrinsics_from_fov(args.width, args.height, cfg.camera.fov_deg)


def _sidecar(view: Viewpoint, image, cfg) -> dict:
    return {"theta_h": view.theta_h, "theta_v": view.theta_v,
            "splat_px": cfg.render.splat_px, "depth_tol": cfg.render.depth_tol,
            "valid_px": int(image.valid.sum())}


def _pair_name(th: float, tv: float) -> str:
    return f"h{int(round(th)):+04d}_v{int(round(tv)):+04d}"


def cmd_render(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    cloud = read_ply(args.cloud)
    base = _render_camera(args, cfg)
    stem = args.cloud.stem
    splat = cfg.render.splat_px
    if args.mode == "single":
        image = render_depth(cloud, base, splat_px=splat)
        write_depth(out / f"{stem}.png", image)
        view = Viewpoint(0.0, 0.0, base)
        write_json(out / f"{stem}.json", _sidecar(view, image, cfg))
    elif args.mode == "sweep":
        center = cloud.points.mean(axis=0) if len(cloud) else np.zeros(3)
        sweep_dir = out / f"{stem}.sweep"
        for th, tv in angle_sweep():
            view = Viewpoint(th, tv, base)
            image = render_depth(cloud, orbit_camera(view, center), splat_px=splat)
            name = _pair_name(th, tv)
            write_depth(sweep_dir / f"{name}.png", image)
            write_json(sweep_dir / f"{name}.json", _sidecar(view, image, cfg))
    elif args.mode == "partial":
        partial_dir = out / f"{stem}.partial"
        renders = make_training_renders(cloud, base, splat_px=splat,
                                        depth_tol=cfg.render.depth_tol)
        for (_, view_b), image in renders:
            name = _pair_name(view_b.theta_h, view_b.theta_v)
            write_depth(partial_dir / f"{name}.png", image)
            write_json(partial_dir / f"{name}.json", _sidecar(view_b, image, cfg))
    else:  # compact
        view, image = best_compact_view(cloud, base, angle_sweep(), splat_px=splat)
        write_depth(out / f"{stem}.compact.png", image)
        write_json(out / f"{stem}.compact.json", _sidecar(view, image, cfg))
    _emit("info", "render complete", mode=args.mode, cloud=str(args.cloud))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    dets = DetectionSet(scenes={s: tuple(b) for s, b in read_box_set(args.detections).items()})
    gts = GroundTruthSet(scenes={s: tuple(b) for s, b in read_box_set(args.ground_truth).items()})
    result = mean_ap(dets, gts, iou_thresh=cfg.evaluate.iou_thresh,
                     rotated=cfg.evaluate.rotated)

    num_gt = {c: 0 for c in result.per_class}
    num_det = {c: 0 for c in result.per_class}
    for boxes in gts.scenes.values():
        for b in boxes:
            num_gt[b.category] = num_gt.get(b.category, 0) + 1
    for boxes in dets.scenes.values():
        for b in boxes:
            num_det[b.category] = num_det.get(b.category, 0) + 1

    if args.priors is not None:
        ratio_refs = read_priors(args.priors)
        ratio_reference = "priors"
    else:
        ratio_refs = gts
        ratio_reference = "ground-truth"
    try:
        ratios = ratio_report(dets, ratio_refs, top_k=cfg.evaluate.top_k)
        ratio_doc = {
            "reference": ratio_reference,
            "categories": {c: {"count": len(samples),
                               "bandwidth": curve.bandwidth,
                               "peak_x": curve.peak_x()}
                           for c, (samples, curve) in ratios.entries.items()},
            "skipped": ratios.skipped,
        }
        curves = ratios.entries
    except NoDataError:
        ratio_doc = None
        curves = {}

    report = {"iou_thresh": cfg.evaluate.iou_thresh, "rotated": cfg.evaluate.rotated,
              "mean_ap": result.mean_ap,
              "per_class": {c: {"ap": ap, "num_gt": num_gt.get(c, 0),
                                "num_det": num_det.get(c, 0)}
                            for c, ap in result.per_class.items()},
              "undefined": list(result.undefined),
              "ratio": ratio_doc}
    write_json(out / "report.json", report)

    lines = ["category,ap,num_gt,num_det"]
    for c in sorted(result.per_class):
        ap = result.per_class[c]
        lines.append(f"{c},{'' if ap is None else repr(ap)},{num_gt.get(c, 0)},{num_det.get(c, 0)}")
    lines.append(f"mean,{result.mean_ap!r},,")
    (out / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if curves:
        rows = ["category,x,density"]
        for c, (_, curve) in curves.items():
            for x, d in zip(curve.grid, curve.density):
                rows.append(f"{c},{x!r},{d!r}")
        (out / "ratio_curves.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _emit("info", "evaluate complete", mean_ap=result.mean_ap,
          classes=len(result.per_class), undefined=len(result.undefined))
    return EXIT_OK


def _read_inputs_manifest(path: Path) -> list[dict]:
    doc = read_json(path)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: inputs manifest must be a JSON array")
    inputs = []
    seen = set()
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "depth" not in item or "detections" not in item:
            raise FormatError(f"{path}: entry {i} must carry depth and detections paths")
        scene_id = str(item.get("id", Path(item["depth"]).stem))
        if scene_id in seen:
            raise InvalidArgumentError(
                f"{path}: duplicate scene id {scene_id!r}; set distinct \"id\" fields")
        seen.add(scene_id)
        inputs.append({"id": scene_id, "depth": Path(item["depth"]),
                       "detections": Path(item["detections"]),
                       "camera": Path(item["camera"]) if "camera" in item else None})
    return inputs


def _pipeline_one(job: dict, cfg: PipelineConfig, priors, out: Path) -> dict:
    t0 = time.perf_counter()
    scene_id = job["id"]
    scene_dir = out / "scenes" / scene_id
    entry = {"id": scene_id, "depth": str(job["depth"]),
             "detections": str(job["detections"]), "status": "ok",
             "outputs": [], "error": None}
    try:
        depth = read_depth(job["depth"])
        camera = _camera_for(depth, job["camera"], cfg)
        cloud = lift_depth(depth, camera)
        entry["points"] = len(cloud)
        if cfg.lift.gravity_align:
            cloud, rotation, consensus = correct_orientation(
                cloud, depth, camera, bin_deg=cfg.lift.bin_deg,
                min_inlier_fraction=cfg.lift.min_inlier_fraction)
            entry["rotation"] = [float(v) for v in rotation.reshape(-1)]
            entry["consensus"] = _consensus_doc(consensus)
            # the cloud now lives in the aligned frame; move the camera with it
            # so the renders below still look at the scene
            camera = camera.with_pose(rotation=rotation @ camera.rotation,
                                      translation=rotation @ camera.translation)
        else:
            entry["rotation"] = [float(v) for v in np.eye(3).reshape(-1)]
            entry["consensus"] = None

        boxes2d = read_detections(job["detections"])
        boxes, drops = generate_annotations(
            cloud, boxes2d, priors,
            eps=cfg.cluster.eps, min_pts=cfg.cluster.min_pts,
            t=cfg.size_filter.t, unknown_policy=cfg.size_filter.unknown_policy)
        entry["boxes_kept"] = len(boxes)
        entry["drops"] = [{"index": d.index, "category": d.category, "reason": d.reason}
                          for d in drops]
        entry["boxes"] = boxes

        if "ply" in cfg.io.formats:
            write_ply(scene_dir / "cloud.ply", cloud)
            entry["outputs"].append(str(scene_dir / "cloud.ply"))
        if "annotations" in cfg.io.formats:
            write_annotations(scene_dir / "boxes.json", boxes)
            write_json(scene_dir / "drops.json", entry["drops"])
            entry["outputs"] += [str(scene_dir / "boxes.json"),
                                 str(scene_dir / "drops.json")]
        if "renders" in cfg.io.formats:
            render_dir = scene_dir / "renders"
            base_img = render_depth(cloud, camera, splat_px=cfg.render.splat_px)
            write_depth(render_dir / "base.png", base_img)
            entry["outputs"].append(str(render_dir / "base.png"))
            for (_, view_b), image in make_training_renders(
                    cloud, camera, splat_px=cfg.render.splat_px,
                    depth_tol=cfg.render.depth_tol):
                name = _pair_name(view_b.theta_h, view_b.theta_v)
                write_depth(render_dir / f"{name}.png", image)
                entry["outputs"].append(str(render_dir / f"{name}.png"))
    except (LiftboxError, OSError) as exc:
        entry["status"] = "failed"
        entry["error"] = f"{type(exc).__name__}: {exc}"
        entry.setdefault("boxes", [])
        _emit("warning", "pipeline input failed", id=scene_id, error=entry["error"])
    entry["elapsed_s"] = time.perf_counter() - t0
    return entry


def cmd_pipeline(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    inputs = _read_inputs_manifest(args.inputs)
    priors = read_priors(args.priors)
    t0 = time.perf_counter()

    if args.jobs == 1:
        entries = [_pipeline_one(job, cfg, priors, out) for job in inputs]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(lambda job: _pipeline_one(job, cfg, priors, out),
                                    inputs))

    detections = {e["id"]: e.pop("boxes") for e in entries}
    write_box_set(out / "detections.json", detections)

    failures = [e for e in entries if e["status"] == "failed"]
    manifest = {"version": __version__, "config_hash": config_hash(cfg),
                "config": asdict(cfg), "seed": args.seed, "jobs": args.jobs,
                "inputs": entries,
                "timings": {"total_s": time.perf_counter() - t0}}
    write_json(out / "run_manifest.json", manifest)
    _emit("info", "pipeline complete", inputs=len(entries), failed=len(failures),
          output=str(out))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_priors_check(args) -> int:
    cfg = _effective_config(args)
    db = read_priors(args.priors)
    doc = {"categories": len(db), "source": db.source,
           "names": db.categories()}
    print(json.dumps(doc, sort_keys=True, indent=2))
    _emit("info", "priors ok", categories=len(db), config_hash=config_hash(cfg))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return args.handler(args)
    except InvalidArgumentError as exc:
        _emit("error", str(exc), kind="usage")
        return EXIT_USAGE
    except (FormatError, NoDataError, OSError) as exc:
        _emit("error", str(exc), kind="io")
        return EXIT_IO
    except LiftboxError as exc:
        _emit("error", str(exc), kind="processing")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
