"""Command line interface.

Subcommands: `gen` renders a synthetic corpus from a scene config, `detect`
runs the pipeline over a corpus manifest, `eval` scores fused output against
ground truth, `bench` measures single-threaded throughput, `render` converts
depth frames to PNG, and `calibrate-alpha` fits the linear fill's gradient
gain against the exact plane-intersection oracle.

Exit codes: 0 on success, 1 on validation failures, 2 on IO, parse, or usage
failures.  The SPECKLEMAP_LOG environment variable (error, info, debug)
controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import (
    CameraIntrinsics,
    DepthFrame,
    ParameterError,
    ParseError,
    Rect,
    SpeckleMapError,
)
from .frameio import (
    atomic_write_bytes,
    read_depth,
    read_manifest,
    read_mask,
    render_png,
    write_depth,
    write_json,
    write_mask,
)
from .kernels import Peak, SpeckleCandidate
from .metrics import evaluate_corpus, results_table
from .pipeline import (
    PipelineConfig,
    config_from_dict,
    diagnostics_to_dict,
    init_state,
    load_config,
    preset,
    process_frame,
)
from .reprojection import calibrate_alpha
from .segmentation import Region
from .synth import (
    NoiseSpec,
    PaneSpec,
    SceneSpec,
    SpeckleSpec,
    WallSpec,
    corpus_from_dict,
    generate_corpus,
    render_scene,
)
from .tracker import ConfirmedSpeckle

log = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    name = os.environ.get("SPECKLEMAP_LOG", "error").lower()
    if name not in _LOG_LEVELS:
        raise ParameterError(
            f"SPECKLEMAP_LOG must be one of {sorted(_LOG_LEVELS)}, got {name!r}"
        )
    logging.basicConfig(level=_LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ParameterError("pass either --config or --preset, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        cfg = PipelineConfig()
    if getattr(args, "mode", None):
        cfg = replace(cfg, fill_mode=args.mode)
    return cfg


def _cmd_gen(args: argparse.Namespace) -> int:
    from .frameio import read_json

    corpus = corpus_from_dict(read_json(args.config))
    if args.seed is not None:
        corpus = replace(corpus, seed=args.seed)
    out_dir = Path(args.out)
    manifest = generate_corpus(corpus, out_dir)
    print(f"wrote {len(manifest['entries'])} frames to {out_dir}")
    return 0


def _cmd_detect(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = init_state(cfg)
    lines: list[str] = []
    # The tracker carries state across frames, so entries run in manifest
    # order regardless of --jobs.
    for entry in manifest["entries"]:
        frame, sonar, _ = read_depth(base / entry["depth"])
        state, fused, diag = process_frame(cfg, state, frame, sonar)
        index = int(entry["index"])
        fused_frame = DepthFrame(fused.intrinsics, fused.timestamp, fused.depth)
        write_depth(fused_frame, out_dir / f"fused_{index:04d}.pgm", sonar=sonar, kind="fused")
        write_mask(fused.synthesized, out_dir / f"synth_{index:04d}.pgm")
        record = {"index": index, "depth": entry["depth"]}
        record.update(diagnostics_to_dict(diag))
        lines.append(json.dumps(record, sort_keys=True))
    atomic_write_bytes(out_dir / "diagnostics.jsonl", ("\n".join(lines) + "\n").encode())
    print(f"processed {len(lines)} frames into {out_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    pred_dir = Path(args.pred)

    def pairs():
        for entry in manifest["entries"]:
            index = int(entry["index"])
            pred = read_mask(pred_dir / f"synth_{index:04d}.pgm")
            gt = read_mask(base / entry["mask"])
            yield pred, gt

    scored = evaluate_corpus(pairs())
    table = results_table([(manifest.get("name", "corpus"), scored)])
    if args.out:
        atomic_write_bytes(Path(args.out), table.encode())
    print(table, end="")
    return 0


def _bench_scene(seed: int) -> SceneSpec:
    return SceneSpec(
        panes=(PaneSpec(distance_m=2.5, extent_m=(-0.6, 0.6, -0.5, 0.5)),),
        walls=(
            WallSpec(distance_m=2.5, extent_m=(-4.0, -0.6, -3.0, 3.0)),
            WallSpec(distance_m=2.5, extent_m=(0.6, 4.0, -3.0, 3.0)),
            WallSpec(distance_m=2.5, extent_m=(-0.6, 0.6, 0.5, 3.0)),
            WallSpec(distance_m=2.5, extent_m=(-0.6, 0.6, -3.0, -0.5)),
        ),
        noise=NoiseSpec(sigma_m=0.015, dropout=0.05),
        speckle=SpeckleSpec(radius_px=20.1),
        seed=seed,
    )


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    intr = CameraIntrinsics.default()
    seed = args.seed if args.seed is not None else 0
    frames = []
    for i in range(args.frames):
        frame, sonar, _ = render_scene(_bench_scene(seed + i), intr)
        frames.append((DepthFrame(intr, i / 10.0, frame.depth), sonar))
    state = init_state(cfg)
    latencies = []
    for frame, sonar in frames:
        t0 = time.perf_counter()
        state, _, _ = process_frame(cfg, state, frame, sonar)
        latencies.append(time.perf_counter() - t0)
    mean = statistics.fmean(latencies)
    p99 = sorted(latencies)[max(0, math.ceil(0.99 * len(latencies)) - 1)]
    report = {
        "frames": len(latencies),
        "mean_ms": mean * 1000.0,
        "median_ms": statistics.median(latencies) * 1000.0,
        "p99_ms": p99 * 1000.0,
        "hz": 1.0 / mean,
    }
    if args.out:
        write_json(Path(args.out), report)
    print(
        f"{report['frames']} frames, single-threaded: "
        f"mean {report['mean_ms']:.1f} ms, median {report['median_ms']:.1f} ms, "
        f"p99 {report['p99_ms']:.1f} ms, {report['hz']:.1f} Hz"
    )
    print("(desktop proxy measurement, not an embedded-target benchmark)")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    frame, _, _ = read_depth(args.depth)
    synthesized = read_mask(args.mask) if args.mask else None
    if synthesized is not None and synthesized.shape != frame.depth.shape:
        raise ParameterError("mask dimensions do not match the depth frame")
    render_png(frame.depth, Path(args.out), synthesized=synthesized)
    print(f"wrote {args.out}")
    return 0


def _cmd_calibrate_alpha(args: argparse.Namespace) -> int:
    intr = CameraIntrinsics.default()
    if not (0.0 < abs(args.tilt) < 45.0):
        raise ParameterError("tilt must be nonzero and below 45 degrees")
    scene = SceneSpec(
        panes=(PaneSpec(distance_m=args.distance, tilt_deg=args.tilt),),
        seed=0,
    )
    frame, _, gt = render_scene(scene, intr)
    ys, xs = np.nonzero(gt.glass_mask)
    bbox = Rect(int(xs.min()), int(ys.min()), int(np.ptp(xs)) + 1, int(np.ptp(ys)) + 1)
    region = Region(
        region_id=1,
        bbox=bbox,
        mask=gt.glass_mask[bbox.y0 : bbox.y1, bbox.x0 : bbox.x1],
        area=int(gt.glass_mask.sum()),
        touches_border=False,
    )
    u_s = int(round(intr.cx + intr.fx * math.tan(math.radians(args.tilt))))
    v_s = int(round(intr.cy))
    d_s = float(gt.true_depth[v_s, u_s])
    stub = SpeckleCandidate(
        bright_peak=Peak(u_s, v_s, 0.0),
        ring_peak=Peak(u_s, v_s, 0.0),
        center=(u_s, v_s),
        depth_m=d_s,
        patch=frame.depth[v_s - 2 : v_s + 2, u_s - 2 : u_s + 2],
        patch_origin=(u_s - 2, v_s - 2),
    )
    speckle = ConfirmedSpeckle(
        track_id=1, center=(u_s, v_s), depth_m=d_s, hit_count=1, last_seen=0.0,
        candidate=stub,
    )
    alpha = calibrate_alpha(frame, region, speckle, intr)
    if args.out:
        write_json(Path(args.out), {"alpha": alpha})
    print(f"alpha = {alpha:.12e} (pane at {args.distance} m, tilt {args.tilt} deg)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specklemap",
        description="Glass detection in ToF depth frames via reflection speckles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="render a synthetic corpus from a corpus config")
    gen.add_argument("--config", required=True, help="corpus config JSON")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=None, help="override the corpus seed")
    gen.set_defaults(func=_cmd_gen)

    def add_pipeline_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="pipeline config JSON")
        p.add_argument("--preset", type=int, choices=(1, 2, 3), default=None)
        p.add_argument("--mode", choices=("linear", "exact"), default=None,
                       help="override the fill mode")

    detect = sub.add_parser("detect", help="run the pipeline over a corpus manifest")
    detect.add_argument("manifest", help="corpus manifest.json")
    detect.add_argument("--out", required=True, help="output directory")
    detect.add_argument("--jobs", type=int, default=1,
                        help="accepted for symmetry; detection is sequential")
    add_pipeline_flags(detect)
    detect.set_defaults(func=_cmd_detect)

    ev = sub.add_parser("eval", help="score fused masks against ground truth")
    ev.add_argument("manifest", help="corpus manifest.json")
    ev.add_argument("--pred", required=True, help="directory written by detect")
    ev.add_argument("--out", default=None, help="write the CSV here as well")
    ev.add_argument("--jobs", type=int, default=1)
    ev.set_defaults(func=_cmd_eval)

    bench = sub.add_parser("bench", help="measure single-threaded throughput")
    bench.add_argument("--frames", type=int, default=100)
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--out", default=None, help="write a JSON report here")
    add_pipeline_flags(bench)
    bench.set_defaults(func=_cmd_bench)

    render = sub.add_parser("render", help="render a depth frame to PNG")
    render.add_argument("depth", help="depth PGM file")
    render.add_argument("--out", required=True, help="output PNG path")
    render.add_argument("--mask", default=None,
                        help="synthesized-pixel mask PGM for a red overlay")
    render.set_defaults(func=_cmd_render)

    cal = sub.add_parser(
        "calibrate-alpha",
        help="fit the linear-fill gradient gain against the exact plane fill",
    )
    cal.add_argument("--tilt", type=float, default=10.0, help="pane tilt in degrees")
    cal.add_argument("--distance", type=float, default=2.0, help="pane distance in meters")
    cal.add_argument("--out", default=None, help="write {\"alpha\": value} JSON here")
    cal.set_defaults(func=_cmd_calibrate_alpha)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _configure_logging()
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SpeckleMapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
