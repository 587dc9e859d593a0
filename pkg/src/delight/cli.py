"""Command-line interface.

    delight run --config cfg.toml                      full pipeline
    delight sunpos --lat --lon --time                  sun direction as JSON
    delight synth --scene {plane|box|box-town|suite}   synthetic projects
    delight gbuffer --project DIR --out DIR
    delight refine --project DIR --gbuffer DIR --out DIR [--crf-sigma-xy ...]
    delight estimate-light --project DIR --masks DIR --gbuffer DIR --out light.json
    delight soften --project DIR --masks DIR --gbuffer DIR --light light.json --out DIR
    delight decompose --project DIR --gbuffer DIR --masks DIR --light light.json --out DIR
    delight eval --pred DIR --truth DIR --report report.json

Exit codes: 0 ok, 2 config error, 3 stage failure, 4 ratio rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from delight.config import ConfigError, load_config
from delight.crf import CrfParams
from delight.pipeline import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RATIO_REJECTED,
    EXIT_STAGE,
    PipelineError,
    decompose_tree,
    gbuffer_tree,
    generate_test_suite,
    light_tree,
    refine_tree,
    run_pipeline,
    soften_tree,
)
from delight.scene_io import CaptureMeta, SceneIOError, parse_timestamp
from delight.solar import sun_direction


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    run_pipeline(cfg)
    return EXIT_OK


def _cmd_sunpos(args) -> int:
    meta = CaptureMeta(latitude=args.lat, longitude=args.lon,
                       timestamp_utc=parse_timestamp(args.time))
    d = sun_direction(meta)
    json.dump({"azimuth_deg": d.azimuth_deg, "elevation_deg": d.elevation_deg,
               "vector": [float(x) for x in d.vector]}, sys.stdout, indent=1)
    print()
    return EXIT_OK


def _cmd_synth(args) -> int:
    if args.scene == "suite":
        for name, path in generate_test_suite(args.seed, args.out).items():
            print(f"{name}: {path}")
        return EXIT_OK
    from datetime import datetime, timezone

    from delight import synth

    meta = CaptureMeta(latitude=35.0, longitude=-106.0,
                       timestamp_utc=datetime(2022, 6, 15, 17, 30, 0, tzinfo=timezone.utc))
    sun = sun_direction(meta)
    rng = np.random.default_rng(args.seed)
    if args.scene == "plane":
        scene = synth.make_plane_scene(rng)
        cams = synth.ring_cameras(2, 4.0, 24.0, args.size, args.size, 22.0)
        radius = 0.0
    elif args.scene == "box":
        scene = synth.make_box_scene(rng)
        cams = synth.ring_cameras(3, 6.0, 25.0, args.size, args.size, 22.0)
        radius = 0.0
    else:  # box-town
        scene = synth.make_box_town_scene(rng)
        cams = synth.ring_cameras(8, 7.0, 26.0, args.size, args.size, 21.0)
        radius = 0.8
    synth.render_synthetic_project(
        args.out, scene, sun, np.array([4.0, 4.0, 4.0]), np.array([1.0, 1.0, 1.0]),
        cams, args.size, args.size, meta, sun_radius_deg=radius)
    print(args.out)
    return EXIT_OK


def _cmd_gbuffer(args) -> int:
    gbuffer_tree(args.project, args.out, workers=args.workers)
    return EXIT_OK


def _cmd_refine(args) -> int:
    params = CrfParams()
    updates = {}
    if args.crf_sigma_xy is not None:
        updates["sigma_xy"] = args.crf_sigma_xy
    if args.crf_sigma_rgb is not None:
        updates["sigma_rgb"] = args.crf_sigma_rgb
    if args.crf_sigma_s is not None:
        updates["sigma_s"] = args.crf_sigma_s
    if args.crf_iterations is not None:
        updates["iterations"] = args.crf_iterations
    if updates:
        params = dataclasses.replace(params, **updates)
    refine_tree(args.project, args.gbuffer, args.out, params, workers=args.workers)
    return EXIT_OK


def _cmd_estimate_light(args) -> int:
    est, pair_counts = light_tree(args.project, args.masks, args.gbuffer, args.out)
    print(json.dumps({"pair_counts": pair_counts,
                      "accepted": est is not None,
                      "ratio": [float(x) for x in est.ratio] if est else None}, indent=1))
    if est is None:
        print("error: illumination estimate rejected; see light.json for diagnostics",
              file=sys.stderr)
        return EXIT_RATIO_REJECTED
    return EXIT_OK


def _cmd_soften(args) -> int:
    soften_tree(args.project, args.masks, args.gbuffer, args.light, args.out,
                workers=args.workers)
    return EXIT_OK


def _cmd_decompose(args) -> int:
    decompose_tree(args.project, args.gbuffer, args.masks, args.light, args.out,
                   workers=args.workers)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from delight.decompose import evaluate
    from delight.scene_io import LinearImage, read_pfm

    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    records = []
    for pred_path in sorted(pred_dir.glob("*.pfm")):
        truth_path = truth_dir / pred_path.name
        if not truth_path.is_file():
            truth_path = truth_dir / f"{pred_path.stem}_albedo.pfm"
        if not truth_path.is_file():
            continue
        rec = {"image": pred_path.stem}
        rec.update(evaluate(LinearImage(read_pfm(pred_path)),
                            LinearImage(read_pfm(truth_path))))
        records.append(rec)
    with open(args.report, "w") as f:
        json.dump({"images": records}, f, indent=1, sort_keys=True)
    print(args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delight",
                                 description="physics-based albedo/shading recovery "
                                             "for aerial image collections")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sunpos", help="sun azimuth/elevation for a time and place")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--time", required=True, help="UTC, e.g. 2022-06-15T17:30:00Z")
    p.set_defaults(func=_cmd_sunpos)

    p = sub.add_parser("synth", help="generate synthetic test projects")
    p.add_argument("--scene", choices=["plane", "box", "box-town", "suite"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("gbuffer", help="rasterize per-image geometric attribute layers")
    p.add_argument("--project", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_gbuffer)

    p = sub.add_parser("refine", help="CRF-refine projected sun-visibility masks")
    p.add_argument("--project", required=True)
    p.add_argument("--gbuffer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--crf-sigma-xy", type=float)
    p.add_argument("--crf-sigma-rgb", type=float)
    p.add_argument("--crf-sigma-s", type=float)
    p.add_argument("--crf-iterations", type=int)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("estimate-light", help="estimate L_sun/L_sky from the collection")
    p.add_argument("--project", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--gbuffer", required=True)
    p.add_argument("--out", required=True, help="output light.json path")
    p.set_defaults(func=_cmd_estimate_light)

    p = sub.add_parser("soften", help="solve penumbra profiles into soft visibility")
    p.add_argument("--project", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--gbuffer", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_soften)

    p = sub.add_parser("decompose", help="assemble shading and divide out albedo")
    p.add_argument("--project", required=True)
    p.add_argument("--gbuffer", required=True)
    p.add_argument("--masks", required=True, help="soft visibility masks directory")
    p.add_argument("--light", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("eval", help="score predicted layers against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SceneIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
