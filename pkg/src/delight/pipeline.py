"""Pipeline orchestration: sun position, G-buffers, CRF refinement,
collection-wide light estimation, penumbra softening, decomposition, and
optional evaluation against ground truth.

Stages communicate exclusively through files, so a stage recomputed after a
partial cache invalidation sees byte-identical inputs to a fresh run.  The
tree-level stage functions (gbuffer_tree, refine_tree, ...) operate on
explicit directories and back both the orchestrated `run` command and the
stage-wise subcommands.

Caching in run_pipeline is keyed by content hashes of the project inputs
plus the config sections a stage actually reads, chained through upstream
stage keys.  The manifest records the resolved config (a run can be
replayed from the manifest alone), per-stage keys, cache hits, timings, and
ratio diagnostics; timings are the one run-varying field, so determinism is
defined over the outputs/ tree, not manifest.json.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from delight import synth
from delight.bvh import build_bvh
from delight.config import PipelineConfig
from delight.crf import CrfParams, refine_visibility
from delight.decompose import PixelFlag, assemble_shading, decompose_albedo, evaluate
from delight.gbuffer import GBuffer, rasterize_gbuffer
from delight.light import (
    GmmParams,
    IlluminationRatio,
    PairParams,
    RatioEstimateError,
    estimate_ratio,
    extract_boundary_pairs,
    filter_pairs,
)
from delight.masks import SoftVisibility, VisibilityMask
from delight.penumbra import (
    ProfileParams,
    build_profile_weights,
    composite_soft_mask,
    extract_profiles,
    solve_profile,
)
from delight.scene_io import (
    CaptureMeta,
    LinearImage,
    load_cameras_manifest,
    load_project,
    read_pfm,
    write_pfm,
)
from delight.solar import SunDirection, sun_below_horizon, sun_direction

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineError",
    "run_pipeline",
    "generate_test_suite",
    "gbuffer_tree",
    "refine_tree",
    "light_tree",
    "soften_tree",
    "decompose_tree",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_RATIO_REJECTED = 4


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, exit_code: int = EXIT_STAGE):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


def _stems(project_dir: Path) -> list[str]:
    return [Path(name).stem for name, _ in load_cameras_manifest(project_dir / "cameras.json")]


def _map_indices(n: int, fn, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def write_sun_json(path, sun: SunDirection) -> None:
    with open(path, "w") as f:
        json.dump({"azimuth_deg": sun.azimuth_deg,
                   "elevation_deg": sun.elevation_deg,
                   "vector": [float(x) for x in sun.vector]}, f, indent=1, sort_keys=True)


def read_sun_json(path) -> SunDirection:
    with open(path) as f:
        doc = json.load(f)
    return SunDirection(vector=np.asarray(doc["vector"]),
                        azimuth_deg=doc["azimuth_deg"],
                        elevation_deg=doc["elevation_deg"])


def compute_sun(meta: CaptureMeta) -> SunDirection:
    sun = sun_direction(meta)
    if sun_below_horizon(sun):
        raise PipelineError(
            "sunpos",
            f"sun elevation {sun.elevation_deg:.2f} deg is at or below the horizon "
            "for this capture time/location; the sun+sky model needs direct sunlight",
            EXIT_STAGE)
    return sun


# ---------------------------------------------------------------------------
# Tree-level stage functions (explicit directories; used by CLI subcommands)
# ---------------------------------------------------------------------------

def gbuffer_tree(project_dir, out_dir, sun: SunDirection | None = None,
                 workers: int = 1) -> None:
    project_dir, out_dir = Path(project_dir), Path(out_dir)
    views, mesh, meta = load_project(project_dir)
    if sun is None:
        sun = compute_sun(meta)
    stems = _stems(project_dir)
    bvh = build_bvh(mesh)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(i: int):
        img, cam = views[i]
        gbuf = rasterize_gbuffer(mesh, bvh, cam, sun, img.width, img.height)
        gbuf.save(out_dir, stems[i])

    _map_indices(len(views), work, workers)


def refine_tree(project_dir, gbuffer_dir, out_dir,
                params: CrfParams | None = None, workers: int = 1) -> None:
    project_dir = Path(project_dir)
    gbuffer_dir, out_dir = Path(gbuffer_dir), Path(out_dir)
    params = params or CrfParams()
    views, _mesh, _meta = load_project(project_dir)
    stems = _stems(project_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(i: int):
        img, _cam = views[i]
        gbuf = GBuffer.load(gbuffer_dir, stems[i])
        init = VisibilityMask(
            alpha0=(gbuf.alpha_sun > 0.5).astype(np.float32),
            confidence=np.full(gbuf.shape, params.keep_prob, dtype=np.float32),
            provenance="projected")
        refined = refine_visibility(init, img, gbuf, params)
        refined.save(out_dir / f"{stems[i]}.pfm")

    _map_indices(len(views), work, workers)


def light_tree(project_dir, masks_dir, gbuffer_dir, out_path,
               pair_params: PairParams | None = None,
               gmm_params: GmmParams | None = None) -> tuple[IlluminationRatio | None, dict]:
    """Pool pairs across the collection and write light.json.

    Returns (estimate or None, per-image pair counts).  A rejection (no
    pairs, too few pairs, or GMM gate failure) still writes light.json with
    accepted=false and returns None; the caller decides how loudly to fail.
    """
    project_dir = Path(project_dir)
    masks_dir, gbuffer_dir = Path(masks_dir), Path(gbuffer_dir)
    pair_params = pair_params or PairParams()
    gmm_params = gmm_params or GmmParams()
    views, _mesh, _meta = load_project(project_dir)
    stems = _stems(project_dir)

    all_pairs = []
    pair_counts = {}
    for i, (img, _cam) in enumerate(views):
        gbuf = GBuffer.load(gbuffer_dir, stems[i])
        mask = VisibilityMask.load(masks_dir / f"{stems[i]}.pfm")
        cand = extract_boundary_pairs(mask, gbuf, img, pair_params, image_id=i)
        kept = filter_pairs(cand, img, pair_params)
        pair_counts[stems[i]] = len(kept)
        all_pairs += kept

    try:
        est = estimate_ratio(all_pairs, gmm_params)
    except RatioEstimateError as e:
        with open(out_path, "w") as f:
            json.dump({"accepted": False, "reason": str(e),
                       "n_pairs_total": len(all_pairs),
                       "pair_counts": pair_counts}, f, indent=1, sort_keys=True)
        return None, pair_counts
    est.to_json(out_path, pair_counts=pair_counts)
    return (est if est.accepted else None), pair_counts


def soften_tree(project_dir, masks_dir, gbuffer_dir, light_path, out_dir,
                params: ProfileParams | None = None, workers: int = 1) -> None:
    project_dir = Path(project_dir)
    masks_dir, gbuffer_dir, out_dir = Path(masks_dir), Path(gbuffer_dir), Path(out_dir)
    params = params or ProfileParams()
    ratio = _load_accepted_ratio(light_path, stage="soften")
    views, _mesh, _meta = load_project(project_dir)
    stems = _stems(project_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(i: int):
        img, _cam = views[i]
        gbuf = GBuffer.load(gbuffer_dir, stems[i])
        mask = VisibilityMask.load(masks_dir / f"{stems[i]}.pfm")
        profiles = extract_profiles(mask, gbuf, img, ratio, params)
        solved = [(p, solve_profile(p, build_profile_weights(p, params), params.lam))
                  for p in profiles]
        soft = composite_soft_mask(mask, solved, params)
        soft.save(out_dir / f"{stems[i]}.pfm")

    _map_indices(len(views), work, workers)


def decompose_tree(project_dir, gbuffer_dir, soft_masks_dir, light_path, out_dir,
                   shading_floor: float = 1e-4,
                   overexposure_percentile: float = 99.9,
                   workers: int = 1) -> None:
    project_dir = Path(project_dir)
    gbuffer_dir, soft_masks_dir = Path(gbuffer_dir), Path(soft_masks_dir)
    out_dir = Path(out_dir)
    ratio = _load_accepted_ratio(light_path, stage="decompose")
    views, _mesh, _meta = load_project(project_dir)
    stems = _stems(project_dir)
    for sub in ("albedo", "shading", "flags"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    def work(i: int):
        img, _cam = views[i]
        stem = stems[i]
        gbuf = GBuffer.load(gbuffer_dir, stem)
        soft = SoftVisibility.load(soft_masks_dir / f"{stem}.pfm")
        shading = assemble_shading(gbuf, soft, ratio)
        level = 0.98 * float(np.percentile(img.pixels, overexposure_percentile))
        result = decompose_albedo(img, shading, valid=gbuf.valid,
                                  shading_floor=shading_floor,
                                  overexposure_level=level if level > 0 else None)
        write_pfm(out_dir / "albedo" / f"{stem}.pfm", result.albedo.pixels)
        write_pfm(out_dir / "shading" / f"{stem}.pfm", result.shading.pixels)
        _write_flags_png(out_dir / "flags" / f"{stem}.png", result.flags)

    _map_indices(len(views), work, workers)


def eval_tree(project_dir, albedo_dir, flags_dir, report_path) -> dict:
    """Score recovered albedo against the project's gt/ layers."""
    project_dir = Path(project_dir)
    gt_dir = project_dir / "gt"
    records = []
    medians = []
    for stem in _stems(project_dir):
        gt_albedo_path = gt_dir / f"{stem}_albedo.pfm"
        if not gt_albedo_path.is_file():
            continue
        gt_albedo = read_pfm(gt_albedo_path)
        gt_valid = read_pfm(gt_dir / f"{stem}_valid.pfm") > 0.5
        albedo = read_pfm(Path(albedo_dir) / f"{stem}.pfm")
        ok = gt_valid
        flags_path = Path(flags_dir) / f"{stem}.png" if flags_dir else None
        if flags_path is not None and flags_path.is_file():
            from PIL import Image

            flags = np.asarray(Image.open(flags_path))
            ok = (flags == int(PixelFlag.OK)) & gt_valid
        rec = {"image": stem}
        if ok.any():
            rec.update(evaluate(LinearImage(albedo), LinearImage(gt_albedo), ok))
            medians.append(float(np.median(albedo[ok])))
        records.append(rec)
    report = {"images": records}
    if len(medians) >= 2:
        m = np.asarray(medians)
        report["consistency"] = {
            "per_image_median": [float(x) for x in m],
            "std_over_mean": float(m.std() / max(m.mean(), 1e-30)),
        }
    with open(report_path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    return report


def _load_accepted_ratio(light_path, stage: str) -> IlluminationRatio:
    with open(light_path) as f:
        doc = json.load(f)
    if not doc.get("accepted", False):
        raise PipelineError(stage, f"{light_path} holds a rejected illumination "
                                   "estimate; cannot proceed", EXIT_RATIO_REJECTED)
    return IlluminationRatio.from_json(light_path)


def _write_flags_png(path, flags: np.ndarray) -> None:
    from PIL import Image

    img = Image.fromarray(flags.astype(np.uint8), mode="P")
    # ok=grey, invalid=black, floor=red, overexposed=yellow
    palette = [96, 96, 96, 0, 0, 0, 220, 40, 40, 240, 220, 40] + [0] * (256 * 3 - 12)
    img.putpalette(palette)
    img.save(path)


# ---------------------------------------------------------------------------
# Orchestrated run with caching
# ---------------------------------------------------------------------------

def _digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _project_digest(project_dir: Path) -> str:
    names = ["cameras.json", "meta.json"]
    for cand in ("mesh.obj", "mesh.ply"):
        if (project_dir / cand).is_file():
            names.append(cand)
    with open(project_dir / "cameras.json") as f:
        names += [rec["file"] for rec in json.load(f)["images"]]
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode())
        h.update(_digest_file(project_dir / name).encode())
    return h.hexdigest()


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run the configured stages; returns the manifest (also written to disk).

    Raises PipelineError with exit code 3 on stage failure and 4 when the
    illumination-ratio gate rejects the collection.
    """
    out_root = Path(cfg.output_dir)
    out = out_root / "outputs"
    out.mkdir(parents=True, exist_ok=True)
    state_path = out_root / "cache_state.json"
    old_state = {}
    if state_path.is_file():
        with open(state_path) as f:
            old_state = json.load(f)

    project_dir = Path(cfg.project_dir)
    try:
        stems = _stems(project_dir)
        _views, _mesh, meta = load_project(project_dir)
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError("load", str(e), EXIT_STAGE) from e

    digest = _project_digest(project_dir)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "project_digest": digest,
        "stages": [],
        "accepted": None,
    }
    keys: dict[str, str] = {}

    def stage_key(name: str, sections: tuple[str, ...], upstream: tuple[str, ...]) -> str:
        payload = {"stage": name, "project": digest,
                   "config": cfg.section_hash(*sections) if sections else "",
                   "upstream": [keys[u] for u in upstream if u in keys]}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def run_light_stage():
        est, pair_counts = light_tree(project_dir, out / "masks", out / "gbuffer",
                                      out / "light.json", cfg.pairs, cfg.gmm)
        manifest["pair_counts"] = pair_counts
        with open(out / "light.json") as f:
            doc = json.load(f)
        manifest["accepted"] = bool(doc.get("accepted", False))
        manifest["ratio"] = doc.get("ratio")
        manifest["n_pairs_total"] = doc.get("n_pairs_total")
        if est is None:
            reason = doc.get("reason", "mixture gate rejected the pooled pair votes "
                                       "(no dominant tight consensus)")
            raise PipelineError(
                "estimate-light",
                f"{reason}. Decomposition aborted so no illumination ratio is "
                "fabricated; check that the scene contains usable cast shadows",
                EXIT_RATIO_REJECTED)

    gbuf_layers = [f"gbuffer/{s}_{layer}.pfm" for s in stems
                   for layer in ("depth", "normal", "ksun", "ksky", "alpha", "valid")]
    plan = [
        ("sunpos", (), (),
         lambda: write_sun_json(out / "sun.json", compute_sun(meta)),
         ["sun.json"]),
        ("gbuffer", (), ("sunpos",),
         lambda: gbuffer_tree(project_dir, out / "gbuffer",
                              read_sun_json(out / "sun.json"), cfg.workers),
         gbuf_layers),
        ("refine", ("crf",), ("gbuffer",),
         lambda: refine_tree(project_dir, out / "gbuffer", out / "masks",
                             cfg.crf, cfg.workers),
         [f"masks/{s}.pfm" for s in stems]),
        ("estimate-light", ("pairs", "gmm"), ("refine",),
         run_light_stage, ["light.json"]),
        ("soften", ("profiles",), ("estimate-light",),
         lambda: soften_tree(project_dir, out / "masks", out / "gbuffer",
                             out / "light.json", out / "soft", cfg.profiles, cfg.workers),
         [f"soft/{s}.pfm" for s in stems]),
        ("decompose", ("decompose",), ("soften",),
         lambda: decompose_tree(project_dir, out / "gbuffer", out / "soft",
                                out / "light.json", out,
                                cfg.decompose.shading_floor,
                                cfg.decompose.overexposure_percentile, cfg.workers),
         [f"albedo/{s}.pfm" for s in stems] + [f"shading/{s}.pfm" for s in stems]
         + [f"flags/{s}.png" for s in stems]),
        ("eval", (), ("decompose",),
         lambda: eval_tree(project_dir, out / "albedo", out / "flags",
                           out / "report.json")
         if (project_dir / "gt").is_dir() else None,
         []),
    ]

    new_state = {}
    try:
        for name, sections, upstream, fn, expected in plan:
            if name not in cfg.stages:
                continue
            key = stage_key(name, sections, upstream)
            keys[name] = key
            have_all = all((out / rel).is_file() for rel in expected)
            if expected and old_state.get(name) == key and have_all:
                new_state[name] = key
                manifest["stages"].append(
                    {"name": name, "key": key, "cache_hit": True, "seconds": 0.0})
                if name == "estimate-light":
                    with open(out / "light.json") as f:
                        doc = json.load(f)
                    manifest["accepted"] = bool(doc.get("accepted", False))
                    manifest["ratio"] = doc.get("ratio")
                logger.info("stage %s: cache hit", name)
                continue
            t0 = time.perf_counter()
            fn()
            new_state[name] = key  # recorded only after the stage succeeds
            manifest["stages"].append(
                {"name": name, "key": key, "cache_hit": False,
                 "seconds": round(time.perf_counter() - t0, 3)})
            logger.info("stage %s: done", name)
    finally:
        with open(state_path, "w") as f:
            json.dump(new_state, f, indent=1, sort_keys=True)
        with open(out_root / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


# ---------------------------------------------------------------------------
# Synthetic test suite
# ---------------------------------------------------------------------------

def generate_test_suite(seed: int, out_dir) -> dict[str, Path]:
    """Emit the canonical synthetic projects (byte-identical per seed).

    plane: shadow-free flat ground (the ratio stage must reject it);
    box: one box under a point sun (hard shadow); boxtown: several boxes
    under a 0.8-degree sun disk, eight 512x512 ring views, true sun/sky
    ratio (4, 4, 4).  Every project carries gt/ albedo, shading, and alpha.
    """
    out_dir = Path(out_dir)
    meta = CaptureMeta(latitude=35.0, longitude=-106.0,
                       timestamp_utc=datetime(2022, 6, 15, 17, 30, 0, tzinfo=timezone.utc))
    sun = sun_direction(meta)
    l_sun = np.array([4.0, 4.0, 4.0])
    l_sky = np.array([1.0, 1.0, 1.0])
    projects = {}

    scene = synth.make_plane_scene(np.random.default_rng(seed))
    cams = synth.ring_cameras(2, 4.0, 24.0, 256, 256, 22.0)
    projects["plane"] = synth.render_synthetic_project(
        out_dir / "plane", scene, sun, l_sun, l_sky, cams, 256, 256, meta)

    scene = synth.make_box_scene(np.random.default_rng(seed + 1))
    cams = synth.ring_cameras(3, 6.0, 25.0, 320, 320, 22.0)
    projects["box"] = synth.render_synthetic_project(
        out_dir / "box", scene, sun, l_sun, l_sky, cams, 320, 320, meta)

    scene = synth.make_box_town_scene(np.random.default_rng(seed + 2))
    cams = synth.ring_cameras(8, 7.0, 26.0, 512, 512, 21.0)
    projects["boxtown"] = synth.render_synthetic_project(
        out_dir / "boxtown", scene, sun, l_sun, l_sky, cams, 512, 512, meta,
        sun_radius_deg=0.8)
    return projects
