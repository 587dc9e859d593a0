"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with `pytest -s tests/test_acceptance.py` to see the lines as they
complete.  Tolerances are fixed here and nowhere else.
"""

import json
import shutil
import time

import numpy as np
from helpers import (
    binary_iou,
    boundary_exclusion_mask,
    brute_force_intersect,
    make_random_profile,
    tree_bytes,
)

from conftest import BOXTOWN_PAIRS, TEST_CRF, boxtown_config
from delight.bvh import build_bvh
from delight.config import config_from_dict
from delight.crf import CrfParams, refine_visibility
from delight.gbuffer import GBuffer, rasterize_gbuffer
from delight.light import IlluminationRatio, PairParams
from delight.masks import VisibilityMask
from delight.penumbra import (
    ProfileParams,
    _bilinear,
    build_profile_weights,
    extract_profiles,
    profile_objective,
    solve_profile,
)
from delight.pipeline import light_tree, run_pipeline
from delight.scene_io import load_project, read_pfm, write_pfm
from delight.solar import sun_direction


def _report(num, name, ok, detail=""):
    print(f"\n[ACCEPTANCE] criterion {num} ({name}): {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# 1. Ratio recovery, runtime, exact exposure invariance
# ---------------------------------------------------------------------------

def test_criterion_1_ratio_recovery(boxtown_run, tmp_path):
    est = IlluminationRatio.from_json(boxtown_run.out / "light.json")
    rel_err = np.abs(est.ratio - 4.0) / 4.0
    ok = est.accepted and np.all(rel_err < 0.05)

    t0 = time.perf_counter()
    est2, _counts = light_tree(boxtown_run.project, boxtown_run.out / "masks",
                               boxtown_run.out / "gbuffer", tmp_path / "light.json",
                               PairParams(**BOXTOWN_PAIRS))
    seconds = time.perf_counter() - t0
    ok = ok and est2 is not None and seconds < 60.0

    # exposure scaling by 2.7: bit-identical estimate
    scaled = tmp_path / "boxtown_x27"
    scaled.mkdir()
    for name in ("cameras.json", "meta.json", "mesh.obj"):
        shutil.copy(boxtown_run.project / name, scaled / name)
    for pfm in sorted(boxtown_run.project.glob("view_*.pfm")):
        write_pfm(scaled / pfm.name, (read_pfm(pfm) * np.float32(2.7)).astype(np.float32))
    est3, _ = light_tree(scaled, boxtown_run.out / "masks", boxtown_run.out / "gbuffer",
                         tmp_path / "light_scaled.json", PairParams(**BOXTOWN_PAIRS))
    exact = est3 is not None and np.array_equal(est2.ratio, est3.ratio)
    ok = ok and exact
    _report(1, "ratio recovery", ok,
            f"ratio={np.round(est.ratio, 6).tolist()} max_rel_err={rel_err.max():.5f} "
            f"runtime={seconds:.2f}s exposure_delta_exactly_zero={exact}")


# ---------------------------------------------------------------------------
# 2. Albedo recovery away from boundaries; umbra vs lit consistency
# ---------------------------------------------------------------------------

def test_criterion_2_albedo_recovery(boxtown_run, box_run):
    worst_si = 0.0
    worst_umbra = 0.0
    for run in (boxtown_run, box_run):
        stems = sorted(p.stem for p in run.project.glob("view_*.pfm"))
        for stem in stems:
            gt_alb = read_pfm(run.project / "gt" / f"{stem}_albedo.pfm").astype(np.float64)
            gt_alpha = read_pfm(run.project / "gt" / f"{stem}_alpha.pfm")
            gt_valid = read_pfm(run.project / "gt" / f"{stem}_valid.pfm") > 0.5
            alb = read_pfm(run.out / "albedo" / f"{stem}.pfm").astype(np.float64)
            mask = gt_valid & ~boundary_exclusion_mask(gt_alpha, 14)
            si = []
            for c in range(3):
                p, t = alb[mask][:, c], gt_alb[mask][:, c]
                scale = (p @ t) / (p @ p)
                si.append(np.sqrt(np.mean((scale * p - t) ** 2)) / np.sqrt(np.mean(t ** 2)))
            worst_si = max(worst_si, max(si))

    # umbra/lit albedo agreement on the uniform boxtown ground
    for stem in (f"view_{i:03d}" for i in range(8)):
        gt_alb = read_pfm(boxtown_run.project / "gt" / f"{stem}_albedo.pfm")
        gt_alpha = read_pfm(boxtown_run.project / "gt" / f"{stem}_alpha.pfm")
        gt_valid = read_pfm(boxtown_run.project / "gt" / f"{stem}_valid.pfm") > 0.5
        alb = read_pfm(boxtown_run.out / "albedo" / f"{stem}.pfm")
        near = boundary_exclusion_mask(gt_alpha, 14)
        ground_color = gt_alb[gt_valid][0]
        ground = gt_valid & np.all(gt_alb == ground_color, axis=2)
        umbra = ground & (gt_alpha == 0.0) & ~near
        lit = ground & (gt_alpha == 1.0) & ~near
        if umbra.sum() > 200 and lit.sum() > 200:
            diff = abs(alb[umbra].mean() - alb[lit].mean()) / alb[lit].mean()
            worst_umbra = max(worst_umbra, diff)
    ok = worst_si <= 0.02 and worst_umbra <= 0.03
    _report(2, "albedo recovery", ok,
            f"worst_si_rmse={worst_si:.5f} (<=0.02) worst_umbra_diff={worst_umbra:.5f} (<=0.03)")


# ---------------------------------------------------------------------------
# 3. Tikhonov solver vs projected-gradient QP oracle (1000 profiles)
# ---------------------------------------------------------------------------

def _batched_pg_oracle(profiles, weights, lam, iters=3000):
    """FISTA on all profiles at once (interior variables, box [0,1])."""
    n = len(profiles[0].t)
    B = len(profiles)
    M = np.empty((B, n, n))
    rhs = np.empty((B, n))
    for i, (p, w) in enumerate(zip(profiles, weights)):
        D = np.zeros((n - 1, n))
        D[np.arange(n - 1), np.arange(n - 1)] = -1.0
        D[np.arange(n - 1), np.arange(1, n)] = 1.0
        G = D @ np.diag(p.a)
        M[i] = np.diag(w) + lam * G.T @ G
        rhs[i] = w * p.alpha0 - lam * G.T @ (D @ p.b)
    free = np.ones(n, bool)
    free[0] = free[-1] = False
    Mff = M[:, free][:, :, free]
    alpha0 = np.stack([p.alpha0 for p in profiles])
    b_eff = rhs[:, free] - np.einsum("bij,bj->bi", M[:, free][:, :, ~free], alpha0[:, ~free])
    lip = np.linalg.eigvalsh(Mff).max(axis=1)[:, None]
    x = np.clip(alpha0[:, free], 0.0, 1.0)
    y = x.copy()
    tk = 1.0
    for _ in range(iters):
        grad = np.einsum("bij,bj->bi", Mff, y) - b_eff
        x_new = np.clip(y - grad / lip, 0.0, 1.0)
        tk_new = (1.0 + np.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
        y = x_new + (tk - 1.0) / tk_new * (x_new - x)
        x, tk = x_new, tk_new
    out = alpha0.copy()
    out[:, free] = x
    return out


def test_criterion_3_tikhonov_solver():
    rng = np.random.default_rng(2025)
    profiles = [make_random_profile(rng) for _ in range(1000)]
    weights = [build_profile_weights(p) for p in profiles]
    lam = 1.0
    ours = [solve_profile(p, w, lam) for p, w in zip(profiles, weights)]
    ref = _batched_pg_oracle(profiles, weights, lam)
    worst_gap = 0.0
    worst_end = 0.0
    for p, w, a_ours, a_ref in zip(profiles, weights, ours, ref):
        f_ours = profile_objective(p, a_ours, w, lam)
        f_ref = profile_objective(p, a_ref, w, lam)
        worst_gap = max(worst_gap, abs(f_ours - f_ref))
        worst_end = max(worst_end, abs(a_ours[0] - p.alpha0[0]),
                        abs(a_ours[-1] - p.alpha0[-1]))
    ok = worst_gap <= 1e-6 and worst_end <= 1e-6
    _report(3, "Tikhonov solver correctness", ok,
            f"worst_objective_gap={worst_gap:.2e} (<=1e-6) worst_endpoint={worst_end:.2e}")


# ---------------------------------------------------------------------------
# 4. Penumbra recovery and spike removal
# ---------------------------------------------------------------------------

def test_criterion_4_penumbra_recovery(boxtown_run):
    views, _mesh, _meta = load_project(boxtown_run.project)
    ratio = IlluminationRatio.from_json(boxtown_run.out / "light.json")
    params = ProfileParams()
    rmses = []
    tv_binary_total = 0.0
    tv_solved_total = 0.0
    per_profile_ok = True
    for i in range(3):
        stem = f"view_{i:03d}"
        gbuf = GBuffer.load(boxtown_run.out / "gbuffer", stem)
        mask = VisibilityMask.load(boxtown_run.out / "masks" / f"{stem}.pfm")
        gt_alpha = read_pfm(boxtown_run.project / "gt" / f"{stem}_alpha.pfm").astype(np.float64)
        profiles = extract_profiles(mask, gbuf, views[i][0], ratio, params)
        for p in profiles:
            sol = solve_profile(p, build_profile_weights(p, params), params.lam)
            xs = p.anchor_xy[0] + p.t * p.direction[0]
            ys = p.anchor_xy[1] + p.t * p.direction[1]
            gt_prof = _bilinear(gt_alpha, xs, ys)
            rmses.append(float(np.sqrt(np.mean((sol - gt_prof) ** 2))))
            tv0 = float(np.abs(np.diff(p.a * p.alpha0 + p.b)).sum())
            tv1 = float(np.abs(np.diff(p.a * sol + p.b)).sum())
            tv_binary_total += tv0
            tv_solved_total += tv1
            if tv1 > tv0 + 1e-9:
                per_profile_ok = False
    median_rmse = float(np.median(rmses))
    ok = (median_rmse <= 0.05 and per_profile_ok
          and tv_solved_total < tv_binary_total and len(rmses) > 100)
    _report(4, "penumbra recovery", ok,
            f"profiles={len(rmses)} median_alpha_rmse={median_rmse:.4f} (<=0.05) "
            f"tv {tv_binary_total:.1f}->{tv_solved_total:.1f} "
            f"per_profile_non_increase={per_profile_ok}")


# ---------------------------------------------------------------------------
# 5. Sun position vs the committed SPA oracle fixtures
# ---------------------------------------------------------------------------

def test_criterion_5_sun_position():
    from pathlib import Path

    from delight.scene_io import CaptureMeta, parse_timestamp

    with open(Path(__file__).parent / "fixtures" / "sun_oracle.json") as f:
        samples = json.load(f)["samples"]
    worst_az = worst_el = 0.0
    for s in samples:
        d = sun_direction(CaptureMeta(s["latitude"], s["longitude"],
                                      parse_timestamp(s["utc"])))
        worst_az = max(worst_az, abs((d.azimuth_deg - s["azimuth_deg"] + 180) % 360 - 180))
        worst_el = max(worst_el, abs(d.elevation_deg - s["elevation_deg"]))
    ok = len(samples) == 20 and worst_az < 0.1 and worst_el < 0.1
    _report(5, "sun position", ok,
            f"n={len(samples)} worst_azimuth_err={worst_az:.4f} deg "
            f"worst_elevation_err={worst_el:.4f} deg (<0.1)")


# ---------------------------------------------------------------------------
# 6. BVH vs brute force
# ---------------------------------------------------------------------------

def test_criterion_6_bvh_correctness():
    from delight.scene_io import TriangleMesh, compute_vertex_normals

    rng = np.random.default_rng(77)
    anchors = rng.uniform(-10, 10, (10_000, 1, 3))
    tri = anchors + rng.uniform(-0.8, 0.8, (10_000, 3, 3))
    v = tri.reshape(-1, 3)
    f = np.arange(len(v), dtype=np.int32).reshape(-1, 3)
    mesh = TriangleMesh(v, f, compute_vertex_normals(v, f))
    bvh = build_bvh(mesh)
    origins = rng.uniform(-12, 12, (1_000, 3))
    dirs = rng.normal(size=(1_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, tri_id, _u, _v = bvh.intersect(origins, dirs)
    bt, bid = brute_force_intersect(origins, dirs, bvh.v0, bvh.e1, bvh.e2)
    ids_equal = np.array_equal(tri_id, bid)
    hit = bid >= 0
    rel = np.abs(t[hit] - bt[hit]) / np.maximum(np.abs(bt[hit]), 1e-300)
    worst = float(rel.max(initial=0.0))
    ok = ids_equal and worst <= 1e-9 and hit.sum() > 100
    _report(6, "BVH correctness", ok,
            f"hits={int(hit.sum())}/1000 ids_equal={ids_equal} worst_t_rel={worst:.2e}")


# ---------------------------------------------------------------------------
# 7. CRF refinement strictly improves noisy masks on every suite scene
# ---------------------------------------------------------------------------

def test_criterion_7_crf_improves_iou(suite_dir):
    params = CrfParams(**TEST_CRF)
    results = {}
    for scene in ("plane", "box", "boxtown"):
        views, mesh, meta = load_project(suite_dir / scene)
        sun = sun_direction(meta)
        img, _cam = views[0]
        bvh = build_bvh(mesh)
        gbuf = rasterize_gbuffer(mesh, bvh, views[0][1], sun, img.width, img.height)
        truth = read_pfm(suite_dir / scene / "gt" / "view_000_alpha.pfm") >= 0.5
        truth = truth.astype(np.float32)
        rng = np.random.default_rng(99)
        noisy = truth.copy()
        flips = rng.random(truth.shape) < 0.05
        noisy[flips] = 1.0 - noisy[flips]
        mask = VisibilityMask(alpha0=noisy,
                              confidence=np.full(noisy.shape, params.keep_prob, np.float32))
        refined = refine_visibility(mask, img, gbuf, params)
        iou0 = binary_iou(noisy, truth)
        iou1 = binary_iou(refined.alpha0, truth)
        results[scene] = (iou0, iou1)
    ok = all(after > before for before, after in results.values())
    detail = " ".join(f"{s}:{b:.4f}->{a:.4f}" for s, (b, a) in results.items())
    _report(7, "CRF refinement", ok, detail)


# ---------------------------------------------------------------------------
# 8. Reconstruction identity on every image of every project
# ---------------------------------------------------------------------------

def test_criterion_8_reconstruction_identity(boxtown_run, box_run):
    from PIL import Image

    worst = 0.0
    n_images = 0
    for run in (boxtown_run, box_run):
        for pfm in sorted(run.project.glob("view_*.pfm")):
            stem = pfm.stem
            img = read_pfm(pfm).astype(np.float64)
            albedo = read_pfm(run.out / "albedo" / f"{stem}.pfm").astype(np.float64)
            shading = read_pfm(run.out / "shading" / f"{stem}.pfm").astype(np.float64)
            flags = np.asarray(Image.open(run.out / "flags" / f"{stem}.png"))
            ok_px = flags == 0
            rec = albedo[ok_px] * shading[ok_px]
            rel = np.abs(rec - img[ok_px]) / np.maximum(np.abs(img[ok_px]), 1e-12)
            worst = max(worst, float(rel.max(initial=0.0)))
            n_images += 1
    ok = worst <= 1e-5 and n_images == 11
    _report(8, "reconstruction identity", ok,
            f"images={n_images} worst_rel_err={worst:.2e} (<=1e-5)")


# ---------------------------------------------------------------------------
# 9. Determinism across runs and worker counts
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(suite_dir, tmp_path):
    outs = []
    for workers, sub in ((1, "w1"), (4, "w4")):
        cfg = config_from_dict(boxtown_config(suite_dir / "boxtown",
                                              tmp_path / sub, workers=workers))
        run_pipeline(cfg)
        outs.append(tree_bytes(tmp_path / sub / "outputs"))
    same_names = outs[0].keys() == outs[1].keys()
    same_bytes = same_names and all(outs[0][k] == outs[1][k] for k in outs[0])
    ok = same_bytes and len(outs[0]) > 40
    _report(9, "determinism", ok,
            f"files={len(outs[0])} workers 1 vs 4 byte-identical={same_bytes}")


# ---------------------------------------------------------------------------
# 10. Negative control: shadow-free scene must be rejected with exit code 4
# ---------------------------------------------------------------------------

def test_criterion_10_negative_control(suite_dir, tmp_path, capsys):
    from delight.cli import main as cli_main

    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(
        f'[run]\nproject = "{suite_dir / "plane"}"\noutput = "{tmp_path / "out"}"\n'
        f'[crf]\nsigma_xy = {TEST_CRF["sigma_xy"]}\nsigma_s = {TEST_CRF["sigma_s"]}\n')
    code = cli_main(["run", "--config", str(cfg_path)])
    capsys.readouterr()
    light = json.loads((tmp_path / "out" / "outputs" / "light.json").read_text())
    ok = code == 4 and light["accepted"] is False and "ratio" not in light
    _report(10, "negative control", ok,
            f"exit_code={code} accepted={light['accepted']}")
