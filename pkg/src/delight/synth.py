"""Synthetic forward renderer and canonical test scenes.

Renders Lambertian scenes under the same sun+sky model the decomposition
inverts: per pixel, radiance = albedo * (L_sun * alpha * k_sun
+ L_sky * k_sky).  The sun is either a directional source (binary alpha) or
a disk of given angular radius, area-averaged over 16 stratified jittered
directions to produce a penumbra.  Each rendered project also emits
ground-truth albedo/shading/alpha layers, so the inverse pipeline can be
scored against exact references.

Scene meshes deliberately do not share vertices between faces: every
corner carries its face normal, so interpolated shading is exact for the
flat-faced geometry used in tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from delight.bvh import Bvh, build_bvh
from delight.scene_io import (
    CameraPose,
    CaptureMeta,
    TriangleMesh,
    write_cameras_manifest,
    write_mesh_obj,
    write_pfm,
)
from delight.solar import SunDirection

__all__ = [
    "SynthScene",
    "make_box",
    "make_ground_grid",
    "make_plane_scene",
    "make_box_scene",
    "make_box_town_scene",
    "ring_cameras",
    "nadir_camera",
    "render_view",
    "render_synthetic_project",
    "sun_disk_directions",
]


@dataclass
class SynthScene:
    """Triangle mesh with one albedo triple per face."""

    mesh: TriangleMesh
    face_albedo: np.ndarray  # (F, 3) in (0, 1]

    def __post_init__(self):
        alb = np.asarray(self.face_albedo, dtype=np.float64).reshape(-1, 3)
        if alb.shape[0] != len(self.mesh.faces):
            raise ValueError("face_albedo count must match face count")
        if alb.min() <= 0.0 or alb.max() > 1.0:
            raise ValueError("albedo components must lie in (0, 1]")
        self.face_albedo = alb


# ---------------------------------------------------------------------------
# Geometry builders (unshared vertices, face normals at every corner)
# ---------------------------------------------------------------------------

def _mesh_from_tris(tris: list[np.ndarray]) -> TriangleMesh:
    tri = np.asarray(tris, dtype=np.float64)            # (F, 3, 3)
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    fn /= np.maximum(np.linalg.norm(fn, axis=1, keepdims=True), 1e-20)
    verts = tri.reshape(-1, 3)
    faces = np.arange(len(verts), dtype=np.int32).reshape(-1, 3)
    normals = np.repeat(fn, 3, axis=0)
    return TriangleMesh(verts, faces, normals)


def make_ground_grid(half_extent: float, cells: int, z: float = 0.0) -> list[np.ndarray]:
    """Grid of upward-facing quads (two triangles each) on the z plane."""
    tris = []
    xs = np.linspace(-half_extent, half_extent, cells + 1)
    for i in range(cells):
        for j in range(cells):
            x0, x1 = xs[j], xs[j + 1]
            y0, y1 = xs[i], xs[i + 1]
            a, b = np.array([x0, y0, z]), np.array([x1, y0, z])
            c, d = np.array([x1, y1, z]), np.array([x0, y1, z])
            tris.append(np.stack([a, b, c]))  # CCW from above: normal +z
            tris.append(np.stack([a, c, d]))
    return tris


def make_box(center_xy: tuple[float, float], size_xy: tuple[float, float],
             height: float, z0: float = 0.0) -> list[np.ndarray]:
    """Axis-aligned box (sides and top; no bottom) with outward normals."""
    cx, cy = center_xy
    hx, hy = size_xy[0] / 2.0, size_xy[1] / 2.0
    x0, x1, y0, y1, z1 = cx - hx, cx + hx, cy - hy, cy + hy, z0 + height
    p = {
        "000": np.array([x0, y0, z0]), "100": np.array([x1, y0, z0]),
        "110": np.array([x1, y1, z0]), "010": np.array([x0, y1, z0]),
        "001": np.array([x0, y0, z1]), "101": np.array([x1, y0, z1]),
        "111": np.array([x1, y1, z1]), "011": np.array([x0, y1, z1]),
    }
    quads = [
        ("001", "101", "111", "011"),  # top (+z)
        ("000", "100", "101", "001"),  # south (-y)
        ("100", "110", "111", "101"),  # east (+x)
        ("110", "010", "011", "111"),  # north (+y)
        ("010", "000", "001", "011"),  # west (-x)
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append(np.stack([p[a], p[b], p[c]]))
        tris.append(np.stack([p[a], p[c], p[d]]))
    return tris


def _albedo_for(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(0.2, 0.9, size=(n, 3))


def make_plane_scene(rng: np.random.Generator, half_extent: float = 12.0,
                     cells: int = 6) -> SynthScene:
    """Shadow-free flat ground with per-quad albedo variation."""
    tris = make_ground_grid(half_extent, cells)
    mesh = _mesh_from_tris(tris)
    alb = _albedo_for(rng, len(tris) // 2)
    return SynthScene(mesh, np.repeat(alb, 2, axis=0))


def make_box_scene(rng: np.random.Generator, half_extent: float = 12.0,
                   box_height: float = 6.0) -> SynthScene:
    """Single box on a ground plane: one clean cast shadow."""
    ground = make_ground_grid(half_extent, 4)
    box = make_box((0.0, 0.0), (4.0, 4.0), box_height)
    mesh = _mesh_from_tris(ground + box)
    alb_ground = np.repeat(_albedo_for(rng, len(ground) // 2), 2, axis=0)
    alb_box = np.repeat(_albedo_for(rng, len(box) // 2), 2, axis=0)
    return SynthScene(mesh, np.concatenate([alb_ground, alb_box]))


def make_box_town_scene(rng: np.random.Generator, half_extent: float = 12.0,
                        n_boxes: int = 5) -> SynthScene:
    """Several boxes on uniform ground; the main multi-view test scene.

    The ground carries a single albedo so cast shadows fall on constant
    reflectance (like pavement or grass); the boxes vary per face.  Pairs
    straddling box bases still produce a small albedo-mismatch outlier
    population for the mixture gate to reject.
    """
    ground = make_ground_grid(half_extent, 8)
    ground_albedo = np.tile(rng.uniform(0.3, 0.7, size=3), (len(ground), 1))
    tris = list(ground)
    box_albedo = []
    for k in range(n_boxes):
        angle = 2.0 * math.pi * k / n_boxes
        r = half_extent * 0.45
        cx, cy = r * math.cos(angle), r * math.sin(angle)
        size = rng.uniform(2.0, 3.5, size=2)
        height = rng.uniform(4.0, 8.0)
        box = make_box((cx, cy), (size[0], size[1]), height)
        tris += box
        box_albedo.append(np.repeat(_albedo_for(rng, len(box) // 2), 2, axis=0))
    mesh = _mesh_from_tris(tris)
    alb = np.concatenate([ground_albedo] + box_albedo)
    assert len(alb) == len(tris)
    return SynthScene(mesh, alb)


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

def _look_at(position: np.ndarray, target: np.ndarray,
             fx: float, fy: float, cx: float, cy: float) -> CameraPose:
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(right) < 1e-9:  # nadir view: pick east as right
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    down /= np.linalg.norm(down)
    right = np.cross(down, forward)  # exact right-handed orthonormal frame
    R = np.stack([right, down, forward])
    t = -R @ position
    return CameraPose(fx=fx, fy=fy, cx=cx, cy=cy, rotation=R, translation=t)


def nadir_camera(height_m: float, width: int, height_px: int,
                 ground_span_m: float, center=(0.0, 0.0)) -> CameraPose:
    """Straight-down camera whose footprint spans ground_span_m."""
    fx = width * height_m / ground_span_m
    pos = np.array([center[0], center[1], height_m])
    tgt = np.array([center[0], center[1], 0.0])
    return _look_at(pos, tgt, fx, fx, width / 2.0, height_px / 2.0)


def ring_cameras(n: int, ring_radius: float, altitude: float,
                 width: int, height_px: int, ground_span_m: float,
                 center=(0.0, 0.0, 0.0)) -> list[CameraPose]:
    """n cameras on a circle, all looking at the scene center."""
    center = np.asarray(center, dtype=np.float64)
    dist = math.hypot(ring_radius, altitude)
    fx = width * dist / ground_span_m
    cams = []
    for k in range(n):
        ang = 2.0 * math.pi * k / n
        pos = center + np.array([ring_radius * math.cos(ang),
                                 ring_radius * math.sin(ang), altitude])
        cams.append(_look_at(pos, center, fx, fx, width / 2.0, height_px / 2.0))
    return cams


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def sun_disk_directions(sun: SunDirection, radius_deg: float,
                        n_side: int = 4, seed: int = 2023) -> np.ndarray:
    """Stratified jittered directions over the sun disk (n_side^2 samples).

    The jitter is seeded, and the same direction set is used for every
    pixel, so renders are reproducible byte for byte.
    """
    z = sun.vector
    aux = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(z, aux)
    u /= np.linalg.norm(u)
    v = np.cross(z, u)
    rng = np.random.default_rng(seed)
    rad = math.radians(radius_deg)
    dirs = []
    for i in range(n_side):
        for j in range(n_side):
            r = rad * math.sqrt((i + rng.random()) / n_side)
            phi = 2.0 * math.pi * (j + rng.random()) / n_side
            d = z + r * (math.cos(phi) * u + math.sin(phi) * v)
            dirs.append(d / np.linalg.norm(d))
    return np.asarray(dirs)


def render_view(scene: SynthScene, bvh: Bvh, cam: CameraPose, sun: SunDirection,
                l_sun: np.ndarray, l_sky: np.ndarray, width: int, height: int,
                sun_radius_deg: float = 0.0, ambient: np.ndarray | None = None):
    """Render one view; returns (image, gt_albedo, gt_shading, gt_alpha, valid).

    With sun_radius_deg == 0 the visibility term is exactly binary.  The
    optional constant ambient term models indirect light for sensitivity
    studies only; it is off by default and the inverse model ignores it.
    """
    from delight.gbuffer import SHADOW_BIAS_SCALE

    l_sun = np.asarray(l_sun, dtype=np.float64).reshape(3)
    l_sky = np.asarray(l_sky, dtype=np.float64).reshape(3)
    origins, dirs = cam.pixel_rays(width, height)
    t, tri, u, v = bvh.intersect(origins, dirs)
    valid = tri >= 0
    npix = width * height

    albedo = np.zeros((npix, 3))
    shading = np.zeros((npix, 3))
    alpha = np.zeros(npix)
    if valid.any():
        idx = np.nonzero(valid)[0]
        hit_tri = tri[idx]
        points = origins[idx] + t[idx, None] * dirs[idx]
        w0 = 1.0 - u[idx] - v[idx]
        n = (w0[:, None] * bvh.n0[hit_tri] + u[idx, None] * bvh.n1[hit_tri]
             + v[idx, None] * bvh.n2[hit_tri])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-20)
        k_sun = np.clip(n @ sun.vector, 0.0, 1.0)
        k_sky = 0.5 + 0.5 * n[:, 2]

        bias = SHADOW_BIAS_SCALE * bvh.diagonal
        if sun_radius_deg <= 0.0:
            disk = sun.vector[None, :]
        else:
            disk = sun_disk_directions(sun, sun_radius_deg)
        vis_sum = np.zeros(len(idx))
        for d in disk:
            cosine = n @ d
            front = cosine > 0.0
            vis = np.zeros(len(idx))
            if front.any():
                org = points[front] + bias * n[front]
                ddir = np.broadcast_to(d, org.shape)
                vis[front] = 1.0 - bvh.occluded(org, np.ascontiguousarray(ddir))
            vis_sum += vis
        a = vis_sum / len(disk)

        s = (l_sun[None, :] * (a * k_sun)[:, None] + l_sky[None, :] * k_sky[:, None])
        if ambient is not None:
            s = s + np.asarray(ambient, dtype=np.float64).reshape(1, 3)
        albedo[idx] = scene.face_albedo[hit_tri]
        shading[idx] = s
        alpha[idx] = a

    image = (albedo * shading).astype(np.float32).reshape(height, width, 3)
    return (
        image,
        albedo.astype(np.float32).reshape(height, width, 3),
        shading.astype(np.float32).reshape(height, width, 3),
        alpha.astype(np.float32).reshape(height, width),
        valid.reshape(height, width),
    )


def render_synthetic_project(out_dir, scene: SynthScene, sun: SunDirection,
                             l_sun, l_sky, cams: list[CameraPose],
                             width: int, height: int, meta: CaptureMeta,
                             sun_radius_deg: float = 0.0,
                             ambient=None) -> Path:
    """Render all views and write a loadable project with ground truth.

    Layout: view_XXX.pfm, cameras.json, meta.json, mesh.obj, sun_truth.json,
    and gt/view_XXX_{albedo,shading,alpha,valid}.pfm.
    """
    if len(scene.mesh.faces) == 0:
        raise ValueError("degenerate scene: no faces")
    if np.asarray(l_sun, dtype=np.float64).min() <= 0 or np.asarray(l_sky, dtype=np.float64).min() <= 0:
        raise ValueError("irradiance components must be positive")
    out_dir = Path(out_dir)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    bvh = build_bvh(scene.mesh)

    entries = []
    for i, cam in enumerate(cams):
        name = f"view_{i:03d}.pfm"
        img, gt_alb, gt_shade, gt_alpha, valid = render_view(
            scene, bvh, cam, sun, l_sun, l_sky, width, height,
            sun_radius_deg=sun_radius_deg, ambient=ambient)
        write_pfm(out_dir / name, img)
        stem = f"view_{i:03d}"
        write_pfm(out_dir / "gt" / f"{stem}_albedo.pfm", gt_alb)
        write_pfm(out_dir / "gt" / f"{stem}_shading.pfm", gt_shade)
        write_pfm(out_dir / "gt" / f"{stem}_alpha.pfm", gt_alpha)
        write_pfm(out_dir / "gt" / f"{stem}_valid.pfm", valid.astype(np.float32))
        entries.append((name, cam))

    write_cameras_manifest(out_dir / "cameras.json", entries)
    write_mesh_obj(out_dir / "mesh.obj", scene.mesh)
    with open(out_dir / "meta.json", "w") as f:
        json.dump({
            "latitude": meta.latitude,
            "longitude": meta.longitude,
            "timestamp_utc": meta.timestamp_utc.strftime("%Y-%m-%dT%H:%M:%SZ"),
        }, f, indent=1, sort_keys=True)
    l_sun = np.asarray(l_sun, dtype=np.float64).reshape(3)
    l_sky = np.asarray(l_sky, dtype=np.float64).reshape(3)
    with open(out_dir / "sun_truth.json", "w") as f:
        json.dump({
            "azimuth_deg": sun.azimuth_deg,
            "elevation_deg": sun.elevation_deg,
            "vector": [float(x) for x in sun.vector],
            "l_sun": [float(x) for x in l_sun],
            "l_sky": [float(x) for x in l_sky],
            "ratio": [float(x) for x in l_sun / l_sky],
            "sun_radius_deg": sun_radius_deg,
        }, f, indent=1, sort_keys=True)
    return out_dir
