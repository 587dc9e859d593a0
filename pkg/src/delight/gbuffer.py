"""Per-pixel geometric attributes from ray-traced visibility.

Casts a primary ray through every pixel center, fills camera-space depth,
smoothly interpolated world normals, the sun/sky shading coefficients
(k_sun = clamped cosine of sun incidence, k_sky = hemispherical sky factor
0.5 + 0.5 * cos to zenith), and a binary sun-visibility term from shadow
rays.  Background pixels (no geometry hit) are marked invalid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from delight.bvh import Bvh
from delight.scene_io import CameraPose, TriangleMesh, read_pfm, write_pfm
from delight.solar import SunDirection

__all__ = ["GBuffer", "rasterize_gbuffer", "trace_sun_visibility", "SHADOW_BIAS_SCALE"]

# shadow-ray origin offset as a fraction of the scene diagonal; validated by
# the planar no-self-intersection test
SHADOW_BIAS_SCALE = 1e-4


@dataclass
class GBuffer:
    """Per-pixel rasters; invalid pixels have depth +inf and zero attributes."""

    depth: np.ndarray      # (H, W) float32, camera-space meters, +inf background
    normal: np.ndarray     # (H, W, 3) float32, unit on valid pixels
    k_sun: np.ndarray      # (H, W) float32 in [0, 1]
    k_sky: np.ndarray      # (H, W) float32 in [0, 1]
    alpha_sun: np.ndarray  # (H, W) float32 in [0, 1]
    valid: np.ndarray      # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def save(self, directory, stem: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_pfm(directory / f"{stem}_depth.pfm", self.depth)
        write_pfm(directory / f"{stem}_normal.pfm", self.normal)
        write_pfm(directory / f"{stem}_ksun.pfm", self.k_sun)
        write_pfm(directory / f"{stem}_ksky.pfm", self.k_sky)
        write_pfm(directory / f"{stem}_alpha.pfm", self.alpha_sun)
        write_pfm(directory / f"{stem}_valid.pfm", self.valid.astype(np.float32))

    @classmethod
    def load(cls, directory, stem: str) -> "GBuffer":
        directory = Path(directory)
        return cls(
            depth=read_pfm(directory / f"{stem}_depth.pfm"),
            normal=read_pfm(directory / f"{stem}_normal.pfm"),
            k_sun=read_pfm(directory / f"{stem}_ksun.pfm"),
            k_sky=read_pfm(directory / f"{stem}_ksky.pfm"),
            alpha_sun=read_pfm(directory / f"{stem}_alpha.pfm"),
            valid=read_pfm(directory / f"{stem}_valid.pfm") > 0.5,
        )


def trace_sun_visibility(bvh: Bvh, point: np.ndarray, normal: np.ndarray,
                         sun: SunDirection) -> int:
    """Binary sun visibility for one surface point.

    Returns 1 when the biased shadow ray toward the sun is unobstructed,
    0 otherwise; back faces (sun below the local horizon) are forced to 0.
    """
    point = np.asarray(point, dtype=np.float64).reshape(3)
    normal = np.asarray(normal, dtype=np.float64).reshape(3)
    if float(normal @ sun.vector) <= 0.0:
        return 0
    bias = SHADOW_BIAS_SCALE * bvh.diagonal
    origin = point + bias * normal
    hit = bvh.occluded(origin[None, :], sun.vector[None, :])
    return 0 if bool(hit[0]) else 1


def _sun_visibility_batch(bvh: Bvh, points: np.ndarray, normals: np.ndarray,
                          sun_dirs: np.ndarray) -> np.ndarray:
    """Vectorized binary visibility; sun_dirs broadcast to one per point."""
    bias = SHADOW_BIAS_SCALE * bvh.diagonal
    cosine = np.einsum("ij,ij->i", normals, sun_dirs)
    front = cosine > 0.0
    vis = np.zeros(len(points), dtype=np.float64)
    if front.any():
        origins = points[front] + bias * normals[front]
        hit = bvh.occluded(origins, sun_dirs[front])
        vis[front] = 1.0 - hit
    return vis


def rasterize_gbuffer(mesh: TriangleMesh, bvh: Bvh, cam: CameraPose,
                      sun: SunDirection, width: int, height: int) -> GBuffer:
    """Rasterize geometric attributes by ray casting through pixel centers."""
    origins, dirs = cam.pixel_rays(width, height)
    t, tri, u, v = bvh.intersect(origins, dirs)
    valid = tri >= 0

    depth = np.full(width * height, np.inf)
    normal = np.zeros((width * height, 3))
    k_sun = np.zeros(width * height)
    k_sky = np.zeros(width * height)
    alpha = np.zeros(width * height)

    if valid.any():
        idx = np.nonzero(valid)[0]
        hit_tri = tri[idx]
        points = origins[idx] + t[idx, None] * dirs[idx]
        # camera-space z of the hit point
        depth[idx] = points @ cam.rotation[2] + cam.translation[2]
        w0 = 1.0 - u[idx] - v[idx]
        n = (w0[:, None] * bvh.n0[hit_tri]
             + u[idx, None] * bvh.n1[hit_tri]
             + v[idx, None] * bvh.n2[hit_tri])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-20)
        normal[idx] = n
        k_sun[idx] = np.clip(n @ sun.vector, 0.0, 1.0)
        k_sky[idx] = np.clip(0.5 + 0.5 * n[:, 2], 0.0, 1.0)
        sun_dirs = np.broadcast_to(sun.vector, (len(idx), 3))
        alpha[idx] = _sun_visibility_batch(bvh, points, n, np.ascontiguousarray(sun_dirs))

    shape = (height, width)
    return GBuffer(
        depth=depth.reshape(shape).astype(np.float32),
        normal=normal.reshape(height, width, 3).astype(np.float32),
        k_sun=k_sun.reshape(shape).astype(np.float32),
        k_sky=k_sky.reshape(shape).astype(np.float32),
        alpha_sun=alpha.reshape(shape).astype(np.float32),
        valid=valid.reshape(shape),
    )
