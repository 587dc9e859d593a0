"""Sun-visibility masks and shadow-boundary geometry helpers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from delight.scene_io import read_pfm, write_pfm

__all__ = [
    "VisibilityMask",
    "SoftVisibility",
    "boundary_pixels",
    "boundary_normals",
    "gaussian_blur",
]


@dataclass
class VisibilityMask:
    """Binary sun visibility with per-pixel confidence.

    alpha0 holds exactly 0 (shadow) or 1 (lit); penumbra softening happens
    in a later stage.  provenance records whether the mask is the raw
    geometric projection or CRF-refined.
    """

    alpha0: np.ndarray      # (H, W) float32 in {0, 1}
    confidence: np.ndarray  # (H, W) float32 in [0, 1]
    provenance: str = "projected"

    def __post_init__(self):
        a = np.asarray(self.alpha0, dtype=np.float32)
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("alpha0 must be exactly 0 or 1")
        self.alpha0 = a
        self.confidence = np.asarray(self.confidence, dtype=np.float32)

    def save(self, path) -> None:
        write_pfm(path, self.alpha0)

    @classmethod
    def load(cls, path, provenance: str = "refined") -> "VisibilityMask":
        a = read_pfm(Path(path))
        return cls(alpha0=a, confidence=np.ones_like(a), provenance=provenance)


@dataclass
class SoftVisibility:
    """Continuous sun visibility after penumbra optimization."""

    alpha: np.ndarray         # (H, W) float32 in [0, 1]
    blend_weight: np.ndarray  # (H, W) float32, 0 where no profile touched

    def save(self, path) -> None:
        write_pfm(path, self.alpha)

    @classmethod
    def load(cls, path) -> "SoftVisibility":
        a = read_pfm(Path(path))
        return cls(alpha=a, blend_weight=np.zeros_like(a))


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with zero padding (small-kernel helper)."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = np.asarray(image, dtype=np.float64)
    padded = np.pad(out, ((radius, radius), (0, 0)))
    out = sum(k[i] * padded[i:i + out.shape[0]] for i in range(len(k)))
    padded = np.pad(out, ((0, 0), (radius, radius)))
    out = sum(k[i] * padded[:, i:i + out.shape[1]] for i in range(len(k)))
    return out


def boundary_pixels(alpha0: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Shadow pixels 4-adjacent to a lit pixel, both valid; (N, 2) rows (i, j).

    Returned in row-major scan order, which keeps everything downstream
    deterministic.
    """
    a = alpha0 > 0.5
    shadow = (~a) & valid
    lit = a & valid
    neighbor_lit = np.zeros_like(lit)
    neighbor_lit[1:, :] |= lit[:-1, :]
    neighbor_lit[:-1, :] |= lit[1:, :]
    neighbor_lit[:, 1:] |= lit[:, :-1]
    neighbor_lit[:, :-1] |= lit[:, 1:]
    ii, jj = np.nonzero(shadow & neighbor_lit)
    return np.stack([ii, jj], axis=1)


def boundary_normals(alpha0: np.ndarray, pixels: np.ndarray,
                     sigma: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """Unit 2-D directions toward the lit side at the given boundary pixels.

    Uses the gradient of a blurred copy of the mask.  Returns (directions
    (N, 2) as (dx, dy) in pixel axes, keep-mask (N,) for pixels where the
    gradient was well defined).
    """
    smooth = gaussian_blur(np.asarray(alpha0, dtype=np.float64), sigma)
    gy, gx = np.gradient(smooth)
    dx = gx[pixels[:, 0], pixels[:, 1]]
    dy = gy[pixels[:, 0], pixels[:, 1]]
    norm = np.hypot(dx, dy)
    keep = norm > 1e-9
    dirs = np.zeros((len(pixels), 2))
    dirs[keep, 0] = dx[keep] / norm[keep]
    dirs[keep, 1] = dy[keep] / norm[keep]
    return dirs, keep
