"""Image-guided refinement of the projected sun-visibility mask.

Two-class fully connected CRF in the Krahenbuhl-Koltun style: unary
energies from the projected labels, Gaussian pairwise potentials (an
appearance kernel over position+color and a smoothness kernel over
position), Potts compatibility, solved by parallel mean-field updates.

Message passing uses truncated explicit window filtering rather than the
permutohedral lattice: exact at desk-scale resolutions, and the window
radius simply follows the kernel sigmas.  Color distances are measured on
the guide image normalized by its own robust white point and scaled to
0-255, so labels are invariant to global exposure changes; the linear
image itself is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from delight import _kernels
from delight.gbuffer import GBuffer
from delight.masks import VisibilityMask
from delight.scene_io import LinearImage

__all__ = ["CrfParams", "GaussianKernel", "meanfield_step", "refine_visibility",
           "normalize_guide"]


@dataclass(frozen=True)
class CrfParams:
    """Kernel widths and weights; defaults follow the dense-CRF reference."""

    sigma_xy: float = 40.0      # appearance kernel, position (px)
    sigma_rgb: float = 13.0     # appearance kernel, color (0-255 guide units)
    sigma_s: float = 3.0        # smoothness kernel, position (px)
    weight_appearance: float = 10.0
    weight_smoothness: float = 3.0
    iterations: int = 5
    keep_prob: float = 0.8      # unary confidence in the projected label
    truncate: float = 2.0       # window radius in sigmas
    white_percentile: float = 99.9


@dataclass(frozen=True)
class GaussianKernel:
    """One pairwise kernel: weight * exp(-|dx|^2/2sxy^2 [- |drgb|^2/2srgb^2])."""

    weight: float
    sigma_xy: float
    guide: np.ndarray | None = None  # (H, W, 3) float32; None = position only
    sigma_rgb: float = 1.0
    truncate: float = 2.0

    def apply(self, planes: np.ndarray) -> np.ndarray:
        """Filter (C, H, W) planes, excluding each pixel's own contribution."""
        radius = max(1, int(np.ceil(self.truncate * self.sigma_xy)))
        out = np.empty_like(planes)
        use_color = self.guide is not None
        guide = self.guide if use_color else np.zeros(planes.shape[1:] + (3,), np.float32)
        _kernels.gauss_window_filter(
            planes, guide,
            1.0 / (2.0 * self.sigma_xy ** 2),
            1.0 / (2.0 * self.sigma_rgb ** 2) if use_color else 0.0,
            radius, use_color, out)
        return self.weight * out


def normalize_guide(img: LinearImage, white_percentile: float = 99.9) -> np.ndarray:
    """Map linear radiance to a 0-255 guide for color distances only."""
    px = img.pixels
    white = float(np.percentile(px, white_percentile))
    if white <= 0.0:
        white = 1.0
    return np.clip(px / white * 255.0, 0.0, 255.0).astype(np.float32)


def meanfield_step(q: np.ndarray, unary: np.ndarray,
                   kernels: list[GaussianKernel]) -> np.ndarray:
    """One parallel mean-field update under Potts compatibility.

    q, unary: (H, W, 2) with q rows summing to 1; unary holds energies
    (negative log label probabilities).  Returns the updated distribution.
    """
    planes = np.ascontiguousarray(q.transpose(2, 0, 1).astype(np.float64))
    message = np.zeros_like(planes)
    for kernel in kernels:
        filtered = kernel.apply(planes)
        # Potts: the penalty for label l sums the filtered mass of the other label
        message[0] += filtered[1]
        message[1] += filtered[0]
    energy = unary.transpose(2, 0, 1) + message
    energy -= energy.min(axis=0, keepdims=True)
    expq = np.exp(-energy)
    expq /= expq.sum(axis=0, keepdims=True)
    return np.ascontiguousarray(expq.transpose(1, 2, 0))


def _default_kernels(guide: np.ndarray, params: CrfParams) -> list[GaussianKernel]:
    return [
        GaussianKernel(weight=params.weight_appearance, sigma_xy=params.sigma_xy,
                       guide=guide, sigma_rgb=params.sigma_rgb, truncate=params.truncate),
        GaussianKernel(weight=params.weight_smoothness, sigma_xy=params.sigma_s,
                       truncate=params.truncate),
    ]


def refine_visibility(init: VisibilityMask, guide_img: LinearImage,
                      gbuf: GBuffer, params: CrfParams | None = None) -> VisibilityMask:
    """Refine a projected binary mask against image evidence.

    Labels: 0 = shadow, 1 = lit.  Invalid pixels are untouched.  Output is
    binary (argmax of the converged marginals) with the winning marginal as
    confidence.
    """
    params = params or CrfParams()
    alpha = init.alpha0
    if guide_img.pixels.shape[:2] != alpha.shape or gbuf.shape != alpha.shape:
        raise ValueError("mask/guide/gbuffer dimensions disagree")

    guide = normalize_guide(guide_img, params.white_percentile)
    p = float(np.clip(params.keep_prob, 1e-6, 1.0 - 1e-6))
    lit = alpha > 0.5
    prob_lit = np.where(lit, p, 1.0 - p)
    unary = np.stack([-np.log(1.0 - prob_lit), -np.log(prob_lit)], axis=2)

    q = np.exp(-unary)
    q /= q.sum(axis=2, keepdims=True)
    kernels = _default_kernels(guide, params)
    for _ in range(params.iterations):
        q = meanfield_step(q, unary, kernels)

    labels = (q[:, :, 1] >= q[:, :, 0]).astype(np.float32)
    labels[~gbuf.valid] = alpha[~gbuf.valid]
    confidence = np.max(q, axis=2).astype(np.float32)
    confidence[~gbuf.valid] = init.confidence[~gbuf.valid]
    return VisibilityMask(alpha0=labels, confidence=confidence, provenance="refined")
