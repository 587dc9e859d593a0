"""Assemble total shading and divide it out of the image.

With the sky irradiance gauged to 1 per channel, shading for a valid pixel
is S = ratio * alpha * k_sun + k_sky and albedo is R = I / S.  The gauge
makes the recovered albedo relative (it absorbs the unknown global sky
level), which is the best any method can do without an absolute radiometric
reference; scaling all inputs by c scales the albedo by c and leaves the
shading untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from delight.gbuffer import GBuffer
from delight.light import IlluminationRatio
from delight.masks import SoftVisibility
from delight.scene_io import LinearImage

__all__ = ["AlbedoResult", "PixelFlag", "assemble_shading", "decompose_albedo",
           "evaluate", "SHADING_FLOOR"]

SHADING_FLOOR = 1e-4  # in sky units; guards the division


class PixelFlag(IntEnum):
    OK = 0
    INVALID_GEOMETRY = 1
    SHADING_FLOOR = 2
    OVEREXPOSED = 3


@dataclass
class AlbedoResult:
    """Relative albedo, shading in sky units, and per-pixel status flags."""

    albedo: LinearImage
    shading: LinearImage
    flags: np.ndarray  # (H, W) uint8 of PixelFlag

    def ok_mask(self) -> np.ndarray:
        return self.flags == PixelFlag.OK


def assemble_shading(gbuf: GBuffer, soft: SoftVisibility,
                     ratio: IlluminationRatio) -> LinearImage:
    """Per-channel shading S = ratio * alpha * k_sun + k_sky on valid pixels.

    Invalid pixels get neutral shading 1.0 so the albedo layer can carry the
    input image there without holes.
    """
    if not ratio.accepted:
        raise ValueError("cannot assemble shading from a rejected ratio estimate")
    if soft.alpha.shape != gbuf.shape:
        raise ValueError("visibility/gbuffer dimensions disagree")
    sun_term = (soft.alpha * gbuf.k_sun).astype(np.float64)
    s = (ratio.ratio[None, None, :] * sun_term[:, :, None]
         + gbuf.k_sky.astype(np.float64)[:, :, None])
    s[~gbuf.valid] = 1.0
    return LinearImage(s.astype(np.float32))


def decompose_albedo(img: LinearImage, shading: LinearImage,
                     valid: np.ndarray | None = None,
                     shading_floor: float = SHADING_FLOOR,
                     overexposure_level: float | None = None) -> AlbedoResult:
    """Element-wise R = I / S with a floor guard.

    Pixels whose shading falls below the floor in any channel are flagged
    shading_floor and divided at the floor instead (reported, never
    inpainted).  Invalid-geometry pixels copy the input into the albedo
    layer.  Optionally flags pixels at or above an overexposure level.
    """
    if img.pixels.shape != shading.pixels.shape:
        raise ValueError("image/shading dimensions disagree")
    i = img.pixels.astype(np.float64)
    s = shading.pixels.astype(np.float64)
    h, w = i.shape[:2]
    flags = np.zeros((h, w), dtype=np.uint8)

    floored = (s < shading_floor).any(axis=2)
    flags[floored] = PixelFlag.SHADING_FLOOR
    if overexposure_level is not None:
        over = (i >= overexposure_level).any(axis=2)
        flags[over & ~floored] = PixelFlag.OVEREXPOSED
    albedo = i / np.maximum(s, shading_floor)
    if valid is not None:
        flags[~valid] = PixelFlag.INVALID_GEOMETRY
        albedo[~valid] = i[~valid]
    return AlbedoResult(
        albedo=LinearImage(albedo.astype(np.float32)),
        shading=LinearImage(shading.pixels.copy()),
        flags=flags,
    )


def _fit_scale(pred: np.ndarray, truth: np.ndarray) -> float:
    denom = float(np.sum(pred * pred))
    if denom <= 1e-30:
        return 0.0
    return float(np.sum(pred * truth)) / denom


def evaluate(pred, truth, mask: np.ndarray | None = None) -> dict:
    """Compare a recovered layer against ground truth over a mask.

    Reports:
      psnr_db           peak = max of truth, +inf for an exact match
      rmse              root mean squared error
      relative_rmse     per-pixel error relative to the truth value
      si_rmse           RMSE after fitting one scale per channel (the
                        albedo gauge is unobservable), normalized by the
                        RMS of the truth
      scale             the fitted per-channel scales
    """
    p = pred.albedo.pixels if isinstance(pred, AlbedoResult) else np.asarray(
        pred.pixels if isinstance(pred, LinearImage) else pred)
    t = np.asarray(truth.pixels if isinstance(truth, LinearImage) else truth)
    if p.shape != t.shape:
        raise ValueError("prediction/truth dimensions disagree")
    if mask is None:
        mask = np.ones(p.shape[:2], dtype=bool)
    if not mask.any():
        raise ValueError("empty evaluation mask")
    p = p[mask].astype(np.float64)
    t = t[mask].astype(np.float64)

    mse = float(np.mean((p - t) ** 2))
    peak = float(t.max()) if t.max() > 0 else 1.0
    psnr = float("inf") if mse == 0.0 else 10.0 * np.log10(peak * peak / mse)
    rel = float(np.sqrt(np.mean(((p - t) / np.maximum(t, 1e-12)) ** 2)))

    scales = np.array([_fit_scale(p[:, c], t[:, c]) for c in range(p.shape[1])])
    resid = p * scales[None, :] - t
    t_rms = float(np.sqrt(np.mean(t ** 2)))
    si = float(np.sqrt(np.mean(resid ** 2))) / max(t_rms, 1e-30)

    return {
        "psnr_db": psnr,
        "rmse": float(np.sqrt(mse)),
        "relative_rmse": rel,
        "si_rmse": si,
        "scale": [float(s) for s in scales],
        "n_pixels": int(mask.sum()),
    }
