"""Sun/sky irradiance ratio estimation from lit-shadow pixel pairs.

A pixel pair straddling a shadow boundary shares (by assumption) one albedo
and one set of shading coefficients, so the albedo cancels and each pair
votes for the per-channel ratio

    ratio = (I_lit - I_shadow) / I_shadow * k_sky / k_sun .

The ratio is constant over a fixed-illumination collection and independent
of per-image exposure, so votes are pooled over all images.  Candidate
pairs pass four geometric/radiometric filters, then a two-component
Gaussian mixture per channel separates the consensus from albedo-mismatch
outliers; the estimate is accepted only when the major component clearly
dominates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
import numpy as np

from delight.gbuffer import GBuffer
from delight.masks import VisibilityMask, boundary_normals, boundary_pixels
from delight.scene_io import LinearImage

__all__ = [
    "GmmParams",
    "Gmm2",
    "IlluminationRatio",
    "LitShadowPair",
    "PairParams",
    "RatioEstimateError",
    "estimate_ratio",
    "extract_boundary_pairs",
    "filter_pairs",
    "fit_gmm2",
    "white_point",
]

# Pair ratio samples are rounded to this many significand bits before the
# mixture fit.  The rounding is far finer than any acceptance threshold but
# coarser than float32 storage noise, which makes the pooled estimate
# reproducible under global exposure rescaling of the inputs.
_SAMPLE_SIG_BITS = 12


class RatioEstimateError(RuntimeError):
    """No or too few usable lit-shadow pairs; the pipeline must not guess."""


@dataclass(frozen=True)
class PairParams:
    offset_px: int = 3          # step from the boundary into each side
    stride: int = 1             # boundary subsampling
    normal_max_deg: float = 5.0
    depth_tau: float = 0.5      # meters
    exposure_lo: float = 0.02   # fraction of the white point
    exposure_hi: float = 1.0    # values above hi*white are treated as clipped
    white_percentile: float = 99.9
    k_ratio_lo: float = 0.1     # bounds on k_sky / k_sun
    k_ratio_hi: float = 10.0


@dataclass(frozen=True)
class GmmParams:
    accept_weight: float = 0.95
    accept_var_factor: float = 0.25  # major variance <= factor * minor variance
    max_iter: int = 200
    tol: float = 1e-8
    min_samples: int = 8


@dataclass
class LitShadowPair:
    """One boundary-straddling pixel pair with everything Eq-of-ratio needs."""

    image_id: int
    lit_px: tuple[int, int]      # (row, col)
    shadow_px: tuple[int, int]
    i_lit: np.ndarray            # (3,) linear radiance
    i_shadow: np.ndarray
    k_sun_lit: float
    k_sky_lit: float
    k_sky_shadow: float
    n_lit: np.ndarray            # (3,) unit
    n_shadow: np.ndarray
    depth_lit: float
    depth_shadow: float
    ratio: np.ndarray            # (3,) per-channel sun/sky vote


@dataclass
class Gmm2:
    """Two-component 1-D Gaussian mixture fit."""

    weights: np.ndarray    # (2,)
    means: np.ndarray      # (2,)
    variances: np.ndarray  # (2,)
    loglik: list[float] = field(default_factory=list)
    n_samples: int = 0

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        log_p = (np.log(self.weights)[None, :]
                 - 0.5 * np.log(2.0 * np.pi * self.variances)[None, :]
                 - 0.5 * (x[:, None] - self.means[None, :]) ** 2 / self.variances[None, :])
        log_p -= log_p.max(axis=1, keepdims=True)
        p = np.exp(log_p)
        return p / p.sum(axis=1, keepdims=True)


@dataclass
class IlluminationRatio:
    """Collection-wide per-channel L_sun/L_sky estimate with diagnostics."""

    ratio: np.ndarray        # (3,)
    n_pairs_total: int
    n_inliers: int
    gmm_weights: np.ndarray     # (2,) major first, averaged over channels
    gmm_means: np.ndarray       # (2, 3)
    gmm_variances: np.ndarray   # (2, 3)
    accepted: bool
    channel_accepted: np.ndarray  # (3,) bool
    merged: np.ndarray            # (3,) bool: components indistinguishable

    def to_json(self, path, pair_counts: dict | None = None) -> None:
        doc = {
            "ratio": [float(x) for x in self.ratio],
            "n_pairs_total": self.n_pairs_total,
            "n_inliers": self.n_inliers,
            "gmm_weights": [float(x) for x in self.gmm_weights],
            "gmm_means": [[float(x) for x in row] for row in self.gmm_means],
            "gmm_variances": [[float(x) for x in row] for row in self.gmm_variances],
            "accepted": bool(self.accepted),
            "channel_accepted": [bool(x) for x in self.channel_accepted],
            "merged": [bool(x) for x in self.merged],
        }
        if pair_counts is not None:
            doc["pair_counts"] = pair_counts
        with open(path, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "IlluminationRatio":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            ratio=np.asarray(doc["ratio"], dtype=np.float64),
            n_pairs_total=int(doc["n_pairs_total"]),
            n_inliers=int(doc["n_inliers"]),
            gmm_weights=np.asarray(doc["gmm_weights"], dtype=np.float64),
            gmm_means=np.asarray(doc["gmm_means"], dtype=np.float64),
            gmm_variances=np.asarray(doc["gmm_variances"], dtype=np.float64),
            accepted=bool(doc["accepted"]),
            channel_accepted=np.asarray(doc["channel_accepted"], dtype=bool),
            merged=np.asarray(doc["merged"], dtype=bool),
        )


def white_point(img: LinearImage, percentile: float = 99.9) -> float:
    """Robust per-image white level (percentile over all channels)."""
    w = float(np.percentile(img.pixels, percentile))
    return w if w > 0.0 else 1.0


def _round_significand(x: np.ndarray, bits: int = _SAMPLE_SIG_BITS) -> np.ndarray:
    m, e = np.frexp(x)
    scale = float(1 << bits)
    return np.ldexp(np.round(m * scale) / scale, e)


def extract_boundary_pairs(mask: VisibilityMask, gbuf: GBuffer, img: LinearImage,
                           params: PairParams | None = None,
                           image_id: int = 0) -> list[LitShadowPair]:
    """Candidate pairs at every shadow-boundary pixel (optionally strided).

    Steps offset_px to each side along the local boundary normal and samples
    all attributes at the nearest pixel.  Candidates whose endpoints leave
    the image, hit invalid geometry, or do not land on lit/umbra pixels of
    the refined mask are dropped; photometric filtering happens later in
    filter_pairs.
    """
    params = params or PairParams()
    alpha = mask.alpha0
    h, w = alpha.shape
    bps = boundary_pixels(alpha, gbuf.valid)
    if params.stride > 1:
        bps = bps[::params.stride]
    if len(bps) == 0:
        return []
    dirs, keep = boundary_normals(alpha, bps)
    pairs: list[LitShadowPair] = []
    d = float(params.offset_px)
    px = img.pixels
    for (i, j), (dx, dy), ok in zip(bps, dirs, keep):
        if not ok:
            continue
        li = int(i + round(d * dy))
        lj = int(j + round(d * dx))
        si = int(i - round(d * dy))
        sj = int(j - round(d * dx))
        if not (0 <= li < h and 0 <= lj < w and 0 <= si < h and 0 <= sj < w):
            continue
        if not (gbuf.valid[li, lj] and gbuf.valid[si, sj]):
            continue
        if alpha[li, lj] != 1.0 or alpha[si, sj] != 0.0:
            continue
        i_lit = px[li, lj].astype(np.float64)
        i_shadow = px[si, sj].astype(np.float64)
        k_sun_lit = float(gbuf.k_sun[li, lj])
        k_sky_shadow = float(gbuf.k_sky[si, sj])
        if k_sun_lit <= 0.0 or np.any(i_shadow <= 0.0):
            continue
        ratio = (i_lit - i_shadow) / i_shadow * (k_sky_shadow / k_sun_lit)
        pairs.append(LitShadowPair(
            image_id=image_id,
            lit_px=(li, lj), shadow_px=(si, sj),
            i_lit=i_lit, i_shadow=i_shadow,
            k_sun_lit=k_sun_lit,
            k_sky_lit=float(gbuf.k_sky[li, lj]),
            k_sky_shadow=k_sky_shadow,
            n_lit=gbuf.normal[li, lj].astype(np.float64),
            n_shadow=gbuf.normal[si, sj].astype(np.float64),
            depth_lit=float(gbuf.depth[li, lj]),
            depth_shadow=float(gbuf.depth[si, sj]),
            ratio=ratio,
        ))
    return pairs


def filter_pairs(pairs: list[LitShadowPair], img: LinearImage,
                 params: PairParams | None = None) -> list[LitShadowPair]:
    """Keep pairs passing all four criteria.

    1. both pixels inside the exposure bounds (fractions of the white
       point; the upper gate is inclusive, so pixels sitting exactly at the
       robust white level survive and only values above it count as
       clipped)
    2. surface normals within normal_max_deg of each other
    3. depth difference under depth_tau
    4. k_sky/k_sun inside (k_ratio_lo, k_ratio_hi) for numerical stability

    Pairs with non-finite or non-positive ratio votes are dropped as well.
    """
    params = params or PairParams()
    if not pairs:
        return []
    white = white_point(img, params.white_percentile)
    lo = params.exposure_lo * white
    hi = params.exposure_hi * white
    cos_max = math.cos(math.radians(params.normal_max_deg))
    kept = []
    for p in pairs:
        vals = np.concatenate([p.i_lit, p.i_shadow])
        if vals.min() < lo or vals.max() > hi:
            continue
        if float(p.n_lit @ p.n_shadow) < cos_max:
            continue
        if abs(p.depth_lit - p.depth_shadow) >= params.depth_tau:
            continue
        k_ratio = p.k_sky_shadow / p.k_sun_lit
        if not (params.k_ratio_lo < k_ratio < params.k_ratio_hi):
            continue
        if not np.all(np.isfinite(p.ratio)) or p.ratio.min() <= 0.0:
            continue
        kept.append(p)
    return kept


def fit_gmm2(samples, params: GmmParams | None = None) -> Gmm2:
    """EM fit of a two-component 1-D Gaussian mixture.

    Deterministic initialization: split the sorted samples at the median and
    moment-match each half.  Variances are floored at 1e-8 * range^2 so the
    fit stays proper on (near-)degenerate data.
    """
    params = params or GmmParams()
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = len(x)
    if n < params.min_samples:
        raise RatioEstimateError(
            f"need at least {params.min_samples} samples for the mixture fit, got {n}")

    spread = float(x.max() - x.min())
    var_floor = max(1e-8 * spread * spread, 1e-18 * (1.0 + float(np.mean(x)) ** 2))

    order = np.sort(x)
    halves = [order[: n // 2], order[n // 2:]]
    means = np.array([h.mean() for h in halves])
    variances = np.array([max(float(h.var()), var_floor) for h in halves])
    weights = np.array([len(h) / n for h in halves])

    loglik: list[float] = []
    prev = -np.inf
    for _ in range(params.max_iter):
        log_p = (np.log(weights)[None, :]
                 - 0.5 * np.log(2.0 * np.pi * variances)[None, :]
                 - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :])
        m = log_p.max(axis=1)
        ll = float(np.sum(m + np.log(np.exp(log_p - m[:, None]).sum(axis=1))))
        loglik.append(ll)
        r = np.exp(log_p - m[:, None])
        r /= r.sum(axis=1, keepdims=True)
        nk = r.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (r * x[:, None]).sum(axis=0) / nk
        variances = (r * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, var_floor)
        if abs(ll - prev) < params.tol:
            break
        prev = ll
    return Gmm2(weights=weights, means=means, variances=variances,
                loglik=loglik, n_samples=n)


def estimate_ratio(pairs: list[LitShadowPair],
                   params: GmmParams | None = None) -> IlluminationRatio:
    """Pool filtered pairs over the whole collection and gate with the GMM.

    Per channel: fit the two-component mixture on the pair votes; accept the
    channel when the major component holds at least accept_weight of the
    mass and its variance is at most accept_var_factor of the minor's.
    When the two components are statistically indistinguishable (means
    within one standard deviation of the narrower and comparable widths),
    they describe a single consensus mode and are merged, which covers
    outlier-free collections where EM splits the lone mode in half.
    """
    params = params or GmmParams()
    if not pairs:
        raise RatioEstimateError(
            "no lit-shadow pairs found: the collection has no usable shadow "
            "boundaries, so L_sun/L_sky cannot be estimated")
    votes = np.stack([p.ratio for p in pairs])  # (N, 3)
    votes = _round_significand(votes)

    ratio = np.zeros(3)
    ch_ok = np.zeros(3, dtype=bool)
    merged = np.zeros(3, dtype=bool)
    w_out = np.zeros((3, 2))
    m_out = np.zeros((3, 2))
    v_out = np.zeros((3, 2))
    inliers = np.zeros(3, dtype=int)
    for c in range(3):
        g = fit_gmm2(votes[:, c], params)
        major = int(np.argmax(g.weights))
        minor = 1 - major
        sep = abs(g.means[0] - g.means[1])
        same_mode = (sep <= math.sqrt(float(g.variances.min()))
                     and float(g.variances.max()) <= 16.0 * float(g.variances.min()))
        if same_mode:
            merged[c] = True
            ch_ok[c] = True
            ratio[c] = float(g.weights @ g.means)
            w_out[c] = (1.0, 0.0)
            m_out[c] = (ratio[c], ratio[c])
            pooled = float(g.weights @ (g.variances + g.means ** 2) - ratio[c] ** 2)
            v_out[c] = (max(pooled, 1e-18), max(pooled, 1e-18))
            inliers[c] = g.n_samples
        else:
            ch_ok[c] = (g.weights[major] >= params.accept_weight
                        and g.variances[major] <= params.accept_var_factor * g.variances[minor])
            ratio[c] = float(g.means[major])
            w_out[c] = (g.weights[major], g.weights[minor])
            m_out[c] = (g.means[major], g.means[minor])
            v_out[c] = (g.variances[major], g.variances[minor])
            resp = g.responsibilities(votes[:, c])
            inliers[c] = int((resp[:, major] > 0.5).sum())

    return IlluminationRatio(
        ratio=ratio,
        n_pairs_total=len(pairs),
        n_inliers=int(inliers.min()),
        gmm_weights=w_out.mean(axis=0),
        gmm_means=m_out.T.copy(),
        gmm_variances=v_out.T.copy(),
        accepted=bool(ch_ok.all()),
        channel_accepted=ch_ok,
        merged=merged,
    )
