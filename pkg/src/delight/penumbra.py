"""Soft shadow boundaries from 1-D regularized visibility profiles.

The CRF stage commits to binary visibility, which puts a step in the
recovered albedo across every penumbra.  For each shadow-boundary pixel we
march a short profile along the boundary normal and re-solve the visibility
signal alpha(t) as the minimizer of

    1/2 * ||alpha - alpha0||_P^2  +  lambda/2 * ||grad(a * alpha + b)||^2

where a(t) = ratio * k_sun(t) / I(t) and b(t) = k_sky(t) / I(t), so that
a * alpha + b is the reciprocal of the albedo along the profile (up to the
sky gauge).  The quadratic has a closed-form normal-equations solution; the
far profile ends are held at their binary values and the result is kept in
[0, 1] by an exact active-set pass.  Solved profiles are splatted back over
the binary mask with bilinear footprints and a small across-line Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from delight.gbuffer import GBuffer
from delight.light import IlluminationRatio, white_point
from delight.masks import SoftVisibility, VisibilityMask, boundary_normals, boundary_pixels
from delight.scene_io import LinearImage

__all__ = [
    "ProfileParams",
    "ShadowProfile",
    "build_profile_weights",
    "composite_soft_mask",
    "extract_profiles",
    "profile_objective",
    "solve_profile",
]


@dataclass(frozen=True)
class ProfileParams:
    half_len: int = 12        # samples on each side of the boundary pixel
    stride: int = 2           # boundary subsampling
    lam: float = 1.0          # smoothness weight on normalized signals
    end_weight: float = 1e4   # data weight at the profile ends
    edge_weight: float = 0.01  # data weight near the transition
    edge_halfwidth: float = 4.0  # px of near-transition down-weighting
    splat_sigma: float = 1.0  # across-line Gaussian for compositing
    exposure_lo: float = 0.02
    white_percentile: float = 99.9


@dataclass
class ShadowProfile:
    """1-D signal across one shadow boundary, sampled at unit pixel steps."""

    t: np.ndarray          # (n,) sample distances, -L..L
    alpha0: np.ndarray     # (n,) binary initial visibility
    intensity: np.ndarray  # (n,) luminance (channel mean)
    k_sun: np.ndarray      # (n,)
    k_sky: np.ndarray      # (n,)
    a: np.ndarray          # (n,) normalized ratio * k_sun / I
    b: np.ndarray          # (n,) normalized k_sky / I
    anchor_xy: np.ndarray  # (2,) boundary pixel (x, y)
    direction: np.ndarray  # (2,) unit step toward the lit side (dx, dy)
    edge_pos: float        # transition location in t units


def _bilinear(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    x1 = np.clip(x0 + 1, 0, arr.shape[1] - 1)
    y1 = np.clip(y0 + 1, 0, arr.shape[0] - 1)
    x0 = np.clip(x0, 0, arr.shape[1] - 1)
    y0 = np.clip(y0, 0, arr.shape[0] - 1)
    return ((1 - fx) * (1 - fy) * arr[y0, x0] + fx * (1 - fy) * arr[y0, x1]
            + (1 - fx) * fy * arr[y1, x0] + fx * fy * arr[y1, x1])


def extract_profiles(mask: VisibilityMask, gbuf: GBuffer, img: LinearImage,
                     ratio: IlluminationRatio,
                     params: ProfileParams | None = None) -> list[ShadowProfile]:
    """March profiles across the boundary; keep only clean single-step ones.

    A profile is discarded when its window leaves the image, touches invalid
    geometry, dips under the exposure floor, or its binary visibility does
    not show exactly one shadow-to-lit transition.
    """
    params = params or ProfileParams()
    if not ratio.accepted:
        raise ValueError("profiles need an accepted illumination ratio")
    alpha = mask.alpha0
    h, w = alpha.shape
    bps = boundary_pixels(alpha, gbuf.valid)
    bps = bps[::max(1, params.stride)]
    if len(bps) == 0:
        return []
    dirs, keep = boundary_normals(alpha, bps)

    lum = img.pixels.mean(axis=2).astype(np.float64)
    floor = params.exposure_lo * white_point(img, params.white_percentile)
    valid_f = gbuf.valid.astype(np.float64)
    mean_ratio = float(np.mean(ratio.ratio))
    t = np.arange(-params.half_len, params.half_len + 1, dtype=np.float64)

    profiles: list[ShadowProfile] = []
    for (i, j), (dx, dy), ok in zip(bps, dirs, keep):
        if not ok:
            continue
        xs = j + t * dx
        ys = i + t * dy
        if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
            continue
        if _bilinear(valid_f, xs, ys).min() < 0.999:
            continue
        a0 = alpha[np.rint(ys).astype(int), np.rint(xs).astype(int)].astype(np.float64)
        steps = np.flatnonzero(np.diff(a0) != 0.0)
        if len(steps) != 1 or a0[0] != 0.0 or a0[-1] != 1.0:
            continue
        inten = _bilinear(lum, xs, ys)
        if inten.min() <= floor:
            continue
        k_sun = _bilinear(gbuf.k_sun.astype(np.float64), xs, ys)
        k_sky = _bilinear(gbuf.k_sky.astype(np.float64), xs, ys)
        a = mean_ratio * k_sun / inten
        b = k_sky / inten
        scale = float(np.mean(a * a0 + b))  # normalize 1/R to O(1)
        if scale <= 0.0 or not np.isfinite(scale):
            continue
        profiles.append(ShadowProfile(
            t=t.copy(), alpha0=a0, intensity=inten, k_sun=k_sun, k_sky=k_sky,
            a=a / scale, b=b / scale,
            anchor_xy=np.array([float(j), float(i)]),
            direction=np.array([dx, dy]),
            edge_pos=float(t[steps[0]]) + 0.5,
        ))
    return profiles


def build_profile_weights(profile: ShadowProfile,
                          params: ProfileParams | None = None) -> np.ndarray:
    """Diagonal data weights: heavy ends, light near the transition.

    Within edge_halfwidth of the transition the weight is edge_weight,
    ramping linearly back to 1 over another edge_halfwidth; the two end
    samples get end_weight.
    """
    params = params or ProfileParams()
    dist = np.abs(profile.t - profile.edge_pos)
    ramp = np.clip((dist - params.edge_halfwidth) / max(params.edge_halfwidth, 1e-9), 0.0, 1.0)
    p = params.edge_weight + (1.0 - params.edge_weight) * ramp
    p[0] = params.end_weight
    p[-1] = params.end_weight
    return p


def profile_objective(profile: ShadowProfile, alpha: np.ndarray,
                      weights: np.ndarray, lam: float) -> float:
    """The quadratic being minimized; used by tests and the QP oracle."""
    data = 0.5 * float(np.sum(weights * (alpha - profile.alpha0) ** 2))
    recip = profile.a * alpha + profile.b
    smooth = 0.5 * lam * float(np.sum(np.diff(recip) ** 2))
    return data + smooth


def solve_profile(profile: ShadowProfile, weights: np.ndarray | None = None,
                  lam: float = 1.0, pin_ends: bool = True) -> np.ndarray:
    """Minimize the profile objective subject to 0 <= alpha <= 1.

    Solves the normal equations (P + lam A^T D^T D A) alpha = P alpha0
    - lam A^T D^T D b, with the two end samples held at their binary values
    (the stationary far ends), then enforces the box exactly with an
    active-set refinement: binding a variable and re-solving reproduces the
    true constrained minimizer, not just a clamped approximation.
    """
    n = len(profile.t)
    alpha0 = profile.alpha0
    if weights is None:
        weights = build_profile_weights(profile)
    a = profile.a
    d_b = np.diff(profile.b)

    # G = D @ diag(a): tridiagonal normal matrix
    m = np.diag(weights).astype(np.float64)
    gtg = np.zeros((n, n))
    gtg[np.arange(n - 1), np.arange(n - 1)] += a[:-1] ** 2
    gtg[np.arange(1, n), np.arange(1, n)] += a[1:] ** 2
    gtg[np.arange(n - 1), np.arange(1, n)] -= a[:-1] * a[1:]
    gtg[np.arange(1, n), np.arange(n - 1)] -= a[:-1] * a[1:]
    m += lam * gtg
    rhs = weights * alpha0
    gt_db = np.zeros(n)
    gt_db[:-1] -= a[:-1] * d_b
    gt_db[1:] += a[1:] * d_b
    rhs -= lam * gt_db

    alpha = alpha0.astype(np.float64).copy()
    fixed = np.zeros(n, dtype=bool)       # pinned or actively bounded
    if pin_ends:
        fixed[0] = fixed[-1] = True

    for _ in range(4 * n + 8):
        free = ~fixed
        if free.any():
            sub = m[np.ix_(free, free)]
            b_eff = rhs[free] - m[np.ix_(free, fixed)] @ alpha[fixed]
            alpha[free] = np.linalg.solve(sub, b_eff)
        low = free & (alpha < 0.0)
        high = free & (alpha > 1.0)
        if low.any() or high.any():
            alpha[low] = 0.0
            alpha[high] = 1.0
            fixed |= low | high
            continue
        # KKT: release the worst bound variable pushing into the interior
        grad = m @ alpha - rhs
        bound = fixed.copy()
        if pin_ends:
            bound[0] = bound[-1] = False
        release = np.where(alpha[bound] <= 0.5, -grad[bound], grad[bound])
        if not bound.any() or release.max() <= 1e-12:
            break
        worst = np.flatnonzero(bound)[int(np.argmax(release))]
        fixed[worst] = False
    return np.clip(alpha, 0.0, 1.0)


def composite_soft_mask(mask: VisibilityMask,
                        solved: list[tuple[ShadowProfile, np.ndarray]],
                        params: ProfileParams | None = None) -> SoftVisibility:
    """Splat solved profiles back over the binary mask.

    Each sample spreads its alpha to the four surrounding pixels with its
    bilinear footprint times a Gaussian in the pixel's across-line distance;
    overlapping profiles blend by normalized accumulation.  Pixels no
    profile touches keep their binary value.
    """
    params = params or ProfileParams()
    h, w = mask.alpha0.shape
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    inv2s = 1.0 / (2.0 * params.splat_sigma ** 2)

    if solved:
        xs_all, ys_all, al_all, ax_all, ay_all, dx_all, dy_all = [], [], [], [], [], [], []
        for prof, alpha in solved:
            xs = prof.anchor_xy[0] + prof.t * prof.direction[0]
            ys = prof.anchor_xy[1] + prof.t * prof.direction[1]
            xs_all.append(xs)
            ys_all.append(ys)
            al_all.append(np.asarray(alpha, dtype=np.float64))
            n = len(xs)
            ax_all.append(np.full(n, prof.anchor_xy[0]))
            ay_all.append(np.full(n, prof.anchor_xy[1]))
            dx_all.append(np.full(n, prof.direction[0]))
            dy_all.append(np.full(n, prof.direction[1]))
        xs = np.concatenate(xs_all)
        ys = np.concatenate(ys_all)
        al = np.concatenate(al_all)
        ax = np.concatenate(ax_all)
        ay = np.concatenate(ay_all)
        ddx = np.concatenate(dx_all)
        ddy = np.concatenate(dy_all)

        x0 = np.floor(xs).astype(int)
        y0 = np.floor(ys).astype(int)
        fx = xs - x0
        fy = ys - y0
        for cx, cy, bw in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                           (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            px = x0 + cx
            py = y0 + cy
            ok = (px >= 0) & (px < w) & (py >= 0) & (py < h) & (bw > 0)
            # across-line distance of the target pixel center from the profile line
            perp = (-ddy[ok] * (px[ok] - ax[ok]) + ddx[ok] * (py[ok] - ay[ok]))
            wgt = bw[ok] * np.exp(-perp * perp * inv2s)
            np.add.at(num, (py[ok], px[ok]), wgt * al[ok])
            np.add.at(den, (py[ok], px[ok]), wgt)

    alpha = mask.alpha0.astype(np.float64).copy()
    touched = den > 0.0
    alpha[touched] = num[touched] / den[touched]
    return SoftVisibility(alpha=np.clip(alpha, 0.0, 1.0).astype(np.float32),
                          blend_weight=den.astype(np.float32))
