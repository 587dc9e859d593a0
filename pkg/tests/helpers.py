"""Shared test utilities: independent oracles and synthetic case builders.

The oracles here deliberately re-derive results through a different code
path than the library (linear scans, scalar recurrences, closed forms) so
the tests stay meaningful.
"""

from __future__ import annotations

import numpy as np

from delight.gbuffer import GBuffer
from delight.masks import VisibilityMask
from delight.penumbra import ShadowProfile
from delight.scene_io import LinearImage


def brute_force_intersect(origins, dirs, v0, e1, e2, tmin=0.0, chunk=256):
    """Nearest-hit by linear scan over every triangle (Moller-Trumbore).

    Mirrors the traversal kernel's arithmetic expression by expression so
    agreement is exact: first (lowest-id) triangle wins ties.
    Returns (t, tri_id) with t=+inf, id=-1 on miss.
    """
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int64)
    for start in range(0, len(v0), chunk):
        V0 = v0[start:start + chunk][None, :, :]
        E1 = e1[start:start + chunk][None, :, :]
        E2 = e2[start:start + chunk][None, :, :]
        o = origins[:, None, :]
        d = dirs[:, None, :]
        hx = d[..., 1] * E2[..., 2] - d[..., 2] * E2[..., 1]
        hy = d[..., 2] * E2[..., 0] - d[..., 0] * E2[..., 2]
        hz = d[..., 0] * E2[..., 1] - d[..., 1] * E2[..., 0]
        det = E1[..., 0] * hx + E1[..., 1] * hy + E1[..., 2] * hz
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            sx = o[..., 0] - V0[..., 0]
            sy = o[..., 1] - V0[..., 1]
            sz = o[..., 2] - V0[..., 2]
            u = (sx * hx + sy * hy + sz * hz) * inv
            qx = sy * E1[..., 2] - sz * E1[..., 1]
            qy = sz * E1[..., 0] - sx * E1[..., 2]
            qz = sx * E1[..., 1] - sy * E1[..., 0]
            v = (d[..., 0] * qx + d[..., 1] * qy + d[..., 2] * qz) * inv
            t = (E2[..., 0] * qx + E2[..., 1] * qy + E2[..., 2] * qz) * inv
        ok = (det != 0.0) & ~(u < 0.0) & ~(u > 1.0) & ~(v < 0.0) & ~(u + v > 1.0) & (t > tmin)
        t = np.where(ok, t, np.inf)
        # scan candidate columns in id order so ties pick the lowest id
        col = np.argmin(t, axis=1)
        rows = np.arange(n)
        cand_t = t[rows, col]
        better = cand_t < best_t
        best_t[better] = cand_t[better]
        best_id[better] = start + col[better]
    return best_t, best_id


def make_flat_case(ratio=(4.0, 4.0, 4.0), albedo=(0.5, 0.6, 0.4), k_sun=0.9,
                   width=96, height=64, split_col=48):
    """Flat-ground lit/shadow image from the forward model.

    Columns >= split_col are lit (alpha 1), the rest umbra.  k_sky is 1
    everywhere, so I = albedo * (ratio * alpha * k_sun + 1).
    Returns (mask, gbuffer, image).
    """
    ratio = np.asarray(ratio, dtype=np.float64)
    albedo = np.asarray(albedo, dtype=np.float64)
    alpha = np.zeros((height, width), np.float32)
    alpha[:, split_col:] = 1.0
    shading = ratio[None, None, :] * (alpha[:, :, None] * k_sun) + 1.0
    img = LinearImage((albedo[None, None, :] * shading).astype(np.float32))
    normal = np.zeros((height, width, 3), np.float32)
    normal[:, :, 2] = 1.0
    gbuf = GBuffer(
        depth=np.full((height, width), 30.0, np.float32),
        normal=normal,
        k_sun=np.full((height, width), k_sun, np.float32),
        k_sky=np.ones((height, width), np.float32),
        alpha_sun=alpha,
        valid=np.ones((height, width), bool),
    )
    mask = VisibilityMask(alpha0=alpha, confidence=np.ones_like(alpha))
    return mask, gbuf, img


def make_random_profile(rng, n=25, lam_scale=1.0):
    """Random valid penumbra profile (one 0->1 transition, positive a, b)."""
    t = np.arange(n, dtype=float) - n // 2
    k = int(rng.integers(4, n - 4))
    alpha0 = np.zeros(n)
    alpha0[k:] = 1.0
    a = rng.uniform(0.2, 3.0, n) * lam_scale
    b = rng.uniform(0.2, 2.0, n)
    return ShadowProfile(t=t, alpha0=alpha0, intensity=np.ones(n), k_sun=a.copy(),
                         k_sky=b.copy(), a=a, b=b, anchor_xy=np.zeros(2),
                         direction=np.array([1.0, 0.0]), edge_pos=float(t[k]) - 0.5)


def projected_gradient_qp(profile, weights, lam, iters=4000):
    """FISTA projected-gradient minimizer of the profile objective.

    Interior variables only (ends pinned to their binary values), box
    [0, 1].  Independent of the closed-form/active-set solver.
    """
    n = len(profile.t)
    a = profile.a
    D = np.zeros((n - 1, n))
    D[np.arange(n - 1), np.arange(n - 1)] = -1.0
    D[np.arange(n - 1), np.arange(1, n)] = 1.0
    G = D @ np.diag(a)
    M = np.diag(weights) + lam * G.T @ G
    rhs = weights * profile.alpha0 - lam * G.T @ (D @ profile.b)
    free = np.ones(n, bool)
    free[0] = free[-1] = False
    Mff = M[np.ix_(free, free)]
    b_eff = rhs[free] - M[np.ix_(free, ~free)] @ profile.alpha0[~free]
    lip = np.linalg.eigvalsh(Mff).max()
    x = np.clip(profile.alpha0[free].astype(float), 0.0, 1.0)
    y = x.copy()
    tk = 1.0
    for _ in range(iters):
        grad = Mff @ y - b_eff
        x_new = np.clip(y - grad / lip, 0.0, 1.0)
        tk_new = (1.0 + np.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
        y = x_new + (tk - 1.0) / tk_new * (x_new - x)
        x, tk = x_new, tk_new
    full = profile.alpha0.astype(float).copy()
    full[free] = x
    return full


def binary_iou(a, b):
    a = a > 0.5
    b = b > 0.5
    union = (a | b).sum()
    return 1.0 if union == 0 else (a & b).sum() / union


def boundary_exclusion_mask(gt_alpha, px):
    """True within px (Chebyshev) of any visibility transition or penumbra."""
    a = np.asarray(gt_alpha)
    edge = np.zeros_like(a, dtype=bool)
    edge[:-1, :] |= a[:-1, :] != a[1:, :]
    edge[:, :-1] |= a[:, :-1] != a[:, 1:]
    edge |= (a > 0) & (a < 1)
    from numpy.lib.stride_tricks import sliding_window_view

    pad = np.pad(edge, px)
    win = sliding_window_view(pad, (2 * px + 1, 2 * px + 1))
    return win.any(axis=(2, 3))


def tree_bytes(root):
    """Map of relative path -> file bytes for a directory tree."""
    from pathlib import Path

    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}
