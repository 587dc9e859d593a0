"""Numerical kernels, JIT-compiled with numba when available.

Every kernel is written as straight scalar-loop Python so the same code
runs (slowly) under CPython if numba is missing.  No fastmath: results are
bit-identical between the compiled and interpreted paths, and independent
of the numba thread count because no kernel shares accumulators between
parallel iterations.
"""

from __future__ import annotations

import threading
import warnings

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    warnings.warn("numba not available; ray tracing and CRF filtering will be slow")

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        def wrap(f):
            return f
        return wrap

    prange = range

# The parallel kernels use numba's internal thread pool, whose default
# workqueue backend is not safe for concurrent entry from multiple Python
# threads.  Pipeline workers therefore serialize kernel calls; worker
# threads still overlap I/O and pure-numpy stages.
KERNEL_LOCK = threading.Lock()


@njit(cache=True)
def _ray_box(ox, oy, oz, dx, dy, dz, bmin, bmax, tmax):
    """Slab test; returns entry t (clamped at 0) or -1.0 on miss.

    Zero direction components are handled by explicit branches so the test
    never produces NaN (0 * inf) and never falsely rejects a box.
    """
    tlo = 0.0
    thi = tmax
    for axis in range(3):
        if axis == 0:
            o, d, lo, hi = ox, dx, bmin[0], bmax[0]
        elif axis == 1:
            o, d, lo, hi = oy, dy, bmin[1], bmax[1]
        else:
            o, d, lo, hi = oz, dz, bmin[2], bmax[2]
        if d == 0.0:
            if o < lo or o > hi:
                return -1.0
        else:
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tlo:
                tlo = t1
            if t2 < thi:
                thi = t2
            if tlo > thi:
                return -1.0
    return tlo


@njit(cache=True)
def _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2):
    """Moller-Trumbore; returns (t, u, v) with t = -1.0 on miss."""
    hx = dy * e2[2] - dz * e2[1]
    hy = dz * e2[0] - dx * e2[2]
    hz = dx * e2[1] - dy * e2[0]
    det = e1[0] * hx + e1[1] * hy + e1[2] * hz
    if det == 0.0:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    u = (sx * hx + sy * hy + sz * hz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    return t, u, v


@njit(cache=True, parallel=True)
def bvh_intersect(origins, dirs, tmin,
                  node_bmin, node_bmax, node_left, node_right,
                  leaf_first, leaf_count, tri_order, v0, e1, e2,
                  out_t, out_id, out_u, out_v):
    """Nearest-hit traversal for a batch of rays.

    Ties in t are broken toward the lower triangle id, which makes the
    result identical to a first-wins linear scan over all triangles.
    """
    n = origins.shape[0]
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best_t = np.inf
        best_id = -1
        best_u = 0.0
        best_v = 0.0
        stack = np.empty(64, dtype=np.int32)
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            entry = _ray_box(ox, oy, oz, dx, dy, dz, node_bmin[node], node_bmax[node], best_t)
            if entry < 0.0 or entry > best_t:
                continue
            if leaf_count[node] > 0:
                first = leaf_first[node]
                for k in range(leaf_count[node]):
                    tri = tri_order[first + k]
                    t, u, v = _ray_triangle(ox, oy, oz, dx, dy, dz, v0[tri], e1[tri], e2[tri])
                    if t > tmin:
                        if t < best_t or (t == best_t and tri < best_id):
                            best_t = t
                            best_id = tri
                            best_u = u
                            best_v = v
            else:
                stack[top] = node_left[node]
                stack[top + 1] = node_right[node]
                top += 2
        out_t[r] = best_t
        out_id[r] = best_id
        out_u[r] = best_u
        out_v[r] = best_v


@njit(cache=True, parallel=True)
def bvh_occluded(origins, dirs, tmin, tmax,
                 node_bmin, node_bmax, node_left, node_right,
                 leaf_first, leaf_count, tri_order, v0, e1, e2, out_hit):
    """Any-hit traversal with early termination (shadow rays)."""
    n = origins.shape[0]
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        hit = False
        stack = np.empty(64, dtype=np.int32)
        stack[0] = 0
        top = 1
        while top > 0 and not hit:
            top -= 1
            node = stack[top]
            entry = _ray_box(ox, oy, oz, dx, dy, dz, node_bmin[node], node_bmax[node], tmax)
            if entry < 0.0:
                continue
            if leaf_count[node] > 0:
                first = leaf_first[node]
                for k in range(leaf_count[node]):
                    tri = tri_order[first + k]
                    t, u, v = _ray_triangle(ox, oy, oz, dx, dy, dz, v0[tri], e1[tri], e2[tri])
                    if tmin < t < tmax:
                        hit = True
                        break
            else:
                stack[top] = node_left[node]
                stack[top + 1] = node_right[node]
                top += 2
        out_hit[r] = hit


@njit(cache=True, parallel=True)
def _gauss_window_filter_2(planes, guide, spatial_lut, inv2_rgb, radius, use_color, out):
    """Two-plane truncated Gaussian / bilateral filter, excluding the center.

    spatial_lut is the (2r+1, 2r+1) table of spatial weights, so only the
    color term costs an exp per tap.  Each output pixel is accumulated by a
    single thread in fixed window order: results do not depend on the
    numba thread count.
    """
    height = planes.shape[1]
    width = planes.shape[2]
    for i in prange(height):
        for j in range(width):
            gr = guide[i, j, 0]
            gg = guide[i, j, 1]
            gb = guide[i, j, 2]
            acc0 = 0.0
            acc1 = 0.0
            i0 = i - radius if i - radius > 0 else 0
            i1 = i + radius if i + radius < height - 1 else height - 1
            j0 = j - radius if j - radius > 0 else 0
            j1 = j + radius if j + radius < width - 1 else width - 1
            for y in range(i0, i1 + 1):
                ky = y - i + radius
                for x in range(j0, j1 + 1):
                    if y == i and x == j:
                        continue
                    w = spatial_lut[ky, x - j + radius]
                    if use_color:
                        cr = guide[y, x, 0] - gr
                        cg = guide[y, x, 1] - gg
                        cb = guide[y, x, 2] - gb
                        w *= np.exp(-(cr * cr + cg * cg + cb * cb) * inv2_rgb)
                    acc0 += w * planes[0, y, x]
                    acc1 += w * planes[1, y, x]
            out[0, i, j] = acc0
            out[1, i, j] = acc1


def gauss_window_filter(planes, guide, inv2_xy, inv2_rgb, radius, use_color, out):
    """Truncated Gaussian / bilateral window filter over (2, H, W) planes."""
    assert planes.shape[0] == 2, "message filtering is two-class"
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    lut = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) * inv2_xy)
    with KERNEL_LOCK:
        _gauss_window_filter_2(planes, guide, lut, inv2_rgb, radius, use_color, out)
