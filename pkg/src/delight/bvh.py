"""Bounding volume hierarchy over mesh triangles for ray queries.

Median-split build on the longest centroid axis, leaves of at most four
triangles, flat array storage for the traversal kernels.  Traversal results
are exactly those of a linear scan over all triangles (nearest hit, ties to
the lower triangle id), which the test suite verifies against an
independent brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from delight import _kernels
from delight.scene_io import TriangleMesh

__all__ = ["Bvh", "build_bvh"]

LEAF_SIZE = 4
_MAX_DEPTH = 60


@dataclass
class Bvh:
    """Flat BVH plus precomputed triangle data (v0, edge1, edge2, normals)."""

    node_bmin: np.ndarray    # (N, 3)
    node_bmax: np.ndarray    # (N, 3)
    node_left: np.ndarray    # (N,) child index, -1 for leaves
    node_right: np.ndarray   # (N,)
    leaf_first: np.ndarray   # (N,) offset into tri_order, -1 for internal
    leaf_count: np.ndarray   # (N,) 0 for internal nodes
    tri_order: np.ndarray    # (F,) triangle ids grouped by leaf
    v0: np.ndarray           # (F, 3)
    e1: np.ndarray
    e2: np.ndarray
    n0: np.ndarray           # per-corner vertex normals for interpolation
    n1: np.ndarray
    n2: np.ndarray
    diagonal: float

    def intersect(self, origins: np.ndarray, dirs: np.ndarray, tmin: float = 0.0):
        """Nearest hits for a batch of rays.

        Returns (t, tri_id, u, v): t = +inf and tri_id = -1 on miss; (u, v)
        are the barycentric coordinates of the hit.
        """
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        n = origins.shape[0]
        out_t = np.empty(n)
        out_id = np.empty(n, dtype=np.int32)
        out_u = np.empty(n)
        out_v = np.empty(n)
        with _kernels.KERNEL_LOCK:
            _kernels.bvh_intersect(
                origins, dirs, float(tmin),
                self.node_bmin, self.node_bmax, self.node_left, self.node_right,
                self.leaf_first, self.leaf_count, self.tri_order,
                self.v0, self.e1, self.e2, out_t, out_id, out_u, out_v)
        return out_t, out_id, out_u, out_v

    def occluded(self, origins: np.ndarray, dirs: np.ndarray,
                 tmin: float = 0.0, tmax: float = np.inf) -> np.ndarray:
        """True per ray if anything lies in the open interval (tmin, tmax)."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        out = np.zeros(origins.shape[0], dtype=np.bool_)
        with _kernels.KERNEL_LOCK:
            _kernels.bvh_occluded(
                origins, dirs, float(tmin), float(tmax),
                self.node_bmin, self.node_bmax, self.node_left, self.node_right,
                self.leaf_first, self.leaf_count, self.tri_order,
                self.v0, self.e1, self.e2, out)
        return out

    @property
    def n_triangles(self) -> int:
        return len(self.tri_order)


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Build a BVH; raises ValueError for a mesh without faces."""
    faces = mesh.faces
    if len(faces) == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    verts = mesh.vertices
    tri = verts[faces]                       # (F, 3, 3)
    tri_min = tri.min(axis=1)
    tri_max = tri.max(axis=1)
    centroids = tri.mean(axis=1)

    bmin_list, bmax_list = [], []
    left_list, right_list = [], []
    first_list, count_list = [], []
    order = np.arange(len(faces))
    segments = []  # (node_index, start, end, depth) pending splits

    def alloc(start: int, end: int) -> int:
        idx = len(bmin_list)
        ids = order[start:end]
        bmin_list.append(tri_min[ids].min(axis=0))
        bmax_list.append(tri_max[ids].max(axis=0))
        left_list.append(-1)
        right_list.append(-1)
        first_list.append(-1)
        count_list.append(0)
        return idx

    root = alloc(0, len(faces))
    segments.append((root, 0, len(faces), 0))
    while segments:
        node, start, end, depth = segments.pop()
        n = end - start
        if n <= leaf_size or depth >= _MAX_DEPTH:
            first_list[node] = start
            count_list[node] = n
            continue
        ids = order[start:end]
        c = centroids[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps equal-centroid triangles in id order: deterministic
        perm = np.argsort(c[:, axis], kind="stable")
        order[start:end] = ids[perm]
        mid = start + n // 2
        lo = alloc(start, mid)
        hi = alloc(mid, end)
        left_list[node] = lo
        right_list[node] = hi
        segments.append((lo, start, mid, depth + 1))
        segments.append((hi, mid, end, depth + 1))

    fv = verts[faces]
    normals = mesh.vertex_normals[faces]
    return Bvh(
        node_bmin=np.ascontiguousarray(bmin_list, dtype=np.float64),
        node_bmax=np.ascontiguousarray(bmax_list, dtype=np.float64),
        node_left=np.asarray(left_list, dtype=np.int32),
        node_right=np.asarray(right_list, dtype=np.int32),
        leaf_first=np.asarray(first_list, dtype=np.int32),
        leaf_count=np.asarray(count_list, dtype=np.int32),
        tri_order=np.ascontiguousarray(order, dtype=np.int32),
        v0=np.ascontiguousarray(fv[:, 0]),
        e1=np.ascontiguousarray(fv[:, 1] - fv[:, 0]),
        e2=np.ascontiguousarray(fv[:, 2] - fv[:, 0]),
        n0=np.ascontiguousarray(normals[:, 0]),
        n1=np.ascontiguousarray(normals[:, 1]),
        n2=np.ascontiguousarray(normals[:, 2]),
        diagonal=mesh.diagonal,
    )
