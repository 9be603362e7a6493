"""Median-split BVH over triangles with Moller-Trumbore closest-hit queries.

Only the discrete part of tracing lives here (which face, at what distance);
differentiable quantities are recomputed from the returned face ids.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

T_MIN = 1e-6
LEAF_SIZE = 4


@njit(cache=True)
def _build(centroids, lo_tri, hi_tri, leaf_size):
    n = centroids.shape[0]
    order = np.arange(n)
    max_nodes = 2 * n + 1
    node_lo = np.empty((max_nodes, 3))
    node_hi = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    stack_node = np.empty(max_nodes, dtype=np.int64)
    n_nodes = 1
    start[0] = 0
    count[0] = n
    sp = 0
    stack_node[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        s = start[node]
        c = count[node]
        for a in range(3):
            node_lo[node, a] = np.inf
            node_hi[node, a] = -np.inf
        for q in range(s, s + c):
            f = order[q]
            for a in range(3):
                node_lo[node, a] = min(node_lo[node, a], lo_tri[f, a])
                node_hi[node, a] = max(node_hi[node, a], hi_tri[f, a])
        if c <= leaf_size:
            continue
        # split axis: longest extent of the centroid bounds
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for q in range(s, s + c):
            f = order[q]
            for a in range(3):
                clo[a] = min(clo[a], centroids[f, a])
                chi[a] = max(chi[a], centroids[f, a])
        axis = 0
        for a in range(1, 3):
            if chi[a] - clo[a] > chi[axis] - clo[axis]:
                axis = a
        seg = order[s:s + c].copy()
        keys = centroids[seg, axis]
        # stable sort keeps the build deterministic under ties
        srt = np.argsort(keys, kind="mergesort")
        order[s:s + c] = seg[srt]
        half = c // 2
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        start[l_node] = s
        count[l_node] = half
        start[r_node] = s + half
        count[r_node] = c - half
        stack_node[sp] = r_node
        sp += 1
        stack_node[sp] = l_node
        sp += 1
    return order, node_lo[:n_nodes], node_hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes]


@njit(cache=True, inline="always")
def _slab(o, inv, lo, hi, t_best):
    t0 = 0.0
    t1 = t_best
    for a in range(3):
        ta = (lo[a] - o[a]) * inv[a]
        tb = (hi[a] - o[a]) * inv[a]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return np.inf
    return t0


@njit(cache=True, inline="always")
def _tri_hit(o, d, v0, v1, v2, t_min):
    e1x = v1[0] - v0[0]
    e1y = v1[1] - v0[1]
    e1z = v1[2] - v0[2]
    e2x = v2[0] - v0[0]
    e2y = v2[1] - v0[1]
    e2z = v2[2] - v0[2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    tx = o[0] - v0[0]
    ty = o[1] - v0[1]
    tz = o[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= t_min:
        return np.inf, 0.0, 0.0
    return t, u, v


@njit(cache=True, parallel=True)
def _intersect(tris, order, node_lo, node_hi, left, right, start, count, origins, dirs, t_min):
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    f_out = np.full(n, -1, dtype=np.int64)
    u_out = np.zeros(n)
    v_out = np.zeros(n)
    for r in prange(n):
        o = origins[r]
        d = dirs[r]
        inv = np.empty(3)
        for a in range(3):
            inv[a] = 1.0 / d[a] if d[a] != 0.0 else (1e300 if d[a] >= 0 else -1e300)
        stack = np.empty(128, dtype=np.int64)
        sp = 0
        stack[sp] = 0
        sp += 1
        best = np.inf
        best_f = -1
        bu = 0.0
        bv = 0.0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _slab(o, inv, node_lo[node], node_hi[node], best) == np.inf:
                continue
            if left[node] < 0:
                for q in range(start[node], start[node] + count[node]):
                    f = order[q]
                    t, u, v = _tri_hit(o, d, tris[f, 0], tris[f, 1], tris[f, 2], t_min)
                    if t < best or (t == best and f < best_f):
                        best = t
                        best_f = f
                        bu = u
                        bv = v
            else:
                stack[sp] = right[node]
                sp += 1
                stack[sp] = left[node]
                sp += 1
        t_out[r] = best
        f_out[r] = best_f
        u_out[r] = bu
        v_out[r] = bv
    return t_out, f_out, u_out, v_out


class BVH:
    """Bounding volume hierarchy over a triangle soup (vertices[faces])."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, leaf_size: int = LEAF_SIZE):
        tris = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64)[np.asarray(faces)])
        self.tris = tris
        self.n_faces = len(tris)
        if self.n_faces == 0:
            self.order = None
            return
        cen = tris.mean(axis=1)
        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        (self.order, self.node_lo, self.node_hi, self.left, self.right,
         self.start, self.count) = _build(cen, lo, hi, leaf_size)

    def intersect(self, origins, dirs, t_min: float = T_MIN):
        """Closest hit per ray with t > t_min.

        Returns (t, face, u, v); misses have t = inf and face = -1. The hit
        point is (1 - u - v) * p0 + u * p1 + v * p2.
        """
        o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        if self.n_faces == 0 or len(o) == 0:
            n = len(o)
            return np.full(n, np.inf), np.full(n, -1, dtype=np.int64), np.zeros(n), np.zeros(n)
        return _intersect(self.tris, self.order, self.node_lo, self.node_hi, self.left, self.right,
                          self.start, self.count, o, d, float(t_min))

    def depth(self) -> int:
        def walk(node):
            if self.left[node] < 0:
                return 1
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)
