"""Numba kernels for BVH construction and ray-triangle intersection."""

import numpy as np
from numba import njit, prange

RAY_T_MIN = 1e-6


@njit(cache=True)
def build_bvh(tri_bmin, tri_bmax, centroids, leaf_size):
    """Top-down spatial-median BVH over triangle bounds.

    Returns (node_bmin, node_bmax, left, right, start, count, order,
    n_nodes). Internal nodes have count == 0; leaves index ``order``.
    """
    n = tri_bmin.shape[0]
    max_nodes = 2 * n + 1
    node_bmin = np.empty((max_nodes, 3))
    node_bmax = np.empty((max_nodes, 3))
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    order = np.arange(n)

    stack_beg = np.empty(max_nodes, dtype=np.int64)
    stack_end = np.empty(max_nodes, dtype=np.int64)
    stack_node = np.empty(max_nodes, dtype=np.int64)
    top = 0
    stack_beg[0] = 0
    stack_end[0] = n
    stack_node[0] = 0
    n_nodes = 1

    while top >= 0:
        beg = stack_beg[top]
        end = stack_end[top]
        node = stack_node[top]
        top -= 1

        bmin = np.full(3, 1e300)
        bmax = np.full(3, -1e300)
        cmin = np.full(3, 1e300)
        cmax = np.full(3, -1e300)
        for k in range(beg, end):
            p = order[k]
            for a in range(3):
                if tri_bmin[p, a] < bmin[a]:
                    bmin[a] = tri_bmin[p, a]
                if tri_bmax[p, a] > bmax[a]:
                    bmax[a] = tri_bmax[p, a]
                if centroids[p, a] < cmin[a]:
                    cmin[a] = centroids[p, a]
                if centroids[p, a] > cmax[a]:
                    cmax[a] = centroids[p, a]
        node_bmin[node] = bmin
        node_bmax[node] = bmax

        if end - beg <= leaf_size:
            start[node] = beg
            count[node] = end - beg
            continue

        axis = 0
        best = cmax[0] - cmin[0]
        for a in range(1, 3):
            ext = cmax[a] - cmin[a]
            if ext > best:
                best = ext
                axis = a
        split = 0.5 * (cmin[axis] + cmax[axis])

        i = beg
        j = end - 1
        while i <= j:
            if centroids[order[i], axis] < split:
                i += 1
            else:
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
                j -= 1
        mid = i
        if mid == beg or mid == end:
            mid = beg + (end - beg) // 2

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        top += 1
        stack_beg[top] = mid
        stack_end[top] = end
        stack_node[top] = rid
        top += 1
        stack_beg[top] = beg
        stack_end[top] = mid
        stack_node[top] = lid

    return node_bmin, node_bmax, left, right, start, count, order, n_nodes


@njit(cache=True, inline="always")
def _box_hit(bmin, bmax, ox, oy, oz, ix, iy, iz, t_best):
    t0 = (bmin[0] - ox) * ix
    t1 = (bmax[0] - ox) * ix
    if t0 > t1:
        t0, t1 = t1, t0
    tmin = t0
    tmax = t1
    t0 = (bmin[1] - oy) * iy
    t1 = (bmax[1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    t0 = (bmin[2] - oz) * iz
    t1 = (bmax[2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tmin:
        tmin = t0
    if t1 < tmax:
        tmax = t1
    return tmax >= tmin and tmin <= t_best and tmax >= RAY_T_MIN


@njit(cache=True, inline="always")
def _tri_hit(verts, faces, fi, ox, oy, oz, dx, dy, dz):
    """Moller-Trumbore; returns (t, u, v) with t < 0 on miss."""
    a0 = faces[fi, 0]
    a1 = faces[fi, 1]
    a2 = faces[fi, 2]
    e1x = verts[a1, 0] - verts[a0, 0]
    e1y = verts[a1, 1] - verts[a0, 1]
    e1z = verts[a1, 2] - verts[a0, 2]
    e2x = verts[a2, 0] - verts[a0, 0]
    e2y = verts[a2, 1] - verts[a0, 1]
    e2z = verts[a2, 2] - verts[a0, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if -1e-300 < det < 1e-300:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - verts[a0, 0]
    ty = oy - verts[a0, 1]
    tz = oz - verts[a0, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return -1.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < RAY_T_MIN:
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True, parallel=True)
def raycast_closest(
    verts,
    faces,
    node_bmin,
    node_bmax,
    left,
    right,
    start,
    count,
    order,
    origins,
    dirs,
):
    n_rays = origins.shape[0]
    out_face = np.full(n_rays, -1, dtype=np.int64)
    out_t = np.full(n_rays, np.inf)
    out_u = np.zeros(n_rays)
    out_v = np.zeros(n_rays)
    for r in prange(n_rays):
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else 1e300
        iy = 1.0 / dy if dy != 0.0 else 1e300
        iz = 1.0 / dz if dz != 0.0 else 1e300
        t_best = np.inf
        f_best = -1
        u_best = 0.0
        v_best = 0.0
        stack = np.empty(128, dtype=np.int64)
        top = 0
        stack[0] = 0
        while top >= 0:
            node = stack[top]
            top -= 1
            if not _box_hit(
                node_bmin[node], node_bmax[node], ox, oy, oz, ix, iy, iz, t_best
            ):
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    fi = order[k]
                    t, u, v = _tri_hit(verts, faces, fi, ox, oy, oz, dx, dy, dz)
                    if t > 0.0 and (
                        t < t_best or (t == t_best and fi < f_best)
                    ):
                        t_best = t
                        f_best = fi
                        u_best = u
                        v_best = v
            else:
                top += 1
                stack[top] = right[node]
                top += 1
                stack[top] = left[node]
        out_face[r] = f_best
        out_t[r] = t_best
        out_u[r] = u_best
        out_v[r] = v_best
    return out_face, out_t, out_u, out_v


@njit(cache=True, parallel=True)
def raycast_anyhit(
    verts,
    faces,
    node_bmin,
    node_bmax,
    left,
    right,
    start,
    count,
    order,
    origins,
    dirs,
    t_max,
):
    n_rays = origins.shape[0]
    hit = np.zeros(n_rays, dtype=np.bool_)
    for r in prange(n_rays):
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else 1e300
        iy = 1.0 / dy if dy != 0.0 else 1e300
        iz = 1.0 / dz if dz != 0.0 else 1e300
        limit = t_max[r]
        stack = np.empty(128, dtype=np.int64)
        top = 0
        stack[0] = 0
        found = False
        while top >= 0 and not found:
            node = stack[top]
            top -= 1
            if not _box_hit(
                node_bmin[node], node_bmax[node], ox, oy, oz, ix, iy, iz, limit
            ):
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    fi = order[k]
                    t, u, v = _tri_hit(verts, faces, fi, ox, oy, oz, dx, dy, dz)
                    if 0.0 < t < limit:
                        found = True
                        break
            else:
                top += 1
                stack[top] = right[node]
                top += 1
                stack[top] = left[node]
        hit[r] = found
    return hit
