"""Pure numpy/python implementations of the hot kernels.

Same contracts as the compiled module in ``_native.pyx``; used as the
fallback when the extension is unavailable (or when forced via the
OANAV_PURE_KERNELS environment variable).
"""

from __future__ import annotations

import heapq
import math

import numpy as np

BACKEND = "pure"

_MISS = np.inf
_SQRT2 = math.sqrt(2.0)


def raycast(origin, dirs, max_range, ground_z, aabbs, aabb_labels,
            tri_verts, group_start, group_aabbs, group_labels):
    """Nearest-hit distances and labels for a fan of rays from one origin.

    Parameters
    ----------
    origin : (3,) float array, ray origin.
    dirs : (N, 3) float array of unit directions.
    max_range : hits beyond this distance are dropped.
    ground_z : ground-plane height, or ``nan`` to disable the ground.
    aabbs : (B, 6) axis-aligned boxes [xmin ymin zmin xmax ymax zmax].
    aabb_labels : (B,) int32 label per box.
    tri_verts : (T, 9) packed triangles (three xyz vertices each).
    group_start : (G+1,) int64 triangle offsets per group.
    group_aabbs : (G, 6) bounding box per triangle group.
    group_labels : (G,) int32 label per group.

    Returns
    -------
    (dist, label) : (N,) float distances (inf on miss) and (N,) int32 labels
    (-1 on miss). Ground hits carry label 0.
    """
    origin = np.asarray(origin, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    n = len(dirs)
    best = np.full(n, _MISS)
    label = np.full(n, -1, dtype=np.int32)

    if not math.isnan(ground_z):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ground_z - origin[2]) / dz
        ok = (np.abs(dz) > 1e-15) & (t >= 0.0) & (t < best)
        best[ok] = t[ok]
        label[ok] = 0

    for b in range(len(aabbs)):
        t = _ray_aabb_batch(origin, dirs, aabbs[b])
        ok = t < best
        best[ok] = t[ok]
        label[ok] = aabb_labels[b]

    for g in range(len(group_aabbs)):
        t_box = _ray_aabb_batch(origin, dirs, group_aabbs[g])
        cand = np.nonzero(t_box < best)[0]
        if not len(cand):
            continue
        tris = tri_verts[group_start[g]:group_start[g + 1]].reshape(-1, 3, 3)
        t_tri = _ray_tris_batch(origin, dirs[cand], tris)
        ok = t_tri < best[cand]
        idx = cand[ok]
        best[idx] = t_tri[ok]
        label[idx] = group_labels[g]

    too_far = best > max_range
    best[too_far] = _MISS
    label[too_far] = -1
    return best, label


def _ray_aabb_batch(origin, dirs, box):
    """Entry distances of rays into one AABB; inf on miss, 0 if inside.

    Slab times use plain division (one rounding) so results match the
    compiled kernel bit for bit, including the parallel-ray epsilon.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (box[:3] - origin) / dirs
        t1 = (box[3:] - origin) / dirs
    parallel = np.abs(dirs) < 1e-15
    if parallel.any():
        inside = (origin >= box[:3]) & (origin <= box[3:])
        lo = np.where(inside, -np.inf, np.inf)
        hi = np.where(inside, np.inf, -np.inf)
        t0 = np.where(parallel, lo, t0)
        t1 = np.where(parallel, hi, t1)
    near = np.minimum(t0, t1).max(axis=1)
    far = np.maximum(t0, t1).min(axis=1)
    hit = (near <= far) & (far >= 0.0)
    out = np.where(hit, np.maximum(near, 0.0), _MISS)
    return out


def _ray_tris_batch(origin, dirs, tris):
    """Nearest triangle-hit distance per ray; (R,) with inf on miss."""
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    pvec = np.cross(dirs[:, None, :], e2[None, :, :])           # (R, T, 3)
    det = np.einsum("tk,rtk->rt", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = 1.0 / det
    tvec = origin - v0                                          # (T, 3)
    u = np.einsum("tk,rtk->rt", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)                                   # (T, 3)
    v = np.einsum("rk,tk->rt", dirs, qvec) * inv_det
    t = np.einsum("tk,tk->t", e2, qvec)[None, :] * inv_det
    ok = ((np.abs(det) > 1e-12) & (u >= 0.0) & (u <= 1.0)
          & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0))
    t = np.where(ok, t, _MISS)
    return t.min(axis=1)


def astar(cost, start, goal, resolution, cost_weight, lethal):
    """8-connected A* on a cost grid.

    Step cost is step_length + cost_weight * cell_cost(neighbor); cells with
    cost >= lethal are blocked, and diagonal moves additionally require both
    adjacent cardinal cells to be free (no corner cutting). The octile-
    distance heuristic is admissible because cell costs are nonnegative.

    Returns (path, total_cost) with path an (L, 2) int32 array of (row, col)
    including both endpoints, or None when the goal is unreachable.
    """
    cost = np.asarray(cost)
    h, w = cost.shape
    sr, sc = int(start[0]), int(start[1])
    gr, gc = int(goal[0]), int(goal[1])
    res = float(resolution)

    def heur(r, c):
        dr, dc = abs(r - gr), abs(c - gc)
        return res * (max(dr, dc) + (_SQRT2 - 1.0) * min(dr, dc))

    g_score = {(sr, sc): 0.0}
    came = {}
    counter = 0
    open_heap = [(heur(sr, sc), counter, sr, sc)]
    closed_g = {}

    steps = [(-1, 0, res), (1, 0, res), (0, -1, res), (0, 1, res),
             (-1, -1, res * _SQRT2), (-1, 1, res * _SQRT2),
             (1, -1, res * _SQRT2), (1, 1, res * _SQRT2)]

    while open_heap:
        _, _, r, c = heapq.heappop(open_heap)
        g_cur = g_score[(r, c)]
        if (r, c) in closed_g and closed_g[(r, c)] <= g_cur:
            continue
        closed_g[(r, c)] = g_cur
        if r == gr and c == gc:
            path = [(r, c)]
            while (r, c) in came:
                r, c = came[(r, c)]
                path.append((r, c))
            path.reverse()
            return np.array(path, dtype=np.int32), g_cur
        for dr, dc, step in steps:
            nr, nc = r + dr, c + dc
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if cost[nr, nc] >= lethal:
                continue
            if dr != 0 and dc != 0:
                if cost[r + dr, c] >= lethal or cost[r, c + dc] >= lethal:
                    continue
            g_new = g_cur + step + cost_weight * float(cost[nr, nc])
            key = (nr, nc)
            if key not in g_score or g_new < g_score[key]:
                g_score[key] = g_new
                came[key] = (r, c)
                counter += 1
                heapq.heappush(open_heap, (g_new + heur(nr, nc), counter, nr, nc))
    return None
