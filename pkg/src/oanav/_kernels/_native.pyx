# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: LiDAR raycasting and grid A*.

Contracts mirror ``pure.py``; see that module for parameter docs.
"""

from libc.math cimport INFINITY, fabs, isnan, sqrt
from libc.stdlib cimport free, malloc, realloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


cdef inline double _ray_aabb(const double* o, const double* d,
                             const double* box) nogil:
    """Entry distance into an AABB; INFINITY on miss, 0 if origin inside."""
    cdef double t_near = -INFINITY
    cdef double t_far = INFINITY
    cdef double t0, t1, tmp
    cdef int k
    for k in range(3):
        if fabs(d[k]) < 1e-15:
            if o[k] < box[k] or o[k] > box[3 + k]:
                return INFINITY
            continue
        t0 = (box[k] - o[k]) / d[k]
        t1 = (box[3 + k] - o[k]) / d[k]
        if t0 > t1:
            tmp = t0; t0 = t1; t1 = tmp
        if t0 > t_near:
            t_near = t0
        if t1 < t_far:
            t_far = t1
    if t_near > t_far or t_far < 0.0:
        return INFINITY
    return t_near if t_near > 0.0 else 0.0


cdef inline double _ray_tri(const double* o, const double* d,
                            const double* v) nogil:
    """Moeller-Trumbore distance to one packed triangle; INFINITY on miss."""
    cdef double e1x = v[3] - v[0], e1y = v[4] - v[1], e1z = v[5] - v[2]
    cdef double e2x = v[6] - v[0], e2y = v[7] - v[1], e2z = v[8] - v[2]
    cdef double px = d[1] * e2z - d[2] * e2y
    cdef double py = d[2] * e2x - d[0] * e2z
    cdef double pz = d[0] * e2y - d[1] * e2x
    cdef double det = e1x * px + e1y * py + e1z * pz
    if fabs(det) < 1e-12:
        return INFINITY
    cdef double inv_det = 1.0 / det
    cdef double tx = o[0] - v[0], ty = o[1] - v[1], tz = o[2] - v[2]
    cdef double u = (tx * px + ty * py + tz * pz) * inv_det
    if u < 0.0 or u > 1.0:
        return INFINITY
    cdef double qx = ty * e1z - tz * e1y
    cdef double qy = tz * e1x - tx * e1z
    cdef double qz = tx * e1y - ty * e1x
    cdef double w = (d[0] * qx + d[1] * qy + d[2] * qz) * inv_det
    if w < 0.0 or u + w > 1.0:
        return INFINITY
    cdef double t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
    if t < 0.0:
        return INFINITY
    return t


def raycast(object origin_in, object dirs_in, double max_range, double ground_z,
            object aabbs_in, object aabb_labels_in, object tri_verts_in,
            object group_start_in, object group_aabbs_in, object group_labels_in):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] origin = \
        np.ascontiguousarray(origin_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dirs = \
        np.ascontiguousarray(dirs_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aabbs = \
        np.ascontiguousarray(aabbs_in, dtype=np.float64).reshape(-1, 6)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] aabb_labels = \
        np.ascontiguousarray(aabb_labels_in, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] tri_verts = \
        np.ascontiguousarray(tri_verts_in, dtype=np.float64).reshape(-1, 9)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] group_start = \
        np.ascontiguousarray(group_start_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] group_aabbs = \
        np.ascontiguousarray(group_aabbs_in, dtype=np.float64).reshape(-1, 6)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] group_labels = \
        np.ascontiguousarray(group_labels_in, dtype=np.int32)

    cdef Py_ssize_t n = dirs.shape[0]
    cdef Py_ssize_t n_box = aabbs.shape[0]
    cdef Py_ssize_t n_grp = group_aabbs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best = np.full(n, INFINITY)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] label = np.full(n, -1, dtype=np.int32)

    cdef double* o = <double*> origin.data
    cdef double* dp = <double*> dirs.data
    cdef double* bp = <double*> best.data
    cdef cnp.int32_t* lp = <cnp.int32_t*> label.data
    cdef double* box_p = <double*> aabbs.data if n_box else NULL
    cdef cnp.int32_t* box_lab = <cnp.int32_t*> aabb_labels.data if n_box else NULL
    cdef double* tri_p = <double*> tri_verts.data if tri_verts.shape[0] else NULL
    cdef cnp.int64_t* gs = <cnp.int64_t*> group_start.data
    cdef double* gbox = <double*> group_aabbs.data if n_grp else NULL
    cdef cnp.int32_t* glab = <cnp.int32_t*> group_labels.data if n_grp else NULL

    cdef Py_ssize_t i, b, g, k
    cdef double t, dz
    cdef const double* d
    with nogil:
        for i in range(n):
            d = dp + 3 * i
            if not isnan(ground_z):
                dz = d[2]
                if fabs(dz) > 1e-15:
                    t = (ground_z - o[2]) / dz
                    if t >= 0.0 and t < bp[i]:
                        bp[i] = t
                        lp[i] = 0
            for b in range(n_box):
                t = _ray_aabb(o, d, box_p + 6 * b)
                if t < bp[i]:
                    bp[i] = t
                    lp[i] = box_lab[b]
            for g in range(n_grp):
                t = _ray_aabb(o, d, gbox + 6 * g)
                if t >= bp[i]:
                    continue
                for k in range(gs[g], gs[g + 1]):
                    t = _ray_tri(o, d, tri_p + 9 * k)
                    if t < bp[i]:
                        bp[i] = t
                        lp[i] = glab[g]
            if bp[i] > max_range:
                bp[i] = INFINITY
                lp[i] = -1
    return best, label


# ---------------------------------------------------------------------------
# A* grid search with an array-backed binary heap
# ---------------------------------------------------------------------------

cdef struct HeapItem:
    double f
    long long tie
    long long idx


cdef inline bint _heap_less(HeapItem a, HeapItem b) nogil:
    if a.f != b.f:
        return a.f < b.f
    return a.tie < b.tie


cdef int _heap_push(HeapItem** heap, Py_ssize_t* size, Py_ssize_t* cap,
                    HeapItem item) nogil:
    cdef Py_ssize_t i, parent
    cdef HeapItem* h
    if size[0] >= cap[0]:
        cap[0] = cap[0] * 2
        h = <HeapItem*> realloc(heap[0], cap[0] * sizeof(HeapItem))
        if h == NULL:
            return -1
        heap[0] = h
    i = size[0]
    heap[0][i] = item
    size[0] += 1
    while i > 0:
        parent = (i - 1) // 2
        if _heap_less(heap[0][i], heap[0][parent]):
            heap[0][i], heap[0][parent] = heap[0][parent], heap[0][i]
            i = parent
        else:
            break
    return 0


cdef HeapItem _heap_pop(HeapItem* heap, Py_ssize_t* size) nogil:
    cdef HeapItem top = heap[0]
    cdef Py_ssize_t i = 0, child
    size[0] -= 1
    heap[0] = heap[size[0]]
    while True:
        child = 2 * i + 1
        if child >= size[0]:
            break
        if child + 1 < size[0] and _heap_less(heap[child + 1], heap[child]):
            child += 1
        if _heap_less(heap[child], heap[i]):
            heap[i], heap[child] = heap[child], heap[i]
            i = child
        else:
            break
    return top


def astar(object cost_in, object start, object goal, double resolution,
          double cost_weight, long long lethal):
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] cost = \
        np.ascontiguousarray(cost_in, dtype=np.uint8)
    cdef Py_ssize_t h = cost.shape[0]
    cdef Py_ssize_t w = cost.shape[1]
    cdef Py_ssize_t sr = start[0], sc = start[1]
    cdef Py_ssize_t gr = goal[0], gc = goal[1]
    cdef double res = resolution
    cdef double sqrt2 = sqrt(2.0)
    cdef double diag_extra = sqrt2 - 1.0

    cdef cnp.uint8_t* cp = <cnp.uint8_t*> cost.data
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_score = np.full(h * w, INFINITY)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] closed_g = np.full(h * w, INFINITY)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] came = np.full(h * w, -1, dtype=np.int64)
    cdef double* gsc = <double*> g_score.data
    cdef double* clg = <double*> closed_g.data
    cdef cnp.int64_t* cm = <cnp.int64_t*> came.data

    cdef int[8] drs = [-1, 1, 0, 0, -1, -1, 1, 1]
    cdef int[8] dcs = [0, 0, -1, 1, -1, 1, -1, 1]

    cdef Py_ssize_t cap = 1024
    cdef Py_ssize_t heap_size = 0
    cdef HeapItem* heap = <HeapItem*> malloc(cap * sizeof(HeapItem))
    if heap == NULL:
        raise MemoryError()

    cdef long long counter = 0
    cdef HeapItem item
    cdef Py_ssize_t idx, r, c, nr, nc, nidx, m, adr, adc
    cdef int dr, dc
    cdef double g_cur, g_new, hr, step
    cdef bint found = False
    cdef double found_g = 0.0

    gsc[sr * w + sc] = 0.0
    adr = gr - sr if gr > sr else sr - gr
    adc = gc - sc if gc > sc else sc - gc
    hr = res * ((adr if adr > adc else adc) + diag_extra * (adr if adr < adc else adc))
    item.f = hr; item.tie = counter; item.idx = sr * w + sc
    _heap_push(&heap, &heap_size, &cap, item)

    with nogil:
        while heap_size > 0:
            item = _heap_pop(heap, &heap_size)
            idx = item.idx
            g_cur = gsc[idx]
            if clg[idx] <= g_cur:
                continue
            clg[idx] = g_cur
            r = idx // w
            c = idx - r * w
            if r == gr and c == gc:
                found = True
                found_g = g_cur
                break
            for m in range(8):
                dr = drs[m]; dc = dcs[m]
                nr = r + dr; nc = c + dc
                if nr < 0 or nr >= h or nc < 0 or nc >= w:
                    continue
                nidx = nr * w + nc
                if cp[nidx] >= lethal:
                    continue
                if dr != 0 and dc != 0:
                    if cp[(r + dr) * w + c] >= lethal or cp[r * w + c + dc] >= lethal:
                        continue
                    step = res * sqrt2
                else:
                    step = res
                g_new = g_cur + step + cost_weight * <double> cp[nidx]
                if g_new < gsc[nidx]:
                    gsc[nidx] = g_new
                    cm[nidx] = idx
                    counter += 1
                    adr = gr - nr if gr > nr else nr - gr
                    adc = gc - nc if gc > nc else nc - gc
                    hr = res * ((adr if adr > adc else adc) + diag_extra * (adr if adr < adc else adc))
                    item.f = g_new + hr
                    item.tie = counter
                    item.idx = nidx
                    if _heap_push(&heap, &heap_size, &cap, item) < 0:
                        break
    free(heap)
    if not found:
        return None

    path = []
    idx = gr * w + gc
    while idx >= 0:
        path.append((idx // w, idx % w))
        idx = cm[idx]
    path.reverse()
    return np.array(path, dtype=np.int32), found_g
