"""Numba kernels for bond percolation on small explicit graphs."""
import numba as nb
import numpy as np

from percolab.rng import TAG_EDGE, mix64, uniform


@nb.njit(cache=True)
def graph_edge_key(e, sidx):
    return mix64(mix64(np.uint64(sidx) ^ np.uint64(0x5851F42D4C957F2D))
                 ^ (np.uint64(e) * np.uint64(0x9E3779B97F4A7C15)))


@nb.njit(cache=True)
def edge_states(seed, sidx, probs):
    out = np.empty(probs.shape[0], dtype=np.uint8)
    for e in range(probs.shape[0]):
        out[e] = uniform(seed, TAG_EDGE, graph_edge_key(e, sidx), 0) < probs[e]
    return out


@nb.njit(cache=True)
def cluster_of(indptr, nbr, eid, open_, origin, boundary, stop_boundary, target, size_cap):
    """BFS over open edges; returns (mask, size, hit_boundary, hit_target, capped)."""
    nv = indptr.shape[0] - 1
    seen = np.zeros(nv, dtype=np.uint8)
    queue = np.empty(nv, dtype=np.int64)
    seen[origin] = 1
    queue[0] = origin
    n = 1
    head = 0
    hit_b = boundary[origin] == 1
    hit_t = origin == target
    capped = False
    if (hit_b and stop_boundary) or hit_t or n >= size_cap:
        capped = n >= size_cap and not hit_t and not (hit_b and stop_boundary)
        return seen, n, hit_b, hit_t, capped
    while head < n:
        v = queue[head]
        head += 1
        for k in range(indptr[v], indptr[v + 1]):
            if not open_[eid[k]]:
                continue
            w = nbr[k]
            if seen[w]:
                continue
            seen[w] = 1
            queue[n] = w
            n += 1
            if boundary[w]:
                hit_b = True
                if stop_boundary:
                    return seen, n, hit_b, hit_t, False
            if w == target:
                hit_t = True
                return seen, n, hit_b, hit_t, False
            if n >= size_cap:
                return seen, n, hit_b, hit_t, True
    return seen, n, hit_b, hit_t, False


@nb.njit(cache=True, nogil=True)
def graph_batch(indptr, nbr, eid, probs, origin, boundary, stop_boundary, target, size_cap,
                seed, start, count, pos_r2, radii2, det_eids):
    nr = radii2.shape[0]
    size = np.zeros(count, dtype=np.int64)
    cause = np.zeros(count, dtype=np.int8)
    max_r2 = np.zeros(count)
    ball = np.zeros((count, nr), dtype=np.int64)
    exited = np.zeros(count, dtype=np.uint8)
    reached = np.zeros(count, dtype=np.uint8)
    events = np.zeros((count, det_eids.shape[0]), dtype=np.uint8)
    for s in range(count):
        sidx = start + s
        open_ = edge_states(seed, sidx, probs)
        seen, n, hb, ht, capped = cluster_of(indptr, nbr, eid, open_, origin, boundary,
                                             stop_boundary, target, size_cap)
        size[s] = n
        exited[s] = hb
        reached[s] = ht
        if ht:
            cause[s] = 3
        elif hb and stop_boundary:
            cause[s] = 1
        elif capped:
            cause[s] = 2
        for v in range(seen.shape[0]):
            if seen[v]:
                if pos_r2[v] > max_r2[s]:
                    max_r2[s] = pos_r2[v]
                for k in range(nr):
                    if pos_r2[v] <= radii2[k]:
                        ball[s, k] += 1
        for j in range(det_eids.shape[0]):
            e = det_eids[j]
            events[s, j] = open_[e] if e >= 0 else 0
    return size, cause, max_r2, ball, exited, reached, events
