"""Numba kernels for lazy cluster exploration on Z^d.

Open edges of a vertex are generated from the vertex's own counter stream
by Poisson thinning: every support displacement ``x`` receives proposals at
rate ``lam(x) = -log(1 - p D(x))`` and the edge is open iff it receives at
least one.  Exploration is breadth first in discovery order; an edge is
revealed by whichever endpoint is processed first and never re-drawn.
"""
import math

import numba as nb
import numpy as np

from percolab.rng import (TAG_EDGE, TAG_VERTEX, edge_hash, mix64, poisson, randbelow,
                          site_hash, uniform)

STOP_NONE = 0
STOP_EXIT = 1
STOP_SIZE = 2
STOP_TARGET = 3
STOP_LIMIT = 4

ST_OPEN = 0       # discovered, not yet processed
ST_DONE = 1       # processed: all incident edges revealed
ST_SKIP = 2       # outside the radius cap, never expanded


# ---------------------------------------------------------------------- #
# per-vertex open-edge generation

@nb.njit(cache=True)
def _push(buf, n, row):
    if n == buf.shape[0]:
        new = np.empty((2 * buf.shape[0], buf.shape[1]), dtype=np.int64)
        new[:n] = buf[:n]
        buf = new
    for i in range(buf.shape[1]):
        buf[n, i] = row[i]
    return buf, n + 1


@nb.njit(cache=True)
def _search(cum, x):
    lo, hi = 0, cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > x:
            hi = mid
        else:
            lo = mid + 1
    return lo


@nb.njit(cache=True)
def _box_decode(j, box_n, L, d, out):
    if j >= box_n // 2:
        j += 1
    side = 2 * L + 1
    for i in range(d):
        out[i] = j % side - L
        j //= side


@nb.njit(cache=True)
def _lam_at(T, r):
    q = T.far_pz * (T.far_L / r) ** T.far_s
    if q >= 1.0:
        return np.inf
    return -math.log1p(-q)


@nb.njit(cache=True)
def _shell_point(T, m, seed, key, ctr, out):
    """Uniform point with sup-norm m by axis proposals; returns (accepted, ctr)."""
    d = T.d
    a, ctr = randbelow(d, seed, TAG_VERTEX, key, ctr)
    sg, ctr = randbelow(2, seed, TAG_VERTEX, key, ctr)
    mult = 0
    for i in range(d):
        if i == a:
            out[i] = m if sg == 1 else -m
        else:
            v, ctr = randbelow(2 * m + 1, seed, TAG_VERTEX, key, ctr)
            out[i] = v - m
        if out[i] == m or out[i] == -m:
            mult += 1
    if mult > 1:
        u = uniform(seed, TAG_VERTEX, key, ctr)
        ctr += 1
        if u * mult >= 1.0:
            return False, ctr
    return True, ctr


@nb.njit(cache=True)
def _norm2(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += float(v[i]) * float(v[i])
    return s


@nb.njit(cache=True)
def _far_accept(T, pt, mu, seed, key, ctr):
    r2 = _norm2(pt)
    if r2 <= T.far_rnear * T.far_rnear or r2 > T.far_rt * T.far_rt:
        return False, ctr
    lam = _lam_at(T, math.sqrt(r2))
    u = uniform(seed, TAG_VERTEX, key, ctr)
    ctr += 1
    return u * mu < lam, ctr


@nb.njit(cache=True)
def gen_site(T, seed, sidx, x, buf):
    """Open displacements from site ``x`` (with repeats); returns (buf, n)."""
    d = T.d
    key = site_hash(x, sidx)
    ctr = 0
    n = 0
    row = np.empty(d, dtype=np.int64)
    ncls = T.cls_lam.shape[0]
    for c in range(ncls):
        if T.cls_certain[c]:
            for j in range(T.cls_count[c]):
                buf, n = _push(buf, n, T.members[T.cls_start[c] + j])
    if ncls > 0:
        total = T.cls_cum[ncls - 1]
        K, ctr = poisson(total, seed, TAG_VERTEX, key, ctr)
        for _ in range(K):
            u = uniform(seed, TAG_VERTEX, key, ctr)
            ctr += 1
            c = _search(T.cls_cum, u * total)
            while T.cls_count[c] == 0 or T.cls_lam[c] == 0.0:
                c += 1
            j, ctr = randbelow(T.cls_count[c], seed, TAG_VERTEX, key, ctr)
            buf, n = _push(buf, n, T.members[T.cls_start[c] + j])
    if T.box_n > 0:
        if T.box_certain:
            for j in range(T.box_n):
                _box_decode(j, T.box_n, T.box_L, d, row)
                buf, n = _push(buf, n, row)
        else:
            K, ctr = poisson(T.box_n * T.box_lam, seed, TAG_VERTEX, key, ctr)
            for _ in range(K):
                j, ctr = randbelow(T.box_n, seed, TAG_VERTEX, key, ctr)
                _box_decode(j, T.box_n, T.box_L, d, row)
                buf, n = _push(buf, n, row)
    if T.far:
        if T.tab_total > 0.0:
            K, ctr = poisson(T.tab_total, seed, TAG_VERTEX, key, ctr)
            for _ in range(K):
                u = uniform(seed, TAG_VERTEX, key, ctr)
                ctr += 1
                idx = _search(T.shell_cum, u * T.tab_total)
                m = T.shell_lo + idx
                ok, ctr = _shell_point(T, m, seed, key, ctr, row)
                if not ok:
                    continue
                ok, ctr = _far_accept(T, row, T.shell_mu[idx], seed, key, ctr)
                if ok:
                    buf, n = _push(buf, n, row)
        if T.tail_total > 0.0:
            K, ctr = poisson(T.tail_total, seed, TAG_VERTEX, key, ctr)
            al = T.far_alpha
            lo = T.tail_a ** (-al)
            hi = 0.0 if math.isinf(T.tail_b) else T.tail_b ** (-al)
            for _ in range(K):
                u = uniform(seed, TAG_VERTEX, key, ctr)
                ctr += 1
                y = (lo - u * (lo - hi)) ** (-1.0 / al)
                mf = math.floor(y + 0.5)
                if mf < T.tail_a + 0.5:
                    mf = T.tail_a + 0.5
                m = np.int64(mf)
                # shell rate over envelope mass on [m - 1/2, m + 1/2]
                cm = 2.0 * d * (2.0 * mf + 1.0) ** (d - 1)
                lam_m = _lam_at(T, mf)
                env = T.tail_B * ((mf - 0.5) ** (-al) - (mf + 0.5) ** (-al)) / al
                u = uniform(seed, TAG_VERTEX, key, ctr)
                ctr += 1
                if u * env >= cm * lam_m:
                    continue
                ok, ctr = _shell_point(T, m, seed, key, ctr, row)
                if not ok:
                    continue
                ok, ctr = _far_accept(T, row, lam_m, seed, key, ctr)
                if ok:
                    buf, n = _push(buf, n, row)
    return buf, n


@nb.njit(cache=True)
def site_displacements(T, seed, sidx, x):
    buf = np.empty((16, T.d), dtype=np.int64)
    buf, n = gen_site(T, seed, sidx, x, buf)
    out = np.empty((n, T.d), dtype=np.int64)
    k = 0
    for i in range(n):
        dup = False
        for j in range(k):
            same = True
            for c in range(T.d):
                if out[j, c] != buf[i, c]:
                    same = False
                    break
            if same:
                dup = True
                break
        if not dup:
            out[k] = buf[i]
            k += 1
    return out[:k]


# ---------------------------------------------------------------------- #
# pure per-edge coins

@nb.njit(cache=True)
def _lex_less(a, b):
    for i in range(a.shape[0]):
        if a[i] != b[i]:
            return a[i] < b[i]
    return False


@nb.njit(cache=True)
def edge_uniform(seed, sidx, x, y):
    """Uniform attached to the undirected edge {x, y}; a pure function of the key."""
    if _lex_less(y, x):
        h = edge_hash(y, x, sidx)
    else:
        h = edge_hash(x, y, sidx)
    return uniform(seed, TAG_EDGE, h, 0)


# ---------------------------------------------------------------------- #
# exploration

@nb.njit(cache=True)
def _coord_hash(v):
    h = np.uint64(0x243F6A8885A308D3)
    for i in range(v.shape[0]):
        h = mix64(h ^ np.uint64(v[i] & np.int64(0x7FFFFFFFFFFFFFFF)) ^ (np.uint64(v[i] < 0) << np.uint64(63)))
    return h


@nb.njit(cache=True)
def _lookup(table, coords, v):
    mask = table.shape[0] - 1
    h = np.int64(_coord_hash(v) & np.uint64(mask))
    d = v.shape[0]
    while True:
        j = table[h]
        if j < 0:
            return -1, h
        same = True
        for c in range(d):
            if coords[j, c] != v[c]:
                same = False
                break
        if same:
            return j, h
        h = (h + 1) & mask


@nb.njit(cache=True)
def _rehash(table, coords, n):
    new = -np.ones(2 * table.shape[0], dtype=np.int64)
    for j in range(n):
        _, slot = _lookup(new, coords, coords[j])
        new[slot] = j
    return new


@nb.njit(cache=True)
def explore(T, seed, sidx, exit_r2, size_cap, cap_r2, target, has_target, max_vertices,
            record_edges, jump_r2, long_r2, edge_mode, support, support_q):
    """Breadth-first exploration of the origin's open cluster.

    Open edges longer than ``sqrt(jump_r2)`` are ignored (truncated kernel);
    those longer than ``sqrt(long_r2)`` only raise ``long_flag``.
    Returns ``(coords, state, edges, table, cause, exit_index, max_r2, long_flag)``.
    ``edge_mode`` replaces the thinning sampler by one pure coin per
    support displacement (``support``, with probabilities ``support_q``).
    """
    d = T.d
    cap = 64
    coords = np.zeros((cap, d), dtype=np.int64)
    state = np.zeros(cap, dtype=np.uint8)
    last = -np.ones(cap, dtype=np.int64)
    table = -np.ones(256, dtype=np.int64)
    ecap = 64
    edges = np.empty((ecap, 2), dtype=np.int64)
    ne = 0
    n = 1
    _, slot = _lookup(table, coords, coords[0])
    table[slot] = 0
    buf = np.empty((16, d), dtype=np.int64)
    y = np.empty(d, dtype=np.int64)
    head = 0
    cause = STOP_NONE
    exit_index = -1
    max_r2 = 0.0
    long_flag = False
    if has_target:
        same = True
        for c in range(d):
            if target[c] != 0:
                same = False
        if same:
            cause = STOP_TARGET
            head = n
    if size_cap <= 1 and cause == STOP_NONE:
        cause = STOP_SIZE
        head = n
    while head < n:
        i = head
        head += 1
        if state[i] == ST_SKIP:
            continue
        x = coords[i].copy()
        if edge_mode:
            nb_ = 0
            for s in range(support.shape[0]):
                for c in range(d):
                    y[c] = x[c] + support[s, c]
                if edge_uniform(seed, sidx, x, y) < support_q[s]:
                    buf, nb_ = _push(buf, nb_, support[s])
        else:
            buf, nb_ = gen_site(T, seed, sidx, x, buf)
        stop = False
        for t in range(nb_):
            for c in range(d):
                y[c] = x[c] + buf[t, c]
            j, slot = _lookup(table, coords, y)
            if j >= 0:
                if state[j] == ST_DONE or last[j] == i:
                    continue
            step2 = _norm2(buf[t])
            if step2 > jump_r2:
                if step2 > long_r2:
                    long_flag = True
                continue
            is_new = j < 0
            if is_new:
                if n == max_vertices:
                    cause = STOP_LIMIT
                    stop = True
                    break
                if n == cap:
                    cap *= 2
                    nc = np.zeros((cap, d), dtype=np.int64)
                    nc[:n] = coords[:n]
                    coords = nc
                    ns = np.zeros(cap, dtype=np.uint8)
                    ns[:n] = state[:n]
                    state = ns
                    nl = -np.ones(cap, dtype=np.int64)
                    nl[:n] = last[:n]
                    last = nl
                j = n
                coords[j] = y
                n += 1
                if 2 * n > table.shape[0]:
                    table = _rehash(table, coords, n)
                else:
                    table[slot] = j
                r2 = _norm2(y)
                if r2 > max_r2:
                    max_r2 = r2
                if r2 > cap_r2:
                    state[j] = ST_SKIP
            last[j] = i
            if record_edges:
                if ne == ecap:
                    ecap *= 2
                    nee = np.empty((ecap, 2), dtype=np.int64)
                    nee[:ne] = edges[:ne]
                    edges = nee
                edges[ne, 0] = i
                edges[ne, 1] = j
                ne += 1
            if is_new:
                r2 = _norm2(y)
                if r2 > exit_r2 and exit_index < 0:
                    exit_index = j
                    cause = STOP_EXIT
                    stop = True
                    break
                if has_target:
                    same = True
                    for c in range(d):
                        if y[c] != target[c]:
                            same = False
                            break
                    if same:
                        cause = STOP_TARGET
                        stop = True
                        break
                if n >= size_cap:
                    cause = STOP_SIZE
                    stop = True
                    break
        state[i] = ST_DONE
        if stop:
            break
    return coords[:n], state[:n], edges[:ne], table, cause, exit_index, max_r2, long_flag


# ---------------------------------------------------------------------- #
# batch driver

@nb.njit(cache=True, nogil=True)
def run_batch(T, seed, start, count, exit_r2, size_cap, cap_r2, target, has_target,
              max_vertices, jump_r2, long_r2, edge_mode, support, support_q,
              radii2, box_pts, det_a, det_b, det_q, need_events):
    """Explore ``count`` samples and reduce each to per-sample statistics.

    ``box_pts`` lists the lattice points touched by the cylinder event; the
    determining edges are index pairs ``(det_a, det_b)`` into it with open
    probabilities ``det_q``.  Unrevealed determining edges are drawn from
    the pure per-edge coins, which are independent of every vertex stream.
    """
    d = T.d
    nr = radii2.shape[0]
    ne = det_a.shape[0]
    size = np.zeros(count, dtype=np.int64)
    cause = np.zeros(count, dtype=np.int8)
    max_r2 = np.zeros(count)
    ball = np.zeros((count, nr), dtype=np.int64)
    longf = np.zeros(count, dtype=np.uint8)
    events = np.zeros((count, ne), dtype=np.uint8)
    nb_box = box_pts.shape[0]
    for s in range(count):
        sidx = start + s
        coords, state, edges, table, c, ei, mr2, lf = explore(
            T, seed, sidx, exit_r2, size_cap, cap_r2, target, has_target, max_vertices,
            need_events, jump_r2, long_r2, edge_mode, support, support_q)
        size[s] = coords.shape[0]
        cause[s] = c
        max_r2[s] = mr2
        longf[s] = lf
        if c == STOP_LIMIT:
            break
        for v in range(coords.shape[0]):
            r2 = _norm2(coords[v])
            for k in range(nr):
                if r2 <= radii2[k]:
                    ball[s, k] += 1
        if need_events and ne > 0:
            bid = -np.ones(nb_box, dtype=np.int64)
            done = np.zeros(nb_box, dtype=np.uint8)
            boxof = -np.ones(coords.shape[0], dtype=np.int64)
            for b in range(nb_box):
                v, _ = _lookup(table, coords, box_pts[b])
                if v >= 0:
                    bid[b] = v
                    done[b] = state[v] == ST_DONE
                    boxof[v] = b
            adj = np.zeros((nb_box, nb_box), dtype=np.uint8)
            for t in range(edges.shape[0]):
                u = boxof[edges[t, 0]]
                w = boxof[edges[t, 1]]
                if u >= 0 and w >= 0:
                    adj[u, w] = 1
                    adj[w, u] = 1
            for e in range(ne):
                a = det_a[e]
                b = det_b[e]
                if done[a] or done[b]:
                    events[s, e] = adj[a, b]
                else:
                    events[s, e] = edge_uniform(seed, sidx, box_pts[a], box_pts[b]) < det_q[e]
    return size, cause, max_r2, ball, longf, events
