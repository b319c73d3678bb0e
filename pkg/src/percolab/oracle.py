"""Exact percolation probabilities on tiny explicit graphs by full enumeration.

Every configuration of at most 22 edges is listed as a bitmask; the
origin's cluster is computed for all of them at once (as a vertex bitmask)
and probabilities are exactly-rounded sums (``math.fsum``) of configuration
weights.  This is the ground truth the samplers and the backbone classifier
are checked against.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numba as nb
import numpy as np

MAX_VERTICES = 24
MAX_EDGES = 22


@dataclass(frozen=True, eq=False)
class FiniteGraphSpec:
    """Finite graph with independent edge probabilities.

    ``vertices`` are hashable labels (lattice points are tuples); ``edges``
    are label pairs.  ``positions`` optionally maps labels to coordinates so
    ball counts ``|Q_r ∩ C(0)|`` make sense on lattice-derived graphs.
    """

    vertices: tuple
    edges: tuple
    probs: tuple
    origin: Hashable
    boundary: frozenset = frozenset()
    positions: dict | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.vertices) > MAX_VERTICES:
            raise ValueError(f"at most {MAX_VERTICES} vertices supported")
        if len(self.edges) > MAX_EDGES:
            raise ValueError(f"enumeration over 2^{len(self.edges)} configurations exceeds the cap 2^{MAX_EDGES}")
        if len(self.edges) != len(self.probs):
            raise ValueError("one probability per edge")
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("duplicate vertex labels")
        for q in self.probs:
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"edge probability {q} outside [0, 1]")
        index = {v: i for i, v in enumerate(self.vertices)}
        if self.origin not in index:
            raise ValueError("origin must be a vertex")
        for a, b in self.edges:
            if a not in index or b not in index or a == b:
                raise ValueError(f"bad edge ({a!r}, {b!r})")
        for b in self.boundary:
            if b not in index:
                raise ValueError(f"boundary vertex {b!r} not in graph")
        self._index.update(index)

    @classmethod
    def build(cls, edges: Sequence, probs, origin=0, boundary=(), vertices=None, positions=None):
        if vertices is None:
            seen = {origin: None}
            for a, b in edges:
                seen.setdefault(a, None)
                seen.setdefault(b, None)
            for b in boundary:
                seen.setdefault(b, None)
            vertices = tuple(seen)
        if np.isscalar(probs):
            probs = [float(probs)] * len(edges)
        return cls(tuple(vertices), tuple(tuple(e) for e in edges), tuple(float(q) for q in probs),
                   origin, frozenset(boundary), positions)

    # ------------------------------------------------------------------ #
    def index(self, v) -> int:
        return self._index[v]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, a, b) -> int:
        """Index of edge {a, b}, or -1 if absent."""
        for i, (u, v) in enumerate(self.edges):
            if (u == a and v == b) or (u == b and v == a):
                return i
        return -1

    def edge_array(self) -> np.ndarray:
        return np.array([[self._index[a], self._index[b]] for a, b in self.edges], dtype=np.int64).reshape(-1, 2)

    def csr(self):
        """Adjacency as (indptr, neighbour, edge id)."""
        nv = self.n_vertices
        adj = [[] for _ in range(nv)]
        for e, (a, b) in enumerate(self.edge_array()):
            adj[a].append((b, e))
            adj[b].append((a, e))
        indptr = np.zeros(nv + 1, dtype=np.int64)
        for v in range(nv):
            indptr[v + 1] = indptr[v] + len(adj[v])
        nbr = np.array([w for lst in adj for w, _ in lst], dtype=np.int64)
        eid = np.array([e for lst in adj for _, e in lst], dtype=np.int64)
        return indptr, nbr, eid

    def boundary_mask(self) -> int:
        m = 0
        for b in self.boundary:
            m |= 1 << self._index[b]
        return m

    def position_r2(self) -> np.ndarray:
        if self.positions is None:
            return np.zeros(self.n_vertices)
        return np.array([float(np.sum(np.asarray(self.positions[v], dtype=float) ** 2)) for v in self.vertices])


# ---------------------------------------------------------------------- #
# enumeration core

@nb.njit(cache=True)
def _origin_clusters(indptr, nbr, eid, origin, n_edges):
    """Vertex bitmask of the origin's cluster for every edge configuration."""
    total = 1 << n_edges
    out = np.empty(total, dtype=np.int64)
    nv = indptr.shape[0] - 1
    queue = np.empty(nv, dtype=np.int64)
    for cfg in range(total):
        seen = np.int64(1) << origin
        queue[0] = origin
        n = 1
        head = 0
        while head < n:
            v = queue[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                if (cfg >> eid[k]) & 1:
                    w = nbr[k]
                    if not (seen >> w) & 1:
                        seen |= np.int64(1) << w
                        queue[n] = w
                        n += 1
        out[cfg] = seen
    return out


@nb.njit(cache=True)
def _popcount(x):
    out = np.zeros(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        v = x[i]
        c = 0
        while v:
            v &= v - 1
            c += 1
        out[i] = c
    return out


class Enumeration:
    """All configurations of a FiniteGraphSpec with weights and origin clusters."""

    def __init__(self, g: FiniteGraphSpec):
        self.g = g
        E = g.n_edges
        self.configs = np.arange(1 << E, dtype=np.int64)
        w = np.ones(1 << E)
        for e, q in enumerate(g.probs):
            bit = (self.configs >> e) & 1
            w *= np.where(bit == 1, q, 1.0 - q)
        self.weights = w
        indptr, nbr, eid = g.csr()
        self.cluster = _origin_clusters(indptr, nbr, eid, g.index(g.origin), E)

    def edge_open(self, e: int) -> np.ndarray:
        return ((self.configs >> e) & 1).astype(bool)

    def connected(self, x) -> np.ndarray:
        return ((self.cluster >> self.g.index(x)) & 1).astype(bool)

    def reaches_boundary(self) -> np.ndarray:
        return (self.cluster & self.g.boundary_mask()) != 0

    def cluster_size(self) -> np.ndarray:
        return _popcount(self.cluster)

    def ball_count(self, r: float) -> np.ndarray:
        r2 = self.g.position_r2()
        mask = 0
        for i, v in enumerate(r2):
            if v <= r * r + 1e-9:
                mask |= 1 << i
        return _popcount(self.cluster & mask)

    def indicator(self, event) -> np.ndarray:
        """Evaluate an event given as a bool array, an object with
        ``oracle_mask(enumeration)`` or a predicate on the edge-state vector."""
        if isinstance(event, np.ndarray):
            return event.astype(bool)
        if hasattr(event, "oracle_mask"):
            return np.asarray(event.oracle_mask(self), dtype=bool)
        E = self.g.n_edges
        bits = ((self.configs[:, None] >> np.arange(E)) & 1).astype(bool)
        return np.array([bool(event(row)) for row in bits])

    def expectation(self, values) -> float:
        return math.fsum((self.weights * np.asarray(values, dtype=float)).tolist())

    def probability(self, event) -> float:
        ind = self.indicator(event)
        return math.fsum(self.weights[ind].tolist())


def enumerate_probability(g: FiniteGraphSpec, event) -> float:
    """Exact ``P(event)`` by summing over all ``2^|E|`` configurations."""
    return Enumeration(g).probability(event)


def enumerate_conditional(g: FiniteGraphSpec, event, condition) -> float:
    """Exact ``P(event | condition)``."""
    en = Enumeration(g)
    c = en.indicator(condition)
    pc = math.fsum(en.weights[c].tolist())
    if pc <= 0.0:
        raise ValueError("conditioning event has probability zero")
    f = en.indicator(event) & c
    return math.fsum(en.weights[f].tolist()) / pc


def enumerate_expectation(g: FiniteGraphSpec, values: Callable[[Enumeration], np.ndarray]) -> float:
    en = Enumeration(g)
    return en.expectation(values(en))


# ---------------------------------------------------------------------- #
# backbone / pivotal ground truth

def _open_adjacency(g: FiniteGraphSpec, configuration):
    state = np.asarray(configuration, dtype=bool)
    adj = {v: [] for v in g.vertices}
    for e, (a, b) in enumerate(g.edges):
        if state[e]:
            adj[a].append((b, e))
            adj[b].append((a, e))
    return adj


def _reachable(adj, src, banned_edge=-1):
    seen = {src}
    stack = [src]
    while stack:
        v = stack.pop()
        for w, e in adj[v]:
            if e != banned_edge and w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def enumerate_backbone_and_pivotal(g: FiniteGraphSpec, configuration, budget: int = 10_000_000):
    """Brute-force backbone and pivotal edges of one configuration.

    A directed open edge (u, v) is backbone iff some edge-simple walk from
    the origin ends at a boundary vertex and traverses u -> v.  Pivotal edges
    are open edges whose removal disconnects the origin from the boundary.
    Returns ``(backbone, pivotal)`` as sets of directed label pairs; pivotal
    edges are oriented away from the origin.
    """
    adj = _open_adjacency(g, configuration)
    boundary = g.boundary
    backbone = set()
    used = set()
    trail = []
    steps = [0]

    def dfs(v):
        steps[0] += 1
        if steps[0] > budget:
            raise RuntimeError("walk enumeration budget exceeded")
        if v in boundary:
            backbone.update(trail)
        for w, e in adj[v]:
            if e in used:
                continue
            used.add(e)
            trail.append((v, w))
            dfs(w)
            trail.pop()
            used.discard(e)

    dfs(g.origin)
    pivotal = set()
    reach = _reachable(adj, g.origin)
    if reach & boundary:
        for e, (a, b) in enumerate(g.edges):
            if not configuration[e]:
                continue
            if not (_reachable(adj, g.origin, banned_edge=e) & boundary):
                # orient away from the origin
                side = _reachable(adj, g.origin, banned_edge=e)
                pivotal.add((a, b) if a in side else (b, a))
    return backbone, pivotal


# ---------------------------------------------------------------------- #
# graph builders

def lattice_box_graph(kernel, p: float, r: float) -> FiniteGraphSpec:
    """Every support edge with at least one endpoint in ``Q_r``.

    The boundary is the set of vertices outside ``Q_r``.  The exit event
    ``{0 <-> Q_r^c}`` of the lattice model is exactly ``{0 <-> boundary}``
    here, since it only depends on edges touching ``Q_r``.
    """
    from percolab.kernel import _ball_points, _box_members

    d = kernel.d
    inside = [tuple([0] * d)] + [tuple(int(c) for c in x) for x in _ball_points(d, r)]
    inside_set = set(inside)
    if kernel.box:
        support = _box_members(d, kernel.L)
    elif kernel.has_far_field:
        raise ValueError("lattice_box_graph needs a kernel with explicit support")
    else:
        support = kernel.members
    support = [tuple(int(c) for c in s) for s in support]
    weights = {s: float(kernel.D(np.array(s))) for s in support}
    edges, probs = [], []
    seen = set()
    outside = []
    for x in inside:
        for s in support:
            y = tuple(a + b for a, b in zip(x, s))
            key = (min(x, y), max(x, y))
            if key in seen:
                continue
            seen.add(key)
            edges.append((x, y))
            probs.append(min(1.0, p * weights[s]))
            if y not in inside_set and y not in outside:
                outside.append(y)
    vertices = tuple(inside + outside)
    positions = {v: v for v in vertices}
    return FiniteGraphSpec(vertices, tuple(edges), tuple(probs), tuple([0] * d), frozenset(outside), positions)


def random_graph(rng: np.random.Generator, n_vertices: int, n_edges: int, n_boundary: int = 1,
                 p_range=(0.2, 0.9)) -> FiniteGraphSpec:
    """Random connected-ish multigraph-free graph for oracle tests.

    A random spanning tree is laid first so the origin can reach the
    boundary, then extra distinct edges are added.
    """
    n_edges = max(n_edges, n_vertices - 1)
    pairs = set()
    order = list(rng.permutation(n_vertices))
    order.remove(0)
    order = [0] + order
    for i in range(1, n_vertices):
        j = order[int(rng.integers(0, i))]
        a, b = order[i], j
        pairs.add((min(a, b), max(a, b)))
    all_pairs = [c for c in itertools.combinations(range(n_vertices), 2) if c not in pairs]
    rng.shuffle(all_pairs)
    for c in all_pairs[: n_edges - len(pairs)]:
        pairs.add(c)
    edges = sorted(pairs)
    probs = rng.uniform(*p_range, size=len(edges))
    candidates = list(range(1, n_vertices))
    boundary = frozenset(int(b) for b in rng.choice(candidates, size=min(n_boundary, len(candidates)), replace=False))
    return FiniteGraphSpec(tuple(range(n_vertices)), tuple(edges), tuple(float(q) for q in probs), 0, boundary)
