"""Reproducible lazy exploration of the origin's open cluster.

Two sampling strategies are available on the lattice:

``"thinning"`` (default)
    Each processed vertex draws its open incident edges from its own
    counter stream by Poisson thinning over displacement classes.  An edge is
    revealed by whichever endpoint is processed first (breadth first, in
    discovery order), so every edge is decided exactly once and the law is
    the product measure.  Cost per vertex is O(p), independent of the
    support size.

``"edge"``
    Every support displacement is tested with a pure per-edge coin
    (:func:`edge_is_open`).  The configuration is then a fixed function of
    (seed, sample index) edge by edge, which gives the monotone coupling in
    ``p``.  Cost per vertex is the support size, so this is for small
    kernels.

Both models (:class:`LatticeModel`, :class:`GraphModel`) reduce batches of
explorations to the per-sample statistics in :class:`SampleBatch`, which is
what the estimators consume.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from percolab import _graph, _lattice
from percolab.errors import BudgetExceeded, EstimatorError, VertexLimitExceeded
from percolab.estimate import EstimateWithError
from percolab.kernel import KernelSpec, _box_members, check_p, sampler_tables

DEFAULT_VERTEX_LIMIT = 10_000_000
_NO_CAP = np.iinfo(np.int64).max


@dataclass(frozen=True)
class EdgeCoinSource:
    master_seed: int
    sample_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) % (1 << 64))
        object.__setattr__(self, "sample_index", int(self.sample_index) % (1 << 64))

    def at(self, sample_index: int) -> "EdgeCoinSource":
        return EdgeCoinSource(self.master_seed, sample_index)


# ---------------------------------------------------------------------- #
# stopping rules

@dataclass(frozen=True)
class StoppingRule:
    exit_radius: float | None = None
    size_cap: int | None = None
    radius_cap: float | None = None

    def __post_init__(self):
        for name in ("exit_radius", "size_cap", "radius_cap"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def kind(self) -> str:
        if self.exit_radius is not None and self.size_cap is not None:
            return "ExitBallOrSizeCap"
        if self.exit_radius is not None:
            return "ExitBall"
        if self.size_cap is not None:
            return "SizeCap"
        if self.radius_cap is not None:
            return "RadiusCap"
        return "None"


def ExitBall(r: float) -> StoppingRule:
    """Stop at the first discovered vertex outside ``Q_r``."""
    return StoppingRule(exit_radius=float(r))


def SizeCap(n: int) -> StoppingRule:
    return StoppingRule(size_cap=int(n))


def RadiusCap(r: float) -> StoppingRule:
    """Do not expand vertices outside ``Q_r`` (they are kept as leaves)."""
    return StoppingRule(radius_cap=float(r))


def ExitBallOrSizeCap(r: float, n: int) -> StoppingRule:
    return StoppingRule(exit_radius=float(r), size_cap=int(n))


NO_STOP = StoppingRule()

_CAUSES = {0: "none", 1: "exit", 2: "size", 3: "target", 4: "limit"}


@dataclass
class ClusterReport:
    """Explored part of the origin's open cluster.

    ``open_edges`` holds index pairs into ``vertices``.  ``expanded`` marks
    vertices whose incident edges were all revealed.
    """

    vertices: np.ndarray
    open_edges: np.ndarray
    stopped_by: str
    exited_ball: bool
    exit_vertex: tuple | None
    expanded: np.ndarray
    long_edge: bool = False

    @property
    def size(self) -> int:
        return len(self.vertices)

    @property
    def max_euclidean_radius(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.sqrt(np.max(np.sum(self.vertices.astype(float) ** 2, axis=1))))

    @property
    def vertex_set(self) -> set:
        return {tuple(int(c) for c in v) for v in self.vertices}

    @property
    def edge_set(self) -> set:
        out = set()
        for a, b in self.open_edges:
            x = tuple(int(c) for c in self.vertices[a])
            y = tuple(int(c) for c in self.vertices[b])
            out.add((min(x, y), max(x, y)))
        return out


# ---------------------------------------------------------------------- #
# per-sample statistics

@dataclass
class BatchRequest:
    exit_radius: float | None = None
    size_cap: int | None = None
    radius_cap: float | None = None
    target: tuple | None = None
    radii: tuple = ()
    long_radius: float | None = None
    event: object | None = None

    @classmethod
    def from_rule(cls, stop: StoppingRule, **kw) -> "BatchRequest":
        return cls(exit_radius=stop.exit_radius, size_cap=stop.size_cap, radius_cap=stop.radius_cap, **kw)


@dataclass
class SampleBatch:
    start: int
    size: np.ndarray
    cause: np.ndarray
    max_r2: np.ndarray
    ball: np.ndarray
    exited: np.ndarray
    reached: np.ndarray
    long_edge: np.ndarray
    events: np.ndarray

    @property
    def n(self) -> int:
        return len(self.size)

    @property
    def capped(self) -> np.ndarray:
        return self.cause == 2

    def exited_radius(self, r: float) -> np.ndarray:
        return self.max_r2 > r * r

    @staticmethod
    def concat(parts: list["SampleBatch"]) -> "SampleBatch":
        return SampleBatch(parts[0].start, *[np.concatenate([getattr(b, f) for b in parts])
                                             for f in ("size", "cause", "max_r2", "ball", "exited",
                                                       "reached", "long_edge", "events")])

    def replace_rows(self, rows: np.ndarray, other: "SampleBatch") -> None:
        for f in ("size", "cause", "max_r2", "ball", "exited", "reached", "long_edge", "events"):
            getattr(self, f)[rows] = getattr(other, f)


def _split(start: int, count: int, workers: int, chunk: int = 4096):
    """Fixed sample ranges; the partition never depends on ``workers``."""
    out = []
    s = start
    while s < start + count:
        n = min(chunk, start + count - s)
        out.append((s, n))
        s += n
    return out


class Model:
    """Interface: anything that can run explorations for a range of sample indices."""

    dim: int
    workers: int = 1

    def batch(self, seed: int, start: int, count: int, req: BatchRequest) -> SampleBatch:
        ranges = _split(start, count, self.workers)
        if self.workers > 1 and len(ranges) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                parts = list(ex.map(lambda r: self._run(seed, r[0], r[1], req), ranges))
        else:
            parts = [self._run(seed, s, n, req) for s, n in ranges]
        return SampleBatch.concat(parts) if parts else self._run(seed, start, 0, req)

    def batch_indices(self, seed: int, indices: np.ndarray, req: BatchRequest) -> SampleBatch:
        """Rerun selected sample indices (used for cap escalation)."""
        parts = [self._run(seed, int(i), 1, req) for i in indices]
        return SampleBatch.concat(parts) if parts else self._run(seed, 0, 0, req)

    def _run(self, seed, start, count, req) -> SampleBatch:
        raise NotImplementedError


class LatticeModel(Model):
    """Bond percolation on Z^d with kernel ``D`` at parameter ``p``.

    ``truncation`` restricts the kernel to displacements with ``|x| <= r``
    (the truncated kernel ``D_r``) without renormalising.
    """

    def __init__(self, kernel: KernelSpec, p: float, truncation: float | None = None,
                 strategy: str = "thinning", max_vertices: int = DEFAULT_VERTEX_LIMIT, workers: int = 1):
        check_p(kernel, p)
        if strategy not in ("thinning", "edge"):
            raise ValueError("strategy must be 'thinning' or 'edge'")
        if truncation is not None and not truncation > 0:
            raise ValueError("truncation radius must be positive")
        self.kernel = kernel
        self.p = float(p)
        self.dim = kernel.d
        self.truncation = truncation
        self.strategy = strategy
        self.max_vertices = int(max_vertices)
        self.workers = int(workers)
        self.tables = sampler_tables(kernel, self.p)
        if strategy == "edge":
            if kernel.has_far_field:
                raise ValueError("edge strategy needs an explicitly enumerable support")
            sup = _box_members(kernel.d, kernel.L) if kernel.box else kernel.members
            q = np.minimum(1.0, self.p * kernel.D(sup))
            if truncation is not None:
                q = np.where(np.sum(sup.astype(float) ** 2, axis=1) <= truncation ** 2, q, 0.0)
            self.support, self.support_q = np.ascontiguousarray(sup), q
        else:
            self.support = np.zeros((0, kernel.d), dtype=np.int64)
            self.support_q = np.zeros(0)

    @property
    def jump_r2(self) -> float:
        return math.inf if self.truncation is None else float(self.truncation) ** 2

    def edge_probability(self, x, y) -> float:
        z = np.asarray(y, dtype=np.int64) - np.asarray(x, dtype=np.int64)
        if self.truncation is not None and float(np.sum(z.astype(float) ** 2)) > self.truncation ** 2:
            return 0.0
        return min(1.0, self.p * float(self.kernel.D(z)))

    def _event_arrays(self, event):
        d = self.dim
        if event is None:
            return (np.zeros((0, d), dtype=np.int64), np.zeros(0, dtype=np.int64),
                    np.zeros(0, dtype=np.int64), np.zeros(0), False)
        pts, a, b = event.edge_arrays(d)
        q = np.array([self.edge_probability(pts[i], pts[j]) for i, j in zip(a, b)])
        return pts, a, b, q, True

    def _run(self, seed, start, count, req: BatchRequest) -> SampleBatch:
        d = self.dim
        exit_r2 = math.inf if req.exit_radius is None else float(req.exit_radius) ** 2
        cap = _NO_CAP if req.size_cap is None else int(req.size_cap)
        cap_r2 = math.inf if req.radius_cap is None else float(req.radius_cap) ** 2
        has_target = req.target is not None
        target = np.asarray(req.target if has_target else [0] * d, dtype=np.int64)
        radii2 = np.asarray([float(r) ** 2 + 1e-9 for r in req.radii], dtype=float)
        long_r2 = math.inf if req.long_radius is None else float(req.long_radius) ** 2
        pts, a, b, q, need = self._event_arrays(req.event)
        size, cause, mr2, ball, longf, events = _lattice.run_batch(
            self.tables, np.uint64(seed % (1 << 64)), np.int64(start), count, exit_r2, cap, cap_r2,
            target, has_target, self.max_vertices, self.jump_r2, long_r2, self.strategy == "edge",
            self.support, self.support_q, radii2, pts, a, b, q, need)
        hit = np.flatnonzero(cause == _lattice.STOP_LIMIT)
        if len(hit):
            raise VertexLimitExceeded(start + int(hit[0]), self.max_vertices)
        exited = mr2 > exit_r2
        reached = cause == _lattice.STOP_TARGET
        return SampleBatch(start, size, cause, mr2, ball, exited, reached, longf.astype(bool), events)

    def explore(self, coin: EdgeCoinSource, stop: StoppingRule = NO_STOP, target=None,
                long_radius: float | None = None) -> ClusterReport:
        d = self.dim
        exit_r2 = math.inf if stop.exit_radius is None else float(stop.exit_radius) ** 2
        cap = _NO_CAP if stop.size_cap is None else int(stop.size_cap)
        cap_r2 = math.inf if stop.radius_cap is None else float(stop.radius_cap) ** 2
        has_target = target is not None
        tgt = np.asarray(target if has_target else [0] * d, dtype=np.int64)
        long_r2 = math.inf if long_radius is None else float(long_radius) ** 2
        coords, state, edges, _, cause, ei, _, lf = _lattice.explore(
            self.tables, np.uint64(coin.master_seed), np.uint64(coin.sample_index), exit_r2, cap, cap_r2,
            tgt, has_target, self.max_vertices, True, self.jump_r2, long_r2, self.strategy == "edge",
            self.support, self.support_q)
        if cause == _lattice.STOP_LIMIT:
            raise VertexLimitExceeded(coin.sample_index, self.max_vertices)
        exit_vertex = tuple(int(c) for c in coords[ei]) if ei >= 0 else None
        return ClusterReport(coords.copy(), edges.copy(), _CAUSES[int(cause)], ei >= 0, exit_vertex,
                             state == _lattice.ST_DONE, bool(lf))


class GraphModel(Model):
    """Bond percolation on a FiniteGraphSpec with pure per-edge coins.

    The "exit" event is reaching the boundary set; radii refer to vertex
    positions when the graph has them.
    """

    def __init__(self, graph, workers: int = 1):
        self.graph = graph
        self.dim = 0
        self.workers = int(workers)
        self.indptr, self.nbr, self.eid = graph.csr()
        self.probs = np.asarray(graph.probs, dtype=float)
        nv = graph.n_vertices
        self.bmask = np.zeros(nv, dtype=np.uint8)
        for v in graph.boundary:
            self.bmask[graph.index(v)] = 1
        self.pos_r2 = graph.position_r2()
        self.origin = graph.index(graph.origin)

    def _run(self, seed, start, count, req: BatchRequest) -> SampleBatch:
        g = self.graph
        target = -1 if req.target is None else g.index(req.target)
        cap = _NO_CAP if req.size_cap is None else int(req.size_cap)
        radii2 = np.asarray([float(r) ** 2 + 1e-9 for r in req.radii], dtype=float)
        if req.event is not None:
            det = np.array([g.edge_index(a, b) for a, b in req.event.graph_edges(g)], dtype=np.int64)
        else:
            det = np.zeros(0, dtype=np.int64)
        stop_b = req.exit_radius is not None
        size, cause, mr2, ball, exited, reached, events = _graph.graph_batch(
            self.indptr, self.nbr, self.eid, self.probs, self.origin, self.bmask, stop_b, target, cap,
            np.uint64(seed % (1 << 64)), np.int64(start), count, self.pos_r2, radii2, det)
        return SampleBatch(start, size, cause, mr2, ball, exited.astype(bool), reached.astype(bool),
                           np.zeros(count, dtype=bool), events)

    def edge_states(self, coin: EdgeCoinSource) -> np.ndarray:
        return _graph.edge_states(np.uint64(coin.master_seed), np.int64(coin.sample_index), self.probs).astype(bool)


# ---------------------------------------------------------------------- #
# public operations

def edge_is_open(coin: EdgeCoinSource, kernel: KernelSpec, p: float, x, y, truncation: float | None = None) -> bool:
    """Pure per-edge coin: open iff ``U(seed, index, {x, y}) < p D(y - x)``."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if np.array_equal(x, y):
        raise ValueError("an edge needs two distinct endpoints")
    z = y - x
    if truncation is not None and float(np.sum(z.astype(float) ** 2)) > truncation ** 2:
        return False
    q = min(1.0, p * float(kernel.D(z)))
    if q <= 0.0:
        return False
    u = _lattice.edge_uniform(np.uint64(coin.master_seed), np.uint64(coin.sample_index), x, y)
    return bool(u < q)


def explore_cluster(kernel: KernelSpec, p: float, coin: EdgeCoinSource, stop: StoppingRule = NO_STOP,
                    strategy: str = "thinning", max_vertices: int = DEFAULT_VERTEX_LIMIT) -> ClusterReport:
    """Breadth-first exploration of C(0) from the origin."""
    return LatticeModel(kernel, p, strategy=strategy, max_vertices=max_vertices).explore(coin, stop)


def explore_truncated_cluster(kernel: KernelSpec, p: float, r: float, coin: EdgeCoinSource,
                              stop: StoppingRule = NO_STOP, strategy: str = "thinning",
                              max_vertices: int = DEFAULT_VERTEX_LIMIT) -> ClusterReport:
    """Exploration of ``C_r(0)``: only open edges with ``|x - y| <= r`` count.

    With ``strategy="edge"`` every edge has its own coin, so for a given
    coin the truncated cluster is a subgraph of the full one.  Under
    thinning the two explorations share only the law, not the sample.
    """
    if not r > 0:
        raise ValueError("truncation radius must be positive")
    trunc = None if r >= kernel.max_displacement else r
    return LatticeModel(kernel, p, truncation=trunc, strategy=strategy,
                        max_vertices=max_vertices).explore(coin, stop)


# ---------------------------------------------------------------------- #
# critical point

def _crossing_stat(exits: np.ndarray, ell: float):
    """Slope difference ``f`` and its delta-method stderr from nested exit indicators."""
    n = exits.shape[0]
    P = exits.mean(axis=0)
    if P[2] <= 0.0 or P[1] <= 0.0 or P[0] <= 0.0:
        return -math.inf, math.inf, P
    f = (math.log(P[2]) - 2.0 * math.log(P[1]) + math.log(P[0])) / ell
    g = np.array([1.0 / P[0], -2.0 / P[1], 1.0 / P[2]]) / ell
    cov = np.cov(exits.T.astype(float), ddof=1) / n if n > 1 else np.zeros((3, 3))
    return f, float(math.sqrt(max(g @ cov @ g, 0.0))), P


def _crossing_slope(history) -> float:
    """Weighted least-squares ``df/dp`` over all finite evaluations."""
    pts = [(h["p"], h["f"], h["stderr_f"]) for h in history
           if math.isfinite(h["f"]) and math.isfinite(h["stderr_f"]) and h["stderr_f"] > 0]
    if len(pts) < 2:
        return math.nan
    p, f, s = map(np.asarray, zip(*pts))
    w = 1.0 / s ** 2
    pm = np.sum(w * p) / np.sum(w)
    fm = np.sum(w * f) / np.sum(w)
    den = np.sum(w * (p - pm) ** 2)
    return float(np.sum(w * (p - pm) * (f - fm)) / den) if den > 0 else math.nan


@dataclass
class PcSearchResult:
    estimate: EstimateWithError
    iterations: int
    samples_used: int
    history: list = field(default_factory=list)


def estimate_pc(kernel: KernelSpec, r_pair: tuple, tol: float, budget: int, seed: int = 0,
                bracket: tuple | None = None, max_iterations: int = 40, workers: int = 1,
                max_vertices: int = DEFAULT_VERTEX_LIMIT) -> PcSearchResult:
    """Locate ``p_c`` by bisection on a one-arm slope crossing.

    With ``r3 = r2^2 / r1`` the local one-arm slopes on ``[r1, r2]`` and
    ``[r2, r3]`` coincide at criticality (pure power law); below ``p_c`` the
    outer slope is steeper, above it flatter.  ``f(p)`` is their difference;
    every evaluation uses the same ``budget`` sample indices (common random
    numbers).  The reported stderr is ``sd(f) / |df/dp|`` at the root.
    """
    r1, r2 = float(r_pair[0]), float(r_pair[1])
    if not (r1 < r2):
        raise ValueError("need r1 < r2")
    if r1 < 8:
        raise ValueError("radii must be at least 8")
    if not tol > 0:
        raise ValueError("tol must be positive")
    r3 = r2 * r2 / r1
    ell = math.log(r2 / r1)
    lo, hi = bracket if bracket is not None else (0.5 * min(1.0, kernel.p_max), min(kernel.p_max, 3.0))
    used = 0
    history = []

    def evaluate(p):
        nonlocal used
        model = LatticeModel(kernel, p, workers=workers, max_vertices=max_vertices)
        b = model.batch(seed, 0, budget, BatchRequest(exit_radius=r3))
        used += budget
        exits = np.stack([b.exited_radius(r1), b.exited_radius(r2), b.exited_radius(r3)], axis=1)
        f, sf, P = _crossing_stat(exits, ell)
        history.append({"p": p, "f": f, "stderr_f": sf, "P": P.tolist()})
        return f, sf

    f_lo, s_lo = evaluate(lo)
    if f_lo >= 0.0:
        est = EstimateWithError.from_value(lo, 0.0, budget, seed, meta={"note": "lower bracket already supercritical"})
        return PcSearchResult(est, 1, used, history)
    f_hi, s_hi = evaluate(hi)
    if f_hi < 0.0:
        raise EstimatorError(f"bracket [{lo}, {hi}] does not straddle the crossing (f(hi) = {f_hi:.3g})")
    it = 0
    while hi - lo > tol:
        if it >= max_iterations:
            raise BudgetExceeded(f"pc-search did not reach tol={tol} in {max_iterations} iterations",
                                 partial={"bracket": (lo, hi), "history": history})
        mid = 0.5 * (lo + hi)
        f_mid, s_mid = evaluate(mid)
        if f_mid < 0.0:
            lo, f_lo, s_lo = mid, f_mid, s_mid
        else:
            hi, f_hi, s_hi = mid, f_mid, s_mid
        it += 1
    p_hat = 0.5 * (lo + hi)
    slope = _crossing_slope(history)
    sf = max(s for s in (s_lo, s_hi) if math.isfinite(s)) if math.isfinite(s_hi) else math.inf
    if math.isfinite(slope) and slope > 0 and math.isfinite(sf):
        err = math.hypot(sf / slope, (hi - lo) / math.sqrt(12.0))
    else:
        err = hi - lo
    est = EstimateWithError.from_value(p_hat, err, budget, seed,
                                       meta={"r_pair": [r1, r2], "r3": r3, "bracket": [lo, hi], "df_dp": slope})
    return PcSearchResult(est, it + 2, used, history)
