"""Finite-scale incipient-infinite-cluster estimators for cylinder events.

Three conditionings of critical percolation are realised exactly at finite
scale:

* two-point: condition on ``0 <-> x`` (rejection sampling, or a shell
  average weighted by the cluster's shell count),
* size-biased: weight configurations by ``|C(0)|`` (the susceptibility measure),
* one-arm: condition on ``0 <-> Q_r^c`` (rejection sampling).

Events are evaluated after the exploration stops.  Determining edges that
the exploration revealed take their recorded state; the others are drawn
from pure per-edge coins, which are independent of everything the
exploration looked at, so the joint law is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from percolab.errors import BudgetExceeded, EstimatorError
from percolab.estimate import EstimateWithError
from percolab.kernel import KernelSpec, _ball_points, _box_members
from percolab.observables import DEFAULT_CAP, MAX_ESCALATIONS, as_model, run_escalated
from percolab.percolation import BatchRequest, GraphModel, LatticeModel, Model

ACCEPTANCE_FLOOR = 1e-6


# ---------------------------------------------------------------------- #
# events

class CylinderEvent:
    """Event determined by the states of finitely many edges.

    ``edges`` are label pairs (lattice points as tuples, or graph vertex
    labels).  ``form`` is either a DNF (list of clauses, each a list of
    ``(edge index, required state)`` literals) or a builtin tag evaluated
    on the same edge list.  The empty DNF clause list means "impossible";
    a single empty clause means "always".
    """

    def __init__(self, m: float, edges, form, kind: str = "dnf", params: dict | None = None, name: str = ""):
        self.m = float(m)
        self.edges = [tuple(tuple(v) if isinstance(v, (list, tuple, np.ndarray)) else v for v in e) for e in edges]
        self.kind = kind
        self.form = form
        self.params = dict(params or {})
        self.name = name or kind
        if kind == "dnf":
            for clause in form:
                for i, _ in clause:
                    if not 0 <= i < len(self.edges):
                        raise ValueError("literal refers to an unknown edge")

    # -- constructors --------------------------------------------------
    @classmethod
    def full_space(cls) -> "CylinderEvent":
        return cls(0.0, [], [[]], name="full-space")

    @classmethod
    def edge_open(cls, a, b) -> "CylinderEvent":
        a, b = _label(a), _label(b)
        m = max(_radius(a), _radius(b))
        return cls(m, [(a, b)], [[(0, True)]], name=f"EdgeOpen({a},{b})")

    @classmethod
    def from_dnf(cls, edges, clauses, m: float | None = None) -> "CylinderEvent":
        edges = [(_label(a), _label(b)) for a, b in edges]
        if m is None:
            m = max([max(_radius(a), _radius(b)) for a, b in edges] or [0.0])
        return cls(m, edges, [list(map(tuple, c)) for c in clauses])

    @classmethod
    def connected_in_box(cls, kernel: KernelSpec, x, m: float) -> "CylinderEvent":
        """``0`` and ``x`` joined by an open path inside ``Q_m``."""
        pts, edges = _box_edges(kernel, m)
        x = _label(x)
        if x not in pts:
            raise ValueError("x must lie in Q_m")
        return cls(m, edges, None, kind="connected", params={"x": x}, name=f"ConnectedInBox({x},{m})")

    @classmethod
    def local_volume_at_least(cls, kernel: KernelSpec, k: int, m: float) -> "CylinderEvent":
        """At least ``k`` points of ``Q_m`` joined to 0 by open paths inside ``Q_m``."""
        _, edges = _box_edges(kernel, m)
        return cls(m, edges, None, kind="volume", params={"k": int(k)}, name=f"LocalVolumeAtLeast({k},{m})")

    @classmethod
    def from_spec(cls, spec: dict, kernel: KernelSpec | None = None) -> "CylinderEvent":
        """Build from a JSON-style dict (see the CLI documentation)."""
        kind = spec.get("type", "dnf")
        if kind == "full-space":
            return cls.full_space()
        if kind == "edge-open":
            return cls.edge_open(*spec["edge"])
        if kind == "connected-in-box":
            return cls.connected_in_box(kernel, spec["x"], spec["m"])
        if kind == "local-volume":
            return cls.local_volume_at_least(kernel, spec["k"], spec["m"])
        if kind == "dnf":
            return cls.from_dnf(spec["edges"], spec["clauses"], spec.get("m"))
        raise ValueError(f"unknown event type {kind!r}")

    # -- evaluation ----------------------------------------------------
    @property
    def determining_edges(self) -> list:
        return list(self.edges)

    def evaluate(self, states) -> np.ndarray:
        """Evaluate on rows of determining-edge states (shape (n, |edges|))."""
        states = np.atleast_2d(np.asarray(states, dtype=bool))
        if states.shape[1] != len(self.edges):
            raise ValueError("state rows must cover exactly the determining edges")
        uniq, inv = np.unique(states, axis=0, return_inverse=True)
        vals = np.array([self._eval_row(row) for row in uniq], dtype=bool)
        return vals[np.asarray(inv).reshape(-1)]

    def _eval_row(self, row) -> bool:
        if self.kind == "dnf":
            return any(all(row[i] == bool(v) for i, v in clause) for clause in self.form)
        comp = self._component_of_origin(row)
        if self.kind == "connected":
            return self.params["x"] in comp
        if self.kind == "volume":
            return len(comp) >= self.params["k"]
        raise ValueError(self.kind)

    def _component_of_origin(self, row) -> set:
        if not self.edges:
            return set()
        origin = _origin_like(self.edges[0][0])
        adj = {}
        for (a, b), s in zip(self.edges, row):
            if s:
                adj.setdefault(a, []).append(b)
                adj.setdefault(b, []).append(a)
        seen = {origin}
        stack = [origin]
        while stack:
            v = stack.pop()
            for w in adj.get(v, ()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    # -- adapters ------------------------------------------------------
    def edge_arrays(self, d: int):
        """Lattice form: (points, index a, index b)."""
        pts = {}
        for a, b in self.edges:
            pts.setdefault(a, len(pts))
            pts.setdefault(b, len(pts))
        arr = np.array(list(pts), dtype=np.int64).reshape(-1, d)
        ia = np.array([pts[a] for a, _ in self.edges], dtype=np.int64)
        ib = np.array([pts[b] for _, b in self.edges], dtype=np.int64)
        return arr, ia, ib

    def graph_edges(self, g) -> list:
        return list(self.edges)

    def oracle_mask(self, en) -> np.ndarray:
        g = en.g
        cols = []
        for a, b in self.edges:
            e = g.edge_index(a, b) if (a in g._index and b in g._index) else -1
            cols.append(en.edge_open(e) if e >= 0 else np.zeros(len(en.configs), dtype=bool))
        if not cols:
            return np.full(len(en.configs), self._eval_row(np.zeros(0, dtype=bool)))
        return self.evaluate(np.stack(cols, axis=1))

    def __repr__(self):
        return f"CylinderEvent({self.name}, m={self.m}, |edges|={len(self.edges)})"


def _label(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(int(c) for c in v)
    return v


def _radius(v) -> float:
    if isinstance(v, tuple):
        return math.sqrt(sum(c * c for c in v))
    return 0.0


def _origin_like(v):
    if isinstance(v, tuple):
        return tuple([0] * len(v))
    return 0


def _box_edges(kernel: KernelSpec, m: float):
    d = kernel.d
    pts = [tuple([0] * d)] + [tuple(int(c) for c in x) for x in _ball_points(d, m)]
    pset = set(pts)
    if kernel.box:
        support = _box_members(d, kernel.L)
    else:
        support = kernel.members
    support = [tuple(int(c) for c in s) for s in support if float(np.sum(np.asarray(s, float) ** 2)) <= 4 * m * m]
    edges = []
    for x in pts:
        for s in support:
            y = tuple(a + b for a, b in zip(x, s))
            if y in pset and x < y:
                edges.append((x, y))
    if kernel.has_far_field and 2 * m > kernel.near_radius:
        raise ValueError("event box larger than the explicit kernel support")
    return pset, edges


# ---------------------------------------------------------------------- #
# estimators

def _event_value(event: CylinderEvent, events: np.ndarray) -> np.ndarray:
    if len(event.edges) == 0:
        return np.full(events.shape[0], event._eval_row(np.zeros(0, dtype=bool)))
    return event.evaluate(events)


@dataclass
class _Acceptance:
    proposed: int = 0
    accepted: int = 0
    undecided: int = 0
    values: list = field(default_factory=list)


def _rejection(model: Model, seed: int, req: BatchRequest, accept, event: CylinderEvent, n_accepted: int,
               floor: float, max_proposals: int | None, chunk: int, escalate: bool, cap: int):
    acc = _Acceptance()
    start = 0
    while acc.accepted < n_accepted:
        if max_proposals is not None and acc.proposed >= max_proposals:
            raise BudgetExceeded(f"proposal budget {max_proposals} exhausted with {acc.accepted} accepted",
                                 partial=acc.__dict__)
        if acc.proposed >= 10.0 / floor and acc.accepted < floor * acc.proposed:
            raise BudgetExceeded(f"acceptance rate {acc.accepted / acc.proposed:.3g} below floor {floor:g}",
                                 partial=acc.__dict__)
        n = chunk if max_proposals is None else min(chunk, max_proposals - acc.proposed)
        b = model.batch(seed, start, n, req)
        if escalate:
            rows = np.flatnonzero(b.capped & ~accept(b))
            c = cap
            for _ in range(MAX_ESCALATIONS):
                if len(rows) == 0:
                    break
                c *= 2
                r2 = BatchRequest(**{**req.__dict__, "size_cap": c})
                rerun = model.batch_indices(seed, start + rows, r2)
                b.replace_rows(rows, rerun)
                rows = rows[rerun.capped & ~accept(rerun)]
            acc.undecided += len(rows)
        ok = accept(b)
        vals = _event_value(event, b.events[ok]) if ok.any() else np.zeros(0, dtype=bool)
        need = n_accepted - acc.accepted
        if len(vals) > need:
            # keep the first n_accepted in sample order; count proposals up to the last kept one
            last = np.flatnonzero(ok)[need - 1]
            vals = vals[:need]
            n = int(last) + 1
        acc.values.extend(vals.tolist())
        acc.accepted += len(vals)
        acc.proposed += n
        start += chunk
    return acc


def _conditional_estimate(acc: _Acceptance, seed, meta) -> EstimateWithError:
    v = np.asarray(acc.values, dtype=float)
    est = EstimateWithError.from_samples(v, seed)
    rate = acc.accepted / acc.proposed
    rate_se = math.sqrt(rate * (1 - rate) / acc.proposed)
    meta = {**meta, "acceptance_rate": rate, "acceptance_stderr": rate_se, "proposed": acc.proposed,
            "accepted": acc.accepted, "undecided": acc.undecided}
    return EstimateWithError(est.value, est.stderr, est.n_samples, seed, meta, est.sum, est.sumsq)


def estimate_event_probability(kernel, p, event: CylinderEvent, n_samples: int, seed: int,
                               workers: int = 1) -> EstimateWithError:
    """Unconditional ``P_p(F)``; only the determining edges are sampled."""
    model = as_model(kernel, p, workers)
    b = model.batch(seed, 0, n_samples, BatchRequest(size_cap=1, event=event if event.edges else None))
    v = _event_value(event, b.events).astype(float)
    return EstimateWithError.from_samples(v, seed, {"scheme": "unconditioned", "p": p, "event": event.name})


def estimate_two_point_conditioned(kernel, p, x, event: CylinderEvent, n_accepted: int, seed: int,
                                   floor: float = ACCEPTANCE_FLOOR, max_proposals: int | None = None,
                                   cap: int = DEFAULT_CAP, chunk: int = 4096, workers: int = 1) -> EstimateWithError:
    """``P(F | 0 <-> x)`` by rejection; the acceptance rate estimates ``tau_p(x)``.

    Explorations stop as soon as ``x`` is reached.  Samples that hit the
    size cap first are rerun with doubled caps; those still undecided after
    the escalation limit are counted as rejections and reported.
    """
    model = as_model(kernel, p, workers)
    x = _label(x)
    if isinstance(model, LatticeModel) and not math.sqrt(sum(c * c for c in x)) > event.m and event.edges:
        raise ValueError("|x| must exceed the event radius m")
    req = BatchRequest(target=x, size_cap=cap, event=event if event.edges else None)
    acc = _rejection(model, seed, req, lambda b: b.reached, event, n_accepted, floor, max_proposals,
                     chunk, True, cap)
    return _conditional_estimate(acc, seed, {"scheme": "two-point", "x": list(x) if isinstance(x, tuple) else x,
                                             "p": p, "event": event.name})


def estimate_two_point_shell(kernel, p, radius: float, event: CylinderEvent, n_samples: int, seed: int,
                             cap: int = DEFAULT_CAP, min_ess: float = 100.0, workers: int = 1) -> EstimateWithError:
    """Two-point conditioning averaged over the shell ``radius - 1 < |x| <= radius``.

    Returns ``sum_x P(F, 0 <-> x) / sum_x tau_p(x)`` over the shell, a
    ``tau``-weighted mean of ``P(F | 0 <-> x)``.  Each complete cluster
    contributes with weight ``|C(0) ∩ shell|``, so no proposal is wasted;
    the point version needs about ``1 / tau_p(x)`` proposals per accepted
    sample.  Shell counts use the size-cap escalation of the ball-volume
    estimator.  Ratio-estimator stderr as in :func:`estimate_size_biased`.
    """
    if not radius - 1.0 > event.m:
        raise ValueError("the shell must lie outside the event radius m")
    model = as_model(kernel, p, workers)
    req = BatchRequest(event=event if event.edges else None, radii=(float(radius) - 1.0, float(radius)))

    def stat(b):
        w = (b.ball[:, 1] - b.ball[:, 0]).astype(float)
        return np.column_stack([w, w * _event_value(event, b.events)])

    _, vals, elog = run_escalated(model, seed, n_samples, req, stat, cap)
    w = vals[:, 0]
    f = np.divide(vals[:, 1], w, out=np.zeros_like(w), where=w > 0)
    sw = math.fsum(w.tolist())
    if sw <= 0:
        raise EstimatorError("no cluster reached the shell")
    ess = sw * sw / math.fsum((w * w).tolist())
    if ess < min_ess:
        raise EstimatorError(f"effective sample size {ess:.1f} < {min_ess}: increase n")
    R = math.fsum((w * f).tolist()) / sw
    n = len(w)
    se = math.sqrt(n / (n - 1) * math.fsum((w * w * (f - R) ** 2).tolist())) / sw
    meta = {"scheme": "two-point-shell", "radius": radius, "p": p, "event": event.name, "ess": ess,
            "hit_rate": float(np.mean(w > 0)), "escalation": elog.as_dict()}
    return EstimateWithError.from_value(R, se, n, seed, meta)


def estimate_one_arm_conditioned(kernel, p, r: float, event: CylinderEvent, n_accepted: int, seed: int,
                                 floor: float = ACCEPTANCE_FLOOR, max_proposals: int | None = None,
                                 chunk: int = 4096, workers: int = 1) -> EstimateWithError:
    """``P(F | 0 <-> Q_r^c)`` by rejection on the exit of ``Q_r`` (the boundary, on graphs)."""
    model = as_model(kernel, p, workers)
    if isinstance(model, LatticeModel) and not r > event.m and event.edges:
        raise ValueError("r must exceed the event radius m")
    req = BatchRequest(exit_radius=r, event=event if event.edges else None)
    acc = _rejection(model, seed, req, lambda b: b.exited, event, n_accepted, floor, max_proposals,
                     chunk, False, 0)
    return _conditional_estimate(acc, seed, {"scheme": "one-arm", "r": r, "p": p, "event": event.name})


def estimate_size_biased(kernel, p, event: CylinderEvent, n_samples: int, seed: int, cap: int = DEFAULT_CAP,
                         min_ess: float = 100.0, workers: int = 1, radii=()) -> EstimateWithError:
    """Susceptibility measure ``Q_p(F) = E[1_F |C(0)|] / E|C(0)|``.

    Clusters are explored completely (cap escalation until none is capped).
    Ratio-estimator stderr; fails when the effective sample size of the
    weights drops below ``min_ess``.
    """
    model = as_model(kernel, p, workers)
    req = BatchRequest(event=event if event.edges else None, radii=tuple(radii))
    batch, _, elog = _complete_clusters(model, seed, n_samples, req, cap)
    w = batch.size.astype(float)
    f = _event_value(event, batch.events).astype(float)
    sw = math.fsum(w.tolist())
    ess = sw * sw / math.fsum((w * w).tolist())
    if ess < min_ess:
        raise EstimatorError(f"effective sample size {ess:.1f} < {min_ess}: increase n or lower p")
    R = math.fsum((w * f).tolist()) / sw
    n = len(w)
    se = math.sqrt(n / (n - 1) * math.fsum((w * w * (f - R) ** 2).tolist())) / sw if n > 1 else 0.0
    meta = {"scheme": "size-biased", "p": p, "event": event.name, "ess": ess, "mean_size": sw / n,
            "escalation": elog}
    return EstimateWithError.from_value(R, se, n, seed, meta)


def _complete_clusters(model: Model, seed: int, n: int, req: BatchRequest, cap: int, start: int = 0):
    """Explore full clusters, raising the cap on capped samples until none remain."""
    req.size_cap = cap
    batch = model.batch(seed, start, n, req)
    rows = np.flatnonzero(batch.capped)
    caps = [cap]
    for _ in range(MAX_ESCALATIONS + 2):
        if len(rows) == 0:
            return batch, None, {"caps": caps}
        cap *= 4
        caps.append(cap)
        req.size_cap = cap
        rerun = model.batch_indices(seed, start + rows, req)
        batch.replace_rows(rows, rerun)
        rows = rows[rerun.capped]
    raise BudgetExceeded(f"{len(rows)} clusters still exceed the size cap {cap}; p is too close to p_c",
                         partial={"caps": caps})


def size_biased_ball_volume(kernel, p, radii, n_samples: int, seed: int, cap: int = DEFAULT_CAP,
                            workers: int = 1):
    """``E[|C(0)| |Q_r ∩ C(0)|] / E|C(0)|`` for each radius (IIC ball volume proxy)."""
    from percolab.estimate import CurvePoint
    model = as_model(kernel, p, workers)
    radii = [float(r) for r in radii]
    batch, _, elog = _complete_clusters(model, seed, n_samples, BatchRequest(radii=tuple(radii)), cap)
    w = batch.size.astype(float)
    sw = math.fsum(w.tolist())
    n = len(w)
    out = []
    for j, r in enumerate(radii):
        f = batch.ball[:, j].astype(float)
        R = math.fsum((w * f).tolist()) / sw
        se = math.sqrt(n / (n - 1) * math.fsum((w * w * (f - R) ** 2).tolist())) / sw
        meta = {"observable": "iic-ball-volume", "r": r, "p": p, "ess": sw * sw / math.fsum((w * w).tolist())}
        out.append(CurvePoint(r, EstimateWithError.from_value(R, se, n, seed, meta)))
    return out


# ---------------------------------------------------------------------- #
# agreement report

@dataclass
class SchemeRow:
    scheme: str
    scale: object
    estimate: EstimateWithError


@dataclass
class AgreementReport:
    rows: list
    terminal: dict
    drift: dict
    pairwise: dict
    agree: bool
    drift_ok: bool

    def as_dict(self) -> dict:
        return {
            "rows": [{"scheme": r.scheme, "scale": r.scale, **r.estimate.to_dict()} for r in self.rows],
            "terminal": {k: v.to_dict() for k, v in self.terminal.items()},
            "drift": self.drift, "pairwise": self.pairwise, "agree": self.agree, "drift_ok": self.drift_ok,
        }

    def table(self) -> list:
        return [(r.scheme, r.scale, r.estimate.value, r.estimate.stderr, r.estimate.n_samples) for r in self.rows]


def _drift(points: list[EstimateWithError]) -> dict:
    if len(points) < 2:
        return {"slope": 0.0, "slope_stderr": math.inf, "last_step": 0.0, "last_step_sigma": math.inf}
    y = np.array([e.value for e in points])
    s = np.array([max(e.stderr, 1e-12) for e in points])
    t = np.arange(len(points), dtype=float)
    w = 1 / s ** 2
    tm = np.sum(w * t) / np.sum(w)
    den = np.sum(w * (t - tm) ** 2)
    slope = float(np.sum(w * (t - tm) * (y - np.sum(w * y) / np.sum(w))) / den)
    step = float(y[-1] - y[-2])
    sig = float(math.hypot(points[-1].stderr, points[-2].stderr))
    return {"slope": slope, "slope_stderr": float(1 / math.sqrt(den)), "last_step": step, "last_step_sigma": sig}


def scheme_agreement(kernel, pc_hat, event: CylinderEvent, scales: dict, budget: int, seed: int,
                     pc_stderr: float = 0.0, floor: float = ACCEPTANCE_FLOOR, workers: int = 1,
                     max_proposals: int | None = None, size_biased_n: int | None = None) -> AgreementReport:
    """Run all three schemes over their scales and compare the terminal estimates.

    ``scales`` holds ``x_list`` (points, increasing norm), ``p_list``
    (increasing, clipped to ``pc_hat - 2 pc_stderr``) and ``r_list``.
    ``shell_list`` (increasing radii) may replace ``x_list``; the two-point
    scheme is then the shell average of :func:`estimate_two_point_shell`.
    ``budget`` is the number of accepted samples per conditioned estimate
    (and of samples per size-biased or shell estimate unless ``size_biased_n``).

    Agreement is measured, not certified: for long-range kernels the limits
    the schemes approximate rest on unproven two-point and one-arm
    assumptions, and a finite-scale match does not establish them.
    """
    if isinstance(pc_hat, EstimateWithError):
        pc_stderr = pc_hat.stderr
        pc_hat = pc_hat.value
    x_list = [_label(x) for x in scales.get("x_list", [])]
    p_list = [float(p) for p in scales.get("p_list", [])]
    r_list = [float(r) for r in scales.get("r_list", [])]
    shell_list = [float(r) for r in scales.get("shell_list", [])]
    if x_list and shell_list:
        raise ValueError("give x_list or shell_list, not both")
    if any(b < a for a, b in zip(shell_list, shell_list[1:])):
        raise ValueError("shell_list must be increasing")
    if any(_radius(b) < _radius(a) for a, b in zip(x_list, x_list[1:])):
        raise ValueError("x_list must be ordered by increasing norm")
    if any(b < a for a, b in zip(p_list, p_list[1:])) or any(b < a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("p_list and r_list must be increasing")
    p_cap = pc_hat - 2.0 * pc_stderr
    p_list = [min(p, p_cap) for p in p_list]
    rows = []
    per = {"two-point": [], "size-biased": [], "one-arm": []}

    def run(scheme, scale, fn):
        try:
            est = fn()
        except Exception as exc:  # keep context for the caller
            raise type(exc)(f"{scheme} at scale {scale}: {exc}") from exc
        rows.append(SchemeRow(scheme, scale, est))
        per[scheme].append(est)

    for x in x_list:
        run("two-point", list(x) if isinstance(x, tuple) else x, lambda x=x: estimate_two_point_conditioned(
            kernel, pc_hat, x, event, budget, seed, floor, max_proposals, workers=workers))
    for r in shell_list:
        run("two-point", r, lambda r=r: estimate_two_point_shell(kernel, pc_hat, r, event, size_biased_n or budget,
                                                                 seed, workers=workers))
    for p in p_list:
        run("size-biased", p, lambda p=p: estimate_size_biased(kernel, p, event, size_biased_n or budget, seed,
                                                               workers=workers))
    for r in r_list:
        run("one-arm", r, lambda r=r: estimate_one_arm_conditioned(kernel, pc_hat, r, event, budget, seed, floor,
                                                                   max_proposals, workers=workers))
    terminal = {k: v[-1] for k, v in per.items() if v}
    pairwise = {}
    agree = True
    keys = list(terminal)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            a, b = terminal[keys[i]], terminal[keys[j]]
            sig = math.hypot(a.stderr, b.stderr)
            ok = abs(a.value - b.value) <= 3.0 * sig + 1e-12
            pairwise[f"{keys[i]}|{keys[j]}"] = {"diff": a.value - b.value, "sigma": sig, "within_3sigma": ok}
            agree &= ok
    drift = {k: _drift(v) for k, v in per.items() if v}
    drift_ok = all(abs(v["last_step"]) < 2.0 * v["last_step_sigma"] + 1e-12 for v in drift.values())
    return AgreementReport(rows, terminal, drift, pairwise, agree, drift_ok)
