"""Monte Carlo estimators for one-arm, ball-volume and cluster-size observables.

Every estimator takes either ``(kernel, p)`` or a ready :class:`Model` (a
lattice or an explicit oracle graph) and a master seed; sample ``i`` always
uses stream index ``i``, so results do not depend on how the work is split.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from percolab.errors import BudgetExceeded, EstimatorError
from percolab.estimate import CurvePoint, EstimateWithError
from percolab.kernel import Family, KernelSpec, long_edge_rate, truncation_tail_constant
from percolab.percolation import BatchRequest, LatticeModel, Model, PcSearchResult, SampleBatch

log = logging.getLogger(__name__)

DEFAULT_CAP = 1 << 14
MAX_ESCALATIONS = 4


def as_model(kernel, p=None, workers: int = 1, **kw) -> Model:
    if isinstance(kernel, Model):
        return kernel
    if p is None:
        raise ValueError("p is required with a kernel")
    return LatticeModel(kernel, p, workers=workers, **kw)


def _binomial(hits: np.ndarray, seed, meta) -> EstimateWithError:
    n = len(hits)
    k = int(np.count_nonzero(hits))
    q = k / n
    se = math.sqrt(q * (1.0 - q) / n)
    return EstimateWithError(q, se, n, seed, dict(meta), float(k), float(k))


# ---------------------------------------------------------------------- #
# one arm

def one_arm_probability(kernel, p, r: float, n_samples: int, seed: int, workers: int = 1) -> EstimateWithError:
    """``P(0 <-> Q_r^c)`` from explorations stopped at the first exit of ``Q_r``."""
    if not r >= 1:
        raise ValueError("r must be >= 1")
    model = as_model(kernel, p, workers)
    b = model.batch(seed, 0, n_samples, BatchRequest(exit_radius=r))
    return _binomial(b.exited, seed, {"observable": "one-arm", "r": r, "p": p})


def one_arm_curve(kernel, p, radii, n_samples: int, seed: int, workers: int = 1) -> list[CurvePoint]:
    """One-arm probabilities for several radii from one exploration per sample.

    Each sample is explored until it leaves ``Q_{max r}`` (or dies out);
    its exit status for a smaller radius is read off the largest distance
    reached before stopping, which is exact.  Points share samples, so the
    curve is monotone by construction.
    """
    radii = sorted(float(r) for r in radii)
    model = as_model(kernel, p, workers)
    b = model.batch(seed, 0, n_samples, BatchRequest(exit_radius=radii[-1]))
    meta = {"observable": "one-arm", "p": p, "shared_samples": True}
    return [CurvePoint(r, _binomial(b.exited_radius(r), seed, {**meta, "r": r})) for r in radii]


# ---------------------------------------------------------------------- #
# size-capped observables with escalation

@dataclass
class EscalationLog:
    caps: list = field(default_factory=list)
    rerun: list = field(default_factory=list)
    delta: list = field(default_factory=list)

    def as_dict(self):
        return {"caps": self.caps, "rerun": self.rerun, "delta": self.delta}


def run_escalated(model: Model, seed: int, n: int, req: BatchRequest, stat, cap: int = DEFAULT_CAP,
                  max_escalations: int = MAX_ESCALATIONS, rel: float = 0.1, start: int = 0):
    """Run ``n`` samples under a size cap, doubling the cap on capped samples.

    ``stat(batch)`` maps a batch to per-sample values (n, k).  After each
    escalation the mean increase of every column must be at most ``rel``
    times its standard error; otherwise the cap doubles again, and after
    ``max_escalations`` rounds the run fails.  Samples are indexed from
    ``start``.
    """
    req.size_cap = int(cap)
    batch = model.batch(seed, start, n, req)
    vals = np.atleast_2d(np.asarray(stat(batch), dtype=float).T).T
    elog = EscalationLog([int(cap)])
    rows = np.flatnonzero(batch.capped)
    if len(rows) == 0:
        return batch, vals, elog
    for _ in range(max_escalations):
        cap *= 2
        req.size_cap = int(cap)
        rerun = model.batch_indices(seed, start + rows, req)
        new = np.atleast_2d(np.asarray(stat(rerun), dtype=float).T).T
        delta = (new - vals[rows]).sum(axis=0) / n
        batch.replace_rows(rows, rerun)
        vals[rows] = new
        se = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(vals.shape[1])
        elog.caps.append(int(cap))
        elog.rerun.append(int(len(rows)))
        elog.delta.append(delta.tolist())
        log.info("cap escalation to %d on %d samples, mean shift %s", cap, len(rows), delta)
        rows = rows[rerun.capped]
        if len(rows) == 0 or np.all(delta <= rel * se):
            return batch, vals, elog
    raise BudgetExceeded(f"size cap escalation limit reached at cap {cap} ({len(rows)} samples still capped)",
                         partial={"escalation": elog.as_dict()})


def expected_ball_volume(kernel, p, r: float, n_samples: int, seed: int, cap: int = DEFAULT_CAP,
                         workers: int = 1) -> EstimateWithError:
    """``E|Q_r ∩ C(0)|`` with automatic size-cap escalation."""
    return ball_volume_curve(kernel, p, [r], n_samples, seed, cap, workers)[0].estimate


def ball_volume_curve(kernel, p, radii, n_samples: int, seed: int, cap: int = DEFAULT_CAP,
                      workers: int = 1) -> list[CurvePoint]:
    if min(radii) < 0:
        raise ValueError("radii must be nonnegative")
    model = as_model(kernel, p, workers)
    radii = [float(r) for r in radii]
    req = BatchRequest(radii=tuple(radii))
    batch, vals, elog = run_escalated(model, seed, n_samples, req, lambda b: b.ball, cap)
    out = []
    for j, r in enumerate(radii):
        meta = {"observable": "ball-volume", "r": r, "p": p, "escalation": elog.as_dict()}
        out.append(CurvePoint(max(r, 1e-300), EstimateWithError.from_samples(vals[:, j], seed, meta)))
    return out


def susceptibility(kernel, p, n_samples: int, seed: int, cap: int = DEFAULT_CAP, workers: int = 1,
                   start: int = 0) -> EstimateWithError:
    """``chi(p) = E|C(0)|`` from complete clusters (size cap escalated on demand)."""
    model = as_model(kernel, p, workers)
    _, vals, elog = run_escalated(model, seed, n_samples, BatchRequest(), lambda b: b.size, cap, start=start)
    return EstimateWithError.from_samples(vals[:, 0], seed, {"observable": "susceptibility", "p": p,
                                                             "escalation": elog.as_dict()})


def estimate_pc_susceptibility(kernel, p_grid, n_samples: int, seed: int = 0, cap: int = DEFAULT_CAP,
                               workers: int = 1, n_boot: int = 2000) -> PcSearchResult:
    """Locate ``p_c`` by extrapolating ``1/chi(p)`` linearly to zero.

    ``p_grid`` must lie below ``p_c``; near it ``1/chi`` vanishes linearly
    in mean-field models.  The line is a weighted fit of ``1/chi`` on ``p``
    (weights from the delta-method errors) and the standard error comes
    from a Gaussian bootstrap of the points.  All grid points share sample
    indices.
    """
    grid = sorted(float(p) for p in p_grid)
    if len(grid) < 2:
        raise ValueError("need at least two p values")
    if grid[0] <= 0:
        raise ValueError("p values must be positive")
    history = []
    y, se = [], []
    for p in grid:
        chi = susceptibility(kernel, p, n_samples, seed, cap, workers)
        y.append(1.0 / chi.value)
        se.append(chi.stderr / chi.value ** 2)
        history.append({"p": p, "chi": chi.value, "stderr_chi": chi.stderr})
    x, y, se = np.array(grid), np.array(y), np.array(se)
    if np.any(se <= 0):
        raise EstimatorError("degenerate susceptibility estimate (zero variance)")
    w = 1.0 / se ** 2

    def root(yy):
        xm = np.sum(w * x) / np.sum(w)
        ym = yy @ w / np.sum(w)
        slope = ((yy - ym[..., None]) * (w * (x - xm))).sum(axis=-1) / np.sum(w * (x - xm) ** 2)
        return xm - ym / slope, slope

    p_hat, slope = root(y[None, :])
    if not slope[0] < 0:
        raise EstimatorError("1/chi does not decrease over p_grid; move the grid below p_c")
    rng = np.random.default_rng([seed, 11])
    boot, bs = root(y + se * rng.standard_normal((n_boot, len(y))))
    boot = boot[bs < 0]
    err = float(np.std(boot, ddof=1))
    fit = y - (float(slope[0]) * (x - float(p_hat[0])))
    resid = float(np.max(np.abs(fit / se)))
    if resid > 3.0:
        log.warning("1/chi is not linear over p_grid (max standardised residual %.3g); "
                    "the extrapolation is biased", resid)
    meta = {"method": "susceptibility", "p_grid": grid, "slope": float(slope[0]), "max_std_residual": resid}
    est = EstimateWithError.from_value(float(p_hat[0]), err, n_samples, seed, meta=meta)
    return PcSearchResult(est, len(grid), n_samples * len(grid), history)


def cluster_size_tail(kernel, p, s_grid, n_samples: int, seed: int, workers: int = 1) -> list[CurvePoint]:
    """``P(|C(0)| >= s)`` for each ``s``, from one exploration per sample capped at ``max(s)``."""
    s_grid = [int(s) for s in s_grid]
    if any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise ValueError("s_grid must be increasing")
    model = as_model(kernel, p, workers)
    b = model.batch(seed, 0, n_samples, BatchRequest(size_cap=max(s_grid)))
    meta = {"observable": "size-tail", "p": p, "shared_samples": True}
    return [CurvePoint(s, _binomial(b.size >= s, seed, {**meta, "s": s})) for s in s_grid]


def onearm_second_moment_bound(kernel, p, r: float, n_factor: float, n_samples: int, seed: int,
                               cap: int = DEFAULT_CAP, workers: int = 1) -> EstimateWithError:
    """Second-moment lower bound ``E[N]^2 / E[N^2]`` on ``P(0 <-> Q_r^c)``.

    ``N = |(Q_{n r} \\ Q_r) ∩ C(0)|``; ``N > 0`` implies the one-arm event,
    so Cauchy-Schwarz gives the bound.  Stderr by the delta method on the
    joint sample means of ``N`` and ``N^2``.
    """
    if not n_factor > 1:
        raise ValueError("n_factor must exceed 1")
    model = as_model(kernel, p, workers)
    req = BatchRequest(radii=(float(r), float(n_factor * r)))
    _, vals, elog = run_escalated(model, seed, n_samples, req, lambda b: b.ball, cap)
    N = vals[:, 1] - vals[:, 0]
    return _moment_ratio(N, seed, {"observable": "second-moment", "r": r, "n_factor": n_factor, "p": p,
                                   "escalation": elog.as_dict()})


def _moment_ratio(N: np.ndarray, seed, meta) -> EstimateWithError:
    n = len(N)
    m1 = float(np.mean(N))
    N2 = N * N
    m2 = float(np.mean(N2))
    se2 = float(np.std(N2, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if m2 <= 0.0 or (se2 > 0 and m2 <= 2.0 * se2):
        raise EstimatorError("E[N^2] is consistent with zero; the second-moment ratio is undefined")
    ratio = m1 * m1 / m2
    if n > 1:
        cov = np.cov(np.stack([N, N2]), ddof=1) / n
        g = np.array([2.0 * m1 / m2, -m1 * m1 / (m2 * m2)])
        se = math.sqrt(max(float(g @ cov @ g), 0.0))
    else:
        se = 0.0
    return EstimateWithError.from_value(ratio, se, n, seed, {**meta, "E[N]": m1, "E[N^2]": m2})


# ---------------------------------------------------------------------- #
# long-edge mechanism

@dataclass
class LongEdgeReport:
    r: float
    k: int
    size_tail: EstimateWithError
    long_given_size: EstimateWithError | None
    combined: EstimateWithError
    mechanism_bound: float
    long_edge_exact_origin: float
    direct: EstimateWithError | None = None

    def as_dict(self) -> dict:
        return {"r": self.r, "k": self.k, "size_tail": self.size_tail.to_dict(),
                "long_given_size": None if self.long_given_size is None else self.long_given_size.to_dict(),
                "combined": self.combined.to_dict(), "mechanism_bound": self.mechanism_bound,
                "long_edge_exact_origin": self.long_edge_exact_origin,
                "direct": None if self.direct is None else self.direct.to_dict()}


def long_edge_decomposition(kernel: KernelSpec, p: float, r: float, k: int, n_samples: int, seed: int,
                            direct: bool = False, zeta_radii=None, workers: int = 1) -> LongEdgeReport:
    """Truncated-cluster size tail times long-edge attachment.

    Explores ``C_r(0)`` (edges of length at most ``r``) completely and flags
    samples in which some open edge longer than ``2r`` leaves it.  Since the
    flagged event implies ``0 <-> Q_r^c``, ``combined`` is a lower bound on
    the one-arm probability.  ``mechanism_bound`` replaces the attachment
    frequency by ``1 - exp(-k Lambda / 2)`` with ``Lambda`` the total rate of
    edges longer than ``2r`` at a vertex, which is rigorous because long
    edges are independent of ``C_r(0)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if kernel.family is Family.LONG_RANGE:
        radii = zeta_radii or [r, 2 * r, 4 * r]
        zeta = truncation_tail_constant(kernel, radii)
        if zeta > 0 and not k < (2 * r) ** kernel.alpha / zeta:
            raise ValueError(f"k = {k} outside the admissible range k < (2r)^alpha / zeta = "
                             f"{(2 * r) ** kernel.alpha / zeta:.3g}")
    trunc = r if r < kernel.max_displacement else None
    model = LatticeModel(kernel, p, truncation=trunc, workers=workers)
    b = model.batch(seed, 0, n_samples, BatchRequest(long_radius=2 * r))
    big = b.size >= k
    meta = {"observable": "long-edge", "r": r, "k": k, "p": p}
    size_tail = _binomial(big, seed, {**meta, "term": "size-tail"})
    cond = _binomial(b.long_edge[big], seed, {**meta, "term": "long|size"}) if big.any() else None
    combined = _binomial(big & b.long_edge, seed, {**meta, "term": "combined"})
    lam = long_edge_rate(kernel, p, 2 * r)
    mech = size_tail.value * (1.0 - math.exp(-k * lam / 2.0))
    rep = LongEdgeReport(r, k, size_tail, cond, combined, mech, 1.0 - math.exp(-lam))
    if direct:
        rep.direct = one_arm_probability(kernel, p, r, n_samples, seed, workers)
    return rep


def batch_summary(b: SampleBatch) -> dict:
    return {"n": b.n, "mean_size": float(b.size.mean()) if b.n else 0.0, "capped": int(b.capped.sum())}
