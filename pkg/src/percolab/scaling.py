"""Power-law fits with bootstrap intervals, and the exponent report."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from percolab.estimate import CurvePoint
from percolab.kernel import KernelSpec

log = logging.getLogger(__name__)

N_BOOT = 2000
CURVATURE_FLAG = 3.0


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    ci_low: float
    ci_high: float
    window: tuple
    n_boot: int
    residual_diagnostic: float
    slope_stderr: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.ci_low <= self.exponent <= self.ci_high:
            raise ValueError("confidence interval must contain the exponent")
        if not self.window[0] < self.window[1]:
            raise ValueError("empty fitting window")

    @property
    def curved(self) -> bool:
        return self.residual_diagnostic > CURVATURE_FLAG

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "window": list(self.window), "n_boot": self.n_boot,
                "residual_diagnostic": self.residual_diagnostic, "slope_stderr": self.slope_stderr,
                "amplitude": self.amplitude, "curved": self.curved}


def _wls(x, y, w):
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum(axis=-1) / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym[..., None])).sum(axis=-1) / sxx
    return slope, ym - slope * xm, sxx


def fit_power_law(points, n_boot: int = N_BOOT, seed: int = 0) -> ScalingFit:
    """Weighted least squares of ``log value`` on ``log abscissa``.

    Weights are inverse squared relative standard errors.  The 95%
    interval comes from refitting ``n_boot`` Gaussian perturbations of the
    points (in log space, with the relative errors as widths).  The
    residual diagnostic is the largest absolute standardised residual.
    """
    pts = list(points)
    if len(pts) < 4:
        raise ValueError("need at least 4 points")
    a = np.array([p.abscissa for p in pts], dtype=float)
    v = np.array([p.value for p in pts], dtype=float)
    se = np.array([p.stderr for p in pts], dtype=float)
    if np.any(v <= 0):
        raise ValueError("power-law fit needs positive estimates")
    if np.any(se < 0):
        raise ValueError("negative stderr")
    exact = np.all(se == 0)
    if not exact and np.any(se == 0):
        raise ValueError("stderr must be positive for every point (or zero for all)")
    x = np.log(a)
    y = np.log(v)
    rel = np.ones_like(v) if exact else se / v
    w = 1.0 / rel ** 2
    slope, icpt, sxx = _wls(x, y, w)
    resid = (y - icpt - slope * x) / rel
    if exact:
        scale = math.sqrt(float(np.sum(resid ** 2)) / max(len(x) - 2, 1))
        diag = float(np.max(np.abs(resid))) / scale if scale > 1e-12 else 0.0
        return ScalingFit(float(slope), float(slope), float(slope), (float(a.min()), float(a.max())),
                          0, diag, 0.0, float(math.exp(icpt)))
    rng = np.random.default_rng([seed, 3])
    yb = y + rel * rng.standard_normal((n_boot, len(y)))
    bs, _, _ = _wls(x, yb, w)
    lo, hi = np.percentile(bs, [2.5, 97.5])
    lo, hi = min(float(lo), float(slope)), max(float(hi), float(slope))
    return ScalingFit(float(slope), lo, hi, (float(a.min()), float(a.max())), n_boot,
                      float(np.max(np.abs(resid))), float(1.0 / math.sqrt(sxx)), float(math.exp(icpt)))


# ---------------------------------------------------------------------- #
# report

@dataclass
class ExponentCheck:
    name: str
    fit: ScalingFit | None
    target: float
    tolerance: float
    one_sided: bool
    passed: bool
    note: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "fit": None if self.fit is None else self.fit.as_dict(),
                "target": self.target, "tolerance": self.tolerance, "one_sided": self.one_sided,
                "passed": self.passed, "note": self.note}


@dataclass
class ExponentReport:
    kernel: dict
    p: float
    checks: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def as_dict(self) -> dict:
        return {"kernel": self.kernel, "p": self.p, "flags": self.flags, "passed": self.passed,
                "checks": {k: c.as_dict() for k, c in self.checks.items()},
                "curves": {k: [[c.abscissa, c.value, c.stderr, c.estimate.n_samples] for c in v]
                           for k, v in self.curves.items()}}


def check_slope(name, points, target, tol, one_sided=False, note="", seed=0) -> ExponentCheck:
    """Fit and compare: two-sided ``|slope - target| <= tol`` without curvature, or a floor."""
    fit = fit_power_law(points, seed=seed)
    if one_sided:
        ok = fit.exponent >= target - tol
    else:
        ok = abs(fit.exponent - target) <= tol and not fit.curved
    return ExponentCheck(name, fit, target, tol, one_sided, bool(ok), note)


DEFAULT_GRIDS = {
    "one_arm": (8, 16, 32, 64, 128),
    "ball_volume": (8, 16, 32, 64, 128),
    "size_tail": tuple(2 ** j for j in range(4, 13)),
    "iic_volume": (8, 16, 32, 64),
    "backbone": (4, 8, 16, 32),
}

TOLERANCES = {"one_arm": 0.10, "ball_volume": 0.15, "size_tail": 0.10, "iic_volume": 0.25, "backbone": 0.20}


def exponent_report(kernel: KernelSpec, pc_hat: float, budget, seed: int, pc_stderr: float = 0.0,
                    observables=None, grids: dict | None = None, R_factor: float = 4.0,
                    workers: int = 1) -> ExponentReport:
    """Run the observable grid at ``pc_hat`` and compare fitted slopes with their predictions.

    ``budget`` is the number of samples per curve (accepted samples for the
    backbone curve), either one integer or a dict keyed by observable.
    """
    from percolab import backbone, iic, observables as obs

    a = kernel.spread_exponent
    grids = {**DEFAULT_GRIDS, **(grids or {})}
    wanted = list(observables or DEFAULT_GRIDS)
    n_for = (lambda k: int(budget[k])) if isinstance(budget, dict) else (lambda k: int(budget))
    rep = ExponentReport(kernel.describe(), float(pc_hat))
    if not kernel.d > 3 * a:
        msg = f"d = {kernel.d} is not above 3(2 ∧ alpha) = {3 * a:g}; the predictions need not apply"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        rep.flags.append(msg)
    if "one_arm" in wanted:
        c = obs.one_arm_curve(kernel, pc_hat, grids["one_arm"], n_for("one_arm"), seed, workers)
        rep.curves["one_arm"] = c
        target = -min(4.0, kernel.alpha if kernel.alpha else math.inf) / 2.0
        if all(pt.value >= 1.0 for pt in c):
            rep.flags.append("non-critical input: every cluster reaches the largest radius")
            rep.checks["one_arm"] = ExponentCheck("one_arm", None, target, TOLERANCES["one_arm"], True, False,
                                                  "no decay")
        else:
            rep.checks["one_arm"] = check_slope("one_arm", c, target, TOLERANCES["one_arm"], True,
                                                f"floor; conjectured slope -1/rho = {target:g}", seed)
    if "ball_volume" in wanted:
        c = obs.ball_volume_curve(kernel, pc_hat, grids["ball_volume"], n_for("ball_volume"), seed,
                                  workers=workers)
        rep.curves["ball_volume"] = c
        rep.checks["ball_volume"] = check_slope("ball_volume", c, a, TOLERANCES["ball_volume"], seed=seed)
    if "size_tail" in wanted:
        c = obs.cluster_size_tail(kernel, pc_hat, grids["size_tail"], n_for("size_tail"), seed, workers)
        rep.curves["size_tail"] = c
        rep.checks["size_tail"] = check_slope("size_tail", c, -0.5, TOLERANCES["size_tail"], seed=seed)
    if "iic_volume" in wanted:
        rel = pc_stderr / pc_hat if pc_hat > 0 else 0.0
        p_sub = pc_hat * (1.0 - 2.0 * rel)
        c = iic.size_biased_ball_volume(kernel, p_sub, grids["iic_volume"], n_for("iic_volume"), seed,
                                        workers=workers)
        rep.curves["iic_volume"] = c
        rep.checks["iic_volume"] = check_slope("iic_volume", c, 2 * a, TOLERANCES["iic_volume"],
                                               note=f"size-biased at p = {p_sub:.6g}", seed=seed)
    if "backbone" in wanted:
        c = backbone.backbone_count_curve(kernel, pc_hat, grids["backbone"], R_factor, n_for("backbone"), seed,
                                          workers=workers)
        rep.curves["backbone"] = c
        chk = check_slope("backbone", c, a, TOLERANCES["backbone"], seed=seed)
        if not c[0].estimate.meta.get("valid", True):
            chk.passed = False
            chk.note = "undecided-edge rate above 0.1%"
        rep.checks["backbone"] = chk
    return rep


def curve_from_rows(rows) -> list[CurvePoint]:
    """Rows of (abscissa, value, stderr, n_samples) to curve points."""
    from percolab.estimate import EstimateWithError
    return [CurvePoint(float(a), EstimateWithError.from_value(float(v), float(s), int(n)))
            for a, v, s, n in rows]
