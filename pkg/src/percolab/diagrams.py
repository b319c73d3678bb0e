"""Fourier-space diagram numerics under the random-walk proxy.

The two-point function is replaced by its dominating form
``C_lambda^(k) = 1 / (1 - lambda D^(k))``.  Integrals over the torus
``(-pi, pi]^d`` (normalised by ``(2 pi)^d``) are estimated by Monte Carlo
with dyadic radial strata around ``k = 0``, the only place the integrands
can be large.  Dense tensor-grid quadrature in d = 1, 2 serves as the
reference.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from percolab.estimate import EstimateWithError
from percolab.kernel import KernelSpec, fourier_d

N_STRATA = 20


@dataclass(frozen=True, eq=False)
class ProxyGreen:
    kernel: KernelSpec
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")

    def dhat(self, k) -> np.ndarray:
        return np.asarray(fourier_d(self.kernel, np.atleast_2d(k)))

    def chat(self, k, dhat=None) -> np.ndarray:
        if dhat is None:
            dhat = self.dhat(k)
        return 1.0 / (1.0 - self.lam * dhat)

    @property
    def d(self) -> int:
        return self.kernel.d


@dataclass(frozen=True)
class SmoothingKernel:
    """``g_r`` (upper smoothing) or ``h_r`` (lower smoothing) in dimension d.

    Both are multiples of ``p * p`` with ``p`` uniform on a sup-norm box:
    side ``2 floor(r) + 1`` for ``g_r`` and ``2 q + 1``,
    ``q = floor(r / (2 sqrt d))``, for ``h_r``.
    """

    variant: str
    r: float
    d: int

    def __post_init__(self):
        if self.variant not in ("g", "h"):
            raise ValueError("variant must be 'g' or 'h'")
        if self.variant == "h" and self.q < 1:
            raise ValueError("h_r needs r >= 2 sqrt(d) so that q >= 1")

    @property
    def q(self) -> int:
        return int(math.floor(self.r / (2.0 * math.sqrt(self.d))))

    @property
    def half_width(self) -> int:
        return int(math.floor(self.r)) if self.variant == "g" else self.q

    @property
    def prefactor(self) -> float:
        if self.variant == "g":
            return (2.0 * self.r + 1.0) ** self.d
        return self.r ** self.d / self.d ** (self.d / 2.0)

    def __call__(self, x) -> np.ndarray:
        """Real-space value at integer points (rows of ``x``)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = 2 * self.half_width + 1
        tri = np.clip(n - np.abs(x), 0.0, None) / (n * n)
        return self.prefactor * np.prod(tri, axis=1)

    def fourier(self, k) -> np.ndarray:
        k = np.atleast_2d(np.asarray(k, dtype=float))
        n = 2 * self.half_width + 1
        return self.prefactor * np.prod(_fejer(n, k), axis=1)

    def at_origin(self) -> float:
        return self.prefactor / (2 * self.half_width + 1) ** self.d


def _fejer(n: int, k: np.ndarray) -> np.ndarray:
    """``(sin(n k/2) / (n sin(k/2)))^2`` with the removable singularity filled."""
    s = np.sin(k / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.sin(n * k / 2.0) / (n * s)
    v = np.where(np.abs(s) < 1e-12, 1.0, v)
    return v * v


# ---------------------------------------------------------------------- #
# stratified Monte Carlo on the torus

def _ball_volume(d: int, rho: float) -> float:
    return math.pi ** (d / 2.0) * rho ** d / math.gamma(d / 2.0 + 1.0)


def _strata(d: int, n_strata: int):
    """(kind, a, b, volume) for the outer region, dyadic shells and the core ball."""
    out = [("outer", 1.0, math.inf, (2 * math.pi) ** d - _ball_volume(d, 1.0))]
    for j in range(1, n_strata + 1):
        a, b = 2.0 ** -j, 2.0 ** (-j + 1)
        out.append(("shell", a, b, _ball_volume(d, b) - _ball_volume(d, a)))
    a = 2.0 ** -n_strata
    out.append(("shell", 0.0, a, _ball_volume(d, a)))
    return out


def _sample(kind, a, b, d, n, rng) -> np.ndarray:
    if kind == "outer":
        pts = np.empty((0, d))
        while len(pts) < n:
            k = rng.uniform(-math.pi, math.pi, size=(2 * (n - len(pts)) + 8, d))
            pts = np.vstack([pts, k[np.sum(k * k, axis=1) >= 1.0]])
        return pts[:n]
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    u = rng.random(n)
    rho = (a ** d + u * (b ** d - a ** d)) ** (1.0 / d)
    return g * rho[:, None]


def stratified_integral(f, d: int, n: int, seed: int, n_strata: int = N_STRATA, allocation=None,
                        pilot: int = 64) -> EstimateWithError:
    """``int f(k) dk / (2 pi)^d`` over the torus by stratified Monte Carlo.

    Allocation is Neyman (proportional to volume times pilot standard
    deviation) unless ``allocation`` is given; the pilot samples only set
    the allocation.  Stratum ``j`` draws from its own stream, so two calls
    with the same allocation and seed see the same wave vectors.
    """
    strata = _strata(d, n_strata)
    norm = (2 * math.pi) ** d
    if allocation is None:
        w = []
        for j, (kind, a, b, vol) in enumerate(strata):
            rng = np.random.default_rng([seed, j, 1])
            v = f(_sample(kind, a, b, d, pilot, rng))
            w.append(vol * float(np.std(v)) + 1e-300 * vol)
        w = np.asarray(w)
        share = w / w.sum() if w.sum() > 0 else np.full(len(w), 1.0 / len(w))
        allocation = np.maximum(4, np.floor(share * n)).astype(int).tolist()
    total = 0.0
    var = 0.0
    used = 0
    for j, (kind, a, b, vol) in enumerate(strata):
        m = int(allocation[j])
        rng = np.random.default_rng([seed, j, 2])
        v = np.asarray(f(_sample(kind, a, b, d, m, rng)), dtype=float)
        total += vol * math.fsum(v.tolist()) / m
        var += vol * vol * float(np.var(v, ddof=1)) / m
        used += m
    value = total / norm
    se = math.sqrt(var) / norm
    return EstimateWithError.from_value(value, se, used, seed, {"allocation": list(map(int, allocation)),
                                                                "n_strata": n_strata})


def _axis_rule(n_panels: int, n_gl: int = 16, depth: int = 44):
    """Composite Gauss-Legendre nodes/weights on (-pi, pi).

    Panels are uniform away from 0 and dyadic towards it, so integrands
    with a ``|k|^a`` cusp at the origin are integrated to near machine
    precision.
    """
    cuts = {math.pi * i / n_panels for i in range(1, n_panels + 1)}
    top = math.pi / n_panels
    cuts |= {top * 2.0 ** -j for j in range(1, depth)}
    cuts = np.array(sorted(cuts | {0.0}))
    x, w = np.polynomial.legendre.leggauss(n_gl)
    a, b = cuts[:-1, None], cuts[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return np.concatenate([-nodes[::-1], nodes]), np.concatenate([weights[::-1], weights])


def quadrature_integral(f, d: int, n: int = 512, chunk: int = 1 << 20) -> float:
    """Deterministic reference for ``int f dk / (2 pi)^d`` in d = 1, 2.

    Tensor product of a composite Gauss-Legendre rule with ``n`` uniform
    panels per half axis plus dyadic refinement at 0.
    """
    nodes, weights = _axis_rule(n)
    m = len(nodes)
    parts = []
    if d == 1:
        for lo in range(0, m, chunk):
            parts.append(float(np.sum(weights[lo:lo + chunk] * f(nodes[lo:lo + chunk, None]))))
    elif d == 2:
        rows = max(1, chunk // m)
        for lo in range(0, m, rows):
            a = nodes[lo:lo + rows]
            k = np.stack(np.meshgrid(a, nodes, indexing="ij"), axis=-1).reshape(-1, 2)
            w = np.outer(weights[lo:lo + rows], weights).ravel()
            parts.append(float(np.sum(w * f(k))))
    else:
        raise ValueError("quadrature is only provided for d = 1, 2")
    return math.fsum(parts) / (2 * math.pi) ** d


def _regime_warning(proxy: ProxyGreen, power: int, meta: dict) -> None:
    a = proxy.kernel.spread_exponent
    if proxy.d <= power * a:
        msg = (f"d = {proxy.d} <= {power}(2 ∧ alpha) = {power * a:g}: the integral may diverge as lambda -> 1")
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        meta["regime_warning"] = msg


# ---------------------------------------------------------------------- #
# diagrams

# Control variates: D(0) = 0 gives int D^ dk = 0, so subtracting the linear
# term of the lambda expansion leaves the mean unchanged and removes the
# O(D^) fluctuation that dominates the variance when D^ is small.

def _integrand_triangle(proxy: ProxyGreen):
    def f(k):
        dh = proxy.dhat(k)
        return proxy.chat(k, dh) ** 3 - 3.0 * proxy.lam * dh
    return f


def _integrand_open(proxy: ProxyGreen, absolute=False):
    def f(k):
        dh = proxy.dhat(k)
        c = proxy.chat(k, dh)
        return np.abs(dh) * c ** 3 if absolute else dh * c ** 3 - dh
    return f


def triangle_estimate(proxy: ProxyGreen, n_k_samples: int, seed: int, allocation=None,
                      n_strata: int = N_STRATA) -> EstimateWithError:
    """Proxy triangle ``int C_lambda^(k)^3 dk / (2 pi)^d``.

    Sampled with the control variate ``3 lambda D^(k)``, whose integral is 0.
    """
    if proxy.lam == 0.0:
        return EstimateWithError.from_value(1.0, 0.0, 0, seed, {"diagram": "triangle", "lambda": 0.0})
    est = stratified_integral(_integrand_triangle(proxy), proxy.d, n_k_samples, seed, n_strata, allocation)
    meta = {**est.meta, "diagram": "triangle", "lambda": proxy.lam}
    _regime_warning(proxy, 3, meta)
    return EstimateWithError.from_value(est.value, est.stderr, est.n_samples, seed, meta)


def open_triangle_bound(proxy: ProxyGreen, n_k_samples: int, seed: int, allocation=None,
                        n_strata: int = N_STRATA) -> EstimateWithError:
    """``int D^(k) C_lambda^(k)^3 dk / (2 pi)^d``, the proxy open triangle at the origin.

    The metadata also carries ``abs_bound``, the integral of
    ``|D^| C_lambda^3``, which bounds the open triangle uniformly in x.
    The signed integral is sampled with the control variate ``D^(k)``,
    whose integral is 0.
    """
    d = proxy.d
    est = stratified_integral(_integrand_open(proxy), d, n_k_samples, seed, n_strata, allocation)
    ab = stratified_integral(_integrand_open(proxy, True), d, n_k_samples, seed, n_strata,
                             est.meta["allocation"])
    meta = {**est.meta, "diagram": "open-triangle", "lambda": proxy.lam, "abs_bound": ab.value,
            "abs_bound_stderr": ab.stderr}
    _regime_warning(proxy, 3, meta)
    return EstimateWithError.from_value(est.value, est.stderr, est.n_samples, seed, meta)


def proxy_volume_integral(proxy: ProxyGreen, sk: SmoothingKernel, n_k_samples: int, seed: int,
                          allocation=None, n_strata: int = N_STRATA) -> EstimateWithError:
    """``int C_lambda^(k) sk^(k) dk / (2 pi)^d = (C_lambda * sk)(0)``."""
    if sk.d != proxy.d:
        raise ValueError("dimension mismatch")
    if proxy.lam == 0.0:
        return EstimateWithError.from_value(sk.at_origin(), 0.0, 0, seed,
                                            {"diagram": "volume", "lambda": 0.0, "r": sk.r})
    f = lambda k: proxy.chat(k) * sk.fourier(k)  # noqa: E731
    est = stratified_integral(f, proxy.d, n_k_samples, seed, n_strata, allocation)
    meta = {**est.meta, "diagram": "volume", "variant": sk.variant, "lambda": proxy.lam, "r": sk.r}
    _regime_warning(proxy, 1, meta)
    return EstimateWithError.from_value(est.value, est.stderr, est.n_samples, seed, meta)


def lambda_schedule(kernel: KernelSpec, r: float) -> float:
    """``lambda(r) = 1 - r^{-(2 ∧ alpha)}``, a correlation length of order r."""
    return 1.0 - r ** (-kernel.spread_exponent)


def volume_doubling_ratio(kernel: KernelSpec, r: float, n_k_samples: int, seed: int, variant: str = "g"):
    """Ratio of proxy volume integrals at ``2r`` and ``r`` under the lambda schedule.

    Returns ``(ratio, stderr, target)`` with target ``2^(2 ∧ alpha)``.
    """
    ests = []
    for rr in (r, 2 * r):
        proxy = ProxyGreen(kernel, lambda_schedule(kernel, rr))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ests.append(proxy_volume_integral(proxy, SmoothingKernel(variant, rr, kernel.d), n_k_samples, seed))
    a, b = ests
    ratio = b.value / a.value
    se = ratio * math.hypot(a.stderr / a.value, b.stderr / b.value)
    return ratio, se, 2.0 ** kernel.spread_exponent


# ---------------------------------------------------------------------- #
# kernel bounds and smoothing-kernel checks

@dataclass
class DhatBoundReport:
    c1_hat: float
    c2_hat: float
    w_hat: float
    small_k_exponent: float
    expected_exponent: float
    witnesses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.c1_hat > 0 and self.c2_hat > 0 and math.isfinite(self.w_hat) and self.w_hat > 0

    def as_dict(self) -> dict:
        return {"c1_hat": self.c1_hat, "c2_hat": self.c2_hat, "w_hat": self.w_hat,
                "small_k_exponent": self.small_k_exponent, "expected_exponent": self.expected_exponent,
                "passed": self.passed, "witnesses": self.witnesses}


def _directions(d, n, rng):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    eye = np.eye(d)
    diag = np.full((1, d), 1.0 / math.sqrt(d))
    return np.vstack([eye, diag, g])


def dhat_bound_report(kernel: KernelSpec, n_k_samples: int, seed: int) -> DhatBoundReport:
    """Empirical constants for the lower and upper bounds on ``1 - D^(k)``.

    * ``c1_hat``: infimum of ``(1 - D^) / (L |k|)^(2 ∧ alpha)`` on ``||k||_inf <= 1/L``,
    * ``c2_hat``: infimum of ``1 - D^`` on ``||k||_inf > 1/L``,
    * ``w_hat``: supremum of ``(1 - D^) / |k|^(2 ∧ alpha)`` on ``|k| <= 0.1/L``.

    Radii are log-uniform down to ``1e-4 / L`` so the small-k regime is
    resolved; the fitted slope of ``log(1 - D^)`` against ``log |k|`` on
    ``|k| in [1e-4, 1e-2]`` along the first axis is reported as well.
    """
    rng = np.random.default_rng([seed, 7])
    d, L, a = kernel.d, kernel.L, kernel.spread_exponent
    n = max(16, n_k_samples // 3)
    # inner region: direction times a radius up to the cube face
    u = _directions(d, n, rng)
    reach = (1.0 / L) / np.max(np.abs(u), axis=1)
    rho = reach * np.exp(rng.uniform(math.log(1e-4), 0.0, len(u)))
    rho[: d + 1] = reach[: d + 1]
    kin = u * rho[:, None]
    one_m = 1.0 - fourier_d(kernel, kin)
    c1 = one_m / (L * rho) ** a
    i1 = int(np.argmin(c1))
    # outer region
    kout = rng.uniform(-math.pi, math.pi, size=(n, d))
    kout = kout[np.max(np.abs(kout), axis=1) > 1.0 / L]
    extra = np.vstack([np.full((1, d), math.pi), np.eye(d) * math.pi,
                       np.eye(d) * min(math.pi, 1.0 / L * (1 + 1e-9))])
    kout = np.vstack([extra, kout])
    om2 = 1.0 - fourier_d(kernel, kout)
    i2 = int(np.argmin(om2))
    # small-k upper constant
    v = _directions(d, n, rng)
    rs = (0.1 / L) * np.exp(rng.uniform(math.log(1e-4), 0.0, len(v)))
    ks = v * rs[:, None]
    w = (1.0 - fourier_d(kernel, ks)) / rs ** a
    i3 = int(np.argmax(w))
    grid = np.logspace(-4, -2, 9)
    kk = np.zeros((len(grid), d))
    kk[:, 0] = grid
    y = 1.0 - fourier_d(kernel, kk)
    slope = float(np.polyfit(np.log(grid), np.log(y), 1)[0]) if np.all(y > 0) else math.nan
    wit = {"c1_at": kin[i1].tolist(), "c2_at": kout[i2].tolist(), "w_at": ks[i3].tolist()}
    return DhatBoundReport(float(c1[i1]), float(om2[i2]), float(w[i3]), slope, a, wit)


@dataclass
class SmoothingCheck:
    variant: str
    r: float
    d: int
    criterion_i: bool
    criterion_ii: bool
    support_ok: bool
    value_at_origin: float
    worst_i: dict
    min_fourier: float

    @property
    def passed(self) -> bool:
        return self.criterion_i and self.criterion_ii and self.support_ok

    def as_dict(self) -> dict:
        return {"variant": self.variant, "r": self.r, "d": self.d, "criterion_i": self.criterion_i,
                "criterion_ii": self.criterion_ii, "support_ok": self.support_ok,
                "value_at_origin": self.value_at_origin, "worst_i": self.worst_i,
                "min_fourier": self.min_fourier, "passed": self.passed}


def smoothing_kernel_check(sk: SmoothingKernel, n_points: int, seed: int = 0) -> SmoothingCheck:
    """Check ``g_r >= 1`` (resp. ``h_r <= 1``) on ``Q_r``, nonnegativity of the transform, and support.

    Besides ``n_points`` random lattice points of ``Q_r`` the origin, the
    axis points at distance ``floor(r)`` and the largest diagonal point are
    always tested, since that is where the criteria are tight.
    """
    rng = np.random.default_rng([seed, 11])
    d, r = sk.d, sk.r
    m = int(math.floor(r))
    cand = rng.integers(-m, m + 1, size=(4 * n_points + 16, d))
    cand = cand[np.sum(cand * cand, axis=1) <= r * r][:n_points]
    special_pts = [np.zeros(d, dtype=int)]
    e = np.zeros(d, dtype=int)
    e[0] = m
    special_pts.append(e)
    t = int(math.floor(r / math.sqrt(d)))
    special_pts.append(np.full(d, t))
    pts = np.vstack([np.array(special_pts), cand]).astype(float)
    vals = sk(pts)
    if sk.variant == "g":
        bad = vals < 1.0 - 1e-12
        j = int(np.argmin(vals))
    else:
        bad = vals > 1.0 + 1e-12
        j = int(np.argmax(vals))
    worst = {"x": pts[j].astype(int).tolist(), "value": float(vals[j])}
    # h_r must vanish outside Q_r; g_r may not, so only h is checked there
    support_ok = True
    if sk.variant == "h":
        span = 2 * sk.q
        out = rng.integers(-span - 1, span + 2, size=(4 * n_points + 16, d)).astype(float)
        out = out[np.sum(out * out, axis=1) > r * r]
        support_ok = bool(np.all(sk(out) == 0.0)) if len(out) else True
    k = rng.uniform(-math.pi, math.pi, size=(n_points, d))
    fk = sk.fourier(k)
    return SmoothingCheck(sk.variant, r, d, not bool(bad.any()), bool(np.all(fk >= 0.0)), support_ok,
                          sk.at_origin(), worst, float(np.min(fk)))


def smoothing_origin_exact(sk: SmoothingKernel) -> float:
    """Closed form of the kernel at 0 (``h_r(0) = r^d / (d^{d/2} (2q+1)^d)``)."""
    return sk.prefactor / (2 * sk.half_width + 1) ** sk.d


def triangle_suite_kernels():
    """Kernels used by the diagram checks (all with closed-form or enumerable D^)."""
    from percolab.kernel import build_kernel
    return [build_kernel("nn", 1), build_kernel("nn", 2), build_kernel("frso", 1, L=3),
            build_kernel("frso", 7, L=2), build_kernel("frso", 7, L=4),
            build_kernel("lrso", 1, L=5, alpha=0.5), build_kernel("lrso", 1, L=2, alpha=1.5)]
