"""Step distributions D for nearest-neighbour and spread-out bond percolation.

A kernel is described by *displacement classes*: sets of lattice points
that share one weight.  Nearest-neighbour and long-range kernels group their
explicit support by exact squared Euclidean norm; the finite-range box
kernel (all weights equal) is one implicit class so that the
``(2L+1)^d - 1`` members never need to be materialised.

Long-range kernels with very large support are split at a radius
``near_radius``: points inside are explicit classes, points outside form a
*far field* that is never enumerated.  Its total weight comes from the
lattice zeta function and it is sampled by Poisson thinning (see
:mod:`percolab._lattice`).
"""
from __future__ import annotations

import enum
import functools
import math
from collections import namedtuple
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import special

from percolab import rng

# support sizes up to this are fully explicit
EXPLICIT_LIMIT = 2_000_000
DEFAULT_HORIZON = float(2 ** 48)


class Family(str, enum.Enum):
    NEAREST_NEIGHBOR = "nn"
    FINITE_RANGE = "frso"
    LONG_RANGE = "lrso"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        aliases = {
            "nn": cls.NEAREST_NEIGHBOR, "nearestneighbor": cls.NEAREST_NEIGHBOR,
            "nearest-neighbor": cls.NEAREST_NEIGHBOR,
            "frso": cls.FINITE_RANGE, "finiterangespreadout": cls.FINITE_RANGE,
            "finite-range": cls.FINITE_RANGE,
            "lrso": cls.LONG_RANGE, "longrangespreadout": cls.LONG_RANGE,
            "long-range": cls.LONG_RANGE,
        }
        key = str(value).lower().replace("_", "")
        if key not in aliases:
            raise ValueError(f"unknown kernel family {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class DisplacementClass:
    """Lattice points sharing one (unnormalised) weight."""
    norm2: int
    weight: float
    members: np.ndarray
    multiplicity: int


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Immutable step distribution ``D`` on Z^d.

    ``weight`` values are unnormalised; ``D(x) = weight(x) / normalizer``.
    For long-range kernels the unnormalised weight is
    ``max(|x|/L, 1) ** -(d + alpha)``.
    """

    family: Family
    d: int
    L: int
    alpha: float | None
    trunc_radius: float
    normalizer: float
    tail_mass_bound: float
    normalization_error: float
    near_radius: float
    # explicit classes, flattened
    class_norm2: np.ndarray
    class_weight: np.ndarray
    class_start: np.ndarray
    class_count: np.ndarray
    members: np.ndarray
    # mass carried by the far field (unnormalised); zero when absent
    far_mass: float = 0.0
    box: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # ------------------------------------------------------------------ #
    @property
    def has_far_field(self) -> bool:
        return self.far_mass > 0.0

    @property
    def exponent(self) -> float:
        """``d + alpha`` for long-range kernels."""
        return self.d + self.alpha

    @property
    def spread_exponent(self) -> float:
        """``2 ∧ alpha`` (2 for the finite-range families)."""
        if self.family is Family.LONG_RANGE:
            return min(2.0, self.alpha)
        return 2.0

    @property
    def classes(self) -> list[DisplacementClass]:
        if self.box:
            side = 2 * self.L + 1
            n = side ** self.d - 1
            return [DisplacementClass(-1, 1.0, _box_members(self.d, self.L), n)]
        out = []
        for i in range(len(self.class_weight)):
            s, c = self.class_start[i], self.class_count[i]
            out.append(DisplacementClass(int(self.class_norm2[i]), float(self.class_weight[i]),
                                         self.members[s:s + c], int(c)))
        return out

    @property
    def support_size(self) -> float:
        if math.isinf(self.trunc_radius) or self.has_far_field:
            return _ball_count_estimate(self.d, self.trunc_radius)
        if self.box:
            return float((2 * self.L + 1) ** self.d - 1)
        return float(self.class_count.sum())

    @property
    def sup_norm(self) -> float:
        """``max_x D(x)``."""
        if self.box:
            return 1.0 / self.normalizer
        return float(self.class_weight.max()) / self.normalizer

    @property
    def p_max(self) -> float:
        """Largest admissible ``p`` (every edge probability ``p D(x) <= 1``)."""
        return 1.0 / self.sup_norm

    @property
    def max_displacement(self) -> float:
        """Euclidean length of the longest support displacement."""
        if self.family is Family.NEAREST_NEIGHBOR:
            return 1.0
        if self.box:
            return self.L * math.sqrt(self.d)
        if self.has_far_field:
            return self.trunc_radius
        return math.sqrt(float(self.class_norm2.max()))

    @property
    def min_displacement(self) -> float:
        return 1.0

    # ------------------------------------------------------------------ #
    def raw_weight(self, x) -> np.ndarray:
        """Unnormalised weight at displacement(s) ``x`` (shape (..., d))."""
        x = np.asarray(x, dtype=np.int64)
        n2 = np.sum(x.astype(float) ** 2, axis=-1)
        if self.family is Family.NEAREST_NEIGHBOR:
            return (n2 == 1).astype(float)
        if self.family is Family.FINITE_RANGE:
            sup = np.max(np.abs(x), axis=-1)
            return ((sup <= self.L) & (sup > 0)).astype(float)
        r = np.sqrt(n2)
        w = np.maximum(r / self.L, 1.0) ** (-self.exponent)
        inside = (n2 > 0) & (r <= self.trunc_radius)
        return np.where(inside, w, 0.0)

    def D(self, x) -> np.ndarray:
        """Normalised step probability at displacement(s) ``x``."""
        return self.raw_weight(x) / self.normalizer

    def describe(self) -> dict:
        return {
            "family": self.family.value,
            "d": self.d,
            "L": self.L,
            "alpha": self.alpha,
            "trunc_radius": self.trunc_radius,
            "support_size": self.support_size,
            "normalizer": self.normalizer,
            "tail_mass_bound": self.tail_mass_bound,
            "normalization_error": self.normalization_error,
            "sup_norm": self.sup_norm,
            "p_max": self.p_max,
            "n_classes": 1 if self.box else len(self.class_weight),
            "far_field_mass": self.far_mass / self.normalizer,
        }

    def truncated_mass(self, r: float) -> float:
        """``sum_{|x| <= r} D(x)``: the total mass of the r-truncated kernel."""
        if r >= self.trunc_radius:
            return 1.0
        if self.box or not self.has_far_field or r <= self.near_radius:
            if self.box:
                pts = _box_members(self.d, self.L)
                return float(np.sum(np.sum(pts.astype(float) ** 2, axis=1) <= r * r)) / self.normalizer
            sel = self.class_norm2 <= r * r
            return math.fsum((self.class_weight[sel] * self.class_count[sel]).tolist()) / self.normalizer
        near = math.fsum((self.class_weight * self.class_count).tolist())
        band = self.L ** self.exponent * _annulus_sum(self.d, self.exponent, self.near_radius, r)[0]
        return (near + band) / self.normalizer


def _box_members(d: int, L: int) -> np.ndarray:
    axes = [np.arange(-L, L + 1)] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return pts[np.any(pts != 0, axis=1)].astype(np.int64)


def _ball_points(d: int, radius: float) -> np.ndarray:
    """All nonzero lattice points with Euclidean norm <= radius."""
    R = int(math.floor(radius))
    r2 = radius * radius
    pts = np.zeros((1, 0), dtype=np.int64)
    # build coordinate by coordinate, pruning on partial norms
    partial = np.zeros(1)
    for _ in range(d):
        new_pts, new_partial = [], []
        for c in range(-R, R + 1):
            q = partial + c * c
            keep = q <= r2 + 1e-9
            if keep.any():
                new_pts.append(np.hstack([pts[keep], np.full((keep.sum(), 1), c, dtype=np.int64)]))
                new_partial.append(q[keep])
        pts = np.vstack(new_pts)
        partial = np.concatenate(new_partial)
    return pts[np.any(pts != 0, axis=1)]


def _ball_count_estimate(d: int, radius: float) -> float:
    if math.isinf(radius):
        return math.inf
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius ** d


def _unit_sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


@functools.lru_cache(maxsize=64)
def lattice_zeta(d: int, s: float) -> float:
    """Epstein zeta of Z^d: ``sum_{x != 0} |x|^{-s}`` for ``s > d``.

    Mellin representation ``Gamma(s/2)^{-1} int_0^inf t^{s/2-1} (theta(t)^d - 1) dt``
    with the small-t singular part ``(pi/t)^{d/2}`` integrated analytically.
    """
    if s <= d:
        raise ValueError("lattice zeta diverges for s <= d")
    if d == 1:
        return 2.0 * float(special.zeta(s))
    with mpmath.workdps(30):
        sig = mpmath.mpf(s) / 2
        half = mpmath.mpf(d) / 2

        def theta(t):
            if t >= 1:
                return 1 + 2 * mpmath.nsum(lambda n: mpmath.exp(-t * n * n), [1, mpmath.inf])
            return mpmath.sqrt(mpmath.pi / t) * (1 + 2 * mpmath.nsum(
                lambda n: mpmath.exp(-mpmath.pi ** 2 * n * n / t), [1, mpmath.inf]))

        def small(t):
            # theta^d - (pi/t)^{d/2}, exponentially small as t -> 0
            tt = 1 + 2 * mpmath.nsum(lambda n: mpmath.exp(-mpmath.pi ** 2 * n * n / t), [1, mpmath.inf])
            return t ** (sig - 1) * (mpmath.pi / t) ** half * (tt ** d - 1)

        head = mpmath.pi ** half / (sig - half) - 1 / sig
        part0 = mpmath.quad(small, [0, 1])
        part1 = mpmath.quad(lambda t: t ** (sig - 1) * (theta(t) ** d - 1), [1, 8, mpmath.inf])
        return float((head + part0 + part1) / mpmath.gamma(sig))


def _tail_bounds(d: int, s: float, R: float) -> tuple[float, float]:
    """Rigorous lower/upper bounds on ``sum_{|x| > R} |x|^{-s}`` by unit-cube comparison."""
    h = math.sqrt(d) / 2
    a = s - d
    area = _unit_sphere_area(d)
    upper = (1 + h / R) ** s * area * (R - h) ** (-a) / a
    lower = (1 - h / R) ** s * area * (R + h) ** (-a) / a if R > h else 0.0
    return lower, upper


def _annulus_sum(d: int, s: float, r_in: float, r_out: float) -> tuple[float, float]:
    """``sum_{r_in < |x| <= r_out} |x|^{-s}`` and an absolute error bound."""
    if d == 1:
        lo = math.floor(r_in) + 1
        total = float(special.zeta(s, lo))
        if not math.isinf(r_out):
            total -= float(special.zeta(s, math.floor(r_out) + 1))
        return 2.0 * total, 1e-16 * abs(total)
    inner = _ball_points(d, r_in) if r_in >= 1 else np.zeros((0, d), dtype=np.int64)
    n2 = np.sum(inner.astype(float) ** 2, axis=1)
    inner_sum = math.fsum((n2 ** (-s / 2)).tolist())
    total = lattice_zeta(d, s) - inner_sum
    err = 1e-13 * lattice_zeta(d, s)
    if not math.isinf(r_out):
        lo, hi = _tail_bounds(d, s, r_out)
        total -= 0.5 * (lo + hi)
        err += 0.5 * (hi - lo)
    return total, err


def _group_by_norm(pts: np.ndarray):
    n2 = np.sum(pts * pts, axis=1)
    order = np.lexsort(tuple(pts[:, i] for i in reversed(range(pts.shape[1]))) + (n2,))
    pts = pts[order]
    n2 = n2[order]
    uniq, start, count = np.unique(n2, return_index=True, return_counts=True)
    return pts, uniq.astype(np.int64), start.astype(np.int64), count.astype(np.int64)


def build_kernel(family, d: int, L: int = 1, alpha: float | None = None,
                 trunc_radius: float | None = None, near_radius: float | None = None) -> KernelSpec:
    """Construct and normalise a step distribution.

    Long-range kernels default to a truncation radius of ``2**48`` (a
    numerical horizon whose neglected mass is reported as
    ``tail_mass_bound``).  Pass ``trunc_radius=math.inf`` for the untruncated
    kernel.
    """
    family = Family.parse(family)
    d, L = int(d), int(L)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if L < 1:
        raise ValueError("spread-out parameter L must be >= 1")

    if family is Family.NEAREST_NEIGHBOR:
        pts = np.vstack([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
        pts, n2, start, count = _group_by_norm(pts)
        return KernelSpec(family, d, 1, None, 1.0, float(2 * d), 0.0, 0.0, 1.0,
                          n2, np.ones(1), start, count, pts)

    if family is Family.FINITE_RANGE:
        n = (2 * L + 1) ** d - 1
        return KernelSpec(family, d, L, None, L * math.sqrt(d), float(n), 0.0, 0.0,
                          L * math.sqrt(d), np.array([-1], dtype=np.int64), np.ones(1),
                          np.zeros(1, dtype=np.int64), np.array([n], dtype=np.int64),
                          np.zeros((0, d), dtype=np.int64), box=True)

    if alpha is None or not alpha > 0:
        raise ValueError("long-range kernels need alpha > 0")
    alpha = float(alpha)
    if alpha == 2.0:
        raise ValueError("alpha = 2 is excluded (logarithmic corrections)")
    R_T = DEFAULT_HORIZON if trunc_radius is None else float(trunc_radius)
    if R_T < 2 * L * math.sqrt(d):
        raise ValueError(f"trunc_radius {R_T} does not contain Q_2L (need >= {2 * L * math.sqrt(d):.3f})")
    s = d + alpha

    explicit = not math.isinf(R_T) and _ball_count_estimate(d, R_T) <= EXPLICIT_LIMIT
    if explicit and d == 1 and R_T > 4096:
        explicit = False  # the Hurwitz route is exact and cheaper
    if explicit:
        R_near = R_T
    else:
        R_near = near_radius if near_radius is not None else max(4.0 * L, 16.0)
        R_near = min(R_near, R_T)
        if _ball_count_estimate(d, R_near) > EXPLICIT_LIMIT:
            raise ValueError("near_radius too large to enumerate")

    pts = _ball_points(d, R_near)
    pts, n2, start, count = _group_by_norm(pts)
    w = np.maximum(np.sqrt(n2.astype(float)) / L, 1.0) ** (-s)
    near_mass = math.fsum((w * count).tolist())
    far_mass, err = 0.0, 0.0
    if not explicit and R_near < R_T:
        band, err = _annulus_sum(d, s, R_near, R_T)
        far_mass = L ** s * band
        err *= L ** s
    Z = near_mass + far_mass
    if math.isinf(R_T):
        tail = 0.0
    else:
        h = math.sqrt(d) / 2
        tail = (1 + h / R_T) ** s * _unit_sphere_area(d) * L ** s * (R_T - h) ** (-alpha) / alpha / Z
    return KernelSpec(family, d, L, alpha, R_T, Z, tail, err / Z, R_near,
                      n2, w, start, count, pts, far_mass=far_mass)


# ---------------------------------------------------------------------- #
# Fourier transform

@dataclass(frozen=True)
class TorusPoint:
    """A wave vector with every component in (-pi, pi]."""
    k: tuple

    def __post_init__(self):
        for c in self.k:
            if not (-math.pi < c <= math.pi):
                raise ValueError(f"torus component {c} outside (-pi, pi]")

    @classmethod
    def wrap(cls, k) -> "TorusPoint":
        k = np.asarray(k, dtype=float)
        w = -(((-k + math.pi) % (2 * math.pi)) - math.pi)
        return cls(tuple(float(c) for c in w))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.k, dtype=dtype)


def _dirichlet(L: int, k: np.ndarray) -> np.ndarray:
    j = np.arange(1, L + 1)
    return 1.0 + 2.0 * np.cos(np.multiply.outer(k, j)).sum(axis=-1)


@functools.lru_cache(maxsize=32)
def _polylog_coefficients(s: float, n_terms: int = 90):
    """Coefficients of ``Li_s(e^z)`` around ``z = 0``.

    Non-integer s: ``Gamma(1-s) (-z)^{s-1} + sum_n zeta(s-n) z^n / n!``.
    Integer s: the n = s-1 term is replaced by ``z^{s-1}/(s-1)! (H_{s-1} - log(-z))``.
    """
    integer = abs(s - round(s)) < 1e-12
    with mpmath.workdps(40):
        c = []
        for n in range(n_terms):
            if integer and n == round(s) - 1:
                c.append(complex(mpmath.harmonic(n) / mpmath.factorial(n)))
            else:
                c.append(complex(mpmath.zeta(s - n) / mpmath.factorial(n)))
        g = 0j if integer else complex(mpmath.gamma(1 - s))
    return integer, g, np.array(c)


def cos_polylog(s: float, k: np.ndarray) -> np.ndarray:
    """``sum_{n >= 1} cos(k n) n^{-s}`` for |k| <= pi and s > 1."""
    k = np.abs(np.asarray(k, dtype=float))
    integer, g, c = _polylog_coefficients(float(s))
    z = 1j * k
    acc = np.zeros_like(z)
    for cn in c[::-1]:
        acc = acc * z + cn
    with np.errstate(divide="ignore", invalid="ignore"):
        logmz = np.log(-z + 0j)
        if integer:
            n = int(round(s)) - 1
            sing = -z ** n / math.factorial(n) * logmz
        else:
            sing = g * np.exp((s - 1) * logmz)
    out = np.real(acc + sing)
    return np.where(k == 0, float(special.zeta(s)), out)


def fourier_d(kernel: KernelSpec, k) -> np.ndarray | float:
    """``D^(k) = sum_x cos(k.x) D(x)``; ``k`` may be a TorusPoint or an (n, d) array."""
    scalar = isinstance(k, TorusPoint) or np.ndim(k) == 1
    karr = np.atleast_2d(np.asarray(k, dtype=float))
    if karr.shape[-1] != kernel.d:
        raise ValueError("wave vector dimension mismatch")
    if kernel.family is Family.NEAREST_NEIGHBOR:
        out = np.cos(karr).mean(axis=1)
    elif kernel.box:
        prod = np.prod(_dirichlet(kernel.L, karr), axis=1)
        out = (prod - 1.0) / kernel.normalizer
    else:
        out = np.empty(len(karr))
        w = np.repeat(kernel.class_weight, kernel.class_count)
        for lo in range(0, len(karr), 256):
            chunk = karr[lo:lo + 256]
            out[lo:lo + 256] = np.cos(chunk @ kernel.members.T.astype(float)) @ w
        if kernel.has_far_field:
            if kernel.d != 1:
                raise NotImplementedError(
                    "Fourier transform of a non-enumerable far field is only available in d = 1; "
                    "build the kernel with a finite trunc_radius")
            out += _far_fourier_1d(kernel, karr[:, 0])
        out /= kernel.normalizer
    return float(out[0]) if scalar else out


def _far_fourier_1d(kernel: KernelSpec, k: np.ndarray) -> np.ndarray:
    s = kernel.exponent
    n0 = int(math.floor(kernel.near_radius))
    n = np.arange(1, n0 + 1)
    head = np.cos(np.multiply.outer(np.abs(k), n)) @ (n.astype(float) ** (-s))
    total = cos_polylog(s, k) - head
    if not math.isinf(kernel.trunc_radius):
        total -= cos_tail(s, int(math.floor(kernel.trunc_radius)), k)
    return 2.0 * kernel.L ** s * total


@functools.lru_cache(maxsize=None)
def _eulerian_row(j: int) -> tuple:
    row = [1]
    for m in range(2, j + 1):
        row = [(i + 1) * (row[i] if i < len(row) else 0) + (m - i) * (row[i - 1] if i >= 1 else 0)
               for i in range(m)]
    return tuple(row)


def _li_neg(j: int, z: np.ndarray) -> np.ndarray:
    """``sum_{n >= 0} n^j z^n`` (with 0^0 = 1) for |z| = 1, z != 1."""
    if j == 0:
        return 1.0 / (1.0 - z)
    row = _eulerian_row(j)
    num = sum(row[i] * z ** (j - i) for i in range(j))
    return num / (1.0 - z) ** (j + 1)


def cos_tail(s: float, N: int, k: np.ndarray, terms: int = 14) -> np.ndarray:
    """``sum_{n > N} cos(k n) n^{-s}`` for |k| <= pi.

    For ``k (N + 1/2) >= 40`` the Lerch transcendent is expanded in powers
    of 1/(N+1); below that the sum is a midpoint integral (generalised
    exponential integral) with one Euler-Maclaurin correction.
    """
    k = np.abs(np.asarray(k, dtype=float))
    out = np.empty_like(k)
    a = N + 1.0
    ap = N + 0.5
    u = k * ap
    big = u >= 40.0
    if big.any():
        z = np.exp(1j * k[big])
        acc = np.zeros_like(z)
        c = 1.0
        for j in range(terms + 1):
            acc += c * a ** (-j) * _li_neg(j, z)
            c *= (-s - j) / (j + 1)
        out[big] = np.real(np.exp(1j * k[big] * a) * a ** (-s) * acc)
    for i in np.flatnonzero(~big):
        ki = k[i]
        if ki == 0.0:
            out[i] = float(special.zeta(s, a))
            continue
        integral = ap ** (1 - s) * float(mpmath.re(mpmath.expint(s, -1j * u[i])))
        dfx = -ki * math.sin(ki * ap) * ap ** (-s) - s * math.cos(ki * ap) * ap ** (-s - 1)
        out[i] = integral + dfx / 24.0
    return out


# ---------------------------------------------------------------------- #
# sampler tables (consumed by the numba core)

SamplerTables = namedtuple("SamplerTables", [
    "d", "members", "cls_start", "cls_count", "cls_lam", "cls_certain", "cls_cum",
    "box_L", "box_n", "box_lam", "box_certain",
    "far", "far_L", "far_s", "far_alpha", "far_pz", "far_rnear", "far_rt",
    "shell_lo", "shell_cum", "shell_mu", "tab_total", "tail_a", "tail_b", "tail_B", "tail_total",
])


def _lam(q):
    q = np.minimum(q, 1.0)
    with np.errstate(divide="ignore"):
        return -np.log1p(-q)


def sampler_tables(kernel: KernelSpec, p: float) -> SamplerTables:
    """Per-``p`` rate tables for exact Poisson-thinning sampling of open edges."""
    check_p(kernel, p)
    key = float(p)
    if key in kernel._cache:
        return kernel._cache[key]
    d = kernel.d
    pz = p / kernel.normalizer
    weight, count, start = kernel.class_weight, kernel.class_count, kernel.class_start
    if kernel.box:
        # the box is sampled implicitly, not through explicit classes
        weight, count, start = np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    q = np.minimum(pz * weight, 1.0)
    certain = q >= 1.0 - 1e-12
    lam = np.where(certain, 0.0, _lam(q))
    rate = lam * count
    cls_cum = np.cumsum(rate)
    box_L = kernel.L if kernel.box else 0
    box_n = (2 * kernel.L + 1) ** d - 1 if kernel.box else 0
    box_q = min(pz, 1.0)
    box_certain = kernel.box and box_q >= 1.0 - 1e-12
    box_lam = 0.0 if (box_certain or not kernel.box) else float(_lam(box_q))

    far = kernel.has_far_field
    shell_lo, shell_cum, shell_mu = 0, np.zeros(1), np.zeros(1)
    tab_total = tail_a = tail_b = tail_B = tail_total = 0.0
    s = kernel.exponent if kernel.family is Family.LONG_RANGE else 0.0
    alpha = kernel.alpha or 0.0
    if far:
        R_near, R_T = kernel.near_radius, kernel.trunc_radius
        m_lo = int(math.floor(R_near / math.sqrt(d))) + 1 if d > 1 else int(math.floor(R_near)) + 1
        m_tab = int(max(8 * R_near, 4096))
        if not math.isinf(R_T):
            m_tab = min(m_tab, int(math.floor(R_T)))
        m = np.arange(m_lo, m_tab + 1, dtype=float)
        # proposals pick an axis, a sign and d-1 free coordinates
        c_m = 2.0 * d * (2 * m + 1) ** (d - 1)
        rho = np.maximum(m, R_near)
        mu = _lam(pz * (kernel.L / rho) ** s)
        shell_mu = mu
        shell_cum = np.cumsum(c_m * mu)
        tab_total = float(shell_cum[-1]) if len(shell_cum) else 0.0
        shell_lo = m_lo
        tail_a = m_tab + 0.5
        tail_b = math.inf if math.isinf(R_T) else math.floor(R_T) + 0.5
        if tail_b > tail_a:
            q_next = pz * (kernel.L / (m_tab + 1)) ** s
            tail_B = d * 2 ** d * (1 + 1 / (2 * m_tab + 2)) ** s * pz * kernel.L ** s / (1 - q_next)
            upper = 0.0 if math.isinf(tail_b) else tail_b ** (-alpha)
            tail_total = tail_B * (tail_a ** (-alpha) - upper) / alpha
    tables = SamplerTables(
        d, kernel.members, start, count, lam.astype(float),
        certain.astype(np.uint8), cls_cum.astype(float),
        int(box_L), int(box_n), float(box_lam), bool(box_certain),
        bool(far), float(kernel.L), float(s), float(alpha), float(pz),
        float(kernel.near_radius), float(kernel.trunc_radius),
        int(shell_lo), shell_cum.astype(float), np.asarray(shell_mu, dtype=float),
        float(tab_total), float(tail_a), float(tail_b), float(tail_B), float(tail_total),
    )
    kernel._cache[key] = tables
    return tables


def truncation_tail_constant(kernel: KernelSpec, radii) -> float:
    """Largest ``zeta`` with ``sum_{|x| <= r} D(x) <= 1 - zeta r^{-alpha}`` on ``radii``."""
    if kernel.family is not Family.LONG_RANGE:
        raise ValueError("tail constant is defined for long-range kernels")
    return min((1.0 - kernel.truncated_mass(r)) * r ** kernel.alpha for r in radii)


def long_edge_rate(kernel: KernelSpec, p: float, r: float) -> float:
    """Lower bound on ``sum_{|x| > r} -log(1 - p D(x))`` (exact without a far field)."""
    if kernel.box:
        pts = _box_members(kernel.d, kernel.L)
        n2 = np.sum(pts.astype(float) ** 2, axis=1)
        q = np.minimum(p / kernel.normalizer, 1.0)
        return float(np.sum(n2 > r * r)) * float(_lam(q))
    sel = kernel.class_norm2 > r * r
    q = np.minimum(p * kernel.class_weight[sel] / kernel.normalizer, 1.0)
    near = math.fsum((_lam(q) * kernel.class_count[sel]).tolist())
    if not kernel.has_far_field:
        return near
    # far field: -log(1 - q) >= q
    far = p * (1.0 - kernel.truncated_mass(max(r, kernel.near_radius)))
    return near + far


def check_p(kernel: KernelSpec, p: float) -> None:
    if not (0.0 <= p <= kernel.p_max * (1 + 1e-12)):
        raise ValueError(f"p = {p} outside [0, {kernel.p_max}] (need p D(x) <= 1)")


def sample_open_displacements(kernel: KernelSpec, p: float, coin, site) -> list[tuple]:
    """Open displacements ``y - site`` drawn from the site's own stream.

    Each support displacement is open independently with probability
    ``p D(y - site)``.  The list is in generation order (deterministic).
    """
    from percolab import _lattice
    tables = sampler_tables(kernel, p)
    site = np.asarray(site, dtype=np.int64)
    out = _lattice.site_displacements(tables, np.uint64(coin.master_seed), np.uint64(coin.sample_index), site)
    return [tuple(int(c) for c in row) for row in out]


def edge_probability(kernel: KernelSpec, p: float, x, y) -> float:
    z = np.asarray(y, dtype=np.int64) - np.asarray(x, dtype=np.int64)
    return min(1.0, p * float(kernel.D(z)))


_ = rng  # re-exported stream helpers live in percolab.rng
