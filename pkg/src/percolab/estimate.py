"""Scalar estimates with standard errors and seed provenance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    stderr: float
    n_samples: int
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)
    # raw accumulators, when the estimate is a plain sample mean
    sum: float | None = None
    sumsq: float | None = None

    def __post_init__(self):
        if not self.stderr >= 0 and not math.isnan(self.stderr):
            raise ValueError("stderr must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @classmethod
    def from_samples(cls, x, seed=None, meta=None) -> "EstimateWithError":
        """Sample mean with stderr ``sd / sqrt(n)`` (ddof = 1)."""
        x = np.asarray(x, dtype=float)
        n = len(x)
        if n < 1:
            raise ValueError("need at least one sample")
        s = math.fsum(x.tolist())
        ss = math.fsum((x * x).tolist())
        mean = s / n
        var = max(ss / n - mean * mean, 0.0) * n / (n - 1) if n > 1 else 0.0
        return cls(mean, math.sqrt(var / n), n, seed, dict(meta or {}), s, ss)

    @classmethod
    def from_value(cls, value, stderr, n_samples, seed=None, meta=None) -> "EstimateWithError":
        return cls(float(value), float(stderr), int(max(n_samples, 1)), seed, dict(meta or {}))

    def consistent(self, rtol: float = 1e-9) -> bool:
        """Check stderr against the stored sum / sum of squares."""
        if self.sum is None:
            return True
        n = self.n_samples
        mean = self.sum / n
        var = max(self.sumsq / n - mean * mean, 0.0) * n / (n - 1) if n > 1 else 0.0
        return math.isclose(self.stderr, math.sqrt(var / n), rel_tol=rtol, abs_tol=1e-15)

    def within(self, target: float, k: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.value - target) <= k * self.stderr + floor

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples,
                "seed": self.seed, "meta": self.meta}


@dataclass(frozen=True)
class CurvePoint:
    abscissa: float
    estimate: EstimateWithError

    def __post_init__(self):
        if not self.abscissa > 0:
            raise ValueError("abscissa must be positive")

    @property
    def value(self) -> float:
        return self.estimate.value

    @property
    def stderr(self) -> float:
        return self.estimate.stderr
