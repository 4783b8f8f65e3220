"""Merge-able running moments and small report helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["RunningStats", "moment_report", "z_score"]


@dataclass
class RunningStats:
    """Count, mean and centred second moment (per component for array input).

    ``merge`` uses the parallel update of Chan et al., so partial results from
    independent workers combine in any order.
    """

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0

    @classmethod
    def from_samples(cls, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            return cls()
        mu = x.mean(axis=0)
        return cls(int(x.shape[0]), mu, ((x - mu) ** 2).sum(axis=0))

    def update(self, x):
        """Add a batch (first axis indexes samples)."""
        return self.merge(RunningStats.from_samples(x))

    def merge(self, other):
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * other.count / n
        self.m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self):
        if self.count < 2:
            return np.nan * np.asarray(self.m2)
        return self.m2 / (self.count - 1)

    @property
    def stderr(self):
        return np.sqrt(self.variance / self.count)


def z_score(estimate, target, stderr):
    if stderr == 0:
        return 0.0 if estimate == target else math.copysign(math.inf, estimate - target)
    return (estimate - target) / stderr


def moment_report(statistic, samples, target):
    """JSON-ready ``{statistic, estimate, stderr, target, z_score}`` for a scalar sample."""
    st = RunningStats.from_samples(np.asarray(samples, dtype=float).ravel())
    est, se = float(st.mean), float(st.stderr)
    return {
        "statistic": statistic,
        "estimate": est,
        "stderr": se,
        "target": float(target),
        "z_score": float(z_score(est, target, se)),
    }
