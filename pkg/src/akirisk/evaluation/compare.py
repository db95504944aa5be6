"""Bayesian correlated t-test with a region of practical equivalence, and
percentile-bootstrap confidence intervals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

# ROPE widths used when comparing systems, per metric
DEFAULT_ROPE = {"roc_auc": 0.01, "brier": 0.001, "pr_auc": 0.01, "log_loss": 0.01}


@dataclass(frozen=True)
class RopeDecision:
    p_higher: float
    p_rope: float
    p_lower: float
    rope_half_width: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_higher, self.p_rope, self.p_lower)


def correlated_ttest_posterior(diffs, rho: float):
    """(df, loc, scale) of the Student-t posterior of the mean difference."""
    d = np.asarray(diffs, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("correlated t-test needs at least two differences")
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    mean = float(d.mean())
    var = float(d.var(ddof=1))
    scale = float(np.sqrt((1.0 / n + rho / (1.0 - rho)) * var))
    return n - 1, mean, scale


def correlated_ttest(diffs, rope: float, rho: float = 0.2) -> RopeDecision:
    """P(diff > r/2), P(|diff| <= r/2), P(diff < -r/2) for per-fold differences.

    ``rho`` is the test-set fraction (1/k). Zero sample variance collapses the
    posterior to a point mass at the mean.
    """
    df, loc, scale = correlated_ttest_posterior(diffs, rho)
    half = rope / 2.0
    if scale == 0.0:
        if loc > half:
            return RopeDecision(1.0, 0.0, 0.0, half)
        if loc < -half:
            return RopeDecision(0.0, 0.0, 1.0, half)
        return RopeDecision(0.0, 1.0, 0.0, half)
    t = stats.t(df, loc=loc, scale=scale)
    p_lower = float(t.cdf(-half))
    p_higher = float(t.sf(half))
    p_rope = 1.0 - p_lower - p_higher
    return RopeDecision(p_higher, p_rope, p_lower, half)


def bootstrap_ci(values, iterations: int = 10_000, level: float = 0.95, seed=0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("bootstrap needs at least two values")
    if np.all(v == v[0]):
        return float(v[0]), float(v[0])
    rng = np.random.default_rng(seed)
    means = np.empty(iterations)
    chunk = max(1, 2_000_000 // v.size)
    for start in range(0, iterations, chunk):
        stop = min(iterations, start + chunk)
        idx = rng.integers(0, v.size, size=(stop - start, v.size))
        means[start:stop] = v[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
