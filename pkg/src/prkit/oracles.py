"""Independent brute-force ground truth.

Everything here is deliberately naive: exact sums over enumerated
supports, central finite differences, direct KL/TV formulas, and a
chi-squared frequency test. These functions never share code with the
estimators they are used to check.

Central differences with eps = 1e-5 are the single gradient-truth
convention project-wide.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .spaces import SampleSpace, enumerate_space

DEFAULT_FD_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support)
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if len(support) != len(probs):
            raise ValueError("support and probabilities differ in length")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")
        rows = {tuple(np.atleast_1d(s)) for s in support}
        if len(rows) != len(support):
            raise ValueError("support elements must be unique")


def _aligned(p: FiniteDistribution, q: FiniteDistribution):
    if not np.array_equal(p.support, q.support):
        raise ValueError("distributions are over different supports")
    return p.probs, q.probs


def brute_expectation(space, log_weight_fn, h):
    """Normalized expectation sum_x w(x) h(x) / sum_x w(x) by enumeration.

    `space` is a SampleSpace or an already-enumerated element array;
    log_weight_fn and h map the full element array to arrays. Weights are
    normalized in the log domain, so adding any constant to
    log_weight_fn leaves the result unchanged.
    """
    elements = enumerate_space(space) if isinstance(space, SampleSpace) else space
    log_w = np.asarray(log_weight_fn(elements), dtype=np.float64)
    w = np.exp(log_w - log_w.max())
    w = w / w.sum()
    values = np.asarray(h(elements), dtype=np.float64)
    return float(w @ values) if values.ndim == 1 else w @ values


def finite_diff_grad(fn, params, eps: float = DEFAULT_FD_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for j in range(params.size):
        step = np.zeros_like(params)
        step[j] = eps
        hi = fn(params + step)
        lo = fn(params - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite function value at coordinate {j}")
        grad[j] = (hi - lo) / (2.0 * eps)
    return grad


def exact_kl(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """KL(p||q) over a shared support.

    Returns math.inf explicitly when q puts zero mass where p does not;
    never a silent overflow.
    """
    pp, qq = _aligned(p, q)
    mask = pp > 0
    if np.any(qq[mask] == 0):
        return math.inf
    return float(np.sum(pp[mask] * (np.log(pp[mask]) - np.log(qq[mask]))))


def tv_distance(p: FiniteDistribution, q: FiniteDistribution) -> float:
    pp, qq = _aligned(p, q)
    return 0.5 * float(np.abs(pp - qq).sum())


@dataclass(frozen=True)
class FrequencyTestResult:
    passed: bool
    pvalue: float
    statistic: float

    def __bool__(self):
        return self.passed


def frequency_test(samples, p: FiniteDistribution,
                   significance: float = 1e-3) -> FrequencyTestResult:
    """Chi-squared goodness of fit of empirical frequencies against p."""
    samples = np.asarray(samples)
    n = len(samples)
    support = p.support
    if support.ndim == 1:
        counts = np.array([(samples == s).sum() for s in support], dtype=np.float64)
    else:
        counts = np.array([(samples == s).all(axis=1).sum() for s in support],
                          dtype=np.float64)
    if counts.sum() != n:
        return FrequencyTestResult(False, 0.0, math.inf)
    expected = n * p.probs
    keep = expected > 0
    if np.any(counts[~keep] > 0):
        return FrequencyTestResult(False, 0.0, math.inf)
    statistic, pvalue = stats.chisquare(counts[keep], expected[keep])
    return FrequencyTestResult(bool(pvalue >= significance),
                               float(pvalue), float(statistic))
