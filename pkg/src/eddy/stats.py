"""Mode coverage, nearest-mode statistics and two-sample tests.

All p-values are asymptotic and two-sided.  The Mann-Whitney statistic is
reported normalised, U_a / (n_a n_b), which estimates P(a > b) + P(a = b)/2;
a sample lying entirely below the other therefore scores 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

TESTS = ("ks", "mann_whitney", "welch")


@dataclass(frozen=True)
class TestResult:
    test_name: str
    statistic: float
    p_value: float
    sample_sizes: tuple

    __test__ = False  # not a pytest class

    def as_dict(self):
        return {"test": self.test_name, "statistic": self.statistic, "p_value": self.p_value,
                "n_a": self.sample_sizes[0], "n_b": self.sample_sizes[1]}


def _as_sample(a, name, min_size=1):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size < min_size:
        raise ValueError(f"sample {name} needs at least {min_size} values, got {a.size}")
    return a


def nearest_center(points, centers):
    """Index of the nearest center for every point, ties to the lowest index."""
    points = np.asarray(points, dtype=float)
    centers = np.asarray(centers, dtype=float)
    diff = points[..., None, :] - centers
    return np.argmin(np.sum(diff * diff, axis=-1), axis=-1)


def mode_coverage(batch, centers) -> int:
    """Number of distinct centers that are the nearest center of some particle."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.size == 0 or np.asarray(centers).size == 0:
        raise ValueError("batch and centers must be nonempty")
    return int(np.unique(nearest_center(batch, centers)).size)


def batch_coverage(positions, centers) -> np.ndarray:
    """Coverage of every batch in a (B, n, d) stack."""
    idx = nearest_center(positions, centers)
    idx = np.sort(idx, axis=-1)
    return 1 + np.sum(idx[..., 1:] != idx[..., :-1], axis=-1)


def expected_iid_coverage(m: int, n: int) -> float:
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    return m * (1.0 - (1.0 - 1.0 / m) ** n)


def nearest_mode_stats(x, centers):
    """(distance, angle) of points to their nearest center; angle is 0 at distance 0."""
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if x.shape[-1] != 2 or centers.shape[-1] != 2:
        raise ValueError("nearest_mode_stats only supports d = 2")
    offset = x - centers[nearest_center(x, centers)]
    dist = np.hypot(offset[..., 0], offset[..., 1])
    angle = np.where(dist > 0, np.arctan2(offset[..., 1], offset[..., 0]), 0.0)
    # atan2 returns -pi on the negative axis with a signed zero; map onto (-pi, pi]
    angle = np.where(angle <= -np.pi, np.pi, angle)
    if np.ndim(dist) == 0:
        return float(dist), float(angle)
    return dist, angle


def kolmogorov_sf(lam: float) -> float:
    """P(K > lam) for the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # theta-function form, fast for small lam
        y = math.exp(-math.pi ** 2 / (8.0 * lam * lam))
        total = sum(y ** ((2 * k - 1) ** 2) for k in range(1, 8))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * total))
    total = 0.0
    for k in range(1, 101):
        term = (-1) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a, b) -> TestResult:
    a = np.sort(_as_sample(a, "a"))
    b = np.sort(_as_sample(b, "b"))
    na, nb = a.size, b.size
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / na
    cdf_b = np.searchsorted(b, pooled, side="right") / nb
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    en = na * nb / (na + nb)
    return TestResult("ks", stat, kolmogorov_sf(math.sqrt(en) * stat), (na, nb))


def midranks(values) -> tuple:
    """Average ranks (1-based) and the tie-group sizes."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [values.size]])
    ranks = np.empty(values.size)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks, ends - starts


def mann_whitney(a, b) -> TestResult:
    a = _as_sample(a, "a")
    b = _as_sample(b, "b")
    na, nb = a.size, b.size
    ranks, ties = midranks(np.concatenate([a, b]))
    u_a = float(np.sum(ranks[:na]) - na * (na + 1) / 2.0)
    n = na + nb
    mean = na * nb / 2.0
    tie_term = float(np.sum(ties.astype(float) ** 3 - ties)) / (n * (n - 1)) if n > 1 else 0.0
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        p = 1.0
    else:
        z = (abs(u_a - mean) - 0.5) / math.sqrt(var)
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return TestResult("mann_whitney", u_a / (na * nb), p, (na, nb))


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail P(|T| > |t|) for Student's t, via the regularised incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_t(a, b) -> TestResult:
    a = _as_sample(a, "a", min_size=2)
    b = _as_sample(b, "b", min_size=2)
    na, nb = a.size, b.size
    va = float(np.var(a, ddof=1)) / na
    vb = float(np.var(b, ddof=1)) / nb
    diff = float(np.mean(a) - np.mean(b))
    se2 = va + vb
    if se2 == 0:
        stat = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return TestResult("welch", stat, 1.0 if diff == 0 else 0.0, (na, nb))
    stat = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (na - 1) + vb * vb / (nb - 1))
    return TestResult("welch", stat, student_t_sf2(stat, df), (na, nb))


TEST_FUNCTIONS = {"ks": ks_two_sample, "mann_whitney": mann_whitney, "welch": welch_t}


def run_tests(a, b) -> dict:
    return {name: fn(a, b) for name, fn in TEST_FUNCTIONS.items()}


def permutation_test(a, b, statistic: Callable[[np.ndarray, np.ndarray], float],
                     n_resamples: int = 10_000, rng: Optional[np.random.Generator] = None) -> float:
    """Two-sided permutation p-value for |statistic(a, b)|, with the +1 correction."""
    a = _as_sample(a, "a")
    b = _as_sample(b, "b")
    if rng is None:
        rng = np.random.default_rng()
    pooled = np.concatenate([a, b])
    observed = abs(statistic(a, b))
    hits = 0
    for _ in range(n_resamples):
        perm = rng.permutation(pooled)
        if abs(statistic(perm[:a.size], perm[a.size:])) >= observed:
            hits += 1
    return (hits + 1) / (n_resamples + 1)
