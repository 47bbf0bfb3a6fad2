"""Two-sample comparison: KS statistic, 1-D Wasserstein, permutation p-values.

Both statistics depend on a labelling of the pooled sample only through how
many of each distinct pooled value land in group ``a``. The compiled kernel
below draws a partial Fisher-Yates shuffle from uniforms supplied by numpy's
Generator, tallies those counts and scans them once. KS is evaluated in
integer arithmetic (``|A * n_b - B * n_a|``) so ties against the observed statistic are exact.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .errors import EmptyList, EmptySample
from .parse import ForecastSample

KS = "ks"
WASSERSTEIN = "wasserstein"
STATISTICS = (KS, WASSERSTEIN)

_BATCH = 10_000
_W_RTOL = 1e-9


@dataclasses.dataclass(frozen=True)
class Sample:
    """Numeric forecasts of one prompt condition plus the number of refusals."""

    values: tuple[float, ...]
    refusal_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("sample values must be finite")
        if self.refusal_count < 0:
            raise ValueError("refusal_count must be non-negative")

    @classmethod
    def from_forecasts(cls, samples: Iterable[ForecastSample]) -> "Sample":
        values, refusals = [], 0
        for s in samples:
            if s.is_numeric:
                values.append(s.value)
            else:
                refusals += 1
        return cls(tuple(values), refusals)

    @property
    def size(self) -> int:
        return len(self.values) + self.refusal_count

    @property
    def refusal_share(self) -> float:
        return self.refusal_count / self.size if self.size else 0.0


def refusal_sentinel(a: Sample, b: Sample) -> float:
    """Value strictly below every numeric forecast in either sample."""
    numeric = a.values + b.values
    return min(numeric) - 1.0 if numeric else 0.0


def extended_values(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Arrays to compare, with refusals mapped to a common low sentinel.

    Plain sequences of numbers are accepted as samples without refusals.
    """
    a, b = _as_sample(a), _as_sample(b)
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples need at least one observation")
    s = refusal_sentinel(a, b)
    xa = np.array(a.values + (s,) * a.refusal_count, dtype=float)
    xb = np.array(b.values + (s,) * b.refusal_count, dtype=float)
    return xa, xb


def _as_sample(x) -> Sample:
    return x if isinstance(x, Sample) else Sample(tuple(x))


class _Pooled:
    """Distinct pooled values, their multiplicities and group ``a``'s counts."""

    def __init__(self, xa: np.ndarray, xb: np.ndarray):
        self.n_a, self.n_b = len(xa), len(xb)
        self.u, inverse, self.g = np.unique(np.concatenate([xa, xb]), return_inverse=True, return_counts=True)
        self.c = np.bincount(inverse[: self.n_a], minlength=len(self.u))
        self.cum_g = np.cumsum(self.g)
        self.du = np.diff(self.u)

    def _gaps(self, counts: np.ndarray) -> np.ndarray:
        # n_a * n_b * (F_a - F_b) at every distinct value, exactly, as integers
        ca = np.cumsum(counts, axis=-1)
        return ca * self.n_b - (self.cum_g - ca) * self.n_a

    def ks_scaled(self, counts: np.ndarray) -> np.ndarray:
        return np.abs(self._gaps(counts)).max(axis=-1)

    def wasserstein(self, counts: np.ndarray) -> np.ndarray:
        gaps = np.abs(self._gaps(counts)[..., :-1]).astype(float)
        return gaps @ self.du / (self.n_a * self.n_b)

    def statistic(self, name: str, counts: np.ndarray):
        if name == KS:
            return self.ks_scaled(counts)
        if name == WASSERSTEIN:
            return self.wasserstein(counts)
        raise ValueError(f"unknown statistic {name!r}; expected one of {STATISTICS}")


def ks_statistic(a, b) -> float:
    """sup |ECDF_a - ECDF_b| over the pooled points."""
    p = _Pooled(*extended_values(a, b))
    return float(p.ks_scaled(p.c)) / (p.n_a * p.n_b)


def wasserstein(a, b) -> float:
    """1-Wasserstein distance between the two empirical distributions."""
    p = _Pooled(*extended_values(a, b))
    return float(p.wasserstein(p.c))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclasses.dataclass(frozen=True)
class PermutationResult:
    statistic: str
    observed: float
    n_ge: int
    n_perm: int

    @property
    def p_value(self) -> float:
        return (1 + self.n_ge) / (1 + self.n_perm)

    @property
    def at_floor(self) -> bool:
        """No permuted statistic reached the observed one."""
        return self.n_ge == 0


@njit(cache=True)
def _count_exceedances(ranks, cum_g, du, n_a, n_b, use_ks, observed, uniforms, counts):
    # ranks: pooled values as indices into the sorted distinct values
    n = ranks.size
    k = cum_g.size
    idx = ranks.copy()
    n_ge = 0
    for p in range(uniforms.shape[0]):
        for i in range(n_a):
            # u * m can round up to m in floating point
            j = min(i + int(uniforms[p, i] * (n - i)), n - 1)
            t = idx[i]
            idx[i] = idx[j]
            idx[j] = t
        counts[:] = 0
        for i in range(n_a):
            counts[idx[i]] += 1
        a = 0
        stat = 0.0
        for j in range(k):
            a += counts[j]
            gap = abs(a * n_b - (cum_g[j] - a) * n_a)
            if use_ks:
                if gap > stat:
                    stat = gap
            elif j < k - 1:
                stat += gap * du[j]
        if stat >= observed:
            n_ge += 1
    return n_ge


def permutation_test(a, b, statistic: str = KS, n_perm: int = 10_000, seed=0) -> PermutationResult:
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}; expected one of {STATISTICS}")
    p = _Pooled(*extended_values(a, b))
    use_ks = statistic == KS
    observed = float(p.statistic(statistic, p.c))
    if len(p.u) == 1:
        # a single pooled value: every relabelling reproduces the observed statistic
        return PermutationResult(statistic, 0.0, n_perm, n_perm)
    # the kernel accumulates Wasserstein unscaled, i.e. times n_a * n_b
    threshold = observed if use_ks else observed * p.n_a * p.n_b * (1 - _W_RTOL)
    ranks = np.repeat(np.arange(len(p.u)), p.g)
    counts = np.zeros(len(p.u), dtype=np.int64)
    rng = _rng(seed)
    n_ge, done = 0, 0
    while done < n_perm:
        size = min(_BATCH, n_perm - done)
        uniforms = rng.random((size, p.n_a))
        n_ge += _count_exceedances(ranks, p.cum_g, p.du, p.n_a, p.n_b, use_ks, threshold, uniforms, counts)
        done += size
    if use_ks:
        observed /= p.n_a * p.n_b
    return PermutationResult(statistic, observed, n_ge, n_perm)


def permutation_pvalue(a, b, statistic: str = KS, n_perm: int = 10_000, seed=0) -> float:
    """Add-one Monte Carlo permutation p-value, in {k / (1 + n_perm)}."""
    return permutation_test(a, b, statistic, n_perm, seed).p_value


def bonferroni_bound(p_values: Sequence[float]) -> float:
    p_values = list(p_values)
    if not p_values:
        raise EmptyList("Bonferroni bound needs at least one p-value")
    for p in p_values:
        if not 0 < p <= 1:
            raise ValueError(f"p-value out of (0, 1]: {p}")
    return min(1.0, len(p_values) * min(p_values))


@dataclasses.dataclass(frozen=True)
class ComparisonResult:
    ks_stat: float
    p_value: float
    wasserstein: float
    n_a: int
    n_b: int
    n_perm: int
    seed: int | None
    refusals_a: int = 0
    refusals_b: int = 0
    n_ge: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.ks_stat <= 1.0:
            raise ValueError(f"ks_stat out of [0, 1]: {self.ks_stat}")
        if not 0.0 < self.p_value <= 1.0:
            raise ValueError(f"p_value out of (0, 1]: {self.p_value}")
        if self.wasserstein < 0:
            raise ValueError("wasserstein must be non-negative")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def compare(a, b, n_perm: int = 10_000, seed: int | None = 0, statistic: str = KS) -> ComparisonResult:
    """KS permutation test plus Wasserstein distance for one pair of samples."""
    a, b = _as_sample(a), _as_sample(b)
    perm = permutation_test(a, b, statistic, n_perm, seed)
    return ComparisonResult(
        ks_stat=ks_statistic(a, b),
        p_value=perm.p_value,
        wasserstein=wasserstein(a, b),
        n_a=a.size,
        n_b=b.size,
        n_perm=n_perm,
        seed=seed if isinstance(seed, int) else None,
        refusals_a=a.refusal_count,
        refusals_b=b.refusal_count,
        n_ge=perm.n_ge,
    )
