"""Query-count statistics and latency summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

ROUNDING_UNIT = 1 << 13


def _exact(x: float) -> Fraction:
    # shortest decimal repr, so 0.9 means 9/10 and not the nearest double
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class ConfidenceSpec:
    tail_latency: float
    confidence: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.tail_latency < 1.0:
            raise ValueError(f"tail_latency must be in (0, 1), got {self.tail_latency}")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")

    @property
    def margin(self) -> float:
        return margin(self.tail_latency)


@dataclass(frozen=True)
class QueryCount:
    raw: int
    rounded: int


def margin(tail_latency: float) -> float:
    """Allowed error: one twentieth of the distance from the tail to 100%."""
    if not 0.0 < tail_latency < 1.0:
        raise ValueError(f"tail_latency must be in (0, 1), got {tail_latency}")
    return float((1 - _exact(tail_latency)) / 20)


# Acklam's rational approximation coefficients.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1
        )
    if p > 1 - _P_LOW:
        return -_acklam(1 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1
    )


def normal_inverse_cdf(p: float) -> float:
    """Standard normal quantile.

    Rational approximation (relative error ~1e-9) polished with one Newton
    step on the normal CDF, computed through ``erfc`` so the lower tail keeps
    full precision.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    if p < 0.5:
        err = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    else:
        err = (1 - p) - 0.5 * math.erfc(x / math.sqrt(2))
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return x - err / pdf


def round_up_multiple(n: int, unit: int = ROUNDING_UNIT) -> int:
    if n < 0:
        raise ValueError("n must be >= 0")
    if unit < 1:
        raise ValueError("unit must be >= 1")
    return -(-n // unit) * unit


def min_query_count(spec: ConfidenceSpec) -> QueryCount:
    """Queries needed to bound the tail percentile at the given confidence.

    The raw count is rounded to the nearest integer (that is what reproduces
    the published 23,886 / 50,425 / 262,742), then up to a multiple of 2**13.
    """
    z = normal_inverse_cdf((1 - spec.confidence) / 2)
    t = spec.tail_latency
    m = spec.margin
    value = z * z * t * (1 - t) / (m * m)
    raw = int(math.floor(value + 0.5))
    return QueryCount(raw=raw, rounded=round_up_multiple(raw))


def _as_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a nonempty 1-D sequence")
    return arr


def nearest_rank(p: float, n: int) -> int:
    """1-based nearest-rank index ceil(p * n), with p read as a decimal."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    return max(1, math.ceil(_exact(p) * n))


def percentile(latencies: Sequence[float] | np.ndarray, p: float):
    """Nearest-rank percentile; no interpolation, always a sample value."""
    arr = _as_array(latencies)
    k = nearest_rank(p, arr.size) - 1
    return np.partition(arr, k)[k].item()


def overtime_count(latencies: Sequence[float] | np.ndarray, bound) -> int:
    return int(np.count_nonzero(_as_array(latencies) > bound))


def overtime_fraction(latencies: Sequence[float] | np.ndarray, bound) -> float:
    """Share of latencies strictly above ``bound``; equality is within bound."""
    arr = _as_array(latencies)
    return int(np.count_nonzero(arr > bound)) / arr.size


def fraction_within(count: int, total: int, limit: float) -> bool:
    """Exact test of count / total <= limit, limit read as a decimal."""
    return Fraction(count, total) <= _exact(limit)
