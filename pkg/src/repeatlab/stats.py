"""Small statistical helpers shared by the verifiers and aggregators."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import binomtest


def wilson_interval(hits: int, n: int, confidence: float = 0.95):
    if n <= 0:
        return (float("nan"), float("nan"))
    ci = binomtest(int(hits), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


def median_iqr(values):
    """Median and interquartile range; ``(nan, nan)`` for an empty input."""
    v = np.asarray([x for x in values], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q3 - q1)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
