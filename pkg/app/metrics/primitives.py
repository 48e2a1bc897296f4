from __future__ import annotations

import math
import statistics
from typing import Iterable, Optional


def mean(values: Iterable[float]) -> Optional[float]:
    values_list = list(values)
    if not values_list:
        return None
    return statistics.fmean(values_list)


def median(values: Iterable[float]) -> Optional[float]:
    values_list = list(values)
    if not values_list:
        return None
    return statistics.median(values_list)


def harmonic_number(n: int) -> float:
    """H(n) = 1 + 1/2 + ... + 1/n; the expected MRR of a uniformly random ranking is H(n)/n."""
    return math.fsum(1.0 / i for i in range(1, n + 1))


def percentile_cont(values: Iterable[float], percentile: float) -> Optional[float]:
    """Linear-interpolated percentile, ``percentile`` in [0, 1]."""
    ordered = sorted(values)
    if not ordered:
        return None
    if percentile <= 0:
        return ordered[0]
    if percentile >= 1:
        return ordered[-1]
    position = (len(ordered) - 1) * percentile
    lower = math.floor(position)
    upper = math.ceil(position)
    fraction = position - lower
    return ordered[lower] + fraction * (ordered[upper] - ordered[lower])
