"""Mann-Whitney U test with midranks, tie-corrected normal approximation and exact permutation p-values."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .graph import MetricError

EXACT_MAX = 12  # n + m at or below which "auto" enumerates the permutation distribution


@dataclass(frozen=True)
class MWUResult:
    U: float
    p: float
    method: str
    n: int
    m: int

    def stars(self) -> str:
        return significance_stars(self.p)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def rank_data(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def _normal_p(u: float, n: int, m: int, pooled: Sequence[float]) -> float:
    big_n = n + m
    ties = sum(t**3 - t for t in Counter(pooled).values())
    var = n * m / 12.0 * ((big_n + 1) - ties / (big_n * (big_n - 1))) if big_n > 1 else 0.0
    if var <= 0:
        return 1.0
    dev = abs(u - n * m / 2.0) - 0.5
    z = max(dev, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _exact_p(ranks: Sequence[float], n: int, observed_u: float) -> float:
    # work in doubled ranks so midranks stay integral
    doubled = [int(round(2 * r)) for r in ranks]
    m = len(ranks) - n
    # dp[k] maps doubled rank sum -> number of k-subsets achieving it
    dp: list[Counter] = [Counter() for _ in range(n + 1)]
    dp[0][0] = 1
    for r in doubled:
        for k in range(n, 0, -1):
            prev = dp[k - 1]
            if prev:
                cur = dp[k]
                for s, c in prev.items():
                    cur[s + r] += c
    total = math.comb(n + m, n)
    offset = n * (n + 1)
    obs_dev = abs(int(round(2 * observed_u)) - n * m)
    hits = sum(c for s, c in dp[n].items() if abs((s - offset) - n * m) >= obs_dev)
    return min(1.0, hits / total)


def mann_whitney_u(a: Sequence[float], b: Sequence[float], method: str = "auto", exact_max: int = EXACT_MAX) -> MWUResult:
    """Two-sided Mann-Whitney U test; ``U`` is the statistic of sample ``a``.

    ``method`` is "normal" (tie-corrected variance, continuity correction),
    "exact" (full permutation distribution of the midrank sum, ties included),
    or "auto" (exact when ``len(a) + len(b) <= exact_max``).
    """
    a, b = list(a), list(b)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise MetricError("Mann-Whitney U needs two non-empty samples")
    pooled = a + b
    ranks = rank_data(pooled)
    u = sum(ranks[:n]) - n * (n + 1) / 2.0
    if method == "auto":
        method = "exact" if n + m <= exact_max else "normal"
    if method == "exact":
        p = _exact_p(ranks, n, u)
    elif method == "normal":
        p = _normal_p(u, n, m, pooled)
    else:
        raise ValueError(f"unknown method {method!r}")
    return MWUResult(U=u, p=p, method=method, n=n, m=m)
