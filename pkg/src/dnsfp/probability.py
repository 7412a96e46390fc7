"""Poisson-binomial tail computation for optional-label thresholds.

Each optional label's occurrence value is treated as an independent Bernoulli
probability that the domain is queried. The threshold is the largest count n
whose tail probability P(X >= n) still exceeds the configured minimum, where
X is the number of optional labels present. The distribution is computed by
dynamic programming over the probability mass function, which is quadratic in
the number of labels instead of enumerating all 2^k outcomes.
"""

from __future__ import annotations

from typing import Sequence


def poisson_binomial_pmf(probabilities: Sequence[float]) -> list[float]:
    """P(X = n) for n = 0..k given independent success probabilities."""
    pmf = [1.0]
    for p in probabilities:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
        q = 1.0 - p
        nxt = [0.0] * (len(pmf) + 1)
        for i, mass in enumerate(pmf):
            nxt[i] += mass * q
            nxt[i + 1] += mass * p
        pmf = nxt
    return pmf


def poisson_binomial_tail(probabilities: Sequence[float]) -> list[float]:
    """P(X >= n) for n = 0..k; non-increasing with tail[0] = 1."""
    pmf = poisson_binomial_pmf(probabilities)
    tails = [0.0] * len(pmf)
    acc = 0.0
    for n in range(len(pmf) - 1, -1, -1):
        acc += pmf[n]
        tails[n] = acc
    return tails


def min_opt_count(occurrences: Sequence[float], min_opt_probability: float) -> int:
    """Largest n with P(at least n of the labels present) > min_opt_probability.

    Returns 0 when the threshold is >= 1 (no strict exceedance possible) or
    when no labels are given; n = 0 is always feasible since P(X >= 0) = 1.
    """
    if min_opt_probability >= 1.0:
        return 0
    tails = poisson_binomial_tail(occurrences)
    for n in range(len(occurrences), -1, -1):
        if tails[n] > min_opt_probability:
            return n
    return 0
