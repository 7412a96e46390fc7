import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from dnsfp.probability import min_opt_count, poisson_binomial_pmf, poisson_binomial_tail


def enumerated_tails(probs):
    """Literal 2^k enumeration of P(X >= n); the independent oracle."""
    k = len(probs)
    tails = [0.0] * (k + 1)
    for outcome in itertools.product((0, 1), repeat=k):
        weight = 1.0
        for p, hit in zip(probs, outcome):
            weight *= p if hit else 1.0 - p
        for n in range(sum(outcome) + 1):
            tails[n] += weight
    return tails


def enumerated_min_opt(probs, threshold):
    tails = enumerated_tails(probs)
    for n in range(len(probs), -1, -1):
        if tails[n] > threshold:
            return n
    return 0


class TestPmf:
    def test_empty(self):
        assert poisson_binomial_pmf([]) == [1.0]

    def test_certain_successes(self):
        assert poisson_binomial_pmf([1.0, 1.0]) == pytest.approx([0.0, 0.0, 1.0])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            poisson_binomial_pmf([1.5])

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), max_size=12))
    def test_sums_to_one(self, probs):
        assert math.isclose(sum(poisson_binomial_pmf(probs)), 1.0, abs_tol=1e-9)

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), max_size=12))
    def test_tail_non_increasing_from_one(self, probs):
        tails = poisson_binomial_tail(probs)
        assert math.isclose(tails[0], 1.0, abs_tol=1e-12)
        assert all(a >= b - 1e-12 for a, b in zip(tails, tails[1:]))

    @given(st.lists(st.floats(min_value=0.05, max_value=1.0), max_size=10))
    @settings(deadline=None)
    def test_matches_enumeration(self, probs):
        expected = enumerated_tails(probs)
        got = poisson_binomial_tail(probs)
        assert got == pytest.approx(expected, abs=1e-9)


class TestMinOptCount:
    def test_all_certain(self):
        assert min_opt_count([1.0, 1.0], 0.5) == 2

    def test_empty(self):
        assert min_opt_count([], 0.5) == 0

    def test_three_values(self):
        # P(X>=2) = 0.85 > 0.5 and P(X>=3) = 0.36 <= 0.5 for these inputs
        assert min_opt_count([0.9, 0.8, 0.5], 0.5) == 2

    def test_threshold_at_or_above_one(self):
        assert min_opt_count([1.0, 1.0], 1.0) == 0
        assert min_opt_count([1.0], 1.5) == 0

    def test_strictly_greater_semantics(self):
        # P(X>=1) == 0.6 exactly: not strictly greater than 0.6
        assert min_opt_count([0.6], 0.6) == 0
        assert min_opt_count([0.6], 0.59) == 1

    @given(st.lists(st.floats(min_value=0.05, max_value=1.0), max_size=12),
           st.floats(min_value=0.01, max_value=0.99))
    @settings(deadline=None)
    def test_matches_enumeration(self, probs, threshold):
        assert min_opt_count(probs, threshold) == enumerated_min_opt(probs, threshold)
