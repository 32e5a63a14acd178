import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from firstexit import default_probs, ks_1sample, ks_2sample_md
from firstexit.analysis import quadrant_statistic
from firstexit.marginal import ExitTimeSamples

times = arrays(float, st.tuples(st.integers(1, 60), st.integers(1, 4)),
               elements=st.one_of(st.floats(0.01, 20.0), st.just(np.inf)))


def _brute_quadrant(a, b):
    """Direct O(n^2 2^d) evaluation of the orthant discrepancy.

    Orthants anchored at a pooled point split each axis into ``<=`` and ``>``.
    """
    pool = np.vstack([a, b])
    best = 0.0
    d = pool.shape[1]
    for corner in pool:
        for mask in range(1 << d):
            gt = np.array([(mask >> k) & 1 for k in range(d)], dtype=bool)

            def frac(x):
                inside = np.where(gt, x > corner, x <= corner).all(axis=1)
                return inside.mean()

            best = max(best, abs(frac(a) - frac(b)))
    return best


class TestDefaultProbs:
    def test_all_censored(self):
        dist = default_probs(ExitTimeSamples(np.full((10, 3), np.inf)), 10.0)
        np.testing.assert_array_equal(dist.probs, [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(dist.stderr, 0.0)

    def test_small_example(self):
        t = np.array([[1.0, 2.0], [1.0, 20.0], [np.inf, 30.0], [10.0, 10.0]])
        dist = default_probs(ExitTimeSamples(t), 10.0)
        np.testing.assert_allclose(dist.probs, [0.25, 0.25, 0.5])
        np.testing.assert_allclose(dist.stderr, np.sqrt(dist.probs * (1 - dist.probs) / 4))
        assert dist.table()[0] == ("P2", 0.5, pytest.approx(0.25))

    @given(times, st.floats(0.1, 25.0))
    def test_sums_to_one_exactly(self, t, horizon):
        dist = default_probs(ExitTimeSamples(t), horizon)
        assert math.fsum(dist.probs) == 1.0
        assert np.all(dist.probs >= 0) and dist.n_dims == t.shape[1]

    @given(times, st.floats(0.1, 25.0), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, t, horizon, rnd):
        order = list(range(t.shape[0]))
        rnd.shuffle(order)
        a = default_probs(ExitTimeSamples(t), horizon).probs
        b = default_probs(ExitTimeSamples(t[order]), horizon).probs
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_horizon(self):
        with pytest.raises(ValueError):
            default_probs(ExitTimeSamples(np.ones((3, 2))), 0.0)


class TestKs1Sample:
    def test_calibration(self):
        gen = np.random.default_rng(1)
        rejects = sum(ks_1sample(norm.ppf(gen.random(100000)), norm.cdf, alpha=0.01).reject
                      for _ in range(200))
        # Binomial(200, 0.01): P(X >= 8) < 1e-3
        assert rejects <= 7

    def test_power_against_shift(self):
        gen = np.random.default_rng(2)
        rejects = sum(ks_1sample(gen.standard_normal(100000) + 0.05, norm.cdf).reject
                      for _ in range(100))
        assert rejects >= 99

    def test_quantile_grid(self):
        n = 1000
        x = norm.ppf((np.arange(n) + 0.5) / n)
        rep = ks_1sample(x, norm.cdf)
        assert rep.statistic <= 1.0 / n and not rep.reject

    def test_statistic_matches_scipy(self):
        from scipy.stats import kstest
        x = np.random.default_rng(3).standard_normal(500)
        assert ks_1sample(x, norm.cdf).statistic == pytest.approx(
            kstest(x, "norm").statistic, rel=1e-12)

    def test_rejects_censored(self):
        with pytest.raises(ValueError, match="finite"):
            ks_1sample([1.0, np.inf], norm.cdf)


class TestQuadrantStatistic:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_matches_brute_force(self, d):
        gen = np.random.default_rng(d)
        a = gen.standard_normal((40, d))
        b = gen.standard_normal((55, d)) + 0.3
        # ties across samples land on the <= side of the anchor
        b[:5] = a[:5]
        assert quadrant_statistic(a, b) == pytest.approx(_brute_quadrant(a, b), abs=1e-12)

    @given(st.integers(0, 10 ** 6))
    def test_matches_brute_force_with_ties(self, seed):
        gen = np.random.default_rng(seed)
        a = gen.integers(0, 4, (gen.integers(1, 15), 2)).astype(float)
        b = gen.integers(0, 4, (gen.integers(1, 15), 2)).astype(float)
        assert quadrant_statistic(a, b) == pytest.approx(_brute_quadrant(a, b), abs=1e-12)


class TestKs2SampleMd:
    def test_self_is_zero(self):
        a = np.random.default_rng(4).exponential(size=(2000, 2))
        rep = ks_2sample_md(a, a, permutations=19)
        assert rep.statistic == 0.0 and not rep.reject

    def test_symmetric(self):
        gen = np.random.default_rng(5)
        a, b = gen.exponential(size=(700, 2)), gen.exponential(size=(900, 2)) * 1.1
        assert ks_2sample_md(a, b, permutations=9).statistic == \
            ks_2sample_md(b, a, permutations=9).statistic

    def test_monotone_transform_invariance(self):
        gen = np.random.default_rng(6)
        a, b = gen.exponential(size=(800, 3)), gen.exponential(size=(600, 3))

        def warp(x):
            return np.column_stack([np.log(x[:, 0]), -np.exp(-x[:, 1]), x[:, 2] ** 3])

        assert quadrant_statistic(a, b) == quadrant_statistic(warp(a), warp(b))

    def test_detects_correlation_change(self):
        gen = np.random.default_rng(7)
        cov = [[1.0, 0.5], [0.5, 1.0]]
        a = gen.multivariate_normal([0, 0], cov, 5000)
        b = gen.standard_normal((5000, 2))
        rep = ks_2sample_md(a, b, permutations=99)
        assert rep.reject and rep.p_value == 0.01

    @pytest.mark.slow
    def test_null_rejection_rate(self):
        gen = np.random.default_rng(8)
        rejects = 0
        for rep in range(100):
            a, b = gen.exponential(size=(10000, 2)), gen.exponential(size=(10000, 2))
            rejects += ks_2sample_md(a, b, alpha=0.01, permutations=199, seed=rep).reject
        assert rejects / 100 <= 0.03

    def test_excludes_censored_rows(self):
        a = np.array([[1.0, 2.0], [np.inf, 1.0], [3.0, 1.0]])
        b = np.array([[1.0, 2.0], [2.0, np.inf], [np.inf, np.inf], [0.5, 0.5]])
        rep = ks_2sample_md(ExitTimeSamples(a), ExitTimeSamples(b), permutations=9)
        assert (rep.n_a, rep.n_b, rep.excluded_a, rep.excluded_b) == (2, 2, 1, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            ks_2sample_md(np.ones((3, 2)), np.ones((3, 3)))

    def test_all_censored(self):
        with pytest.raises(ValueError):
            ks_2sample_md(np.full((3, 2), np.inf), np.ones((3, 2)))

    def test_reproducible_p_value(self):
        gen = np.random.default_rng(9)
        a, b = gen.exponential(size=(300, 2)), gen.exponential(size=(300, 2))
        assert ks_2sample_md(a, b, seed=3).p_value == ks_2sample_md(a, b, seed=3).p_value
