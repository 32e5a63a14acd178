import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from firstexit import (PortfolioModel, calibrate, chi_from_normal, ks_1sample,
                       ks_2sample_md, marginal_cdf, pair_rank_corr, root_probs, roots, sample,
                       sample_drifted_2d, sample_zero_drift, set_threads)
from firstexit.calibration import CalibratedCopula, chi2_uniform
from firstexit.density2d import PairModel
from firstexit.experiments import standard_model
from firstexit.marginal import DimensionParams, ExitTimeSamples, sample_marginal, transform_h
from firstexit.rng import NORMALS, SELECTOR, RandomStreams
from firstexit.sampler import DegenerateSelectionError, RootPair, RootSelection

LOG5 = math.log(5.0)
DRIFTED = DimensionParams(mu=-0.05, sigma=1.0, x0=LOG5, barrier=0.0)
STILL = DimensionParams(mu=0.0, sigma=1.0, x0=LOG5, barrier=0.0)

# mpmath polyroots of 0.04 x^2 - 1.4 x + 1 = 0, i.e. (0.2 x - 1)^2 = x
ROOTS_MU02 = (0.72949016875157733, 34.270509831248420)


def chi2_cdf(x):
    return 2.0 * norm.cdf(np.sqrt(x)) - 1.0


def _pair_copula(rho_gauss):
    sigma = np.array([[1.0, rho_gauss], [rho_gauss, 1.0]])
    return CalibratedCopula(sigma, np.linalg.cholesky(sigma))


@pytest.fixture(scope="module")
def drifted_run():
    model = standard_model(2, -0.05, 0.5)
    cop = calibrate(model)
    return model, cop, sample(model, cop, 100000, rng=11)


@pytest.fixture(scope="module")
def zero_run():
    model = standard_model(2, 0.0, 0.5)
    cop = calibrate(model)
    return model, cop, sample(model, cop, 100000, rng=12)


class TestChiFromNormal:
    def test_origin(self):
        assert chi_from_normal(0.0) == pytest.approx(0.45493642311957283, rel=1e-15)
        assert chi_from_normal(0.0) == pytest.approx(norm.ppf(0.75) ** 2, rel=1e-15)

    def test_strictly_increasing(self):
        z = np.linspace(-25, 8, 20001)
        assert np.all(np.diff(chi_from_normal(z)) > 0)

    @given(st.floats(-25, 35))
    def test_matches_direct_formula_in_the_body(self, z):
        # direct formula is accurate away from the tails
        if -6 < z < 6:
            direct = norm.ppf((norm.cdf(z) + 1.0) / 2.0) ** 2
            assert chi_from_normal(z) == pytest.approx(direct, rel=1e-9)
        assert chi_from_normal(z) > 0

    def test_tails_keep_precision(self):
        # chi2 ~ pi Phi(z)^2 / 2 as z -> -inf
        z = -20.0
        assert chi_from_normal(z) == pytest.approx(math.pi / 2 * norm.cdf(z) ** 2, rel=1e-6)
        assert np.isfinite(chi_from_normal(9.0)) and chi_from_normal(9.0) > 80

    def test_chi_squared_law(self):
        x = chi_from_normal(np.random.default_rng(0).standard_normal(100000))
        assert not ks_1sample(x, chi2_cdf, alpha=0.01).reject

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            chi_from_normal(np.inf)


class TestRoots:
    def test_zero_drift(self):
        p = DimensionParams(mu=0.0, sigma=1.0, x0=0.0, barrier=1.0)
        assert roots(p, 4.0) == RootPair(0.25, 0.25)

    def test_drifted_example(self):
        p = DimensionParams(mu=0.2, sigma=1.0, x0=0.0, barrier=1.0)
        rp = roots(p, 1.0)
        assert rp.x1 == pytest.approx(ROOTS_MU02[0], rel=1e-14)
        assert rp.x2 == pytest.approx(ROOTS_MU02[1], rel=1e-14)

    @given(st.floats(0.01, 2.0), st.floats(0.2, 3.0), st.floats(0.1, 5.0),
           st.floats(1e-6, 50.0), st.booleans())
    def test_invariants(self, mu, sigma, dist, chi2, down):
        sgn = -1.0 if down else 1.0
        p = DimensionParams(mu=sgn * mu, sigma=sigma, x0=0.0, barrier=sgn * dist)
        rp = roots(p, chi2)
        assert 0 < rp.x1 <= rp.x2
        assert rp.x1 * rp.x2 == pytest.approx((dist / mu) ** 2, rel=1e-10)
        for x in (rp.x1, rp.x2):
            assert transform_h(p, x) == pytest.approx(chi2, rel=1e-10)

    def test_rejects_defective_and_negative(self):
        with pytest.raises(ValueError):
            roots(DimensionParams(mu=0.1, sigma=1.0, x0=1.0, barrier=0.0), 1.0)
        with pytest.raises(ValueError):
            roots(STILL, -1.0)


class TestRootProbs:
    pair = PairModel(DRIFTED, DimensionParams(-0.1, 0.7, 1.0, 0.0), 0.4)

    @given(st.floats(0.01, 12.0), st.floats(0.01, 12.0))
    def test_sums_to_one(self, c1, c2):
        sel = root_probs(self.pair, roots(self.pair.d1, c1), roots(self.pair.d2, c2))
        assert sum(sel.probs.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(v >= 0 for v in sel.probs.values())

    def test_independent_pair_factorizes(self):
        gen = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            d1 = DimensionParams(-gen.uniform(0.01, 1), gen.uniform(0.3, 2), gen.uniform(0.2, 3), 0)
            d2 = DimensionParams(gen.uniform(0.01, 1), gen.uniform(0.3, 2), 0, gen.uniform(0.2, 3))
            pair = PairModel(d1, d2, 0.0)
            r1, r2 = roots(d1, gen.uniform(0.05, 5)), roots(d2, gen.uniform(0.05, 5))
            p = root_probs(pair, r1, r2).probs
            m1 = d1.distance / d1.mu
            m2 = d2.distance / d2.mu
            q1, q2 = m1 / (m1 + r1.x1), m2 / (m2 + r2.x1)
            want = {(1, 1): q1 * q2, (1, 2): q1 * (1 - q2),
                    (2, 1): (1 - q1) * q2, (2, 2): (1 - q1) * (1 - q2)}
            for k in want:
                worst = max(worst, abs(p[k] - want[k]))
        assert worst <= 1e-8

    def test_zero_drift_single_combination(self):
        pair = PairModel(STILL, STILL, 0.3)
        sel = root_probs(pair, roots(STILL, 1.0), roots(STILL, 2.0))
        assert sel.probs == {(1, 1): 1.0, (1, 2): 0.0, (2, 1): 0.0, (2, 2): 0.0}

    def test_mixed_drift_two_combinations(self):
        pair = PairModel(DRIFTED, STILL, 0.3)
        sel = root_probs(pair, roots(DRIFTED, 1.0), roots(STILL, 2.0))
        assert sel.probs[(1, 2)] == 0.0 and sel.probs[(2, 2)] == 0.0
        assert sel.probs[(1, 1)] + sel.probs[(2, 1)] == pytest.approx(1.0, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateSelectionError):
            root_probs(self.pair, RootPair(1e-5, 2e-5), RootPair(3e-5, 4e-5))

    def test_lexicographic_partition(self):
        sel = RootSelection({(1, 1): 0.25, (1, 2): 0.25, (2, 1): 0.0, (2, 2): 0.5})
        assert sel.select(0.0) == (1, 1)
        assert sel.select(0.3) == (1, 2)
        assert sel.select(0.5) == (2, 2)
        assert sel.select(1.0) == (2, 2)


class TestZeroDriftSampler:
    def test_marginals(self, zero_run):
        model, _, out = zero_run
        for k, d in enumerate(model.dims):
            assert not ks_1sample(out.times[:, k], lambda t: marginal_cdf(d, t)).reject

    def test_all_finite_positive(self, zero_run):
        t = zero_run[2].times
        assert np.all(np.isfinite(t)) and np.all(t > 0)

    def test_three_dimensions(self):
        model = standard_model(3, 0.0, 0.1)
        out = sample(model, calibrate(model), 50000, rng=4)
        assert out.times.shape == (50000, 3)
        for k in range(3):
            assert not ks_1sample(out.times[:, k], lambda t: marginal_cdf(STILL, t)).reject

    def test_independence(self):
        model = standard_model(2, 0.0, 0.0)
        out = sample(model, calibrate(model), 100000, rng=5)
        u = chi2_uniform(STILL, out.times)
        r = np.corrcoef(u[:, 0], u[:, 1])[0, 1]
        assert abs(r) <= 3 / math.sqrt(100000)

    def test_independent_joint_law(self):
        # exact at rho = 0: compare with independent marginal draws
        model = standard_model(2, 0.0, 0.0)
        a = sample(model, calibrate(model), 20000, rng=6)
        gen = np.random.default_rng(7)
        b = np.column_stack([sample_marginal(STILL, gen, 20000) for _ in range(2)])
        assert not ks_2sample_md(a, ExitTimeSamples(b), alpha=0.01, permutations=99).reject

    def test_covariance_matching(self, zero_run):
        model, _, out = zero_run
        target = pair_rank_corr(model.pair(0, 1))
        u = chi2_uniform(STILL, out.times)
        r = np.corrcoef(u[:, 0], u[:, 1])[0, 1]
        se = 1.06 * (1 - r * r) / math.sqrt(len(out))
        assert abs(r - target) <= 3 * se

    def test_rejects_drift_and_mismatch(self):
        with pytest.raises(ValueError, match="zero"):
            sample_zero_drift(standard_model(2, -0.05, 0.1), _pair_copula(0.1), 10)
        model = standard_model(3, 0.0, 0.1)
        with pytest.raises(ValueError, match="dimensions"):
            sample_zero_drift(model, _pair_copula(0.1), 10)
        with pytest.raises(ValueError):
            sample_zero_drift(standard_model(2, 0.0, 0.1), _pair_copula(0.1), 0)


class TestDriftedSampler:
    def test_marginals(self, drifted_run):
        model, _, out = drifted_run
        for k, d in enumerate(model.dims):
            assert not ks_1sample(out.times[:, k], lambda t: marginal_cdf(d, t)).reject

    def test_covariance_matching(self, drifted_run):
        model, _, out = drifted_run
        target = pair_rank_corr(model.pair(0, 1))
        u = chi2_uniform(DRIFTED, out.times)
        r = np.corrcoef(u[:, 0], u[:, 1])[0, 1]
        se = 1.06 * (1 - r * r) / math.sqrt(len(out))
        assert abs(r - target) <= 3 * se

    def test_both_roots_used(self, drifted_run):
        # the larger root is far in the tail; some scenarios must select it
        t = drifted_run[2].times
        assert np.any(t > 100) and np.all(np.isfinite(t))

    def test_mixed_drift(self):
        pair = PairModel(DRIFTED, STILL, 0.3)
        model = PortfolioModel((DRIFTED, STILL), np.array([[1.0, 0.3], [0.3, 1.0]]))
        out = sample_drifted_2d(pair, calibrate(model), 30000, rng=8)
        for k, d in enumerate((DRIFTED, STILL)):
            assert not ks_1sample(out.times[:, k], lambda t: marginal_cdf(d, t)).reject

    def test_rejects_three_dimensions(self):
        with pytest.raises(ValueError, match="two coordinates"):
            sample(standard_model(3, -0.05, 0.1), _pair_copula(0.1), 10)

    def test_rejects_defective(self):
        bad = DimensionParams(mu=0.05, sigma=1.0, x0=LOG5, barrier=0.0)
        with pytest.raises(ValueError, match="towards the barrier"):
            sample_drifted_2d(PairModel(bad, DRIFTED, 0.1), _pair_copula(0.1), 10)


class TestStreams:
    def test_selector_independent_of_normals(self):
        s = RandomStreams(9)
        idx = np.arange(200000)
        z = s.normals(NORMALS, idx, 2)
        u = s.uniforms(SELECTOR, idx, 1)[:, 0]
        for k in range(2):
            assert abs(np.corrcoef(u, z[:, k])[0, 1]) <= 3 / math.sqrt(idx.size)

    @pytest.mark.parametrize("mu", [0.0, -0.05])
    def test_reproducible_and_order_free(self, mu):
        model = standard_model(2, mu, 0.5)
        cop = _pair_copula(0.4)
        set_threads(1)
        one = sample(model, cop, 3000, rng=21).times
        set_threads(1 << 10)
        again = sample(model, cop, 3000, rng=21).times
        head = sample(model, cop, 1000, rng=21).times
        np.testing.assert_array_equal(one, again)
        np.testing.assert_array_equal(one[:1000], head)
        assert not np.array_equal(one, sample(model, cop, 3000, rng=22).times)
