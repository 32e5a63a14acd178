"""Acceptance criteria, one test each, with a PASS/FAIL line printed per criterion.

Tolerances are pinned here and never loosened.  Criteria 1, 2 and 3 compare
with published simulation values that a correct copula sampler does not
reach; each of those tests also prints the closed-form copula value, which
shows that the gap is systematic and not sampling noise.
"""
import math
import time

import numpy as np
import pytest
from scipy.stats import rankdata

from firstexit import (EulerConfig, PortfolioModel, calibrate, chi2_covariance,
                       default_probs, euler_sample, integrate_2d, joint_density, ks_1sample,
                       marginal_cdf, pearson_to_spearman, root_probs, roots, sample)
from firstexit.experiments import CASES, HORIZON, START, reproduce, standard_model
from firstexit.marginal import DimensionParams
from firstexit.numerics import QuadratureSpec

from oracles import gaussian_copula_probs

N_TABLE = 1_000_000
N_EULER = 100_000
N_KS = 100_000
N_MARGINAL = 100_000
MARGINAL_REPS = 20
SEED = 1

PROB_TOL = {1: 0.006, 2: 0.008, 3: 0.008}
EULER_TOL = 0.010
COV_TARGET, COV_TOL = -0.4007, 0.002
NORM_TOL = 1e-3
SELECTION_TOL = 1e-8
SE_MULT = 3.0


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance") / "calibration.json")


@pytest.fixture
def announce(capsys):
    def say(k, title, ok, lines=()):
        with capsys.disabled():
            print()
            for line in lines:
                print(f"    {line}")
            print(f"ACCEPTANCE {k} [{title}]: {'PASS' if ok else 'FAIL'}")
    return say


def _closed_form_line(case, cache):
    """Exact copula probabilities (P_N..P_0) for a zero-drift case."""
    model = case.model
    sigma = calibrate(model, cache=cache).sigma
    d = [abs(p.distance) for p in model.dims]
    exact = gaussian_copula_probs(d, [p.sigma for p in model.dims], sigma, HORIZON)[::-1]
    return "closed-form copula value: " + ", ".join(f"{v:.6f}" for v in exact)


def _table_lines(rep):
    return rep.format().splitlines()[1:-1]


def test_criterion_1_table_2(announce, cache):
    t0 = time.perf_counter()
    rep = reproduce(2, n=N_TABLE, seed=SEED, cache=cache)
    elapsed = time.perf_counter() - t0
    assert CASES[2].tolerance == PROB_TOL[1]
    lines = _table_lines(rep) + [_closed_form_line(CASES[2], cache),
                                 f"wall time incl. calibration: {elapsed:.1f} s"]
    announce(1, "Table 2, copula, 1e6, +-0.006", rep.passed, lines)
    assert rep.passed


def test_criterion_2_tables_3_to_7(announce, cache):
    ok = True
    lines = []
    for k in (3, 4, 5, 6, 7):
        assert CASES[k].tolerance == PROB_TOL[2]
        t0 = time.perf_counter()
        rep = reproduce(k, n=N_TABLE, seed=SEED, cache=cache)
        lines.append(f"Table {k} ({time.perf_counter() - t0:.0f} s): "
                     f"{'PASS' if rep.passed else 'FAIL'}")
        lines += ["  " + s for s in _table_lines(rep)]
        if CASES[k].mu == 0.0:
            lines.append("  " + _closed_form_line(CASES[k], cache))
        ok &= rep.passed
    announce(2, "Tables 3-7, copula, 1e6, +-0.008; rho=-0.5 within 20% of exact", ok, lines)
    assert ok


def test_criterion_3_table_8(announce, cache):
    assert CASES[8].tolerance == PROB_TOL[3]
    rep = reproduce(8, n=N_TABLE, seed=SEED, cache=cache)
    lines = _table_lines(rep) + [_closed_form_line(CASES[8], cache)]
    announce(3, "Table 8, N=3, copula, 1e6, +-0.008", rep.passed, lines)
    assert rep.passed


def test_criterion_4_euler_baseline(announce):
    model = standard_model(2, 0.0, 0.1)
    t0 = time.perf_counter()
    dist = default_probs(euler_sample(model, EulerConfig(scenarios=N_EULER, seed=SEED)),
                         HORIZON)
    elapsed = time.perf_counter() - t0
    p2, ref = float(dist.probs[2]), CASES[2].euler[0]
    ok = abs(p2 - ref) <= EULER_TOL
    announce(4, "Euler step 0.0015625, 1e5, P2 +-0.010", ok,
             [f"P2 = {p2:.6f} (se {dist.stderr[2]:.4f}) vs {ref:.6f}; {elapsed:.1f} s"])
    assert ok


def test_criterion_5_covariance_anchor(announce):
    d = DimensionParams(mu=0.0, sigma=1.0, x0=5.0, barrier=0.0)
    pair = PortfolioModel((d, d), np.array([[1.0, -0.5], [-0.5, 1.0]])).pair(0, 1)
    cov, err = chi2_covariance(pair, full_output=True)
    ok = abs(cov - COV_TARGET) <= COV_TOL
    announce(5, "Cov(chi1^2, chi2^2) = -0.4007 +-0.002", ok,
             [f"quadrature: {cov:.6f} (error estimate {err:.1e})"])
    assert ok


def test_criterion_6_normalization(announce):
    spec = QuadratureSpec(1e-9, 1e-8)
    lines, ok = [], True
    for rho in (-0.5, 0.1, 0.5):
        pair = standard_model(2, 0.0, rho).pair(0, 1)
        total, err = integrate_2d(lambda s, t: joint_density(pair, s, t), spec,
                                  full_output=True, scale=START ** 2)
        ok &= abs(total - 1.0) <= NORM_TOL
        lines.append(f"rho={rho:+.1f}: integral {total:.9f} (error estimate {err:.1e})")
    announce(6, "density integrates to 1 +-1e-3", ok, lines)
    assert ok


def test_criterion_7_table_1(announce, cache):
    rep = reproduce(1, n=N_KS, seed=SEED, cache=cache)
    announce(7, "Table 1, 2-D K-S copula vs Euler, 1e5, alpha=0.01, all H0",
             rep.passed, _table_lines(rep))
    assert rep.passed


def test_criterion_8_marginal_exactness(announce, cache):
    configs = [("zero drift, N=3, rho=0.1", standard_model(3, 0.0, 0.1)),
               ("drift -0.05, N=2, rho=0.5", standard_model(2, -0.05, 0.5))]
    lines, ok = [], True
    for name, model in configs:
        cop = calibrate(model, cache=cache)
        rejects = np.zeros(model.n_dims, dtype=int)
        for rep in range(MARGINAL_REPS):
            t = sample(model, cop, N_MARGINAL, rng=1000 + rep).times
            for k, p in enumerate(model.dims):
                rejects[k] += ks_1sample(t[:, k], lambda x: marginal_cdf(p, x),
                                         alpha=0.01).reject
        ok &= bool(np.all(rejects <= 1))
        lines.append(f"{name}: rejections per coordinate {rejects.tolist()} "
                     f"of {MARGINAL_REPS}")
    announce(8, "marginal K-S, 20 x 1e5, <= 1 rejection per coordinate", ok, lines)
    assert ok


def test_criterion_9_one_dimensional_selection(announce):
    gen = np.random.default_rng(SEED)
    still = DimensionParams(mu=0.0, sigma=1.0, x0=1.0, barrier=0.0)
    worst = 0.0
    for _ in range(1000):
        sign = gen.choice([-1.0, 1.0])
        dist = gen.uniform(0.05, 5.0)
        p = DimensionParams(mu=sign * gen.uniform(0.005, 2.0), sigma=gen.uniform(0.1, 3.0),
                            x0=0.0, barrier=sign * dist)
        rp = roots(p, gen.exponential(1.0))
        # a zero-drift partner has a single root, so only coordinate 1 is selected
        sel = root_probs(PortfolioModel((p, still), np.eye(2)).pair(0, 1),
                         rp, roots(still, 1.0)).probs
        m = p.distance / p.mu
        worst = max(worst, abs(sel[(1, 1)] - m / (m + rp.x1)))
    ok = worst <= SELECTION_TOL
    announce(9, "N=1 root selection = m/(m+x1) within 1e-8, 1000 draws", ok,
             [f"largest deviation {worst:.2e}"])
    assert ok


def test_criterion_10_spearman_map(announce):
    gen = np.random.default_rng(SEED)
    n, batches = 1_000_000, 100
    lines, ok = [], True
    for rho in np.round(np.arange(-0.9, 0.91, 0.1), 1):
        z1 = gen.standard_normal(n)
        z2 = rho * z1 + math.sqrt(1 - rho * rho) * gen.standard_normal(n)

        def spearman(a, b):
            return np.corrcoef(rankdata(a), rankdata(b))[0, 1]

        # Phi is increasing, so ranks of Phi(Z) are ranks of Z
        est = spearman(z1, z2)
        per = [spearman(a, b) for a, b in zip(np.split(z1, batches), np.split(z2, batches))]
        se = np.std(per, ddof=1) / math.sqrt(batches)
        want = float(pearson_to_spearman(rho))
        good = abs(est - want) <= SE_MULT * se
        ok &= good
        lines.append(f"rho_Z={rho:+.1f}: {est:+.5f} vs {want:+.5f} "
                     f"({(est - want) / se:+.2f} se)")
    announce(10, "Spearman of (Phi(Z1), Phi(Z2)) = (6/pi) asin(rho/2) within 3 se", ok, lines)
    assert ok
