"""
Reference experiments and their reproduction.

Every case uses identical coordinates with ``sigma = 1``, start ``log 5`` and
barrier 0, a horizon of 10, and equal drifts and pairwise correlations.
Cases 2 to 8 compare default-count probabilities with published values;
case 1 runs the two-sample K-S test of copula samples against Euler samples.

The Euler samples of case 1 use a Brownian-bridge crossing check between
grid points, so that discrete monitoring does not bias them late; both
samples are censored at the horizon and incompletely observed scenarios are
left out of the test.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import default_probs, ks_2sample_md
from .calibration import PortfolioModel, calibrate
from .euler import EulerConfig, euler_paths, euler_sample
from .marginal import DimensionParams, ExitTimeSamples
from .sampler import sample

log = logging.getLogger(__name__)

HORIZON = 10.0
EULER_STEP = 0.0015625
START = math.log(5.0)


def standard_model(n_dims, mu, rho):
    """``n_dims`` identical coordinates, common drift ``mu`` and correlation ``rho``."""
    d = DimensionParams(mu=mu, sigma=1.0, x0=START, barrier=0.0)
    corr = np.full((n_dims, n_dims), float(rho))
    np.fill_diagonal(corr, 1.0)
    return PortfolioModel(tuple([d] * n_dims), corr)


@dataclass(frozen=True)
class ProbabilityCase:
    """Default-count probabilities ``(P_N, ..., P_0)`` for one model.

    ``copula`` holds the reference values for the copula sampler; ``exact``
    (pairs only) the closed-form bivariate values and ``euler`` the
    reference Euler estimates at step 0.0015625.  ``max_rel_error_exact``,
    when set, bounds ``|P_i - exact_i| / exact_i`` of the computed values.
    """

    n_dims: int
    mu: float
    rho: float
    copula: tuple
    euler: tuple
    tolerance: float
    exact: tuple = None
    max_rel_error_exact: float = None
    euler_tolerance: float = 0.010

    @property
    def model(self):
        return standard_model(self.n_dims, self.mu, self.rho)

    @property
    def title(self):
        return f"N={self.n_dims}, mu={self.mu:g}, rho={self.rho:g}, T={HORIZON:g}"


@dataclass(frozen=True)
class KsCase:
    """Copula vs Euler two-sample K-S decisions for several pair models."""

    rows: tuple  # (mu, rho)
    expected: tuple  # "H0"/"H1"
    alpha: float = 0.01
    step: float = EULER_STEP

    @property
    def title(self):
        return "two-sample K-S, copula vs bridge-corrected Euler, T=10"


CASES = {
    1: KsCase(rows=((0.0, 0.1), (-0.05, 0.1), (-0.05, 0.5)), expected=("H0", "H0", "H0")),
    2: ProbabilityCase(2, 0.0, 0.1, (0.390521, 0.440707, 0.168782),
                       (0.380781, 0.451572, 0.167657), 0.006,
                       exact=(0.386337, 0.448901, 0.164761)),
    3: ProbabilityCase(2, -0.05, 0.1, (0.445721, 0.426332, 0.127957),
                       (0.440361, 0.428239, 0.131400), 0.008,
                       exact=(0.446907, 0.424764, 0.128328)),
    4: ProbabilityCase(2, 0.0, 0.5, (0.439642, 0.344621, 0.215747),
                       (0.440013, 0.331241, 0.228756), 0.008,
                       exact=(0.445308, 0.330958, 0.223732)),
    5: ProbabilityCase(2, -0.05, 0.5, (0.505348, 0.30397, 0.190682),
                       (0.498137, 0.315721, 0.186142), 0.008,
                       exact=(0.502006, 0.314566, 0.183426)),
    6: ProbabilityCase(2, 0.0, -0.5, (0.325874, 0.570430, 0.103696),
                       (0.301252, 0.607972, 0.090786), 0.008,
                       exact=(0.308726, 0.604123, 0.087150), max_rel_error_exact=0.20),
    7: ProbabilityCase(2, -0.05, -0.5, (0.372292, 0.566252, 0.061456),
                       (0.367961, 0.571982, 0.060057), 0.008,
                       exact=(0.376896, 0.564787, 0.058316), max_rel_error_exact=0.20),
    8: ProbabilityCase(3, 0.0, 0.1, (0.257971, 0.395472, 0.267637, 0.078920),
                       (0.250633, 0.403186, 0.271008, 0.075173), 0.008),
}


@dataclass
class ReportRow:
    label: str
    computed: object
    reference: object
    tolerance: str
    passed: bool
    note: str = ""


@dataclass
class Report:
    case_id: int
    title: str
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def format(self):
        head = f"case {self.case_id}: {self.title}"
        lines = [head, f"{'quantity':<22}{'computed':>12}{'reference':>12}  {'tolerance':<14}result"]
        for r in self.rows:
            c = f"{r.computed:.6f}" if isinstance(r.computed, float) else str(r.computed)
            ref = f"{r.reference:.6f}" if isinstance(r.reference, float) else str(r.reference)
            line = f"{r.label:<22}{c:>12}{ref:>12}  {r.tolerance:<14}{'PASS' if r.passed else 'FAIL'}"
            if r.note:
                line += f"  ({r.note})"
            lines.append(line)
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _probability_report(case_id, case, n, seed, cache, euler_scenarios):
    model = case.model
    cop = calibrate(model, cache=cache)
    log.info("sampling %d copula scenarios", n)
    dist = default_probs(sample(model, cop, n, rng=seed), HORIZON)
    rep = Report(case_id, case.title)
    labels = [f"P{i}" for i in range(model.n_dims, -1, -1)]
    got = [float(dist.probs[i]) for i in range(model.n_dims, -1, -1)]
    se = [float(dist.stderr[i]) for i in range(model.n_dims, -1, -1)]
    for lab, g, s, ref in zip(labels, got, se, case.copula):
        rep.rows.append(ReportRow(lab, g, ref, f"+-{case.tolerance:g}",
                                  abs(g - ref) <= case.tolerance, f"se {s:.4f}"))
    if case.max_rel_error_exact is not None:
        for lab, g, ex in zip(labels, got, case.exact):
            rel = abs(g - ex) / ex
            rep.rows.append(ReportRow(f"{lab} rel. err vs exact", rel, case.max_rel_error_exact,
                                      f"<={case.max_rel_error_exact:g}",
                                      rel <= case.max_rel_error_exact))
    if euler_scenarios:
        log.info("running %d Euler scenarios", euler_scenarios)
        cfg = EulerConfig(step=EULER_STEP, horizon=HORIZON, scenarios=euler_scenarios,
                          seed=seed + 1)
        ed = default_probs(euler_sample(model, cfg), HORIZON)
        top = model.n_dims
        g = float(ed.probs[top])
        rep.rows.append(ReportRow(f"Euler P{top}", g, case.euler[0],
                                  f"+-{case.euler_tolerance:g}",
                                  abs(g - case.euler[0]) <= case.euler_tolerance,
                                  f"se {ed.stderr[top]:.4f}"))
    return rep


def ks_row(mu, rho, n, seed, alpha=0.01, step=EULER_STEP, permutations=199, cache=None):
    """Copula vs bridge-corrected Euler K-S test for one pair model."""
    model = standard_model(2, mu, rho)
    cop = calibrate(model, cache=cache)
    a = sample(model, cop, n, rng=seed).times.copy()
    a[a > HORIZON] = np.inf
    cfg = EulerConfig(step=step, horizon=HORIZON, scenarios=n, seed=seed + 1)
    log.info("Euler run mu=%g rho=%g (%d scenarios)", mu, rho, n)
    b, _ = euler_paths(model, cfg, bridge=True)
    return ks_2sample_md(ExitTimeSamples(a), ExitTimeSamples(b), alpha=alpha,
                         permutations=permutations, seed=seed)


def _ks_report(case_id, case, n, seed, cache):
    rep = Report(case_id, case.title)
    for (mu, rho), want in zip(case.rows, case.expected):
        r = ks_row(mu, rho, n, seed, alpha=case.alpha, step=case.step, cache=cache)
        note = (f"D={r.statistic:.4f} p={r.p_value:.3f} n={r.n_a}/{r.n_b} "
                f"censored {r.excluded_a}/{r.excluded_b}")
        rep.rows.append(ReportRow(f"mu={mu:g} rho={rho:g}", r.decision, want,
                                  f"alpha={case.alpha:g}", r.decision == want, note))
    return rep


def reproduce(case_id, n=None, seed=1, cache=None, euler_scenarios=0):
    """Run reference case ``case_id`` (1 to 8) and compare with its reference values.

    Parameters
    ----------
    case_id : int
    n : int, optional
        Scenarios per sample; defaults to 10**6 for probability cases and
        10**5 for the K-S case.
    seed : int
    cache : str, optional
        Calibration cache file.
    euler_scenarios : int
        When positive, also run the Euler baseline with this many scenarios
        and check its top probability.
    """
    if case_id not in CASES:
        raise ValueError(f"unknown case {case_id}; choose from {sorted(CASES)}")
    case = CASES[case_id]
    if isinstance(case, KsCase):
        return _ks_report(case_id, case, n or 100000, seed, cache)
    return _probability_report(case_id, case, n or 1000000, seed, cache, euler_scenarios)
