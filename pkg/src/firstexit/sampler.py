"""
Copula samplers for joint exit times.

A correlated Gaussian vector ``Z ~ N(0, Sigma)`` is mapped coordinatewise to
chi-squared(1) variables, ``chi_i = Phi^{-1}((Phi(Z_i) + 1) / 2)``.  Each
exit time solves ``H_i(tau_i) = chi_i^2``:

* zero drift: the single root ``tau_i = d_i^2 / (sigma_i^2 chi_i^2)``;
* drift: two roots per coordinate; for a pair the root combination is drawn
  with probabilities proportional to ``f(x_1, x_2) / |H_1'(x_1) H_2'(x_2)|``
  where ``f`` is the joint density, using a uniform that is independent of
  ``Z``.

The Gaussian draws, the selector uniforms and any redraws all come from
counter-based substreams keyed by scenario index, so output does not depend
on the number of threads.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcinv, erfinv

from ._backend import USE_NUMBA, njit, prange
from .density2d import PairModel, _evaluate, geometry, log_density_point
from .marginal import ExitTimeSamples, root_pair, transform_h_prime
from .numerics import NonConvergenceError, std_normal_cdf
from .rng import NORMALS, SELECTOR, RandomStreams

CHUNK = 1 << 17
MAX_REDRAW_ROUNDS = 50

_OK = 0
_DEGENERATE = 1
_SERIES_CAP = 2

COMBOS = ((1, 1), (1, 2), (2, 1), (2, 2))


class DegenerateSelectionError(ArithmeticError):
    """The joint density vanished at every root combination."""


@dataclass(frozen=True)
class RootPair:
    """Both preimages ``x1 <= x2`` of one chi-squared value (equal for zero drift)."""

    x1: float
    x2: float


@dataclass(frozen=True)
class RootSelection:
    """Selection probabilities of the root combinations, keyed by ``(u1, u2)``."""

    probs: dict

    def select(self, u):
        """Combination picked by ``u`` under the lexicographic partition of [0, 1]."""
        acc = 0.0
        last = None
        for combo in COMBOS:
            p = self.probs.get(combo, 0.0)
            if p > 0.0:
                last = combo
            acc += p
            if u < acc:
                return combo
        return last


def _as_streams(rng):
    if isinstance(rng, RandomStreams):
        return rng
    return RandomStreams(0 if rng is None else int(rng))


# ---------------------------------------------------------------------------
# chi-squared values and roots
# ---------------------------------------------------------------------------

def chi_from_normal(z):
    """``(Phi^{-1}((Phi(z) + 1) / 2))^2``, chi-squared(1) when ``z`` is standard normal.

    Evaluated as ``2 erfinv(Phi(z))^2`` for ``z < 0`` and
    ``2 erfcinv(Phi(-z))^2`` otherwise, so neither tail loses digits to
    ``(Phi(z) + 1) / 2`` rounding to 1/2 or 1.
    """
    z = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z)):
        raise ValueError("chi_from_normal requires finite input")
    neg = z < 0.0
    chi = np.where(neg, erfinv(std_normal_cdf(np.where(neg, z, 0.0))),
                   erfcinv(std_normal_cdf(-np.where(neg, 0.0, z))))
    out = 2.0 * chi * chi
    return float(out) if out.ndim == 0 else out


def roots(p, chi2):
    """Root pair of ``H(x) = chi2`` for one non-defective coordinate."""
    if p.defective:
        raise ValueError("roots are defined for non-defective coordinates only")
    if not chi2 >= 0:
        raise ValueError("chi2 must be nonnegative")
    x1, x2 = root_pair(p.mu, p.sigma, p.distance, chi2)
    return RootPair(float(x1), float(x2))


def _log_weight_many(m, s, t):
    """log of f(s, t) / |H_1'(s) H_2'(t)| for arrays, with the density status."""
    logf, status, _ = _evaluate(m, s, t)
    with np.errstate(divide="ignore"):
        lw = (logf - np.log(np.abs(transform_h_prime(m.d1, s)))
              - np.log(np.abs(transform_h_prime(m.d2, t))))
    return lw, status


def _normalize(lw):
    """Probabilities from log weights along the last axis; NaN rows are degenerate."""
    lw = np.asarray(lw, dtype=float)
    top = np.max(lw, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        inf_rows = np.isposinf(top)
        w = np.where(inf_rows, np.isposinf(lw).astype(float), np.exp(lw - top))
    total = w.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = w / total
    bad = ~np.isfinite(top) & ~inf_rows
    return np.where(bad, np.nan, p)


def root_probs(pair, rp1, rp2):
    """Selection probabilities of the four root combinations of a pair.

    A zero-drift coordinate has a single root, so combinations using its
    second root get probability 0.

    Raises
    ------
    DegenerateSelectionError
        If the joint density is zero at every admissible combination.
    """
    cand = []
    for u1, u2 in COMBOS:
        if (u1 == 2 and pair.d1.mu == 0.0) or (u2 == 2 and pair.d2.mu == 0.0):
            cand.append(None)
            continue
        cand.append((rp1.x1 if u1 == 1 else rp1.x2, rp2.x1 if u2 == 1 else rp2.x2))
    live = [c for c in cand if c is not None]
    s = np.array([c[0] for c in live])
    t = np.array([c[1] for c in live])
    lw, status = _log_weight_many(pair, s, t)
    if np.any(status != 0):
        raise NonConvergenceError("joint density series hit the term cap during root selection")
    p = _normalize(lw)
    if np.any(np.isnan(p)):
        raise DegenerateSelectionError("joint density vanished at every root combination")
    it = iter(p)
    return RootSelection({combo: (0.0 if c is None else float(next(it)))
                          for combo, c in zip(COMBOS, cand)})


# ---------------------------------------------------------------------------
# zero drift, any dimension
# ---------------------------------------------------------------------------

def _check_copula(model_dims, copula):
    if copula.n_dims != model_dims:
        raise ValueError(f"copula has {copula.n_dims} dimensions, model has {model_dims}")


def sample_zero_drift(model, copula, n, rng=0):
    """Exit times for a driftless model of any dimension.

    Parameters
    ----------
    model : PortfolioModel
    copula : CalibratedCopula
    n : int
        Number of scenarios.
    rng : int or RandomStreams
        Seed; scenario ``i`` always uses substream ``i``.
    """
    if not model.zero_drift:
        raise ValueError("sample_zero_drift requires every drift to be zero")
    _check_copula(model.n_dims, copula)
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    streams = _as_streams(rng)
    scale = np.array([(d.distance / d.sigma) ** 2 for d in model.dims])
    out = np.empty((n, model.n_dims))
    for lo in range(0, n, CHUNK):
        idx = np.arange(lo, min(lo + CHUNK, n))
        z = streams.normals(NORMALS, idx, model.n_dims) @ copula.chol.T
        with np.errstate(divide="ignore"):
            out[idx] = scale / chi_from_normal(z)
    return ExitTimeSamples(out, 0, {"method": "copula", "seed": streams.seed})


# ---------------------------------------------------------------------------
# drifted pair
# ---------------------------------------------------------------------------

@njit(cache=True)
def _roots_scalar(mu, sigma, d, chi2):
    if mu == 0.0:
        x = d * d / (sigma * sigma * chi2)
        return x, x
    m = d / mu
    s2c = sigma * sigma * chi2
    x2 = m + (s2c + math.sqrt(s2c * (4.0 * mu * d + s2c))) / (2.0 * mu * mu)
    return m * m / x2, x2


@njit(cache=True)
def _log_abs_hprime(mu, sigma, d, x):
    return math.log(abs((mu * x) ** 2 - d * d)) - 2.0 * math.log(sigma * x)


@njit(cache=True, parallel=True)
def _select_kernel(chi2, u, mu, sigma, dist, alpha, r0, theta0, g1, g2):
    n = chi2.shape[0]
    times = np.empty((n, 2))
    status = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        a1, a2 = _roots_scalar(mu[0], sigma[0], dist[0], chi2[i, 0])
        b1, b2 = _roots_scalar(mu[1], sigma[1], dist[1], chi2[i, 1])
        xs = (a1, a1, a2, a2)
        ys = (b1, b2, b1, b2)
        lw = np.full(4, -np.inf)
        top = -np.inf
        for c in range(4):
            if (c >= 2 and mu[0] == 0.0) or (c % 2 == 1 and mu[1] == 0.0):
                continue
            lf, st, _ = log_density_point(alpha, r0, theta0, g1, g2, xs[c], ys[c])
            if st != 0:
                status[i] = _SERIES_CAP
            v = lf - _log_abs_hprime(mu[0], sigma[0], dist[0], xs[c]) \
                - _log_abs_hprime(mu[1], sigma[1], dist[1], ys[c])
            lw[c] = v
            if v > top:
                top = v
        if top == -np.inf:
            status[i] = _DEGENERATE
            times[i, 0] = np.nan
            times[i, 1] = np.nan
            continue
        w = np.zeros(4)
        total = 0.0
        for c in range(4):
            if top == np.inf:
                w[c] = 1.0 if lw[c] == np.inf else 0.0
            elif lw[c] > -np.inf:
                w[c] = math.exp(lw[c] - top)
            total += w[c]
        target = u[i] * total
        acc = 0.0
        pick = -1
        for c in range(4):
            if w[c] > 0.0:
                pick = c
                acc += w[c]
                if target < acc:
                    break
        times[i, 0] = xs[pick]
        times[i, 1] = ys[pick]
    return times, status


def _select_numpy(m, chi2, u):
    n = chi2.shape[0]
    r1 = root_pair(m.d1.mu, m.d1.sigma, m.d1.distance, chi2[:, 0])
    r2 = root_pair(m.d2.mu, m.d2.sigma, m.d2.distance, chi2[:, 1])
    xs = np.stack([r1[0], r1[0], r1[1], r1[1]], axis=1)
    ys = np.stack([r2[0], r2[1], r2[0], r2[1]], axis=1)
    allowed = np.array([not ((c >= 2 and m.d1.mu == 0.0) or (c % 2 == 1 and m.d2.mu == 0.0))
                        for c in range(4)])
    lw = np.full((n, 4), -np.inf)
    status = np.zeros(n, dtype=np.int64)
    for c in np.flatnonzero(allowed):
        lw[:, c], st = _log_weight_many(m, xs[:, c], ys[:, c])
        status[st != 0] = _SERIES_CAP
    p = _normalize(lw)
    degenerate = np.isnan(p).any(axis=1)
    p = np.nan_to_num(p)
    cum = np.cumsum(p, axis=1)
    pick = np.minimum((u[:, None] >= cum).sum(axis=1), 3)
    # the last combination with positive probability absorbs rounding at u ~ 1
    last = 3 - np.argmax(p[:, ::-1] > 0, axis=1)
    pick = np.minimum(pick, last)
    rows = np.arange(n)
    times = np.stack([xs[rows, pick], ys[rows, pick]], axis=1)
    status[degenerate] = _DEGENERATE
    times[degenerate] = np.nan
    return times, status


def _select(m, chi2, u):
    if USE_NUMBA:
        g = geometry(m)
        mu = np.array([m.d1.mu, m.d2.mu])
        sigma = np.array([m.d1.sigma, m.d2.sigma])
        dist = np.array([m.d1.distance, m.d2.distance])
        return _select_kernel(np.ascontiguousarray(chi2), np.ascontiguousarray(u), mu, sigma,
                              dist, g.alpha, g.r0, g.theta0, g.mu1_tilde, g.mu2_tilde)
    return _select_numpy(m, chi2, u)


def sample_drifted_2d(pair, copula, n, rng=0):
    """Exit times of a drifted pair by root selection with the joint density.

    Parameters
    ----------
    pair : PairModel
        Both drifts must point towards the barriers; either may be zero.
    copula : CalibratedCopula
        Two-dimensional copula calibrated for ``pair``.
    n : int
    rng : int or RandomStreams

    Returns
    -------
    ExitTimeSamples
        ``redraws`` counts scenarios whose root combinations all had zero
        density; those scenarios are redrawn from the next counter block of
        their own substreams.
    """
    if not isinstance(pair, PairModel):
        raise TypeError("sample_drifted_2d expects a PairModel")
    if pair.d1.defective or pair.d2.defective:
        raise ValueError("drift must point towards the barrier in both coordinates")
    _check_copula(2, copula)
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    streams = _as_streams(rng)
    out = np.empty((n, 2))
    redraws = 0
    for lo in range(0, n, CHUNK):
        todo = np.arange(lo, min(lo + CHUNK, n))
        for attempt in range(MAX_REDRAW_ROUNDS):
            z = streams.normals(NORMALS, todo, 2, offset_pairs=attempt) @ copula.chol.T
            chi2 = chi_from_normal(z)
            u = streams.uniforms(SELECTOR, todo, 1, offset=attempt)[:, 0]
            times, status = _select(pair, chi2, u)
            if np.any(status == _SERIES_CAP):
                raise NonConvergenceError("joint density series hit the term cap "
                                          "during root selection")
            ok = status == _OK
            out[todo[ok]] = times[ok]
            todo = todo[~ok]
            if todo.size == 0:
                break
            redraws += todo.size
        else:
            raise DegenerateSelectionError(
                f"{todo.size} scenario(s) stayed degenerate after {MAX_REDRAW_ROUNDS} redraws")
    return ExitTimeSamples(out, redraws, {"method": "copula", "seed": streams.seed})


def sample(model, copula, n, rng=0):
    """Dispatch to the zero-drift or the drifted-pair sampler."""
    if model.zero_drift:
        return sample_zero_drift(model, copula, n, rng)
    if model.n_dims != 2:
        raise ValueError("drifted models are limited to two coordinates: the joint "
                         "density needed for root selection is only available for pairs")
    return sample_drifted_2d(model.pair(0, 1), copula, n, rng)
