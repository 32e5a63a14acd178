"""
Estimators and goodness-of-fit tests for simulated exit times.

``default_probs`` counts how many coordinates of each scenario crossed by a
horizon.  ``ks_1sample`` is the classical Kolmogorov-Smirnov test against a
known CDF.  ``ks_2sample_md`` compares two samples of exit-time vectors with
the quadrant statistic of Fasano and Franceschini: for every pooled data
point and every orthant anchored there, the difference between the two
empirical measures of that orthant; the largest difference is calibrated by
permuting sample labels.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import kstwobign, rankdata

from ._backend import USE_NUMBA, njit
from .marginal import ExitTimeSamples
from .rng import PERMUTATION, RandomStreams


@dataclass(frozen=True)
class DefaultDistribution:
    """``probs[i]`` is the fraction of scenarios with exactly ``i`` defaults by ``horizon``."""

    probs: np.ndarray
    stderr: np.ndarray
    scenarios: int
    horizon: float

    @property
    def n_dims(self):
        return self.probs.size - 1

    def table(self):
        """Rows ``(label, P_i, stderr)`` from ``P_N`` down to ``P_0``."""
        return [(f"P{i}", float(self.probs[i]), float(self.stderr[i]))
                for i in range(self.n_dims, -1, -1)]


def default_probs(samples, horizon):
    """Distribution of the number of defaults by ``horizon``.

    Standard errors are binomial, ``sqrt(P (1 - P) / n)``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    times = samples.times if isinstance(samples, ExitTimeSamples) else np.atleast_2d(samples)
    n, dim = times.shape
    if n == 0:
        raise ValueError("no scenarios")
    k = np.count_nonzero(times <= horizon, axis=1)
    counts = np.bincount(k, minlength=dim + 1)
    probs = counts / n
    # exact unit total: put the rounding residue on the largest cell
    probs[np.argmax(probs)] += 1.0 - math.fsum(probs)
    stderr = np.sqrt(probs * (1.0 - probs) / n)
    return DefaultDistribution(probs, stderr, n, float(horizon))


@dataclass(frozen=True)
class KsReport:
    """Outcome of a Kolmogorov-Smirnov test.

    ``excluded_a``/``excluded_b`` count scenarios dropped because they held
    a censored (``+inf``) entry.
    """

    statistic: float
    alpha: float
    reject: bool
    n_a: int
    n_b: int
    p_value: float
    excluded_a: int = 0
    excluded_b: int = 0

    @property
    def decision(self):
        return "H1" if self.reject else "H0"


def ks_1sample(samples, cdf, alpha=0.01):
    """One-sample K-S test with the asymptotic Kolmogorov distribution.

    Parameters
    ----------
    samples : array_like
        Finite observations.
    cdf : callable
        Vectorized CDF under the null.
    alpha : float
        Significance level.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("ks_1sample needs finite samples; drop censored values first")
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n), 0.0))
    p = float(kstwobign.sf(d * math.sqrt(n)))
    return KsReport(d, alpha, p < alpha, n, 0, p)


# ---------------------------------------------------------------------------
# multidimensional two-sample statistic
# ---------------------------------------------------------------------------

@njit(cache=True)
def _lower_left_counts(order, xr, yr, label, ny):
    """For every point i: number of label-0 and label-1 points with x <= x_i and y <= y_i.

    ``order`` sorts points by x rank; ties in x are inserted before any of
    them is queried, so the comparisons are non-strict.
    """
    n = order.shape[0]
    tree = np.zeros((2, ny + 1), dtype=np.int64)
    out = np.zeros((n, 2), dtype=np.int64)
    k = 0
    while k < n:
        j = k
        while j < n and xr[order[j]] == xr[order[k]]:
            p = order[j]
            pos = yr[p] + 1
            lab = label[p]
            while pos <= ny:
                tree[lab, pos] += 1
                pos += pos & (-pos)
            j += 1
        for m in range(k, j):
            p = order[m]
            pos = yr[p] + 1
            c0 = 0
            c1 = 0
            while pos > 0:
                c0 += tree[0, pos]
                c1 += tree[1, pos]
                pos -= pos & (-pos)
            out[p, 0] = c0
            out[p, 1] = c1
        k = j
    return out


@njit(cache=True)
def _quadrant_stat_2d(order, xr, yr, label, nx, ny):
    n = order.shape[0]
    na = 0
    for i in range(n):
        if label[i] == 0:
            na += 1
    nb = n - na
    ll = _lower_left_counts(order, xr, yr, label, ny)
    # marginal counts with x <= x_i (resp. y <= y_i), per label
    cx = np.zeros((nx, 2), dtype=np.int64)
    cy = np.zeros((ny, 2), dtype=np.int64)
    for i in range(n):
        cx[xr[i], label[i]] += 1
        cy[yr[i], label[i]] += 1
    for r in range(1, nx):
        cx[r, 0] += cx[r - 1, 0]
        cx[r, 1] += cx[r - 1, 1]
    for r in range(1, ny):
        cy[r, 0] += cy[r - 1, 0]
        cy[r, 1] += cy[r - 1, 1]
    best = 0.0
    for i in range(n):
        a_ll = ll[i, 0]
        b_ll = ll[i, 1]
        a_x = cx[xr[i], 0]
        b_x = cx[xr[i], 1]
        a_y = cy[yr[i], 0]
        b_y = cy[yr[i], 1]
        qa = (a_ll, a_x - a_ll, a_y - a_ll, na - a_x - a_y + a_ll)
        qb = (b_ll, b_x - b_ll, b_y - b_ll, nb - b_x - b_y + b_ll)
        for q in range(4):
            v = abs(qa[q] / na - qb[q] / nb)
            if v > best:
                best = v
    return best


@njit(cache=True)
def _quadrant_stat_nd(ranks, label):
    """Brute-force orthant statistic for any dimension, O(n^2 d)."""
    n, dim = ranks.shape
    na = 0
    for i in range(n):
        if label[i] == 0:
            na += 1
    nb = n - na
    north = 1 << dim
    best = 0.0
    cnt = np.zeros((north, 2), dtype=np.int64)
    for i in range(n):
        cnt[:, :] = 0
        for j in range(n):
            code = 0
            for k in range(dim):
                if ranks[j, k] > ranks[i, k]:
                    code |= 1 << k
            cnt[code, label[j]] += 1
        for q in range(north):
            v = abs(cnt[q, 0] / na - cnt[q, 1] / nb)
            if v > best:
                best = v
    return best


def _prefix_counts_np(prefix, yr, keys, member):
    """Count points with position < prefix[i] and y rank <= yr[i], among ``member``.

    The position prefix is split into dyadic blocks; ``keys[k]`` holds, for
    level ``k``, the sort order of ``(pos >> k, y)`` and the sorted keys.
    """
    out = np.zeros(prefix.size, dtype=np.int64)
    width = int(yr.max()) + 2
    for k, (perm, sorted_keys) in enumerate(keys):
        q = np.flatnonzero((prefix >> k) & 1)
        if q.size == 0:
            continue
        ks = sorted_keys[member[perm]]
        base = ((prefix[q] >> (k + 1)) << 1) * width
        out[q] += np.searchsorted(ks, base + yr[q], "right") - np.searchsorted(ks, base, "left")
    return out


def _quadrant_stat_2d_np(pool, label):
    xr, yr = pool.ranks[:, 0], pool.ranks[:, 1]
    is_a = label == 0
    na = int(np.count_nonzero(is_a))
    nb = label.size - na
    a_ll = _prefix_counts_np(pool.prefix, yr, pool.level_keys, is_a)
    b_ll = pool.ll_total - a_ll
    ax = np.cumsum(np.bincount(xr, weights=is_a, minlength=pool.nx))[xr]
    ay = np.cumsum(np.bincount(yr, weights=is_a, minlength=pool.ny))[yr]
    bx = pool.cx_total[xr] - ax
    by = pool.cy_total[yr] - ay
    qa = np.stack([a_ll, ax - a_ll, ay - a_ll, na - ax - ay + a_ll])
    qb = np.stack([b_ll, bx - b_ll, by - b_ll, nb - bx - by + b_ll])
    return float(np.max(np.abs(qa / na - qb / nb)))


def _quadrant_stat_nd_np(ranks, label, block=256):
    n, dim = ranks.shape
    na = int(np.count_nonzero(label == 0))
    nb = n - na
    north = 1 << dim
    weights = 1 << np.arange(dim)
    best = 0.0
    for lo in range(0, n, block):
        r = ranks[lo:lo + block]
        code = ((ranks[None, :, :] > r[:, None, :]) * weights).sum(axis=2)
        flat = (np.arange(r.shape[0])[:, None] * north + code) * 2 + label[None, :]
        cnt = np.bincount(flat.ravel(), minlength=r.shape[0] * north * 2).reshape(-1, north, 2)
        best = max(best, float(np.max(np.abs(cnt[:, :, 0] / na - cnt[:, :, 1] / nb))))
    return best


def _dense_ranks(x):
    return (rankdata(x, method="dense") - 1).astype(np.int64)


class _PooledSample:
    """Ranks of a pooled two-sample set; labels can be swapped cheaply."""

    def __init__(self, a, b):
        pooled = np.vstack([a, b])
        self.n_a = a.shape[0]
        self.ranks = np.column_stack([_dense_ranks(pooled[:, k]) for k in range(pooled.shape[1])])
        self.label = np.concatenate([np.zeros(a.shape[0], np.int64),
                                     np.ones(b.shape[0], np.int64)])
        if self.ranks.shape[1] == 2:
            self.order = np.argsort(self.ranks[:, 0], kind="stable")
            self.nx = int(self.ranks[:, 0].max()) + 1
            self.ny = int(self.ranks[:, 1].max()) + 1
            if not USE_NUMBA:
                self._prepare_numpy()

    def _prepare_numpy(self):
        xr, yr = self.ranks[:, 0], self.ranks[:, 1]
        n = xr.size
        pos = np.empty(n, dtype=np.int64)
        pos[self.order] = np.arange(n)
        # x ties count as "<=": the prefix runs to the end of the tie group
        self.prefix = np.searchsorted(xr[self.order], xr, "right").astype(np.int64)
        width = int(yr.max()) + 2
        self.level_keys = []
        for k in range(max(1, int(n).bit_length())):
            key = (pos >> k) * width + yr
            perm = np.argsort(key, kind="stable")
            self.level_keys.append((perm, key[perm]))
        self.ll_total = _prefix_counts_np(self.prefix, yr, self.level_keys, np.ones(n, bool))
        self.cx_total = np.cumsum(np.bincount(xr, minlength=self.nx))
        self.cy_total = np.cumsum(np.bincount(yr, minlength=self.ny))

    def statistic(self, label):
        if self.ranks.shape[1] == 2:
            if not USE_NUMBA:
                return _quadrant_stat_2d_np(self, label)
            return _quadrant_stat_2d(self.order, self.ranks[:, 0].copy(),
                                     self.ranks[:, 1].copy(), label, self.nx, self.ny)
        if not USE_NUMBA:
            return _quadrant_stat_nd_np(self.ranks, label)
        return _quadrant_stat_nd(self.ranks, label)


def _finite_rows(samples):
    t = samples.times if isinstance(samples, ExitTimeSamples) else np.atleast_2d(
        np.asarray(samples, dtype=float))
    keep = np.all(np.isfinite(t), axis=1)
    return t[keep], int(np.count_nonzero(~keep))


def quadrant_statistic(a, b):
    """Largest orthant discrepancy between two samples (no censored rows)."""
    pool = _PooledSample(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return float(pool.statistic(pool.label))


def ks_2sample_md(a, b, alpha=0.01, permutations=199, seed=0):
    """Two-sample multidimensional K-S test with permutation calibration.

    Scenarios containing ``+inf`` are dropped from each sample and the counts
    reported.  The statistic is computed on per-coordinate ranks of the
    pooled data, so it is unchanged by increasing transforms of any
    coordinate.  The p-value is ``(1 + #{D_perm >= D}) / (1 + permutations)``.

    Parameters
    ----------
    a, b : ExitTimeSamples or array_like, shape (n, N)
    alpha : float
    permutations : int
    seed : int
        Seed of the label permutations.
    """
    ta, ex_a = _finite_rows(a)
    tb, ex_b = _finite_rows(b)
    if ta.shape[1] != tb.shape[1]:
        raise ValueError(f"dimension mismatch: {ta.shape[1]} vs {tb.shape[1]}")
    if ta.shape[0] == 0 or tb.shape[0] == 0:
        raise ValueError("a sample has no fully observed scenarios")
    pool = _PooledSample(ta, tb)
    d = float(pool.statistic(pool.label))
    gen = RandomStreams(seed).generator(PERMUTATION)
    exceed = 0
    for _ in range(int(permutations)):
        if pool.statistic(gen.permutation(pool.label)) >= d - 1e-12:
            exceed += 1
    p = (1 + exceed) / (1 + int(permutations))
    return KsReport(d, alpha, p <= alpha, ta.shape[0], tb.shape[0], p, ex_a, ex_b)
