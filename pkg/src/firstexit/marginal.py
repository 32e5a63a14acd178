"""
One-dimensional first-passage law of a drifted Brownian motion.

A coordinate ``X(t) = x0 + mu*t + sigma*W(t)`` reaches the constant level
``barrier`` at the time ``tau``.  With ``d = barrier - x0`` the law of
``tau`` is inverse Gaussian when ``mu*d >= 0``; otherwise it is defective
and puts mass ``1 - exp(2*mu*d/sigma**2)`` on ``+inf``.

The transform ``H(t) = (mu*t - d)**2 / (sigma**2 * t)`` sends ``tau`` to a
chi-squared variable with one degree of freedom.  Sampling inverts ``H``:
each chi-squared draw has two preimages when ``mu != 0`` and one of them is
chosen with probability proportional to ``f(x) / |H'(x)|``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (DEFAULT_QUADRATURE, GK_NODES, GK_WK, integrate_1d,
                       std_normal_sf)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DimensionParams:
    """Drift, volatility, start value and barrier of one coordinate."""

    mu: float
    sigma: float
    x0: float
    barrier: float

    def __post_init__(self):
        for name in ("mu", "sigma", "x0", "barrier"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.x0 == self.barrier:
            raise ValueError("x0 must differ from barrier")

    @property
    def distance(self):
        """Signed gap ``barrier - x0``."""
        return self.barrier - self.x0

    @property
    def side(self):
        """``sgn(x0 - barrier)``: +1 when the barrier is crossed from above."""
        return 1.0 if self.x0 > self.barrier else -1.0

    @property
    def defective(self):
        return self.mu * self.distance < 0

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma, "x0": self.x0, "barrier": self.barrier}


@dataclass
class ExitTimeSamples:
    """Exit times of ``n`` scenarios in ``N`` coordinates.

    ``times`` has shape ``(n, N)``; censored or never-reached entries are
    ``+inf``.  ``redraws`` counts scenarios that had to be regenerated.
    """

    times: np.ndarray
    redraws: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        if t.ndim != 2:
            raise ValueError("times must be a 2-D array (scenarios x dimensions)")
        if np.any(np.isnan(t)) or np.any(t <= 0):
            raise ValueError("exit times must be positive (+inf allowed)")
        self.times = t

    def __len__(self):
        return self.times.shape[0]

    @property
    def dim(self):
        return self.times.shape[1]

    def __getitem__(self, idx):
        return ExitTimeSamples(self.times[idx], 0, dict(self.meta))


# ---------------------------------------------------------------------------
# transform and roots
# ---------------------------------------------------------------------------

def transform_h(p, t):
    """``H(t) = (mu*t - d)^2 / (sigma^2 t)``."""
    t = np.asarray(t, dtype=float)
    return (p.mu * t - p.distance) ** 2 / (p.sigma ** 2 * t)


def transform_h_prime(p, x):
    """``H'(x) = ((mu*x)^2 - d^2) / (sigma^2 x^2)``."""
    x = np.asarray(x, dtype=float)
    return ((p.mu * x) ** 2 - p.distance ** 2) / (p.sigma ** 2 * x * x)


def root_pair(mu, sigma, d, chi2):
    """Both solutions ``x1 <= x2`` of ``H(x) = chi2``, vectorized.

    Requires ``mu*d >= 0``.  For ``mu == 0`` the single root
    ``d^2 / (sigma^2 chi2)`` is returned twice.  The smaller root is formed
    from the product ``x1*x2 = (d/mu)^2`` to avoid cancellation.
    """
    chi2 = np.asarray(chi2, dtype=float)
    if mu == 0.0:
        with np.errstate(divide="ignore"):
            x = d * d / (sigma * sigma * chi2)
        return x, x.copy()
    m = d / mu
    s2c = sigma * sigma * chi2
    x2 = m + (s2c + np.sqrt(s2c * (4.0 * mu * d + s2c))) / (2.0 * mu * mu)
    x1 = m * m / x2
    return x1, x2


def selection_probability(p, x1, x2):
    """Probability of keeping the smaller root ``x1`` in the one-dimensional inversion."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    lw1 = log_marginal_density(p, x1) - np.log(np.abs(transform_h_prime(p, x1)))
    lw2 = log_marginal_density(p, x2) - np.log(np.abs(transform_h_prime(p, x2)))
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(lw2 - lw1))


# ---------------------------------------------------------------------------
# density, CDF, defective mass
# ---------------------------------------------------------------------------

def log_marginal_density(p, t):
    """Natural log of :func:`marginal_density` (``-inf`` at ``t = inf``)."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("marginal density requires t > 0")
    d = p.distance
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (math.log(abs(d) / p.sigma) - _LOG_SQRT_2PI - 1.5 * np.log(t)
               - (p.mu * t - d) ** 2 / (2.0 * p.sigma ** 2 * t))
    out = np.where(np.isinf(t), -np.inf, out)
    return float(out) if out.ndim == 0 else out


def marginal_density(p, t):
    """First-passage density ``|d| / (sigma sqrt(2 pi t^3)) exp(-(mu t - d)^2 / (2 sigma^2 t))``."""
    out = np.exp(log_marginal_density(p, t))
    return float(out) if np.ndim(out) == 0 else out


def _time_scale(p):
    return (p.distance / p.sigma) ** 2


def defective_mass(p, spec=DEFAULT_QUADRATURE):
    """Probability that the barrier is never reached.

    Zero unless the drift points away from the barrier, in which case it is
    one minus the quadrature of the density over ``(0, inf)``.
    """
    if not p.defective:
        return 0.0
    scale = _time_scale(p)
    mass = integrate_1d(lambda r: scale * marginal_density(p, scale * np.maximum(r, 1e-300)),
                        0.0, math.inf, spec)
    return min(max(1.0 - mass, 0.0), 1.0)


# Composite Gauss-Kronrod grid used by marginal_cdf: cells are geometric in t
# with ratio _GRID_RATIO, starting where the density is below exp(-740).
_GRID_RATIO = 1.08
_GK_UNIT = 0.5 * (GK_NODES + 1.0)
_GK_W = 0.5 * GK_WK


def _gk_cells(p, lo, hi):
    """GK15 integrals of the density over the cells ``[lo_i, hi_i]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    nodes = lo[..., None] + width[..., None] * _GK_UNIT
    vals = np.exp(log_marginal_density(p, np.maximum(nodes, 1e-300)))
    return width * (vals @ _GK_W)


def marginal_cdf(p, t):
    """``P(tau <= t)``, vectorized over ``t``.

    Zero drift uses ``2 Phi(-|d| / (sigma sqrt t))``.  Otherwise the density
    is integrated by 15-point Gauss-Kronrod panels on a geometric grid plus a
    final partial panel per query point; the result tends to
    ``1 - defective_mass(p)`` as ``t -> inf``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.isnan(t)) or np.any(t < 0):
        raise ValueError("marginal_cdf requires t >= 0")
    if p.mu == 0.0:
        with np.errstate(divide="ignore"):
            out = 2.0 * std_normal_sf(abs(p.distance) / (p.sigma * np.sqrt(t)))
        out = np.where(t == 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    scale = _time_scale(p)
    t_lo = scale / 1480.0
    finite = t[np.isfinite(t)]
    t_hi = max(float(finite.max()) if finite.size else t_lo, t_lo) * _GRID_RATIO
    ncell = int(math.ceil(math.log(t_hi / t_lo) / math.log(_GRID_RATIO))) + 1
    grid = t_lo * _GRID_RATIO ** np.arange(ncell + 1)
    cum = np.concatenate([[0.0], np.cumsum(_gk_cells(p, grid[:-1], grid[1:]))])

    flat = t.ravel()
    out = np.zeros_like(flat)
    inside = np.isfinite(flat) & (flat > t_lo)
    q = flat[inside]
    k = np.clip(np.searchsorted(grid, q, side="right") - 1, 0, ncell)
    out[inside] = cum[k] + _gk_cells(p, grid[k], q)
    if np.any(np.isinf(flat)):
        out[np.isinf(flat)] = 1.0 - defective_mass(p)
    out = np.clip(out, 0.0, 1.0).reshape(t.shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_marginal(p, rng=None, size=None):
    """Exact draws of the exit time by inverting the chi-squared transform.

    A standard normal ``Z`` gives ``chi2 = Z**2``; the two roots of
    ``H(x) = chi2`` are formed and the smaller one kept with probability
    :func:`selection_probability`.  In the defective case ``+inf`` is
    returned with probability :func:`defective_mass` and otherwise the
    finite part is drawn, which is the law with the drift reflected.

    Parameters
    ----------
    p : DimensionParams
    rng : numpy.random.Generator or seed, optional
    size : int, optional
        Number of draws; a scalar is returned when omitted.
    """
    gen = _as_generator(rng)
    n = 1 if size is None else int(size)
    z = gen.standard_normal(n)
    u = gen.random(n)
    q = defective_mass(p) if p.defective else 0.0
    target = DimensionParams(-p.mu, p.sigma, p.x0, p.barrier) if p.defective else p
    x1, x2 = root_pair(target.mu, target.sigma, target.distance, z * z)
    if target.mu == 0.0:
        out = x1
    else:
        keep_small = selection_probability(target, x1, x2)
        out = np.where(u < keep_small, x1, x2)
    if q > 0.0:
        out = np.where(gen.random(n) < q, np.inf, out)
    return float(out[0]) if size is None else out
