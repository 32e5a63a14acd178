"""
Joint density of two correlated first-passage times.

Both coordinates are reflected so that each starts above its barrier, then
the pair is rotated into a frame where it is a planar Brownian motion
started at polar position ``(r0, theta0)`` inside a wedge of angle
``alpha``.  The first exit time of coordinate 1 is the hitting time of the
ray at angle ``alpha`` and that of coordinate 2 the hitting time of the ray
at angle 0.

For ``0 < s < t`` the density is

    f(s, t) = sqrt(pi/2) sin(alpha) / (alpha^2 s (t - s)^(3/2))
              * exp(-r0 (g1 cos theta0 + g2 sin theta0) - (g1^2 s + g2^2 t) / 2)
              * sum_n n sin(n pi (alpha - theta0) / alpha) J_n

    J_n = int_0^inf exp(g1 cos(alpha) r - a r^2 - r0^2 / (2 s)) I_{n pi/alpha}(r r0 / s) dr

with ``a = (t - s cos^2 alpha) / (2 s (t - s))`` and ``(g1, g2)`` the drift
in the wedge frame.  For zero drift ``J_n`` is a Weber integral and the
series collapses to Bessel functions of order ``n pi / (2 alpha)``.  The
branch ``t < s`` is evaluated as the ``s < t`` branch of the mirror-image
wedge (reflection through the bisector), which swaps the two rays.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss
from scipy import special
from scipy.special import logsumexp

from ._backend import USE_NUMBA, njit, prange
from .marginal import DimensionParams
from .numerics import (DEBYE_V, DEFAULT_QUADRATURE, NonConvergenceError,
                       QuadratureSpec, integrate_1d, integrate_2d, log_iv_numpy,
                       log_iv_scalar)

# series control
SERIES_MIN_TERMS = 10
SERIES_MAX_TERMS = 500
SERIES_REL_TOL = 1e-12
SERIES_RUN = 3



def _hermite_rule(n):
    x, w = hermgauss(n)
    return x, np.log(w) + x * x


def _legendre_rule(n):
    u, w = leggauss(n)
    return 0.5 * (u + 1.0), np.log(0.5 * w)


# r-integral nodes: a full rule for the leading series terms and a light one
# for terms that are already small relative to the running sum
_GH_X, _GH_LOGW = _hermite_rule(20)
_GL_U, _GL_LOGW = _legendre_rule(40)
_GH_X_LIGHT, _GH_LOGW_LIGHT = _hermite_rule(12)
_GL_U_LIGHT, _GL_LOGW_LIGHT = _legendre_rule(20)
# peak is treated as interior when it sits this many widths above r = 0
_GH_CLEARANCE = 8.0
_GL_REACH = 11.0

_STATUS_OK = 0
_STATUS_CAP = 1
# Gaussian first-hit exponent below which a point is reported as zero
_LOG_NEGLIGIBLE = -120.0
# a partial sum smaller than this fraction of its largest term is rounding
# noise from the alternating series and is reported as zero
_CANCEL_FLOOR = 1e-9
# terms below this fraction of the largest one cannot change the sum
_NOISE_FLOOR = 1e-18
# r-integrals whose Laplace estimate is below these fractions of the running
# sum use the light rule, or the Laplace estimate itself
_LOG_LIGHT = math.log(1e-8)
_LOG_SKIP = math.log(1e-14)

# route choice: a sum whose size is below this fraction of the sum of its
# magnitudes also gets evaluated the other way, and the better-conditioned
# result is kept
_LOG_COND_SWITCH = math.log(1e-2)
# Bessel argument at the peak above which the resummed form is tried first
_RESUM_FIRST_W = 1.0
# resummed form: u-panels stop at beta u = _U_DECAY; phase features narrower
# than _U_FLOOR / beta are below rounding and ignored
_U_DECAY = 40.0
_U_FLOOR = 1e-13
# relative size of the first-order change below which the Gaussian
# half-line integral is differenced by Taylor series
_TAYLOR_DP = 1e-4
_ERFCX_CF_MIN = 2.0
_LOG_SQRT_PI = 0.5 * math.log(math.pi)
_SQRT_PI = math.sqrt(math.pi)
_PANEL_U, _PANEL_W = 0.5 * (leggauss(20)[0] + 1.0), 0.5 * leggauss(20)[1]


@dataclass(frozen=True)
class PairModel:
    """Two coordinates and their instantaneous correlation."""

    d1: DimensionParams
    d2: DimensionParams
    rho: float

    def __post_init__(self):
        if not (-1.0 < self.rho < 1.0):
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def zero_drift(self):
        return self.d1.mu == 0.0 and self.d2.mu == 0.0

    def swapped(self):
        return PairModel(self.d2, self.d1, self.rho)


@dataclass(frozen=True)
class DensityGeometry:
    """Polar description of the pair after reflection and decorrelation.

    ``mu1_tilde``/``mu2_tilde`` are the wedge-frame drifts, i.e. the
    decorrelated drifts of the reflected coordinates ``sgn(x_i - b_i) X_i``.
    """

    rho_tilde: float
    alpha: float
    r0: float
    theta0: float
    mu1_tilde: float
    mu2_tilde: float


@lru_cache(maxsize=256)
def geometry(m):
    """Wedge angle, polar start and wedge-frame drift of a :class:`PairModel`."""
    p1, p2 = m.d1, m.d2
    a1, a2 = abs(p1.distance), abs(p2.distance)
    if a1 == 0.0 or a2 == 0.0:
        raise ValueError("barrier must differ from the start value")
    rt = math.copysign(1.0, p1.distance) * math.copysign(1.0, p2.distance) * m.rho
    rt = rt + 0.0  # normalize -0.0
    root = math.sqrt(1.0 - rt * rt)
    if rt > 0:
        alpha = math.pi + math.atan(-root / rt)
    elif rt == 0:
        alpha = 0.5 * math.pi
    else:
        alpha = math.atan(-root / rt)
    s1, s2 = p1.sigma, p2.sigma
    r0 = math.sqrt((a1 * a1 * s2 * s2 + a2 * a2 * s1 * s1 - 2.0 * a1 * a2 * rt * s1 * s2)
                   / (1.0 - rt * rt)) / (s1 * s2)
    num = s1 * a2 * root
    den = a1 * s2 - rt * a2 * s1
    if den < 0:
        theta0 = math.pi + math.atan(num / den)
    elif den == 0:
        theta0 = 0.5 * math.pi
    else:
        theta0 = math.atan(num / den)
    # drifts of the reflected coordinates, then decorrelated
    m1, m2 = p1.side * p1.mu, p2.side * p2.mu
    g1 = (s2 * m1 - s1 * m2 * rt) / (s1 * s2 * root)
    g2 = m2 / s2
    return DensityGeometry(rt, alpha, r0, theta0, g1, g2)


def mirror(g):
    """Geometry of the reflected wedge: the two rays (and coordinates) swap roles."""
    ca, sa = math.cos(g.alpha), math.sin(g.alpha)
    return DensityGeometry(g.rho_tilde, g.alpha, g.r0, g.alpha - g.theta0,
                           g.mu1_tilde * ca + g.mu2_tilde * sa,
                           g.mu1_tilde * sa - g.mu2_tilde * ca)


# ---------------------------------------------------------------------------
# scalar kernels (numba)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _accumulate(total, lmax, sign, lterm):
    """Add ``sign * exp(lterm)`` to a sum stored as ``total * exp(lmax)``."""
    if lterm > lmax:
        if lmax > -math.inf:
            total *= math.exp(lmax - lterm)
        lmax = lterm
    total += sign * math.exp(lterm - lmax)
    return total, lmax


@njit(cache=True)
def _accumulate2(total, atotal, lmax, sign, lterm, labs):
    """Like :func:`_accumulate`, also adding ``exp(labs)`` to a sum of magnitudes.

    ``labs >= lterm``; both sums share the scale ``exp(lmax)``.
    """
    if labs > lmax:
        if lmax > -math.inf:
            scale = math.exp(lmax - labs)
            total *= scale
            atotal *= scale
        lmax = labs
    return total + sign * math.exp(lterm - lmax), atotal + math.exp(labs - lmax), lmax


@njit(cache=True)
def _finish(total, atotal, lmax):
    """Log of a signed sum (``-inf`` unless positive) and of its magnitude sum."""
    lv = lmax + math.log(total) if total > 0.0 else -math.inf
    la = lmax + math.log(atotal) if atotal > 0.0 else -math.inf
    return lv, la


@njit(cache=True)
def _series_done(lenv, total, lmax, n, run):
    """Update the run of negligible terms; returns the new run length."""
    small = lenv - lmax <= math.log(_NOISE_FLOOR)
    if total > 0.0 and lenv - lmax - math.log(total) <= math.log(SERIES_REL_TOL):
        small = True
    if small and n >= SERIES_MIN_TERMS:
        return run + 1
    return 0


@njit(cache=True)
def _series_zero(kappa, phi, z):
    """``exp(-z) sum_n n sin(n kappa phi) I_{n kappa / 2}(z)``, summed term by term.

    Returns ``(log sum, log sum of magnitudes, status, log last envelope)``.
    """
    total = 0.0
    atotal = 0.0
    lmax = -math.inf
    run = 0
    lenv = -math.inf
    status = _STATUS_CAP
    for n in range(1, SERIES_MAX_TERMS + 1):
        lenv = math.log(n) + log_iv_scalar(0.5 * n * kappa, z, DEBYE_V) - z
        sgn = math.sin(n * kappa * phi)
        if sgn != 0.0:
            lt = lenv + math.log(abs(sgn))
            total, atotal, lmax = _accumulate2(total, atotal, lmax, math.copysign(1.0, sgn),
                                               lt, lt)
        run = _series_done(lenv, total, lmax, n, run)
        if run >= SERIES_RUN:
            status = _STATUS_OK
            break
    lv, la = _finish(total, atotal, lmax)
    return lv, la, status, lenv


# -- resummed form ----------------------------------------------------------
#
# Schlafli's integral for I_nu turns
#     T(w) = sum_n n sin(n A) I_{n beta}(w)
# into images plus a u-integral:
#     T(w) = w / (2 beta^2) sum_k sin(psi_k) exp(w cos psi_k)
#            + 1/(2 pi) int_0^inf (exp(-w cosh u) - exp(-w))
#                               (F'(beta pi + A, beta u) - F'(beta pi - A, beta u)) du
# with psi_k = (A - 2 pi k) / beta over |psi_k| < pi and
# F'(x, c) = (cos x cosh c - 1) / (2 (cosh c - cos x)^2).  The exp(-w) term
# integrates to zero against the F' difference and is there to cancel the
# 1/u^2 singularity when an image sits on psi = +-pi.  For large w the
# alternating Bessel series cancels to many digits; this form does not.

@njit(cache=True)
def _erfcx_tail(y):
    """``R`` in ``sqrt(pi) erfcx(y) = 1 / (y + R)``: Laplace continued fraction, y >= 2."""
    tiny = 1e-300
    f = tiny
    c = f
    d = 0.0
    for k in range(1, 400):
        ak = 0.5 * k
        d = y + ak * d
        if d == 0.0:
            d = tiny
        c = y + ak / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return f


@njit(cache=True)
def _log_erfcx(y):
    if y < _ERFCX_CF_MIN:
        return y * y + math.log(math.erfc(y))
    return -_LOG_SQRT_PI - math.log(y + _erfcx_tail(y))


@njit(cache=True)
def _log_moment_factor(y):
    """``log(1 - sqrt(pi) y erfcx(y))`` without cancellation."""
    if y < 0.0:
        return y * y + math.log(math.exp(-y * y) - _SQRT_PI * y * math.erfc(y))
    if y < _ERFCX_CF_MIN:
        return math.log(1.0 - _SQRT_PI * y * math.exp(y * y) * math.erfc(y))
    r = _erfcx_tail(y)
    return math.log(r) - math.log(y + r)


@njit(cache=True)
def _log_g0(p, a):
    """log of int_0^inf exp(p r - a r^2) dr."""
    return _LOG_SQRT_PI - math.log(2.0) - 0.5 * math.log(a) + _log_erfcx(-p / (2.0 * math.sqrt(a)))


@njit(cache=True)
def _log_g1(p, a):
    """log of int_0^inf r exp(p r - a r^2) dr."""
    return _log_moment_factor(-p / (2.0 * math.sqrt(a))) - math.log(2.0 * a)


@njit(cache=True)
def _phase(x):
    """``sin^2(x / 2)`` and the distance from x to the nearest multiple of 2 pi."""
    xr = x - 2.0 * math.pi * math.floor(x / (2.0 * math.pi) + 0.5)
    h = math.sin(0.5 * xr)
    return h * h, abs(xr)


@njit(cache=True)
def _fprime(s2, c):
    """``F'(x, c)`` written with ``s2 = sin^2(x / 2)``; stable for small and large c."""
    e = math.exp(-c)
    om = -math.expm1(-c)
    den = om * om + 4.0 * e * s2
    return e * (om * om - 2.0 * (1.0 + e * e) * s2) / (den * den)


@njit(cache=True)
def _u_start(beta, dist_p, dist_m, feature):
    """End of the first u-panel: half the narrowest feature of the integrand."""
    u = min(feature, 1.0 / beta)
    if dist_p > _U_FLOOR and dist_p / beta < u:
        u = dist_p / beta
    if dist_m > _U_FLOOR and dist_m / beta < u:
        u = dist_m / beta
    return 0.5 * u


@njit(cache=True)
def _resum_integral(beta, s2p, s2m, u_min, zero, z, a, b, y0, h1, h2, h3, big_l):
    """``int_0^inf D(u) (F'(x+, beta u) - F'(x-, beta u)) du`` on doubling panels.

    ``D`` is the relative drop of the u-weight from its value at u = 0:
    ``expm1(-2 z sinh^2(u/2))`` for zero drift, ``G0(c - b cosh u) / G0(c - b) - 1``
    with drift (``y0 = (b - c) / (2 sqrt a)``, ``h_k`` the r-moments of the
    u = 0 weight over its mass, ``big_l`` their length scale).

    Returns the integral and the integral of its magnitude.
    """
    u_max = _U_DECAY / beta
    sq = 2.0 * math.sqrt(a)
    lo = 0.0
    hi = u_min
    acc = 0.0
    aacc = 0.0
    while lo < u_max:
        if hi > u_max:
            hi = u_max
        width = hi - lo
        for i in range(_PANEL_U.shape[0]):
            u = lo + width * _PANEL_U[i]
            sh = math.sinh(0.5 * u)
            sh2 = sh * sh
            if zero:
                d = math.expm1(-2.0 * z * sh2)
            else:
                dp = 2.0 * b * sh2
                if dp * big_l < _TAYLOR_DP:
                    d = dp * (-h1 + dp * (0.5 * h2 - dp * h3 / 6.0))
                else:
                    dy = dp / sq
                    yu = y0 + dy
                    if yu < _ERFCX_CF_MIN:
                        diff = dy * (2.0 * y0 + dy) + math.log(math.erfc(yu) / math.erfc(y0))
                    else:
                        diff = _log_erfcx(yu) - _log_erfcx(y0)
                    d = math.expm1(diff)
            cu = beta * u
            v = d * (_fprime(s2p, cu) - _fprime(s2m, cu)) * width * _PANEL_W[i]
            acc += v
            aacc += abs(v)
        lo = hi
        hi = 2.0 * hi
    return acc, aacc


@njit(cache=True)
def _resum_zero(alpha, phi, z):
    """``exp(-z) sum_n n sin(n kappa phi) I_{n kappa / 2}(z)`` in resummed form.

    Returns ``(log sum, log sum of magnitudes)``.
    """
    kappa = math.pi / alpha
    beta = 0.5 * kappa
    total = 0.0
    atotal = 0.0
    lmax = -math.inf
    lpre = math.log(z / (2.0 * beta * beta))
    k_lo = int(math.floor((phi - 0.5 * math.pi) / (2.0 * alpha)))
    k_hi = int(math.ceil((phi + 0.5 * math.pi) / (2.0 * alpha)))
    for k in range(k_lo, k_hi + 1):
        psi = 2.0 * (phi - 2.0 * alpha * k)
        sp = math.sin(psi)
        if abs(psi) >= math.pi or sp == 0.0:
            continue
        h = math.sin(0.5 * psi)
        lt = lpre + math.log(abs(sp)) - 2.0 * z * h * h
        total, atotal, lmax = _accumulate2(total, atotal, lmax, math.copysign(1.0, sp), lt, lt)
    s2p, dist_p = _phase(beta * math.pi + kappa * phi)
    s2m, dist_m = _phase(beta * math.pi - kappa * phi)
    feature = 1.0 / math.sqrt(z) if z > 1.0 else 1.0
    u_min = _u_start(beta, dist_p, dist_m, feature)
    j, ja = _resum_integral(beta, s2p, s2m, u_min, True, z, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if ja > 0.0:
        lscale = -2.0 * z - math.log(2.0 * math.pi)
        lt = lscale + math.log(abs(j)) if j != 0.0 else -math.inf
        total, atotal, lmax = _accumulate2(total, atotal, lmax, math.copysign(1.0, j), lt,
                                           lscale + math.log(ja))
    return _finish(total, atotal, lmax)


@njit(cache=True)
def _log_density_zero(alpha, r0, phi, s, t):
    """log f for s < t and zero drift; ``phi`` is ``alpha - theta0``.

    The series and the resummed form are both exact; whichever cancels less
    at this point is used.  Returns ``(log f, status, log tail bound)``.
    """
    sa = math.sin(alpha)
    ca = math.cos(alpha)
    dd = t - s * ca * ca
    z = r0 * r0 * (t - s) / (4.0 * s * dd)
    base = (math.log(math.pi * sa / (2.0 * alpha * alpha)) - 0.5 * math.log(s * dd)
            - math.log(t - s) - r0 * r0 * sa * sa / (2.0 * dd))
    kappa = math.pi / alpha
    if z >= _RESUM_FIRST_W:
        lv, la = _resum_zero(alpha, phi, z)
        status, tail = _STATUS_OK, la - _U_DECAY
        if lv - la < _LOG_COND_SWITCH:
            lv2, la2, st2, lenv2 = _series_zero(kappa, phi, z)
            if lv2 - la2 > lv - la:
                lv, la, status, tail = lv2, la2, st2, lenv2
    else:
        lv, la, status, tail = _series_zero(kappa, phi, z)
        if lv - la < _LOG_COND_SWITCH:
            lv2, la2 = _resum_zero(alpha, phi, z)
            if lv2 - la2 > lv - la:
                lv, la, status, tail = lv2, la2, _STATUS_OK, la2 - _U_DECAY
    if lv - la < math.log(_CANCEL_FLOOR):
        return -math.inf, status, base + tail
    return base + lv, status, base + tail


@njit(cache=True)
def _dlog_iv(nu, x):
    """Leading-order uniform approximation of d/dx log I_nu(x)."""
    w = math.sqrt(nu * nu + x * x)
    return w / x - x / (2.0 * w * w)


@njit(cache=True)
def _peak(nu, a, b, c):
    """Maximizer of c r - a r^2 + log I_nu(b r) (approximate derivative)."""
    cb = c + b
    hi = (cb + math.sqrt(cb * cb + 8.0 * a * nu)) / (4.0 * a)
    lo = 0.0
    r = 0.5 * hi
    for _ in range(100):
        x = b * r
        lp = _dlog_iv(nu, x)
        h = c - 2.0 * a * r + b * lp
        if h > 0.0:
            lo = r
        else:
            hi = r
        lpp = 1.0 + nu * nu / (x * x) - lp / x - lp * lp
        dh = -2.0 * a + b * b * lpp
        step = -h / dh if dh < 0.0 else 0.0
        rn = r + step
        if not (lo < rn < hi) or dh >= 0.0:
            rn = 0.5 * (lo + hi)
        if abs(rn - r) <= 1e-12 * rn or hi - lo <= 1e-12 * hi:
            r = rn
            break
        r = rn
    x = b * r
    lp = _dlog_iv(nu, x)
    lpp = 1.0 + nu * nu / (x * x) - lp / x - lp * lp
    curv = 2.0 * a - b * b * lpp
    if curv < 2.0 * a:
        curv = 2.0 * a
    return r, 1.0 / math.sqrt(curv)


@njit(cache=True)
def _gauss_sum(nu, a, b, c, shift, r_pk, sig, ghx, ghlw, glu, gllw):
    lmax = -math.inf
    acc = 0.0
    if r_pk > _GH_CLEARANCE * sig:
        scale = math.sqrt(2.0) * sig
        for i in range(ghx.shape[0]):
            r = r_pk + scale * ghx[i]
            v = ghlw[i] + c * r - a * r * r - shift + log_iv_scalar(nu, b * r, DEBYE_V)
            acc, lmax = _accumulate(acc, lmax, 1.0, v)
        return math.log(scale) + lmax + math.log(acc)
    big_r = r_pk + _GL_REACH * sig
    if r_pk < 2.0 * sig:
        # peak at the origin: r = R u^2 on [0, R] absorbs the r^nu onset
        for i in range(glu.shape[0]):
            u = glu[i]
            r = big_r * u * u
            v = gllw[i] + math.log(2.0 * big_r * u) + c * r - a * r * r - shift \
                + log_iv_scalar(nu, b * r, DEBYE_V)
            acc, lmax = _accumulate(acc, lmax, 1.0, v)
        return lmax + math.log(acc)
    # peak near but off the origin: r = r_pk u^2 below it, linear above
    for i in range(glu.shape[0]):
        u = glu[i]
        r = r_pk * u * u
        v = gllw[i] + math.log(2.0 * r_pk * u) + c * r - a * r * r - shift \
            + log_iv_scalar(nu, b * r, DEBYE_V)
        acc, lmax = _accumulate(acc, lmax, 1.0, v)
        r = r_pk + (big_r - r_pk) * u
        v = gllw[i] + math.log(big_r - r_pk) + c * r - a * r * r - shift \
            + log_iv_scalar(nu, b * r, DEBYE_V)
        acc, lmax = _accumulate(acc, lmax, 1.0, v)
    return lmax + math.log(acc)


@njit(cache=True)
def _log_jn(nu, a, b, c, shift, log_ref):
    """log of int_0^inf exp(c r - a r^2 - shift) I_nu(b r) dr.

    The integrand is log-concave with a single peak, located with the
    leading-order derivative of log I_nu.  A 20-point Gauss-Hermite rule is
    centred there, or a 40-point Gauss-Legendre rule in r = R u^2 when the
    peak is near r = 0.  ``log_ref`` is the log-magnitude the result will be
    added to; small terms get a lighter rule or the Laplace estimate.
    """
    r_pk, sig = _peak(nu, a, b, c)
    laplace = c * r_pk - a * r_pk * r_pk - shift + log_iv_scalar(nu, b * r_pk, DEBYE_V) \
        + math.log(math.sqrt(2.0 * math.pi) * sig)
    rel = laplace - log_ref
    if rel < _LOG_SKIP:
        return laplace
    if rel < _LOG_LIGHT:
        return _gauss_sum(nu, a, b, c, shift, r_pk, sig,
                          _GH_X_LIGHT, _GH_LOGW_LIGHT, _GL_U_LIGHT, _GL_LOGW_LIGHT)
    return _gauss_sum(nu, a, b, c, shift, r_pk, sig, _GH_X, _GH_LOGW, _GL_U, _GL_LOGW)


@njit(cache=True)
def _series_drift(kappa, phi, a, b, c, shift):
    """``sum_n n sin(n kappa phi) J_n``, summed term by term.

    Returns ``(log sum, log sum of magnitudes, status, log last envelope)``.
    """
    total = 0.0
    atotal = 0.0
    lmax = -math.inf
    run = 0
    lenv = -math.inf
    status = _STATUS_CAP
    for n in range(1, SERIES_MAX_TERMS + 1):
        log_ref = -math.inf
        if total > 0.0:
            log_ref = lmax + math.log(total) - math.log(n)
        lenv = math.log(n) + _log_jn(n * kappa, a, b, c, shift, log_ref)
        sgn = math.sin(n * kappa * phi)
        if sgn != 0.0:
            lt = lenv + math.log(abs(sgn))
            total, atotal, lmax = _accumulate2(total, atotal, lmax, math.copysign(1.0, sgn),
                                               lt, lt)
        run = _series_done(lenv, total, lmax, n, run)
        if run >= SERIES_RUN:
            status = _STATUS_OK
            break
    lv, la = _finish(total, atotal, lmax)
    return lv, la, status, lenv


@njit(cache=True)
def _moments(p, a):
    """Mean r of the weight exp(p r - a r^2) on r > 0, and the next two moment ratios."""
    h1 = math.exp(_log_g1(p, a) - _log_g0(p, a))
    h2 = (1.0 + p * h1) / (2.0 * a)
    h3 = (2.0 * h1 + p * h2) / (2.0 * a)
    return h1, h2, h3


@njit(cache=True)
def _resum_drift(alpha, phi, a, b, c, shift):
    """``sum_n n sin(n kappa phi) J_n`` in resummed form.

    The r-integral of every image and of the u-integrand is a Gaussian
    half-line integral.  Returns ``(log sum, log sum of magnitudes)``.
    """
    kappa = math.pi / alpha
    beta = kappa
    total = 0.0
    atotal = 0.0
    lmax = -math.inf
    lpre = math.log(b / (2.0 * beta * beta)) - shift
    k_lo = int(math.floor((phi - math.pi) / (2.0 * alpha)))
    k_hi = int(math.ceil((phi + math.pi) / (2.0 * alpha)))
    for k in range(k_lo, k_hi + 1):
        psi = phi - 2.0 * alpha * k
        sp = math.sin(psi)
        if abs(psi) >= math.pi or sp == 0.0:
            continue
        lt = lpre + math.log(abs(sp)) + _log_g1(c + b * math.cos(psi), a)
        total, atotal, lmax = _accumulate2(total, atotal, lmax, math.copysign(1.0, sp), lt, lt)
    p0 = c - b
    h1, h2, h3 = _moments(p0, a)
    big_l = max(h1, math.sqrt(abs(h2)))
    s2p, dist_p = _phase(beta * math.pi + kappa * phi)
    s2m, dist_m = _phase(beta * math.pi - kappa * phi)
    feature = min(1.0, math.sqrt(2.0 / (b * big_l)))
    u_min = _u_start(beta, dist_p, dist_m, feature)
    y0 = -p0 / (2.0 * math.sqrt(a))
    j, ja = _resum_integral(beta, s2p, s2m, u_min, False, 0.0, a, b, y0, h1, h2, h3, big_l)
    if ja > 0.0:
        lscale = _log_g0(p0, a) - shift - math.log(2.0 * math.pi)
        lt = lscale + math.log(abs(j)) if j != 0.0 else -math.inf
        total, atotal, lmax = _accumulate2(total, atotal, lmax, math.copysign(1.0, j), lt,
                                           lscale + math.log(ja))
    return _finish(total, atotal, lmax)


@njit(cache=True)
def _log_density_drift(alpha, r0, theta0, g1, g2, s, t):
    """log f for s < t with wedge-frame drift (g1, g2); route chosen as for zero drift."""
    sa = math.sin(alpha)
    ca = math.cos(alpha)
    a = (t - s * ca * ca) / (2.0 * s * (t - s))
    b = r0 / s
    c = g1 * ca
    shift = r0 * r0 / (2.0 * s)
    base = (0.5 * math.log(0.5 * math.pi) + math.log(sa) - 2.0 * math.log(alpha)
            - math.log(s) - 1.5 * math.log(t - s)
            - r0 * (g1 * math.cos(theta0) + g2 * math.sin(theta0))
            - 0.5 * (g1 * g1 * s + g2 * g2 * t))
    kappa = math.pi / alpha
    phi = alpha - theta0
    # Bessel argument at the typical r of the Gaussian weight
    w_typ = b * _moments(c, a)[0]
    if w_typ >= _RESUM_FIRST_W:
        lv, la = _resum_drift(alpha, phi, a, b, c, shift)
        status, tail = _STATUS_OK, la - _U_DECAY
        if lv - la < _LOG_COND_SWITCH:
            lv2, la2, st2, lenv2 = _series_drift(kappa, phi, a, b, c, shift)
            if lv2 - la2 > lv - la:
                lv, la, status, tail = lv2, la2, st2, lenv2
    else:
        lv, la, status, tail = _series_drift(kappa, phi, a, b, c, shift)
        if lv - la < _LOG_COND_SWITCH:
            lv2, la2 = _resum_drift(alpha, phi, a, b, c, shift)
            if lv2 - la2 > lv - la:
                lv, la, status, tail = lv2, la2, _STATUS_OK, la2 - _U_DECAY
    if lv - la < math.log(_CANCEL_FLOOR):
        return -math.inf, status, base + tail
    return base + lv, status, base + tail


@njit(cache=True)
def _log_first_hit_bound(alpha, r0, theta0, g1, g2, s):
    """Gaussian exponent bounding the chance of reaching the ray at angle alpha by time s.

    Far below zero the density is negligible, while the Bessel series would
    need hundreds of terms that cancel below rounding level.
    """
    phi = alpha - theta0
    dist = r0 * math.sin(phi) if phi < 0.5 * math.pi else r0
    gap = dist - math.sqrt(g1 * g1 + g2 * g2) * s
    if gap <= 0.0:
        return 0.0
    return -gap * gap / (2.0 * s)


@njit(cache=True)
def log_density_point(alpha, r0, theta0, g1, g2, s, t):
    """log f(s, t) for one point: dispatches on branch, drift and diagonal.

    Returns ``(log f, status, log tail bound)``.
    """
    if t < s:
        ca = math.cos(alpha)
        sa = math.sin(alpha)
        return log_density_point(alpha, r0, alpha - theta0, g1 * ca + g2 * sa,
                                 g1 * sa - g2 * ca, t, s)
    if t == s:
        expo = 0.5 * math.pi / alpha - 1.0
        if abs(expo) > 1e-12:
            if expo < 0.0:
                return math.inf, _STATUS_OK, -math.inf
            return -math.inf, _STATUS_OK, -math.inf
        t = s * (1.0 + 1e-9)
    if _log_first_hit_bound(alpha, r0, theta0, g1, g2, s) < _LOG_NEGLIGIBLE:
        return -math.inf, _STATUS_OK, -math.inf
    if g1 == 0.0 and g2 == 0.0:
        return _log_density_zero(alpha, r0, alpha - theta0, s, t)
    return _log_density_drift(alpha, r0, theta0, g1, g2, s, t)


@njit(cache=True, parallel=True)
def _log_density_many(alpha, r0, theta0, g1, g2, s, t):
    n = s.shape[0]
    out = np.empty(n)
    status = np.zeros(n, dtype=np.int64)
    tail = np.empty(n)
    for i in prange(n):
        v, st, tb = log_density_point(alpha, r0, theta0, g1, g2, s[i], t[i])
        out[i] = v
        status[i] = st
        tail[i] = tb
    return out, status, tail


# ---------------------------------------------------------------------------
# vectorized numpy twin
# ---------------------------------------------------------------------------

def _np_sum_series(log_env_fn, phi, kappa, npts):
    """Sum n sin(n kappa phi) exp(log_env_fn(n)) over n for all points at once.

    Returns ``(log sum, log sum of magnitudes, status, log last envelope)``.
    """
    phi = np.broadcast_to(phi, (npts,))
    total = np.zeros(npts)
    atotal = np.zeros(npts)
    lmax = np.full(npts, -np.inf)
    run = np.zeros(npts, dtype=np.int64)
    active = np.ones(npts, dtype=bool)
    lenv_last = np.full(npts, -np.inf)
    for n in range(1, SERIES_MAX_TERMS + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        lenv = math.log(n) + log_env_fn(n, idx)
        lenv_last[idx] = lenv
        sgn = np.sin(n * kappa * phi[idx])
        lt = lenv + np.log(np.abs(sgn), where=sgn != 0, out=np.full(idx.size, -np.inf))
        tot, atot, lm = total[idx], atotal[idx], lmax[idx]
        grow = lt > lm
        with np.errstate(invalid="ignore", over="ignore"):
            scale = np.where(grow & np.isfinite(lm), np.exp(lm - lt), 1.0)
            tot, atot = tot * scale, atot * scale
            lm = np.where(grow, lt, lm)
            w = np.where(np.isfinite(lt), np.exp(lt - lm), 0.0)
            tot = tot + np.sign(sgn) * w
            atot = atot + w
            rel = lenv - lm - np.log(np.where(tot > 0, tot, np.nan))
        small = (np.nan_to_num(rel, nan=np.inf) <= math.log(SERIES_REL_TOL)) | \
            (lenv - lm <= math.log(_NOISE_FLOOR))
        r = np.where(small & (n >= SERIES_MIN_TERMS), run[idx] + 1, 0)
        total[idx], atotal[idx], lmax[idx], run[idx] = tot, atot, lm, r
        active[idx[r >= SERIES_RUN]] = False
    status = np.where(active, _STATUS_CAP, _STATUS_OK)
    lv, la = _np_finish(total, atotal, lmax)
    return lv, la, status, lenv_last


def _np_finish(total, atotal, lmax):
    with np.errstate(divide="ignore", invalid="ignore"):
        lv = np.where(total > 0, lmax + np.log(np.where(total > 0, total, 1.0)), -np.inf)
        la = np.where(atotal > 0, lmax + np.log(np.where(atotal > 0, atotal, 1.0)), -np.inf)
    return lv, la


def _np_accumulate2(total, atotal, lmax, sign, lterm, labs):
    with np.errstate(invalid="ignore", over="ignore"):
        grow = labs > lmax
        scale = np.where(grow & np.isfinite(lmax), np.exp(lmax - labs), 1.0)
        lmax = np.where(grow, labs, lmax)
        total = total * scale + np.where(np.isfinite(lterm), sign * np.exp(lterm - lmax), 0.0)
        atotal = atotal * scale + np.where(np.isfinite(labs), np.exp(labs - lmax), 0.0)
    return total, atotal, lmax


def _np_erfcx_tail(y):
    """Vectorized :func:`_erfcx_tail`."""
    tiny = 1e-300
    f = np.full_like(y, tiny)
    c = f.copy()
    d = np.zeros_like(y)
    for k in range(1, 400):
        ak = 0.5 * k
        d = y + ak * d
        d = np.where(d == 0.0, tiny, d)
        c = y + ak / c
        c = np.where(c == 0.0, tiny, c)
        d = 1.0 / d
        delta = c * d
        f = f * delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return f


def _np_log_erfcx(y):
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    lo = y < _ERFCX_CF_MIN
    out[lo] = y[lo] ** 2 + np.log(special.erfc(y[lo]))
    hi = ~lo
    if hi.any():
        out[hi] = -_LOG_SQRT_PI - np.log(y[hi] + _np_erfcx_tail(y[hi]))
    return out


def _np_log_moment_factor(y):
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    neg = y < 0.0
    yn = y[neg]
    out[neg] = yn * yn + np.log(np.exp(-yn * yn) - _SQRT_PI * yn * special.erfc(yn))
    mid = ~neg & (y < _ERFCX_CF_MIN)
    ym = y[mid]
    out[mid] = np.log(1.0 - _SQRT_PI * ym * special.erfcx(ym))
    hi = y >= _ERFCX_CF_MIN
    if hi.any():
        r = _np_erfcx_tail(y[hi])
        out[hi] = np.log(r) - np.log(y[hi] + r)
    return out


def _np_log_g0(p, a):
    return _LOG_SQRT_PI - math.log(2.0) - 0.5 * np.log(a) + _np_log_erfcx(-p / (2.0 * np.sqrt(a)))


def _np_log_g1(p, a):
    return _np_log_moment_factor(-p / (2.0 * np.sqrt(a))) - np.log(2.0 * a)


def _np_moments(p, a):
    h1 = np.exp(_np_log_g1(p, a) - _np_log_g0(p, a))
    h2 = (1.0 + p * h1) / (2.0 * a)
    h3 = (2.0 * h1 + p * h2) / (2.0 * a)
    return h1, h2, h3


def _np_fprime(s2, c):
    e = np.exp(-c)
    om = -np.expm1(-c)
    den = om * om + 4.0 * e * s2
    return e * (om * om - 2.0 * (1.0 + e * e) * s2) / (den * den)


def _np_resum_integral(beta, s2p, s2m, u_min, drop):
    """Vectorized :func:`_resum_integral`; ``drop(u, idx)`` returns D at nodes ``u``."""
    u_max = _U_DECAY / beta
    n_pan = np.ceil(np.log2(u_max / u_min)).astype(np.int64) + 1
    acc = np.zeros(u_min.size)
    aacc = np.zeros(u_min.size)
    # chunk so that the node arrays stay around a few million entries
    step = max(1, 2_000_000 // (int(n_pan.max()) * _PANEL_U.size))
    for lo_i in range(0, u_min.size, step):
        idx = np.arange(lo_i, min(lo_i + step, u_min.size))
        j = np.arange(int(n_pan[idx].max()))
        um = u_min[idx, None]
        lo = np.where(j == 0, 0.0, um * 2.0 ** (j - 1))
        hi = um * 2.0 ** j
        lo = np.minimum(lo, u_max)
        hi = np.minimum(hi, u_max)
        width = (hi - lo)[:, :, None]
        u = lo[:, :, None] + width * _PANEL_U
        d = drop(u, idx)
        cu = beta * u
        v = d * (_np_fprime(s2p, cu) - _np_fprime(s2m, cu)) * width * _PANEL_W
        acc[idx] = v.sum(axis=(1, 2))
        aacc[idx] = np.abs(v).sum(axis=(1, 2))
    return acc, aacc


def _np_u_start(beta, dist_p, dist_m, feature):
    u = np.minimum(feature, 1.0 / beta)
    for dist in (dist_p, dist_m):
        if dist > _U_FLOOR:
            u = np.minimum(u, dist / beta)
    return 0.5 * u


def _np_phase(x):
    xr = x - 2.0 * math.pi * math.floor(x / (2.0 * math.pi) + 0.5)
    return math.sin(0.5 * xr) ** 2, abs(xr)


def _np_images(phi, alpha, half_width, scale, log_weight, npts):
    """Signed image sum: psi = scale (phi - 2 alpha k) over |psi| < pi."""
    total = np.zeros(npts)
    atotal = np.zeros(npts)
    lmax = np.full(npts, -np.inf)
    k_lo = int(math.floor((phi - half_width) / (2.0 * alpha)))
    k_hi = int(math.ceil((phi + half_width) / (2.0 * alpha)))
    for k in range(k_lo, k_hi + 1):
        psi = scale * (phi - 2.0 * alpha * k)
        sp = math.sin(psi)
        if abs(psi) >= math.pi or sp == 0.0:
            continue
        lt = math.log(abs(sp)) + log_weight(psi)
        total, atotal, lmax = _np_accumulate2(total, atotal, lmax, math.copysign(1.0, sp), lt, lt)
    return total, atotal, lmax


def _np_add_integral(total, atotal, lmax, j, ja, lscale):
    with np.errstate(divide="ignore"):
        lt = np.where(j != 0.0, lscale + np.log(np.abs(j)), -np.inf)
        labs = np.where(ja > 0.0, lscale + np.log(ja), -np.inf)
    return _np_accumulate2(total, atotal, lmax, np.sign(j), lt, labs)


def _np_resum_zero(alpha, phi, z):
    kappa = math.pi / alpha
    beta = 0.5 * kappa
    lpre = np.log(z / (2.0 * beta * beta))
    total, atotal, lmax = _np_images(
        phi, alpha, 0.5 * math.pi, 2.0,
        lambda psi: lpre - 2.0 * z * math.sin(0.5 * psi) ** 2, z.size)
    s2p, dist_p = _np_phase(beta * math.pi + kappa * phi)
    s2m, dist_m = _np_phase(beta * math.pi - kappa * phi)
    feature = np.where(z > 1.0, 1.0 / np.sqrt(z), 1.0)
    u_min = _np_u_start(beta, dist_p, dist_m, feature)

    def drop(u, idx):
        return np.expm1(-2.0 * z[idx, None, None] * np.sinh(0.5 * u) ** 2)

    j, ja = _np_resum_integral(beta, s2p, s2m, u_min, drop)
    total, atotal, lmax = _np_add_integral(total, atotal, lmax, j, ja,
                                           -2.0 * z - math.log(2.0 * math.pi))
    return _np_finish(total, atotal, lmax)


def _np_resum_drift(alpha, phi, a, b, c, shift):
    kappa = math.pi / alpha
    beta = kappa
    lpre = np.log(b / (2.0 * beta * beta)) - shift
    total, atotal, lmax = _np_images(
        phi, alpha, math.pi, 1.0,
        lambda psi: lpre + _np_log_g1(c + b * math.cos(psi), a), a.size)
    p0 = c - b
    h1, h2, h3 = _np_moments(p0, a)
    big_l = np.maximum(h1, np.sqrt(np.abs(h2)))
    s2p, dist_p = _np_phase(beta * math.pi + kappa * phi)
    s2m, dist_m = _np_phase(beta * math.pi - kappa * phi)
    feature = np.minimum(1.0, np.sqrt(2.0 / (b * big_l)))
    u_min = _np_u_start(beta, dist_p, dist_m, feature)
    sq = 2.0 * np.sqrt(a)
    y0 = -p0 / sq

    def drop(u, idx):
        dp = 2.0 * b[idx, None, None] * np.sinh(0.5 * u) ** 2
        h1_, h2_, h3_ = h1[idx, None, None], h2[idx, None, None], h3[idx, None, None]
        y0_ = np.broadcast_to(y0[idx, None, None], dp.shape)
        taylor = dp * (-h1_ + dp * (0.5 * h2_ - dp * h3_ / 6.0))
        dy = dp / sq[idx, None, None]
        yu = y0_ + dy
        near = yu < _ERFCX_CF_MIN
        diff = np.empty_like(dp)
        with np.errstate(divide="ignore", invalid="ignore"):
            diff[near] = dy[near] * (2.0 * y0_[near] + dy[near]) \
                + np.log(special.erfc(yu[near]) / special.erfc(y0_[near]))
        far = ~near
        if far.any():
            diff[far] = _np_log_erfcx(yu[far]) - _np_log_erfcx(y0_[far])
        small = dp * big_l[idx, None, None] < _TAYLOR_DP
        return np.where(small, taylor, np.expm1(diff))

    j, ja = _np_resum_integral(beta, s2p, s2m, u_min, drop)
    total, atotal, lmax = _np_add_integral(total, atotal, lmax, j, ja,
                                           _np_log_g0(p0, a) - shift - math.log(2.0 * math.pi))
    return _np_finish(total, atotal, lmax)


def _np_choose(w_typ, resum, series):
    """Per-point route choice of :func:`_log_density_zero`, vectorized.

    ``resum(idx)`` gives ``(log sum, log magnitude)`` and ``series(idx)`` also
    the status and last envelope.  Returns ``(lv, la, status, tail)``.
    """
    n = w_typ.size
    lv, la, tail = np.empty(n), np.empty(n), np.empty(n)
    status = np.full(n, _STATUS_OK, dtype=np.int64)
    first_r = w_typ >= _RESUM_FIRST_W
    idx = np.flatnonzero(first_r)
    if idx.size:
        lv[idx], la[idx] = resum(idx)
        tail[idx] = la[idx] - _U_DECAY
    idx = np.flatnonzero(~first_r)
    if idx.size:
        lv[idx], la[idx], status[idx], tail[idx] = series(idx)
    with np.errstate(invalid="ignore"):
        bad = np.less(lv - la, _LOG_COND_SWITCH)
    for other_is_series in (True, False):
        idx = np.flatnonzero(bad & (first_r == other_is_series))
        if not idx.size:
            continue
        if other_is_series:
            lv2, la2, st2, tl2 = series(idx)
        else:
            lv2, la2 = resum(idx)
            st2, tl2 = np.full(idx.size, _STATUS_OK), la2 - _U_DECAY
        with np.errstate(invalid="ignore"):
            take = np.greater(lv2 - la2, lv[idx] - la[idx])
        k = idx[take]
        lv[k], la[k], status[k], tail[k] = lv2[take], la2[take], st2[take], tl2[take]
    with np.errstate(invalid="ignore"):
        lv = np.where(np.less(lv - la, math.log(_CANCEL_FLOOR)), -np.inf, lv)
    return lv, status, tail


def _np_log_density_zero(alpha, r0, phi, s, t):
    sa, ca = math.sin(alpha), math.cos(alpha)
    dd = t - s * ca * ca
    z = r0 * r0 * (t - s) / (4.0 * s * dd)
    base = (math.log(math.pi * sa / (2.0 * alpha * alpha)) - 0.5 * np.log(s * dd)
            - np.log(t - s) - r0 * r0 * sa * sa / (2.0 * dd))
    kappa = math.pi / alpha

    def series(idx):
        return _np_sum_series(lambda n, j: log_iv_numpy(0.5 * n * kappa, z[idx][j]) - z[idx][j],
                              phi, kappa, idx.size)

    lv, status, tail = _np_choose(z, lambda idx: _np_resum_zero(alpha, phi, z[idx]), series)
    return base + lv, status, base + tail


def _np_peak(nu, a, b, c):
    """Vectorized :func:`_peak`: safeguarded Newton on the bracketing interval."""
    cb = c + b
    hi = (cb + np.sqrt(cb * cb + 8.0 * a * nu)) / (4.0 * a)
    lo = np.zeros_like(hi)
    r = 0.5 * hi
    todo = np.arange(r.size)
    for _ in range(100):
        rr, aa, bb, cc = r[todo], a[todo], b[todo], c[todo]
        x = bb * rr
        w = np.sqrt(nu * nu + x * x)
        lp = w / x - x / (2.0 * w * w)
        h = cc - 2.0 * aa * rr + bb * lp
        up = h > 0.0
        lo[todo] = np.where(up, rr, lo[todo])
        hi[todo] = np.where(up, hi[todo], rr)
        lpp = 1.0 + nu * nu / (x * x) - lp / x - lp * lp
        dh = -2.0 * aa + bb * bb * lpp
        with np.errstate(divide="ignore", invalid="ignore"):
            rn = rr - h / dh
        lt, ht = lo[todo], hi[todo]
        bad = ~((lt < rn) & (rn < ht)) | (dh >= 0.0)
        rn = np.where(bad, 0.5 * (lt + ht), rn)
        done = (np.abs(rn - rr) <= 1e-12 * rn) | (ht - lt <= 1e-12 * ht)
        r[todo] = rn
        todo = todo[~done]
        if todo.size == 0:
            break
    x = b * r
    w = np.sqrt(nu * nu + x * x)
    lp = w / x - x / (2.0 * w * w)
    lpp = 1.0 + nu * nu / (x * x) - lp / x - lp * lp
    curv = np.maximum(2.0 * a - b * b * lpp, 2.0 * a)
    return r, 1.0 / np.sqrt(curv)


def _np_log_jn(nu, a, b, c, shift):
    r_pk, sig = _np_peak(nu, a, b, c)
    interior = r_pk > _GH_CLEARANCE * sig
    out = np.empty_like(r_pk)
    if interior.any():
        k = interior
        scale = math.sqrt(2.0) * sig[k]
        r = r_pk[k, None] + scale[:, None] * _GH_X
        sub = _sub(k, a, b, c, shift)
        vals = _GH_LOGW + sub(r, nu)
        out[k] = np.log(scale) + logsumexp(vals, axis=1)
    origin = ~interior & (r_pk < 2.0 * sig)
    if origin.any():
        k = origin
        big_r = r_pk[k] + _GL_REACH * sig[k]
        r = big_r[:, None] * _GL_U ** 2
        sub = _sub(k, a, b, c, shift)
        vals = _GL_LOGW + np.log(2.0 * big_r[:, None] * _GL_U) + sub(r, nu)
        out[k] = logsumexp(vals, axis=1)
    near = ~interior & ~origin
    if near.any():
        k = near
        pk = r_pk[k, None]
        big_r = pk + _GL_REACH * sig[k, None]
        sub = _sub(k, a, b, c, shift)
        below = _GL_LOGW + np.log(2.0 * pk * _GL_U) + sub(pk * _GL_U ** 2, nu)
        above = _GL_LOGW + np.log(big_r - pk) + sub(pk + (big_r - pk) * _GL_U, nu)
        out[k] = logsumexp(np.concatenate([below, above], axis=1), axis=1)
    return out


def _sub(k, a, b, c, shift):
    a, b, c, shift = a[k, None], b[k, None], c[k, None], shift[k, None]

    def g(r, nu):
        return c * r - a * r * r - shift + log_iv_numpy(nu, b * r)

    return g


def _np_log_density_drift(alpha, r0, theta0, g1, g2, s, t):
    sa, ca = math.sin(alpha), math.cos(alpha)
    a = (t - s * ca * ca) / (2.0 * s * (t - s))
    b = r0 / s
    c = np.full_like(s, g1 * ca)
    shift = r0 * r0 / (2.0 * s)
    base = (0.5 * math.log(0.5 * math.pi) + math.log(sa) - 2.0 * math.log(alpha)
            - np.log(s) - 1.5 * np.log(t - s)
            - r0 * (g1 * math.cos(theta0) + g2 * math.sin(theta0))
            - 0.5 * (g1 * g1 * s + g2 * g2 * t))
    kappa = math.pi / alpha
    phi = alpha - theta0

    def series(idx):
        ai, bi, ci, shi = a[idx], b[idx], c[idx], shift[idx]
        return _np_sum_series(lambda n, j: _np_log_jn(n * kappa, ai[j], bi[j], ci[j], shi[j]),
                              phi, kappa, idx.size)

    def resum(idx):
        return _np_resum_drift(alpha, phi, a[idx], b[idx], c[idx], shift[idx])

    lv, status, tail = _np_choose(b * _np_moments(c, a)[0], resum, series)
    return base + lv, status, base + tail


def _np_log_density_many(g, s, t):
    out = np.empty(s.shape)
    status = np.zeros(s.shape, dtype=np.int64)
    tail = np.full(s.shape, -np.inf)
    expo = 0.5 * math.pi / g.alpha - 1.0
    diag = s == t
    if diag.any():
        if abs(expo) > 1e-12:
            out[diag] = np.inf if expo < 0 else -np.inf
        else:
            t = np.where(diag, s * (1.0 + 1e-9), t)
            diag = np.zeros_like(diag)
    for lower, geo in ((s < t, g), (t < s, mirror(g))):
        if not lower.any():
            continue
        lo, hi = (s[lower], t[lower]) if geo is g else (t[lower], s[lower])
        bound = np.array([_log_first_hit_bound(geo.alpha, geo.r0, geo.theta0, geo.mu1_tilde,
                                               geo.mu2_tilde, v) for v in lo])
        live = bound >= _LOG_NEGLIGIBLE
        v = np.full(lo.shape, -np.inf)
        st = np.zeros(lo.shape, dtype=np.int64)
        tb = np.full(lo.shape, -np.inf)
        if live.any():
            if geo.mu1_tilde == 0.0 and geo.mu2_tilde == 0.0:
                res = _np_log_density_zero(geo.alpha, geo.r0, geo.alpha - geo.theta0,
                                           lo[live], hi[live])
            else:
                res = _np_log_density_drift(geo.alpha, geo.r0, geo.theta0,
                                            geo.mu1_tilde, geo.mu2_tilde, lo[live], hi[live])
            v[live], st[live], tb[live] = res
        out[lower], status[lower], tail[lower] = v, st, tb
    return out, status, tail


# ---------------------------------------------------------------------------
# reference route: adaptive quadrature of every r-integral
# ---------------------------------------------------------------------------

def _reference_log_density(g, s, t, spec):
    """Slow cross-check: each J_n by adaptive Gauss-Kronrod over r."""
    if t < s:
        return _reference_log_density(mirror(g), t, s, spec)
    alpha, r0, theta0, g1, g2 = g.alpha, g.r0, g.theta0, g.mu1_tilde, g.mu2_tilde
    sa, ca = math.sin(alpha), math.cos(alpha)
    a = (t - s * ca * ca) / (2.0 * s * (t - s))
    b = r0 / s
    c = g1 * ca
    shift = r0 * r0 / (2.0 * s)
    base = (0.5 * math.log(0.5 * math.pi) + math.log(sa) - 2.0 * math.log(alpha)
            - math.log(s) - 1.5 * math.log(t - s)
            - r0 * (g1 * math.cos(theta0) + g2 * math.sin(theta0))
            - 0.5 * (g1 * g1 * s + g2 * g2 * t))
    kappa = math.pi / alpha
    terms = []
    run = 0
    for n in range(1, SERIES_MAX_TERMS + 1):
        nu = n * kappa

        def logg(r, nu=nu):
            r = np.asarray(r, dtype=float)
            return c * r - a * r * r - shift + log_iv_numpy(nu, b * r)

        # locate the peak on a coarse grid, then bound r where the Gaussian
        # envelope exp(c r - a r^2) has dropped by 1e-16 from its maximum
        r_env = max(c, 0.0) / (2.0 * a)
        r_hi = r_env + math.sqrt(36.9 / a) + 1.0 / math.sqrt(a)
        grid = np.linspace(0.0, r_hi, 2001)[1:]
        lg = logg(grid)
        peak = float(np.max(lg))
        r_pk = float(grid[np.argmax(lg)])
        r_max = max(r_hi, r_pk + math.sqrt(2.0 * 36.9 / (2.0 * a)))
        val = integrate_1d(lambda r: np.exp(logg(np.maximum(r, 1e-300)) - peak), 0.0, r_max, spec)
        lenv = math.log(n) + peak + math.log(val)
        terms.append((math.sin(nu * (alpha - theta0)), lenv))
        lm = max(v for _, v in terms)
        tot = sum(sg * math.exp(v - lm) for sg, v in terms)
        if n >= SERIES_MIN_TERMS and tot > 0 and lenv - lm - math.log(tot) <= math.log(SERIES_REL_TOL):
            run += 1
            if run >= SERIES_RUN:
                break
        else:
            run = 0
    else:
        raise NonConvergenceError("reference series hit the term cap")
    if tot <= 0:
        return -math.inf
    return base + lm + math.log(tot)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _evaluate(m, s, t):
    g = geometry(m)
    s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    shape = s_arr.shape
    s_flat = np.ascontiguousarray(s_arr.ravel())
    t_flat = np.ascontiguousarray(t_arr.ravel())
    if np.any(~(s_flat > 0)) or np.any(~(t_flat > 0)) or \
            np.any(~np.isfinite(s_flat)) or np.any(~np.isfinite(t_flat)):
        raise ValueError("joint density requires finite s, t > 0")
    if USE_NUMBA:
        out, status, tail = _log_density_many(
            g.alpha, g.r0, g.theta0, g.mu1_tilde, g.mu2_tilde, s_flat, t_flat)
    else:
        out, status, tail = _np_log_density_many(g, s_flat, t_flat)
    return out.reshape(shape), status.reshape(shape), tail.reshape(shape)


def log_joint_density(m, s, t, reference=False, spec=DEFAULT_QUADRATURE, full_output=False):
    """Natural log of :func:`joint_density`.

    Parameters
    ----------
    m : PairModel
    s, t : float or array_like
        Exit times of coordinate 1 and 2 (broadcast together).
    reference : bool
        Evaluate every r-integral with adaptive quadrature instead of the
        peak-centred Gauss rules.  Much slower; meant for validation.
    full_output : bool
        Also return the log of the last series term's envelope, a bound on the
        truncation error once the terms decay super-geometrically.

    Raises
    ------
    NonConvergenceError
        If the Bessel series reaches its term cap before the tolerance.
    """
    if reference:
        g = geometry(m)
        s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        out = np.array([_reference_log_density(g, float(a), float(b), spec) if a != b
                        else float(_evaluate(m, a, b)[0])
                        for a, b in zip(s_arr.ravel(), t_arr.ravel())]).reshape(s_arr.shape)
        tail = np.full(out.shape, -np.inf)
    else:
        out, status, tail = _evaluate(m, s, t)
        if np.any(status != _STATUS_OK):
            bad = np.flatnonzero(status.ravel() != _STATUS_OK)
            raise NonConvergenceError(
                f"joint density series hit {SERIES_MAX_TERMS} terms at {bad.size} point(s)",
                estimate=np.exp(out), error=np.exp(tail))
    if out.ndim == 0:
        out, tail = float(out), float(tail)
    return (out, tail) if full_output else out


def joint_density(m, s, t, reference=False, spec=DEFAULT_QUADRATURE, full_output=False):
    """Joint density ``f(s, t)`` of the two first exit times.

    Off the diagonal the value is the Bessel-series representation; on the
    diagonal ``s == t`` the one-sided limit from ``s < t`` is returned, which
    is ``0``, a finite value or ``inf`` according to the wedge angle.
    """
    res = log_joint_density(m, s, t, reference, spec, full_output)
    if full_output:
        return np.exp(res[0]), np.exp(res[1])
    out = np.exp(res)
    return float(out) if np.ndim(out) == 0 else out


def chi2_product_moment(m, spec=QuadratureSpec(abs_tol=1e-7, rel_tol=1e-6)):
    """``E(chi1^2 chi2^2)`` for a zero-drift pair.

    With ``chi_i^2 = (b_i - x_i)^2 / (sigma_i^2 tau_i)`` this is
    ``c * int int f(s, t) / (s t) ds dt`` with
    ``c = (b_1 - x_1)^2 (b_2 - x_2)^2 / (sigma_1 sigma_2)^2``.
    """
    if not m.zero_drift:
        raise ValueError("chi2_product_moment requires mu1 = mu2 = 0")
    const = (m.d1.distance * m.d2.distance / (m.d1.sigma * m.d2.sigma)) ** 2
    return const * integrate_2d(lambda s, t: joint_density(m, s, t) / (s * t), spec)
