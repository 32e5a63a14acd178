"""
Special functions and adaptive quadrature shared by the rest of the package.

The normal CDF and quantile are thin wrappers over :mod:`scipy.special`.
The modified Bessel function of the first kind is implemented here because
the joint-density series needs it for real, unbounded orders in log scale and
inside numba kernels.
"""
import heapq
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import special

from ._backend import njit


class NonConvergenceError(ArithmeticError):
    """Raised when an iterative evaluation stops before meeting its tolerance.

    ``estimate`` holds the best value obtained and ``error`` the achieved
    error bound (or the magnitude of the last neglected term for series).
    """

    def __init__(self, message, estimate=float("nan"), error=float("inf")):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


# ---------------------------------------------------------------------------
# Standard normal
# ---------------------------------------------------------------------------

def std_normal_cdf(z):
    """Standard normal CDF; accepts scalars or arrays."""
    out = special.ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_sf(z):
    out = special.ndtr(-np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise ValueError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def chi2_1_cdf(x):
    """CDF of the chi-squared law with one degree of freedom, ``2*Phi(sqrt(x)) - 1``."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    out = special.erf(np.sqrt(0.5 * x))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Modified Bessel function I_nu, real order
# ---------------------------------------------------------------------------

_DEBYE_TERMS = 14
# Series below this value of sqrt(nu^2 + x^2), Debye expansion above.
_DEBYE_MIN_W = 25.0


def _debye_coefficients(n_terms):
    """Coefficients of v_k(p) = u_k(p) / p^k for the uniform expansion of I_nu.

    The u_k obey u_{k+1} = p^2 (1 - p^2) u_k' / 2 + 1/8 * int_0^p (1 - 5 t^2) u_k dt.
    Row k holds the ascending coefficients of v_k as a polynomial in p^2.
    """
    u = [np.array([1.0])]
    for _ in range(n_terms - 1):
        uk = u[-1]
        a = P.polymul([0.0, 0.0, 0.5, 0.0, -0.5], P.polyder(uk)) if uk.size > 1 else np.zeros(1)
        b = P.polyint(P.polymul([1.0, 0.0, -5.0], uk)) / 8.0
        u.append(P.polyadd(a, b))
    # v_k has only even powers of p; store them as a polynomial in p^2
    table = np.zeros((n_terms, n_terms))
    for k, uk in enumerate(u):
        uk = np.pad(uk, (0, max(0, 3 * k + 1 - uk.size)))
        table[k, : k + 1] = uk[k: 3 * k + 1: 2]
    return table


DEBYE_V = _debye_coefficients(_DEBYE_TERMS)


@njit(cache=True)
def _log_iv_series(nu, x):
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    k = 1
    while k < 2000:
        term *= q / (k * (nu + k))
        total += term
        if term < 1e-17 * total:
            break
        k += 1
    return nu * math.log(0.5 * x) - math.lgamma(nu + 1.0) + math.log(total)


@njit(cache=True)
def _log_iv_debye(nu, x, w, coef):
    p2 = (nu / w) ** 2
    iw = 1.0 / w
    acc = 1.0
    scale = 1.0
    for k in range(1, coef.shape[0]):
        scale *= iw
        v = coef[k, k]
        for j in range(k - 1, -1, -1):
            v = v * p2 + coef[k, j]
        t = v * scale
        acc += t
        if abs(t) < 1e-16 * acc:
            break
    return w + nu * math.log(x / (nu + w)) - 0.5 * math.log(2.0 * math.pi * w) + math.log(acc)


@njit(cache=True)
def log_iv_scalar(nu, x, coef):
    """log I_nu(x) for nu > -1, x >= 0 (``-inf`` where I_nu(x) = 0)."""
    if x == 0.0:
        if nu == 0.0:
            return 0.0
        return -math.inf
    w = math.sqrt(nu * nu + x * x)
    if nu < 0.0 or w < _DEBYE_MIN_W:
        return _log_iv_series(nu, x)
    return _log_iv_debye(nu, x, w, coef)


def log_iv_numpy(nu, x):
    """Vectorized log I_nu(x); same branch rules as :func:`log_iv_scalar`."""
    nu, x = np.broadcast_arrays(np.asarray(nu, dtype=float), np.asarray(x, dtype=float))
    out = np.empty(nu.shape)
    zero = x == 0.0
    out[zero] = np.where(nu[zero] == 0.0, 0.0, -np.inf)
    w = np.sqrt(nu * nu + x * x)
    ser = ~zero & ((nu < 0.0) | (w < _DEBYE_MIN_W))
    deb = ~zero & ~ser
    if ser.any():
        n_s, x_s = nu[ser], x[ser]
        q = 0.25 * x_s * x_s
        term = np.ones_like(x_s)
        total = np.ones_like(x_s)
        for k in range(1, 2000):
            term = term * q / (k * (n_s + k))
            total += term
            if np.all(term < 1e-17 * total):
                break
        out[ser] = n_s * np.log(0.5 * x_s) - special.gammaln(n_s + 1.0) + np.log(total)
    if deb.any():
        n_d, x_d, w_d = nu[deb], x[deb], w[deb]
        p2 = (n_d / w_d) ** 2
        iw = 1.0 / w_d
        acc = np.ones_like(x_d)
        scale = np.ones_like(x_d)
        for k in range(1, DEBYE_V.shape[0]):
            scale = scale * iw
            acc += P.polyval(p2, DEBYE_V[k, : k + 1]) * scale
        out[deb] = w_d + n_d * np.log(x_d / (n_d + w_d)) - 0.5 * np.log(2.0 * np.pi * w_d) + np.log(acc)
    return out


def bessel_i(order, z, log_scaled=False):
    """Modified Bessel function of the first kind I_order(z).

    Parameters
    ----------
    order : float
        Real order.  Orders in (-1, 0) are accepted (series path only) so that
        the three-term recurrence can be exercised near zero.
    z : float
        Nonnegative argument.
    log_scaled : bool
        Return ``log I_order(z)`` instead, which never overflows.
    """
    order = float(order)
    z = float(z)
    if z < 0.0 or order <= -1.0:
        raise ValueError("bessel_i requires z >= 0 and order > -1")
    val = log_iv_scalar(order, z, DEBYE_V)
    if log_scaled:
        return val
    if val > 709.78:
        raise OverflowError(f"I_{order}({z}) exceeds the floating range; use log_scaled=True")
    return math.exp(val)


# ---------------------------------------------------------------------------
# Adaptive Gauss-Kronrod quadrature
# ---------------------------------------------------------------------------

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

# 15 abscissae in [-1, 1] and matching Kronrod / Gauss weights (Gauss at odd slots).
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
GK_WG = np.zeros(15)
GK_WG[1:7:2] = _WG[:3]
GK_WG[7] = _WG[3]
GK_WG[9:15:2] = _WG[2::-1]


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be strictly positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()


def _panel(f, a, b):
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    y = np.asarray(f(c + h * GK_NODES), dtype=float)
    if y.shape != (15,):
        y = np.broadcast_to(y, (15,))
    k = h * np.dot(GK_WK, y)
    g = h * np.dot(GK_WG, y)
    return k, abs(k - g)


def _adaptive(f, a, b, spec):
    val, err = _panel(f, a, b)
    heap = [(-err, a, b, val, err)]
    total, total_err = val, err
    n = 1
    while total_err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        if n >= spec.max_subdivisions:
            raise NonConvergenceError(
                f"adaptive quadrature hit {spec.max_subdivisions} subdivisions",
                estimate=total, error=total_err)
        _, lo, hi, v, e = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            raise NonConvergenceError("panel width below floating resolution",
                                      estimate=total, error=total_err)
        v1, e1 = _panel(f, lo, mid)
        v2, e2 = _panel(f, mid, hi)
        heapq.heappush(heap, (-e1, lo, mid, v1, e1))
        heapq.heappush(heap, (-e2, mid, hi, v2, e2))
        total += v1 + v2 - v
        total_err += e1 + e2 - e
        n += 1
        if total_err < 0.0 or n % 64 == 0:
            # refresh the running sums to shed accumulated cancellation
            total = math.fsum(item[3] for item in heap)
            total_err = math.fsum(item[4] for item in heap)
    if not np.isfinite(total):
        raise NonConvergenceError("integrand produced non-finite values", estimate=total)
    return total, total_err


def integrate_1d(f, a, b, spec=DEFAULT_QUADRATURE, full_output=False):
    """Adaptive 15/7-point Gauss-Kronrod integral of a vectorized ``f`` over (a, b).

    An infinite upper limit is handled by the substitution x = a + u / (1 - u).
    Returns the estimate, or ``(estimate, error)`` with ``full_output``.
    """
    if math.isinf(b):
        if b < 0:
            raise ValueError("only +inf is supported as an infinite limit")

        def g(u):
            x = a + u / (1.0 - u)
            return f(x) / (1.0 - u) ** 2

        val, err = _adaptive(g, 0.0, 1.0, spec)
    else:
        val, err = _adaptive(f, float(a), float(b), spec)
    return (val, err) if full_output else val


def _halfline(v):
    """Map (0, 1) onto (0, inf) quadratically: returns (x, dx/dv)."""
    r = v / (1.0 - v)
    return r * r, 2.0 * v / (1.0 - v) ** 3


def integrate_2d(f, spec=DEFAULT_QUADRATURE, full_output=False, scale=1.0):
    """Integral of a vectorized ``f(s, t)`` over the open quadrant (0, inf)^2.

    The quadrant is split on the diagonal s = t.  On each triangle the
    smaller time ``m`` and the gap to the larger one are both mapped to
    (0, 1) by x = c (v / (1 - v))^2, which tames the t^(-3/2) tails of
    first-passage laws and softens algebraic singularities along the
    diagonal.  The outer map uses ``c = scale``; the gap uses
    ``c = max(m, scale)`` so that the inner integrand keeps its shape when
    the smaller time is far out in a heavy tail.

    Parameters
    ----------
    f : callable
        Vectorized density ``f(s, t)``.
    spec : QuadratureSpec
        Tolerances of the outer integral; the inner ones are ten times tighter.
    scale : float
        Characteristic time of ``f``.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    inner_spec = QuadratureSpec(spec.abs_tol * 0.1, spec.rel_tol * 0.1, spec.max_subdivisions)
    total = 0.0
    total_err = 0.0
    for lower_first in (True, False):

        def outer(xs, lower_first=lower_first):
            out = np.empty_like(xs)
            for i, xv in enumerate(xs):
                m, dm = _halfline(xv)
                m *= scale
                c = max(m, scale)

                def inner(ys, m=m, c=c):
                    g, dg = _halfline(ys)
                    g = c * g
                    if lower_first:
                        vals = f(np.full_like(ys, m), m + g)
                    else:
                        vals = f(m + g, np.full_like(ys, m))
                    return np.asarray(vals, dtype=float) * (c * dg)

                out[i] = _adaptive(inner, 0.0, 1.0, inner_spec)[0] * dm * scale
            return out

        val, err = _adaptive(outer, 0.0, 1.0, spec)
        total += val
        total_err += err
    return (total, total_err) if full_output else total
