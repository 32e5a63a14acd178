"""
Pairwise calibration of the Gaussian copula.

Each exit time is pushed through its chi-squared transform and the
chi-squared(1) CDF, ``U = F(H(tau)) = 2 Phi(|mu tau - d| / (sigma sqrt tau)) - 1``,
which is uniform on (0, 1).  The rank correlation of ``(U_i, U_j)`` under the
joint density of ``(tau_i, tau_j)`` is mapped to a Gaussian correlation with
``r = 2 sin(pi rho_U / 6)``; the resulting matrix drives the copula.
"""
import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .density2d import PairModel, joint_density
from .marginal import DimensionParams, sample_marginal
from .numerics import QuadratureSpec, integrate_2d, std_normal_cdf

log = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-10
RANK_QUADRATURE = QuadratureSpec(abs_tol=1e-7, rel_tol=1e-6)


@dataclass(frozen=True)
class PortfolioModel:
    """Coordinates and their instantaneous correlation matrix."""

    dims: tuple
    corr: np.ndarray

    def __post_init__(self):
        dims = tuple(d if isinstance(d, DimensionParams) else DimensionParams(**d)
                     for d in self.dims)
        if len(dims) < 1:
            raise ValueError("at least one dimension is required")
        corr = np.array(self.corr, dtype=float)
        n = len(dims)
        if corr.shape != (n, n):
            raise ValueError(f"corr must be {n}x{n}, got shape {corr.shape}")
        if not np.all(np.isfinite(corr)):
            raise ValueError("corr has non-finite entries")
        if not np.allclose(corr, corr.T, rtol=0.0, atol=1e-12):
            raise ValueError("corr must be symmetric")
        if not np.all(np.diag(corr) == 1.0):
            raise ValueError("corr must have a unit diagonal")
        off = corr[~np.eye(n, dtype=bool)]
        if np.any(np.abs(off) >= 1.0):
            raise ValueError("off-diagonal correlations must lie in (-1, 1)")
        if n > 1 and np.linalg.eigvalsh(corr)[0] < -1e-12:
            raise ValueError("corr is not positive semidefinite")
        corr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "corr", corr)

    @property
    def n_dims(self):
        return len(self.dims)

    @property
    def zero_drift(self):
        return all(d.mu == 0.0 for d in self.dims)

    @property
    def any_defective(self):
        return any(d.defective for d in self.dims)

    def pair(self, i, j):
        return PairModel(self.dims[i], self.dims[j], float(self.corr[i, j]))

    def to_dict(self):
        return {"dims": [d.to_dict() for d in self.dims],
                "corr": [[float(v) for v in row] for row in self.corr]}

    @classmethod
    def from_dict(cls, data):
        try:
            dims = [DimensionParams(**d) for d in data["dims"]]
            corr = data["corr"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"model document needs 'dims' and 'corr': {exc}") from None
        return cls(tuple(dims), corr)

    def key(self):
        """Stable hash of the canonical JSON form, used for calibration caching."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:32]

    def __eq__(self, other):
        return isinstance(other, PortfolioModel) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True)
class CalibratedCopula:
    """Gaussian copula correlation, its Cholesky factor and the repair applied.

    ``repair`` holds ``max_eigen_clip`` (largest amount an eigenvalue was
    raised) and ``frobenius_shift`` (Frobenius distance between the raw and
    repaired matrices); both are zero when no repair was needed.
    """

    sigma: np.ndarray
    chol: np.ndarray
    repair: dict = field(default_factory=lambda: {"max_eigen_clip": 0.0, "frobenius_shift": 0.0})
    rank_corr: np.ndarray = None
    method: str = "quadrature"

    @property
    def n_dims(self):
        return self.sigma.shape[0]

    def to_dict(self):
        return {"sigma": self.sigma.tolist(),
                "rank_corr": None if self.rank_corr is None else self.rank_corr.tolist(),
                "repair": dict(self.repair), "method": self.method}

    @classmethod
    def from_dict(cls, data):
        sigma = np.array(data["sigma"], dtype=float)
        rank = data.get("rank_corr")
        return cls(sigma, np.linalg.cholesky(sigma), dict(data["repair"]),
                   None if rank is None else np.array(rank, dtype=float),
                   data.get("method", "quadrature"))


# ---------------------------------------------------------------------------
# rank correlation of one pair
# ---------------------------------------------------------------------------

def chi2_uniform(p, t):
    """``F(H(t)) = 2 Phi(|mu t - d| / (sigma sqrt t)) - 1``; uniform when t is an exit time.

    ``t = inf`` maps to 0 for zero drift (and to 1 when the drift points
    away from the barrier, a case the copula never uses).
    """
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        arg = np.abs(p.mu * t - p.distance) / (p.sigma * np.sqrt(t))
    arg = np.where(np.isinf(t), 0.0 if p.mu == 0.0 else np.inf, arg)
    return 2.0 * std_normal_cdf(arg) - 1.0


def _check_pair(m):
    if m.d1.defective or m.d2.defective:
        raise ValueError("rank correlation needs non-defective coordinates "
                         "(drift must point towards the barrier)")


def pair_rank_corr(m, method="quadrature", spec=RANK_QUADRATURE, full_output=False,
                   scenarios=20000, seed=0, step=0.01, horizon=100.0):
    """Spearman correlation of the transformed exit times of a pair.

    Parameters
    ----------
    m : PairModel
    method : {"quadrature", "euler_mc"}
        ``quadrature`` integrates ``12 (E[U1 U2] - 1/4)`` against the joint
        density.  ``euler_mc`` estimates the same number from simulated
        paths, for validation.
    spec : QuadratureSpec
        Tolerances of the double integral.
    full_output : bool
        Also return an error figure: the quadrature error estimate, or the
        Monte Carlo standard error.
    scenarios, seed, step, horizon
        Settings of the ``euler_mc`` route; see :func:`euler_rank_corr`.
    """
    _check_pair(m)
    if method == "euler_mc":
        value, err = euler_rank_corr(m, scenarios, seed, step, horizon)
    elif method == "quadrature":
        if m.rho == 0.0:
            value, err = 0.0, 0.0
        else:
            def integrand(s, t):
                return chi2_uniform(m.d1, s) * chi2_uniform(m.d2, t) * joint_density(m, s, t)

            scale = max(abs(m.d1.distance) / m.d1.sigma, abs(m.d2.distance) / m.d2.sigma) ** 2
            val, qerr = integrate_2d(integrand, spec, full_output=True, scale=scale)
            value, err = 12.0 * (val - 0.25), 12.0 * qerr
    else:
        raise ValueError(f"unknown method {method!r} (expected 'quadrature' or 'euler_mc')")
    value = min(max(value, -1.0), 1.0)
    return (value, err) if full_output else value


def chi2_covariance(m, spec=RANK_QUADRATURE, full_output=False):
    """``Cov(H_1(tau_1), H_2(tau_2))`` of the chi-squared transforms of a pair.

    Each ``H_i(tau_i)`` is chi-squared(1), so the covariance is
    ``E[H_1 H_2] - 1`` with the product moment integrated against the joint
    density.  A Gaussian copula on ``(Z_1, Z_2)`` with ``H_i = Z_i^2`` can
    only produce ``2 Corr(Z_1, Z_2)^2 >= 0``, so a negative value shows the
    transformed pair is not of that form.

    Returns the covariance, and with ``full_output`` also the quadrature
    error estimate.
    """
    from .marginal import transform_h
    _check_pair(m)

    def integrand(s, t):
        return transform_h(m.d1, s) * transform_h(m.d2, t) * joint_density(m, s, t)

    scale = max(abs(m.d1.distance) / m.d1.sigma, abs(m.d2.distance) / m.d2.sigma) ** 2
    val, err = integrate_2d(integrand, spec, full_output=True, scale=scale)
    return (val - 1.0, err) if full_output else val - 1.0


def euler_rank_corr(m, scenarios=20000, seed=0, step=0.01, horizon=100.0):
    """Monte Carlo rank correlation from discretized paths.

    Paths are stepped to ``horizon`` with Brownian-bridge crossing checks
    between grid points.  A coordinate still alive at the horizon gets its
    remaining time drawn exactly from the one-dimensional law started at
    its final position; the cross-dependence beyond the horizon is ignored,
    which is harmless because ``U`` is already close to 0 there.

    Returns ``(estimate, standard error)``; the error uses the delta-method
    form ``(1 - r^2) / sqrt(n)`` of a correlation of uniforms, inflated by
    the 1.06 Spearman factor.
    """
    from .euler import EulerConfig, euler_paths
    from .rng import RandomStreams, EULER

    model = PortfolioModel((m.d1, m.d2), np.array([[1.0, m.rho], [m.rho, 1.0]]))
    cfg = EulerConfig(step=step, horizon=horizon, scenarios=scenarios, seed=seed)
    times, final = euler_paths(model, cfg, bridge=True)
    streams = RandomStreams(seed)
    for k, p in enumerate((m.d1, m.d2)):
        alive = np.flatnonzero(np.isinf(times[:, k]))
        gen = streams.generator(EULER, 1 + k)
        for i in alive:
            rest = DimensionParams(p.mu, p.sigma, float(final[i, k]), p.barrier)
            times[i, k] = horizon + sample_marginal(rest, gen)
    u1 = chi2_uniform(m.d1, times[:, 0])
    u2 = chi2_uniform(m.d2, times[:, 1])
    r = float(np.corrcoef(u1, u2)[0, 1])
    return r, 1.06 * (1.0 - r * r) / math.sqrt(scenarios)


# ---------------------------------------------------------------------------
# copula assembly
# ---------------------------------------------------------------------------

def spearman_to_pearson(rho_u):
    """Gaussian correlation with Spearman correlation ``rho_u``: ``2 sin(pi rho_u / 6)``.

    Values pushed past +-1 by rounding are clamped with a warning.
    """
    arr = np.asarray(rho_u, dtype=float)
    if np.any(np.abs(arr) > 1.0 + 1e-12) or np.any(np.isnan(arr)):
        raise ValueError("rank correlation must lie in [-1, 1]")
    out = 2.0 * np.sin(np.pi * np.clip(arr, -1.0, 1.0) / 6.0)
    if np.any(np.abs(out) > 1.0):
        warnings.warn("spearman_to_pearson: rounding pushed a value past +-1; clamped")
        out = np.clip(out, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def pearson_to_spearman(r):
    """Inverse map ``(6 / pi) asin(r / 2)``."""
    return 6.0 / math.pi * np.arcsin(np.asarray(r, dtype=float) / 2.0)


def repair_correlation(raw, floor=EIGEN_FLOOR):
    """Clip eigenvalues at ``floor`` and rescale back to a unit diagonal.

    Returns ``(matrix, repair)``; the matrix is returned untouched, with a
    zero repair record, when it is already positive definite beyond ``floor``.
    """
    raw = 0.5 * (raw + raw.T)
    vals, vecs = np.linalg.eigh(raw)
    if vals[0] >= floor:
        return raw.copy(), {"max_eigen_clip": 0.0, "frobenius_shift": 0.0}
    clipped = np.maximum(vals, floor)
    fixed = (vecs * clipped) @ vecs.T
    scale = 1.0 / np.sqrt(np.diag(fixed))
    fixed = fixed * scale[:, None] * scale[None, :]
    fixed = 0.5 * (fixed + fixed.T)
    np.fill_diagonal(fixed, 1.0)
    repair = {"max_eigen_clip": float(np.max(clipped - vals)),
              "frobenius_shift": float(np.linalg.norm(fixed - raw))}
    log.warning("copula matrix was not positive definite; eigenvalues clipped "
                "(max clip %.3g, Frobenius shift %.3g)",
                repair["max_eigen_clip"], repair["frobenius_shift"])
    return fixed, repair


def _cache_load(path, key):
    if path is None or not os.path.exists(path):
        return None
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError:
            log.warning("ignoring unreadable calibration cache %s", path)
            return None
    entry = doc.get(key)
    return None if entry is None else CalibratedCopula.from_dict(entry)


def _cache_store(path, key, cop):
    doc = {}
    if os.path.exists(path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError:
                doc = {}
    doc[key] = cop.to_dict()
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def calibrate(model, method=None, spec=RANK_QUADRATURE, cache=None, **mc_options):
    """Gaussian copula matching every pairwise rank correlation of ``model``.

    Parameters
    ----------
    model : PortfolioModel
    method : {"quadrature", "euler_mc"}, optional
        Defaults to quadrature.
    spec : QuadratureSpec
    cache : str or path, optional
        JSON file mapping model hashes to calibrated matrices; read before
        and written after a calibration.
    **mc_options
        Passed to :func:`pair_rank_corr` for ``euler_mc``.

    Raises
    ------
    ValueError
        For drifted models with more than two coordinates (no joint density
        is available to calibrate or to select roots with), or for
        defective coordinates.
    """
    method = method or "quadrature"
    n = model.n_dims
    if model.any_defective:
        raise ValueError("copula sampling needs every drift to point towards its barrier")
    if not model.zero_drift and n > 2:
        raise ValueError("drifted models are limited to two coordinates: the joint "
                         "density needed for calibration and root selection is only "
                         "available for pairs")
    key = f"{model.key()}:{method}"
    if cache is not None:
        hit = _cache_load(cache, key)
        if hit is not None:
            log.info("calibration cache hit for %s", key)
            return hit

    rank = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            value = pair_rank_corr(model.pair(i, j), method=method, spec=spec, **mc_options)
            rank[i, j] = rank[j, i] = value
            log.info("pair (%d, %d): rank correlation %.6f", i, j, value)
    raw = np.eye(n)
    off = ~np.eye(n, dtype=bool)
    raw[off] = spearman_to_pearson(rank[off])
    sigma, repair = repair_correlation(raw)
    chol = np.linalg.cholesky(sigma)
    cop = CalibratedCopula(sigma, chol, repair, rank, method)
    if cache is not None:
        _cache_store(cache, key, cop)
    return cop
