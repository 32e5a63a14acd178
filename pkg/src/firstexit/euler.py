"""
Discretized-path baseline.

Each scenario steps ``X(t + h) = X(t) + mu h + sigma sqrt(h) L eps`` on a
uniform grid, with ``L`` the Cholesky factor of the correlation matrix and
``eps`` standard normals.  A coordinate's exit time is the first grid time
at which it sits at or beyond its barrier; coordinates still alive at the
horizon are censored to ``+inf``.  Because crossings between grid points
are missed, exit times come out late on average.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._backend import USE_NUMBA, njit, prange
from .marginal import ExitTimeSamples
from .rng import EULER, SELECTOR, RandomStreams, normal_pair_at, substream_key, uniform_at


@dataclass(frozen=True)
class EulerConfig:
    """Grid step, horizon, number of scenarios and seed of an Euler run."""

    step: float = 0.0015625
    horizon: float = 10.0
    scenarios: int = 100000
    seed: int = 0

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"step must be positive, got {self.step}")
        if not (self.horizon > self.step and math.isfinite(self.horizon)):
            raise ValueError("horizon must be finite and larger than step")
        if int(self.scenarios) < 1:
            raise ValueError("scenarios must be >= 1")
        object.__setattr__(self, "scenarios", int(self.scenarios))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_steps(self):
        # tolerate horizon/step landing a hair under an integer
        return int(math.floor(self.horizon / self.step + 1e-9))


def _model_arrays(model):
    mu = np.array([d.mu for d in model.dims])
    sigma = np.array([d.sigma for d in model.dims])
    x0 = np.array([d.x0 for d in model.dims])
    barrier = np.array([d.barrier for d in model.dims])
    side = np.where(x0 > barrier, 1.0, -1.0)
    chol = np.linalg.cholesky(model.corr) if model.n_dims > 1 else np.ones((1, 1))
    return mu, sigma, x0, barrier, side, chol


@njit(cache=True, parallel=True)
def _euler_kernel(base, bridge_base, mu, sigma, x0, barrier, side, chol,
                  step, n_steps, scenarios, bridge):
    n = scenarios
    dim = mu.shape[0]
    npairs = (dim + 1) // 2
    times = np.full((n, dim), np.inf)
    final = np.empty((n, dim))
    sq = math.sqrt(step)
    for i in prange(n):
        key = substream_key(base, i)
        bkey = substream_key(bridge_base, i)
        x = x0.copy()
        eps = np.empty(2 * npairs)
        dw = np.empty(dim)
        alive = dim
        for k in range(n_steps):
            for j in range(npairs):
                a, b = normal_pair_at(key, k * npairs + j)
                eps[2 * j] = a
                eps[2 * j + 1] = b
            for r in range(dim):
                acc = 0.0
                for c in range(r + 1):
                    acc += chol[r, c] * eps[c]
                dw[r] = acc
            t_next = (k + 1) * step
            for r in range(dim):
                if times[i, r] != np.inf:
                    continue
                prev = x[r] - barrier[r]
                x[r] += mu[r] * step + sigma[r] * sq * dw[r]
                gap = side[r] * (x[r] - barrier[r])
                if gap <= 0.0:
                    times[i, r] = t_next
                    alive -= 1
                elif bridge:
                    # probability that the Brownian bridge between the two
                    # grid values touched the barrier
                    p = math.exp(-2.0 * side[r] * prev * gap / (sigma[r] * sigma[r] * step))
                    if uniform_at(bkey, k * dim + r) < p:
                        times[i, r] = t_next - 0.5 * step
                        alive -= 1
            if alive == 0:
                break
        for r in range(dim):
            final[i, r] = x[r]
    return times, final


def _euler_numpy(streams, mu, sigma, x0, barrier, side, chol, step, n_steps, scenarios, bridge):
    dim = mu.size
    npairs = (dim + 1) // 2
    idx = np.arange(scenarios)
    x = np.tile(x0, (scenarios, 1))
    times = np.full((scenarios, dim), np.inf)
    sq = math.sqrt(step)
    active = np.ones(scenarios, dtype=bool)
    for k in range(n_steps):
        live = np.flatnonzero(active)
        if live.size == 0:
            break
        eps = streams.normals(EULER, idx[live], 2 * npairs, offset_pairs=k * npairs)
        dw = eps[:, :dim] @ chol.T
        xl, tl = x[live], times[live]
        open_ = np.isinf(tl)
        prev = xl - barrier
        step_x = xl + mu * step + sigma * sq * dw
        xl = np.where(open_, step_x, xl)
        gap = side * (xl - barrier)
        hit = open_ & (gap <= 0.0)
        tl = np.where(hit, (k + 1) * step, tl)
        if bridge:
            u = streams.uniforms(SELECTOR, idx[live], dim, offset=k * dim)
            with np.errstate(over="ignore"):
                p = np.exp(-2.0 * side * prev * gap / (sigma * sigma * step))
            touch = open_ & ~hit & (u < p)
            tl = np.where(touch, (k + 1) * step - 0.5 * step, tl)
        x[live], times[live] = xl, tl
        active[live] = np.isinf(tl).any(axis=1)
    return times, x


def euler_paths(model, cfg, bridge=False):
    """Exit times and final positions of ``cfg.scenarios`` discretized paths.

    With ``bridge`` a crossing is also declared with the Brownian-bridge
    probability ``exp(-2 (x - b)(y - b) / (sigma^2 h))`` between grid
    points, dated at the step midpoint.  The baseline itself never uses
    this; it serves the Monte Carlo rank-correlation check.

    Returns
    -------
    times : ndarray, shape (scenarios, N)
        ``+inf`` where the barrier was not reached by the horizon.
    final : ndarray, shape (scenarios, N)
        Positions when the path stopped (crossed coordinates are frozen).
    """
    mu, sigma, x0, barrier, side, chol = _model_arrays(model)
    streams = RandomStreams(cfg.seed)
    if USE_NUMBA:
        return _euler_kernel(streams.base(EULER), streams.base(SELECTOR), mu, sigma, x0,
                             barrier, side, chol, cfg.step, cfg.n_steps, cfg.scenarios,
                             bool(bridge))
    return _euler_numpy(streams, mu, sigma, x0, barrier, side, chol, cfg.step, cfg.n_steps,
                        cfg.scenarios, bool(bridge))


def euler_sample(model, cfg):
    """Euler-discretized exit times, censored at ``cfg.horizon``.

    Parameters
    ----------
    model : PortfolioModel
    cfg : EulerConfig

    Returns
    -------
    ExitTimeSamples
        Exit times are grid times ``k * step``; ``+inf`` when not crossed.
    """
    times, _ = euler_paths(model, cfg, bridge=False)
    return ExitTimeSamples(times, 0, {"method": "euler", "step": cfg.step,
                                      "horizon": cfg.horizon, "seed": cfg.seed})
