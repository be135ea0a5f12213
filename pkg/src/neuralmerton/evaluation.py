"""Closed-form baseline weights and Monte Carlo policy evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import (STREAM_EVAL, W_MIN, MarketParams, TimeGrid, make_noise, run_policy)
from .policy_net import PolicyParams, forward
from .utility import UtilitySpec


def merton_ratio_gbm(mu: float, r: float, sigma: float, eta: float) -> float:
    """Classical Merton ratio ``(mu - r) / (eta sigma^2)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not eta > 0:
        raise ValueError("Merton ratio needs eta > 0 (unbounded demand at eta = 0)")
    return (mu - r) / (eta * sigma * sigma)


def myopic_weight_heston(mu: float, r: float, y):
    """Log-utility optimal Heston weight ``(mu - r) / y``."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0):
        raise ValueError("myopic weight needs y > 0")
    out = (mu - r) / y_arr
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# policies: each maps arrays (t in years, y) to weights

@dataclass(frozen=True)
class ConstantPolicy:
    pi: float
    name: str = "constant"

    def __call__(self, t, y):
        return np.full(np.broadcast(t, y).shape, float(self.pi))


@dataclass(frozen=True)
class AnalyticGBMPolicy:
    eta: float
    params: MarketParams
    name: str = "analytic"

    @property
    def weight(self) -> float:
        p = self.params
        sigma = p.sigma if p.sigma is not None else math.sqrt(p.initial_variance)
        return merton_ratio_gbm(p.mu, p.r, sigma, self.eta)

    def __call__(self, t, y):
        return np.full(np.broadcast(t, y).shape, self.weight)


@dataclass(frozen=True)
class MyopicHestonPolicy:
    """``(mu - r) / y`` with ``y`` clipped at ``y_min`` where the truncated
    variance reaches zero."""

    mu: float
    r: float
    y_min: float = 1e-4
    name: str = "myopic"

    def __call__(self, t, y):
        y = np.broadcast_to(np.asarray(y, dtype=float), np.broadcast(t, y).shape)
        return myopic_weight_heston(self.mu, self.r, np.maximum(y, self.y_min))


@dataclass(frozen=True)
class ANNPolicy:
    theta: PolicyParams
    horizon: float = 1.0
    name: str = "ann"

    def __call__(self, t, y):
        return forward(self.theta, t, y, horizon=self.horizon)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    mean: float
    stderr: float
    n_rep: int
    seed: int
    floor_events: int = 0


def evaluate_policy(policy, params: MarketParams, grid: TimeGrid, u: UtilitySpec, n_rep: int,
                    seed: int, chunk: int = 2000) -> EvalReport:
    """Mean terminal utility over ``n_rep`` simulated paths and its standard error.

    Paths come from the evaluation stream, so two policies evaluated with
    the same seed see common random numbers.
    """
    if n_rep < 2:
        raise ValueError("need at least two replications for a standard error")
    utils = np.empty(n_rep)
    floors = 0
    for start in range(0, n_rep, chunk):
        B = min(chunk, n_rep - start)
        noise = make_noise(seed, (STREAM_EVAL,), B, grid, params.correlation, first_path=start)
        res = run_policy(params, grid, policy, noise)
        utils[start:start + B] = u(res.terminal_wealth)
        floors += res.floor_events
    mean = float(np.mean(utils))
    if np.ptp(utils) == 0.0:
        se = 0.0
    else:
        se = float(np.std(utils, ddof=1) / math.sqrt(n_rep))
    return EvalReport(mean, se, n_rep, seed, floors)


def weight_profile(policy, t_grid, y_grid) -> np.ndarray:
    """Weights on the Cartesian grid, rows ``(t, y, pi)`` with ``t`` varying slowest."""
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    y_grid = np.asarray(y_grid, dtype=float).ravel()
    if t_grid.size == 0 or y_grid.size == 0:
        raise ValueError("profile grids must be non-empty")
    tt, yy = np.meshgrid(t_grid, y_grid, indexing="ij")
    pi = np.asarray(policy(tt, yy), dtype=float)
    return np.column_stack([tt.ravel(), yy.ravel(), np.broadcast_to(pi, tt.shape).ravel()])


def time_averaged_weight(policy, horizon: float, y: float, points: int = 500) -> float:
    """Weight averaged over equispaced times on ``[0, horizon]`` at fixed ``y``."""
    t = np.linspace(0.0, horizon, points)
    return float(np.mean(policy(t, np.full(points, y))))


def wealth_paths_export(policies: dict, params: MarketParams, grid: TimeGrid, n_paths: int,
                        seed: int) -> dict:
    """Wealth trajectories, shape (n_paths, n+1), for each named policy on common noise.

    The variance paths are returned under the key ``"_Y"``.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    noise = make_noise(seed, (STREAM_EVAL,), n_paths, grid, params.correlation)
    out = {}
    for name, policy in policies.items():
        res = run_policy(params, grid, policy, noise, keep_paths=True)
        out[name] = res.wealth
        out["_Y"] = res.market.Y
        out["_S"] = res.market.S
    return out


def pathwise_quantile_band(Y: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """Average over paths of the per-path central ``level`` quantile range."""
    lo = (1.0 - level) / 2.0
    q = np.quantile(Y, [lo, 1.0 - lo], axis=1)
    return float(q[0].mean()), float(q[1].mean())


def lognormal_expected_utility(pi: float, params: MarketParams, eta: float, T: float = 1.0) -> float:
    """Continuous-time expected utility of a constant weight in a GBM market.

    Terminal log-wealth is normal with mean ``(r + pi (mu - r) - pi^2 sigma^2 / 2) T``
    and variance ``pi^2 sigma^2 T``.
    """
    s2 = params.sigma**2
    m = (params.r + pi * (params.mu - params.r) - 0.5 * pi * pi * s2) * T + math.log(params.w0)
    v = pi * pi * s2 * T
    if eta == 1:
        return m
    a = 1.0 - eta
    return math.expm1(a * m + 0.5 * a * a * v) / a
