"""Empirical utility objective and its pathwise gradient.

The noise batch is held fixed, so ``J(theta)`` is a deterministic smooth
function of the network parameters (away from wealth-floor events) and its
gradient is computed exactly by a reverse sweep over the recorded rollout:
the forward pass keeps the wealth path, the step returns and the network
activations, and the adjoint of wealth is propagated from maturity back to
the start, feeding the adjoint of each decision into the network backward
pass.  Steps where wealth hit the floor cut the adjoint (sub-gradient 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketParams, NoiseBatch, TimeGrid, policy_inputs, rollout_wealth, simulate_market
from .policy_net import PolicyParams, backward, forward
from .utility import UtilitySpec


@dataclass
class ObjectiveValue:
    J: float
    gradient: np.ndarray
    floor_events: int


def _rollout(theta: PolicyParams, params: MarketParams, grid: TimeGrid, u: UtilitySpec,
             noise: NoiseBatch, cache: list | None):
    market = simulate_market(params, grid, noise)
    t, y = policy_inputs(market, grid)
    pi = forward(theta, t, y, horizon=grid.T, cache=cache)
    W, floored = rollout_wealth(pi, market, params.w0)
    J = float(np.mean(u(W[:, -1])))
    return J, market, pi, W, floored


def batch_utility(theta: PolicyParams, params: MarketParams, grid: TimeGrid, u: UtilitySpec,
                  noise: NoiseBatch) -> float:
    """Mean terminal utility over the paths of ``noise``."""
    return _rollout(theta, params, grid, u, noise, None)[0]


def batch_utility_gradient(theta: PolicyParams, params: MarketParams, grid: TimeGrid,
                           u: UtilitySpec, noise: NoiseBatch) -> ObjectiveValue:
    cache: list = []
    J, market, pi, W, floored = _rollout(theta, params, grid, u, noise, cache)
    B, n = pi.shape
    rp = market.riskless_ret
    excess = market.risky_ret - rp
    adj_w = u.derivative(W[:, -1]) / B
    adj_pi = np.empty((B, n))
    for k in range(n - 1, -1, -1):
        growth = 1.0 + rp + pi[:, k] * excess[:, k]
        hit = floored[:, k]
        adj_pi[:, k] = adj_w * W[:, k] * excess[:, k]
        adj_w = adj_w * growth
        if hit.any():
            adj_pi[hit, k] = 0.0
            adj_w[hit] = 0.0
    grad = backward(theta, cache, adj_pi.ravel())
    return ObjectiveValue(J, grad, int(floored.sum()))


def central_differences(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def finite_diff_gradient(theta: PolicyParams, params: MarketParams, grid: TimeGrid, u: UtilitySpec,
                         noise: NoiseBatch, h: float = 1e-5) -> np.ndarray:
    """Verification oracle: central differences of :func:`batch_utility` at fixed noise."""
    arch = theta.arch

    def f(flat):
        return batch_utility(PolicyParams.from_flat(arch, flat, theta.y_scale), params, grid, u, noise)

    return central_differences(f, theta.flatten(), h)
