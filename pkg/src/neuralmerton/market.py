"""Market and wealth dynamics under an Euler-Maruyama scheme.

The riskless account, the risky asset and its squared volatility are
stepped on an equispaced grid.  GBM is handled as the constant-variance
special case of the Heston stepper, so both models share one code path.

Random increments are counter-addressable: the normals for a path are a
pure function of ``(seed, stream, path)``, which lets any single path be
regenerated on its own and lets different policies be compared on common
random numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

#: Wealth floor; keeps log/power utility finite for pathological policies.
W_MIN = 1e-6

# Stream identifiers for counter-addressable random numbers.
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_POOL = 3
STREAM_SYNTH = 4

PolicyFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MarketParams:
    """SDE coefficients for either a GBM or a Heston market.

    ``sigma`` is used for GBM only; ``kappa``, ``theta``, ``sigma_y`` and
    ``rho`` for Heston only.  ``y0`` defaults to ``sigma**2`` (GBM) or
    ``theta`` (Heston).  Zero ``sigma`` / ``sigma_y`` are allowed; they give
    the degenerate deterministic and constant-variance cases.
    """

    kind: str
    r: float
    mu: float
    sigma: float | None = None
    kappa: float | None = None
    theta: float | None = None
    sigma_y: float | None = None
    rho: float | None = None
    s0: float = 4770.0
    y0: float | None = None
    w0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gbm", "heston"):
            raise ValueError(f"unknown market kind {self.kind!r}")
        if not (math.isfinite(self.r) and math.isfinite(self.mu)):
            raise ValueError("r and mu must be finite")
        if self.s0 <= 0 or self.w0 <= 0:
            raise ValueError("initial price and wealth must be positive")
        if self.kind == "gbm":
            # sigma == 0 is accepted as a deterministic degenerate market
            if self.sigma is None or not self.sigma >= 0:
                raise ValueError("GBM requires sigma >= 0")
        else:
            for name in ("kappa", "theta"):
                value = getattr(self, name)
                if value is None or not value > 0:
                    raise ValueError(f"Heston requires {name} > 0")
            if self.sigma_y is None or not self.sigma_y >= 0:
                raise ValueError("Heston requires sigma_y >= 0")
            if self.rho is None or not -1.0 <= self.rho <= 1.0:
                raise ValueError("Heston requires -1 <= rho <= 1")
        if self.y0 is not None and not self.y0 >= 0:
            raise ValueError("y0 must be non-negative")

    @classmethod
    def gbm(cls, r: float, mu: float, sigma: float, **kw) -> "MarketParams":
        return cls("gbm", r, mu, sigma=sigma, **kw)

    @classmethod
    def heston(cls, r, mu, kappa, theta, sigma_y, rho, **kw) -> "MarketParams":
        return cls("heston", r, mu, kappa=kappa, theta=theta, sigma_y=sigma_y, rho=rho, **kw)

    @property
    def is_heston(self) -> bool:
        return self.kind == "heston"

    @property
    def initial_variance(self) -> float:
        if self.y0 is not None:
            return self.y0
        return self.sigma**2 if self.kind == "gbm" else self.theta

    @property
    def long_run_variance(self) -> float:
        return self.theta if self.is_heston else self.sigma**2

    @property
    def correlation(self) -> float:
        return self.rho if self.is_heston else 0.0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "MarketParams":
        return cls(**d)


# Calibrated S&P 500 parameters used throughout the examples and tests.
GBM_SPX = MarketParams.gbm(r=0.05, mu=0.085, sigma=0.176, s0=4770.0, w0=1.0)
HESTON_SPX = MarketParams.heston(
    r=0.05, mu=0.089, kappa=10.5, theta=0.0438, sigma_y=0.564, rho=-0.712,
    s0=4770.0, y0=0.0155, w0=1.0,
)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n: int

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt


def make_time_grid(T: float, n: int) -> TimeGrid:
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if int(n) != n or n < 1:
        raise ValueError(f"step count must be a positive integer, got {n}")
    return TimeGrid(float(T), int(n))


@dataclass(frozen=True)
class MarketState:
    P: float
    S: float
    Y: float


def check_feller(params: MarketParams) -> bool:
    """True iff ``2 kappa theta > sigma_y**2`` (strict)."""
    if not params.is_heston:
        raise ValueError("Feller condition applies to Heston parameters only")
    return 2.0 * params.kappa * params.theta > params.sigma_y**2


# ---------------------------------------------------------------------------
# random increments

def _check_rho(rho: float) -> None:
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")


def correlate(z1: np.ndarray, z2: np.ndarray, rho: float, dt: float):
    """Map independent standard normals to increments with correlation rho."""
    _check_rho(rho)
    scale = math.sqrt(dt)
    dbs = scale * z1
    dby = scale * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return dbs, dby


def draw_increments(rho: float, dt: float, count: int, rng: np.random.Generator):
    """Draw ``count`` correlated increment pairs ``(dBS, dBY)``."""
    _check_rho(rho)
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = rng.standard_normal((count, 2))
    return correlate(z[:, 0], z[:, 1], rho, dt)


def path_generator(seed: int, stream: Sequence[int], path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(*stream, path))
    return np.random.Generator(np.random.Philox(ss))


def path_normals(seed: int, stream: Sequence[int], path: int, n: int) -> np.ndarray:
    """Standard normals of shape (n, 2) for one path; row k drives step k."""
    return path_generator(seed, stream, path).standard_normal((n, 2))


@dataclass
class NoiseBatch:
    """Frozen increments for B paths on an n-step grid."""

    seed: int
    stream: tuple
    dBS: np.ndarray
    dBY: np.ndarray
    first_path: int = 0

    @property
    def B(self) -> int:
        return self.dBS.shape[0]

    @property
    def n(self) -> int:
        return self.dBS.shape[1]

    def subset(self, rows) -> "NoiseBatch":
        return NoiseBatch(self.seed, self.stream, self.dBS[rows], self.dBY[rows], -1)


def make_noise(seed: int, stream: Sequence[int], B: int, grid: TimeGrid, rho: float = 0.0,
               first_path: int = 0) -> NoiseBatch:
    stream = tuple(int(s) for s in stream)
    z = np.empty((B, grid.n, 2))
    for b in range(B):
        z[b] = path_normals(seed, stream, first_path + b, grid.n)
    dbs, dby = correlate(z[..., 0], z[..., 1], rho, grid.dt)
    return NoiseBatch(int(seed), stream, dbs, dby, first_path)


def regenerate_increment(seed: int, stream: Sequence[int], path: int, step: int,
                         grid: TimeGrid, rho: float = 0.0) -> tuple[float, float]:
    """Recompute the increment pair of a single (path, step) cell."""
    z = path_normals(seed, tuple(stream), path, grid.n)[step]
    dbs, dby = correlate(z[0], z[1], rho, grid.dt)
    return float(dbs), float(dby)


# ---------------------------------------------------------------------------
# scalar steppers

def step_market(state: MarketState, params: MarketParams, dbs: float, dby: float,
                dt: float) -> MarketState:
    y_pos = max(state.Y, 0.0)
    p = (1.0 + dt * params.r) * state.P
    s = state.S * (1.0 + dt * params.mu + math.sqrt(y_pos) * dbs)
    if params.is_heston:
        y = state.Y + dt * params.kappa * (params.theta - state.Y) + params.sigma_y * math.sqrt(y_pos) * dby
    else:
        y = params.sigma**2
    return MarketState(p, s, y)


def step_wealth(w: float, pi: float, riskless_ret: float, risky_ret: float,
                w_min: float = W_MIN) -> tuple[float, bool]:
    """Self-financing wealth update; returns ``(w', floored)``."""
    w_new = w * (1.0 + (1.0 - pi) * riskless_ret + pi * risky_ret)
    if w_new < w_min:
        return w_min, True
    return w_new, False


# ---------------------------------------------------------------------------
# vectorized rollout

@dataclass
class MarketPaths:
    """Simulated market on a batch of paths.

    ``risky_ret[b, k]`` is the gross increment ``(S_{k+1} - S_k) / S_k``;
    ``riskless_ret`` is the scalar ``r dt``.
    """

    times: np.ndarray
    P: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    risky_ret: np.ndarray
    riskless_ret: float


def simulate_market(params: MarketParams, grid: TimeGrid, noise: NoiseBatch) -> MarketPaths:
    if noise.n != grid.n:
        raise ValueError(f"noise has {noise.n} steps, grid has {grid.n}")
    B, n, dt = noise.B, grid.n, grid.dt
    Y = np.empty((B, n + 1))
    Y[:, 0] = params.initial_variance
    if params.is_heston:
        kdt, theta, sy = dt * params.kappa, params.theta, params.sigma_y
        for k in range(n):
            y = Y[:, k]
            Y[:, k + 1] = y + kdt * (theta - y) + sy * np.sqrt(np.maximum(y, 0.0)) * noise.dBY[:, k]
    else:
        Y[:, 1:] = params.sigma**2
    risky = dt * params.mu + np.sqrt(np.maximum(Y[:, :-1], 0.0)) * noise.dBS
    S = np.empty((B, n + 1))
    S[:, 0] = params.s0
    S[:, 1:] = params.s0 * np.cumprod(1.0 + risky, axis=1)
    riskless = dt * params.r
    P = np.empty(n + 1)
    P[0] = 1.0
    for k in range(n):
        P[k + 1] = (1.0 + riskless) * P[k]
    return MarketPaths(grid.times, P, S, Y, risky, riskless)


def policy_inputs(market: MarketPaths, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Policy arguments ``(t, y)`` at the decision points of every step, shape (B, n)."""
    B = market.Y.shape[0]
    t = np.broadcast_to(market.times[:-1], (B, grid.n))
    y = np.maximum(market.Y[:, :-1], 0.0)
    return t, y


def rollout_wealth(pi: np.ndarray, market: MarketPaths, w0: float, w_min: float = W_MIN):
    """Wealth paths for weights ``pi`` (B, n).

    Returns ``(W, floored)`` where ``W`` has shape (B, n+1) and
    ``floored[b, k]`` marks that ``W[b, k+1]`` was set to the floor.
    """
    B, n = pi.shape
    W = np.empty((B, n + 1))
    W[:, 0] = w0
    floored = np.zeros((B, n), dtype=bool)
    rp = market.riskless_ret
    for k in range(n):
        w = W[:, k] * (1.0 + (1.0 - pi[:, k]) * rp + pi[:, k] * market.risky_ret[:, k])
        low = w < w_min
        if low.any():
            w[low] = w_min
            floored[:, k] = low
        W[:, k + 1] = w
    return W, floored


@dataclass
class BatchResult:
    terminal_wealth: np.ndarray
    floor_events: int
    market: MarketPaths | None = None
    wealth: np.ndarray | None = None
    weights: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def simulate_batch(params: MarketParams, grid: TimeGrid, policy: PolicyFn, B: int, seed: int,
                   stream: Sequence[int] = (STREAM_EVAL,), keep_paths: bool = False,
                   first_path: int = 0, w_min: float = W_MIN) -> BatchResult:
    """Simulate ``B`` wealth paths under a feedback policy ``(t, y) -> pi``."""
    if B < 1:
        raise ValueError("need at least one path")
    noise = make_noise(seed, stream, B, grid, params.correlation, first_path=first_path)
    return run_policy(params, grid, policy, noise, keep_paths=keep_paths, w_min=w_min)


def run_policy(params: MarketParams, grid: TimeGrid, policy: PolicyFn, noise: NoiseBatch,
               keep_paths: bool = False, w_min: float = W_MIN) -> BatchResult:
    market = simulate_market(params, grid, noise)
    t, y = policy_inputs(market, grid)
    pi = np.asarray(policy(t, y), dtype=float)
    pi = np.broadcast_to(pi, t.shape)
    W, floored = rollout_wealth(pi, market, params.w0, w_min)
    res = BatchResult(W[:, -1].copy(), int(floored.sum()))
    if keep_paths:
        res.market, res.wealth, res.weights = market, W, np.array(pi)
    return res


def write_paths_csv(path, result: BatchResult) -> None:
    """Dump kept trajectories as ``path,step,t,S,Y,P,W,pi``."""
    if result.market is None:
        raise ValueError("simulation was run without keep_paths")
    m, W, pi = result.market, result.wealth, result.weights
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["path", "step", "t", "S", "Y", "P", "W", "pi"])
        B, n1 = W.shape
        for b in range(B):
            for k in range(n1):
                w_k = repr(float(pi[b, k])) if k < n1 - 1 else ""
                out.writerow([b, k, repr(float(m.times[k])), repr(float(m.S[b, k])),
                              repr(float(m.Y[b, k])), repr(float(m.P[k])),
                              repr(float(W[b, k])), w_k])
