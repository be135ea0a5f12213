"""Parameter estimation from daily closes.

GBM uses the closed-form maximum-likelihood estimates from log returns.
Heston uses Euler-discretized estimating equations: the variance drift is a
weighted least-squares regression with inverse conditional-variance
weights, and the price drift and correlation come from the matching
standardized residuals.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .market import STREAM_SYNTH, MarketParams, check_feller, make_noise, make_time_grid, simulate_market

DT_OBS = 1.0 / 252.0
MIN_OBS = 30


class DataError(ValueError):
    pass


@dataclass
class Series:
    dates: np.ndarray      # datetime64[D]
    values: np.ndarray

    def __len__(self):
        return self.values.size


def _load_series(path, column: str, positive: bool) -> Series:
    path = Path(path)
    dates, values = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != ["date", column]:
            raise DataError(f"{path}: expected header 'date,{column}', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                d = dt.date.fromisoformat(row[0].strip())
                v = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row {row!r} ({exc})") from None
            if not math.isfinite(v) or (v <= 0 if positive else v < 0):
                raise DataError(f"{path}:{lineno}: invalid {column} value {v}")
            dates.append(d)
            values.append(v)
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    d_arr = np.array(dates, dtype="datetime64[D]")[order]
    if np.any(np.diff(d_arr) == np.timedelta64(0, "D")):
        raise DataError(f"{path}: duplicate dates")
    return Series(d_arr, np.array(values)[order])


def load_price_csv(path) -> Series:
    """Read ``date,adj_close`` rows into a date-sorted series."""
    return _load_series(path, "adj_close", positive=True)


def load_vix_csv(path) -> Series:
    """Read ``date,vix_close`` rows; values are converted to squared volatility."""
    s = _load_series(path, "vix_close", positive=False)
    return Series(s.dates, vix_to_variance(s.values))


def vix_to_variance(vix):
    """VIX quote in index points to annualized squared volatility."""
    v = np.asarray(vix, dtype=float)
    if np.any(v < 0):
        raise ValueError("VIX quotes must be non-negative")
    out = (v / 100.0) ** 2
    return out if out.ndim else float(out)


def align(prices: Series, variances: Series) -> tuple[Series, Series]:
    """Restrict both series to their common dates (no interpolation)."""
    common, ip, iv = np.intersect1d(prices.dates, variances.dates, return_indices=True)
    return Series(common, prices.values[ip]), Series(common, variances.values[iv])


def _values(series) -> np.ndarray:
    return np.asarray(series.values if isinstance(series, Series) else series, dtype=float)


def calibrate_gbm(prices, dt_obs: float = DT_OBS) -> tuple[float, float]:
    """Annualized ``(mu, sigma)`` from log returns.

    ``sigma^2`` is the (maximum-likelihood) variance of log returns per unit
    time; ``mu`` adds back the ``sigma^2 / 2`` Ito term.
    """
    p = _values(prices)
    if p.size < MIN_OBS:
        raise DataError(f"need at least {MIN_OBS} observations, got {p.size}")
    x = np.diff(np.log(p))
    s2 = float(np.var(x)) / dt_obs
    mu = float(np.mean(x)) / dt_obs + 0.5 * s2
    return mu, math.sqrt(s2)


@dataclass
class VarianceDriftFit:
    kappa: float
    theta: float
    sigma_y: float
    residuals: np.ndarray     # standardized: dY / sqrt(Y dt) minus fitted drift
    mask: np.ndarray          # observations used


def fit_variance_drift(Y, dt_obs: float = DT_OBS) -> VarianceDriftFit:
    """WLS fit of ``dY = kappa theta dt - kappa Y dt + noise`` with weights ``1/(Y dt)``."""
    Y = np.asarray(Y, dtype=float)
    y, dy = Y[:-1], np.diff(Y)
    mask = y > 0
    if mask.sum() < MIN_OBS:
        raise DataError("too few positive variance observations")
    if np.ptp(y[mask]) == 0:
        raise DataError("constant variance series: mean reversion is not identifiable")
    ys, dys = y[mask], dy[mask]
    root = np.sqrt(ys * dt_obs)
    # divide each equation by its conditional std: OLS on the transformed system is WLS
    X = np.column_stack([dt_obs / root, -ys * dt_obs / root])
    z = dys / root
    coef, *_ = np.linalg.lstsq(X, z, rcond=None)
    a, kappa = coef
    resid = z - X @ coef
    sigma_y = float(np.sqrt(resid @ resid / (resid.size - 2)))
    return VarianceDriftFit(float(kappa), float(a / kappa), sigma_y, resid, mask)


def calibrate_heston(prices, variances, r: float = 0.05, dt_obs: float = DT_OBS) -> MarketParams:
    """Heston parameters from aligned price and squared-volatility series."""
    S, Y = _values(prices), _values(variances)
    if S.size != Y.size:
        raise DataError("price and variance series must be aligned")
    if S.size < MIN_OBS:
        raise DataError(f"need at least {MIN_OBS} observations, got {S.size}")
    fit = fit_variance_drift(Y, dt_obs)
    ret = np.diff(S) / S[:-1]
    mu = float(np.mean(ret)) / dt_obs
    y = Y[:-1][fit.mask]
    eps_s = (ret[fit.mask] - mu * dt_obs) / np.sqrt(y * dt_obs)
    eps_y = fit.residuals / fit.sigma_y
    rho = float(np.corrcoef(eps_s, eps_y)[0, 1])
    return MarketParams.heston(r=r, mu=mu, kappa=fit.kappa, theta=fit.theta, sigma_y=fit.sigma_y,
                               rho=float(np.clip(rho, -1.0, 1.0)), s0=float(S[-1]), y0=float(Y[-1]))


def synthetic_series(params: MarketParams, n_obs: int, seed: int, dt_obs: float = DT_OBS):
    """Simulate daily closes (and squared volatility) from the model itself."""
    grid = make_time_grid(n_obs * dt_obs, n_obs)
    noise = make_noise(seed, (STREAM_SYNTH,), 1, grid, params.correlation)
    m = simulate_market(params, grid, noise)
    return m.S[0], m.Y[0]


def report(params: MarketParams) -> dict:
    """Machine-readable parameter record (also consumed by the CLI config)."""
    rec = {"model": params.to_dict()}
    if params.is_heston:
        rec["feller"] = {"satisfied": check_feller(params),
                         "two_kappa_theta": 2 * params.kappa * params.theta,
                         "sigma_y_squared": params.sigma_y**2}
    return rec


def write_report(params: MarketParams, stem, extra: dict | None = None) -> None:
    """Write ``<stem>.json`` and a key-value ``<stem>.txt``."""
    rec = report(params)
    if extra:
        rec.update(extra)
    stem = Path(stem)
    stem.with_suffix(".json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    lines = [f"{k} = {v!r}" for k, v in rec["model"].items()]
    if "feller" in rec:
        lines.append(f"feller_satisfied = {rec['feller']['satisfied']}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    stem.with_suffix(".txt").write_text("\n".join(lines) + "\n")
