"""ARIMA fitted by conditional sum of squares with an AIC grid search.

Estimation differences a series d times, removes its mean, and minimizes
the sum of squared one-step residuals computed with zero initial
conditions (the conditional convention), which keeps the objective a
fast linear filter. Order selection scans the full (p, d, q) grid and
keeps the lowest AIC; non-stationary or non-invertible fits are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from ..errors import DataError, NumericalError

MAX_P, MAX_D, MAX_Q = 5, 2, 5
_BAD = 1e100
_ROOT_TOL = 1e-7


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if not (0 <= self.p <= MAX_P and 0 <= self.d <= MAX_D and 0 <= self.q <= MAX_Q):
            raise ValueError(f"order {self} outside the admissible grid "
                             f"(p<={MAX_P}, d<={MAX_D}, q<={MAX_Q})")

    @property
    def k_params(self) -> int:
        return self.p + self.q + 1  # + the mean


@dataclass(frozen=True)
class ArimaFit:
    order: ArimaOrder
    phi: np.ndarray
    theta: np.ndarray
    mean: float
    sse: float
    aic: float
    n_obs: int


def css_residuals(w, phi, theta) -> np.ndarray:
    """One-step residuals of a demeaned ARMA series, zero initial state."""
    b = np.concatenate([[1.0], -np.asarray(phi, dtype=np.float64)])
    a = np.concatenate([[1.0], np.asarray(theta, dtype=np.float64)])
    return lfilter(b, a, w)


def _roots_outside_unit_circle(coeffs_ascending) -> bool:
    """Check |roots| > 1 for 1 + c1 z + c2 z^2 + ... given [c1, c2, ...]."""
    c = np.trim_zeros(np.asarray(coeffs_ascending, dtype=np.float64), "b")
    if c.size == 0:
        return True
    poly = np.concatenate([c[::-1], [1.0]])
    roots = np.roots(poly)
    return bool((np.abs(roots) > 1.0 + _ROOT_TOL).all())


def _fit_one(w, p, q):
    """CSS-fit (phi, theta) on a demeaned series; returns (phi, theta, sse)."""
    if p == 0 and q == 0:
        return np.empty(0), np.empty(0), float((w * w).sum())

    def objective(x):
        with np.errstate(over="ignore", invalid="ignore"):
            e = css_residuals(w, x[:p], x[p:])
            if not np.isfinite(e).all():
                return _BAD
            return float((e * e).sum())

    x0 = np.zeros(p + q)
    res = minimize(objective, x0, method="L-BFGS-B",
                   bounds=[(-3.0, 3.0)] * (p + q))
    x = res.x
    sse = objective(x)
    if sse >= _BAD:
        return None
    return x[:p].copy(), x[p:].copy(), sse


def arima_fit(series, max_p: int = MAX_P, max_d: int = MAX_D, max_q: int = MAX_Q,
              grid=None) -> ArimaFit:
    """Grid-search ARIMA orders, minimizing AIC.

    Ties (and near-ties from the float comparison) resolve to the
    smallest (p+q, p, d, q), so the result does not depend on grid
    enumeration order. Series must be longer than
    2*(max_p + max_d + max_q).
    """
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("arima_fit expects a 1-d series")
    if y.size <= 2 * (max_p + max_d + max_q):
        raise DataError(
            f"series of length {y.size} too short for grid "
            f"(needs > {2 * (max_p + max_d + max_q)})"
        )
    if grid is None:
        grid = [ArimaOrder(p, d, q)
                for p in range(max_p + 1)
                for d in range(max_d + 1)
                for q in range(max_q + 1)]
    canonical = sorted(grid, key=lambda o: (o.p + o.q, o.p, o.d, o.q))

    best = None
    for order in canonical:
        w = np.diff(y, n=order.d) if order.d else y.copy()
        mean = float(w.mean())
        w = w - mean
        fitted = _fit_one(w, order.p, order.q)
        if fitted is None:
            continue
        phi, theta, sse = fitted
        if not _roots_outside_unit_circle(-phi):
            continue  # non-stationary AR part
        if not _roots_outside_unit_circle(theta):
            continue  # non-invertible MA part
        n = w.size
        aic = n * np.log(max(sse, 1e-300) / n) + 2.0 * order.k_params
        if best is None or aic < best.aic - 1e-9:
            best = ArimaFit(order=order, phi=phi, theta=theta, mean=mean,
                            sse=sse, aic=float(aic), n_obs=n)
    if best is None:
        raise NumericalError("every grid point was non-invertible or failed to fit")
    return best


def arima_rolling_forecast(fit: ArimaFit, series, origins, horizons) -> np.ndarray:
    """h-step forecasts from each origin, conditioning on the history
    before it; returns (n_origins, n_horizons).

    Residuals come from one filter pass over the whole series with the
    fitted parameters, so refitting per origin is unnecessary.
    """
    y = np.asarray(series, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    horizons = np.asarray(list(horizons), dtype=np.int64)
    p, d, q = fit.order.p, fit.order.d, fit.order.q
    H = int(horizons.max())
    if origins.size == 0:
        return np.zeros((0, horizons.size))
    if (origins < p + d + q).any() or (origins >= y.size).any():
        raise ValueError("forecast origins must leave room for the lag window")

    w = (np.diff(y, n=d) if d else y.copy()) - fit.mean
    e = css_residuals(w, fit.phi, fit.theta)
    m = origins - d  # last available index in the differenced series

    lag_w = np.zeros((origins.size, p + H))
    lag_e = np.zeros((origins.size, q + H))
    for i in range(p):
        lag_w[:, p - 1 - i] = w[m - i]
    for k in range(q):
        lag_e[:, q - 1 - k] = e[m - k]
    for j in range(H):
        acc = np.zeros(origins.size)
        for i in range(p):
            acc += fit.phi[i] * lag_w[:, p + j - 1 - i]
        for k in range(q):
            acc += fit.theta[k] * lag_e[:, q + j - 1 - k]
        lag_w[:, p + j] = acc
        # lag_e future columns stay zero: unknown shocks
    wfc = lag_w[:, p:] + fit.mean

    if d == 0:
        levels = wfc
    elif d == 1:
        levels = y[origins][:, None] + np.cumsum(wfc, axis=1)
    else:
        dlast = y[origins] - y[origins - 1]
        dpath = dlast[:, None] + np.cumsum(wfc, axis=1)
        levels = y[origins][:, None] + np.cumsum(dpath, axis=1)
    return levels[:, horizons - 1]


def arima_forecast(fit: ArimaFit, series, horizons) -> np.ndarray:
    """Forecast from the end of the series; returns (n_horizons,)."""
    y = np.asarray(series, dtype=np.float64)
    return arima_rolling_forecast(fit, y, np.array([y.size - 1]), horizons)[0]
