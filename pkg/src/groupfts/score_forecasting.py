"""Automatic ARIMA modelling of principal component score series.

The differencing order comes from successive level-KPSS tests, the ARMA
orders from an exhaustive AICc search, and parameters from exact Gaussian
maximum likelihood (state-space filter) started from conditional sum of
squares estimates.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _arma
from .decomposition import FpcaModel, reconstruct

logger = logging.getLogger(__name__)

KPSS_CRITICAL_5PCT = 0.463
UNIT_ROOT_MARGIN = 0.01


class ArimaError(RuntimeError):
    def __init__(self, message: str, spec: "ArimaSpec | None" = None):
        super().__init__(message if spec is None else f"{spec}: {message}")
        self.spec = spec


@dataclass(frozen=True)
class ArimaSpec:
    p: int
    d: int
    q: int
    include_constant: bool = False

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("ARIMA orders must be non-negative")

    def __str__(self) -> str:
        return f"ARIMA({self.p},{self.d},{self.q}){' with constant' if self.include_constant else ''}"

    @property
    def n_params(self) -> int:
        """Estimated parameters including the innovation variance."""
        return self.p + self.q + int(self.include_constant) + 1


@dataclass(frozen=True)
class ArimaFit:
    spec: ArimaSpec
    ar_coefs: np.ndarray
    ma_coefs: np.ndarray
    mean: float  # mean of the differenced series (0 without constant)
    sigma2: float
    loglik: float
    aicc: float
    residuals: np.ndarray  # one-step innovations of the differenced series
    series: np.ndarray = field(repr=False)
    state: np.ndarray = field(repr=False)
    boundary: bool = False
    converged: bool = True

    @property
    def constant(self) -> float:
        """Intercept of the ARMA equation, ``mean * (1 - sum(ar))``."""
        return float(self.mean * (1.0 - self.ar_coefs.sum()))

    @property
    def fitted(self) -> np.ndarray:
        """One-step in-sample predictions of the original series (NaN for the first d points)."""
        d = self.spec.d
        out = np.full(len(self.series), np.nan)
        out[d:] = self.series[d:] - self.residuals
        return out


# ---------------------------------------------------------------------------
# differencing


def difference(x, d: int = 1) -> np.ndarray:
    return np.diff(np.asarray(x, dtype=float), n=d) if d else np.asarray(x, dtype=float)


def undifference(w, initial, d: int = 1) -> np.ndarray:
    """Invert ``difference``: ``initial`` holds the first ``d`` values of the original series."""
    x = np.asarray(w, dtype=float)
    initial = np.asarray(initial, dtype=float)
    for level in range(d - 1, -1, -1):
        start = np.diff(initial, n=level)[0]
        x = np.concatenate([[start], start + np.cumsum(x)])
    return x


# ---------------------------------------------------------------------------
# KPSS


def default_lag(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** 0.25))


def kpss_statistic(series, lag_truncation: int | None = None) -> float:
    """Level-stationarity KPSS statistic with a Bartlett long-run variance."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 8:
        raise ValueError("KPSS needs at least 8 observations")
    L = default_lag(n) if lag_truncation is None else int(lag_truncation)
    e = x - x.mean()
    s = np.cumsum(e)
    lrv = e @ e / n
    for lag in range(1, min(L, n - 1) + 1):
        lrv += 2.0 * (1.0 - lag / (L + 1.0)) * (e[lag:] @ e[:-lag]) / n
    if not lrv > 1e-300 * max(1.0, float(np.max(np.abs(x)))):
        return 0.0
    return float(s @ s / (n * n * lrv))


def select_d(series, d_max: int = 2, critical: float = KPSS_CRITICAL_5PCT) -> int:
    """Smallest d whose differenced series passes the KPSS level test."""
    x = np.asarray(series, dtype=float)
    for d in range(d_max + 1):
        w = difference(x, d)
        if len(w) < 8 or kpss_statistic(w) <= critical:
            return d
    return d_max


# ---------------------------------------------------------------------------
# estimation


def _coefs_to_pacf(phi: np.ndarray) -> np.ndarray:
    """Inverse Durbin-Levinson map; returns None-like NaNs if not stationary."""
    a = np.array(phi, dtype=float)
    k = len(a)
    r = np.zeros(k)
    for j in range(k - 1, -1, -1):
        r[j] = a[j]
        if abs(r[j]) >= 1.0:
            return np.full(k, np.nan)
        if j:
            a = (a[:j] + r[j] * a[:j][::-1]) / (1.0 - r[j] ** 2)
    return r


def _to_unconstrained(ar: np.ndarray, ma: np.ndarray) -> np.ndarray:
    parts = []
    for coefs in (np.asarray(ar, dtype=float), -np.asarray(ma, dtype=float)):
        r = _coefs_to_pacf(coefs)
        r = np.where(np.isfinite(r), r, 0.0)
        parts.append(np.arctanh(np.clip(r, -0.98, 0.98)))
    return np.concatenate(parts)


def aicc(loglik: float, k: int, n_eff: int) -> float:
    if n_eff - k - 1 <= 0:
        return math.inf
    return -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1) / (n_eff - k - 1)


def fit_arima(series, spec: ArimaSpec, max_eval: int | None = None) -> ArimaFit:
    """Exact maximum likelihood ARIMA fit.

    The constant (mean of the differenced series) and innovation variance
    are profiled out of the likelihood.  The ARMA parameters are searched by
    Nelder-Mead from the CSS estimate and from zero; the better optimum wins.
    """
    x = np.ascontiguousarray(series, dtype=float)
    p, d, q = spec.p, spec.d, spec.q
    if len(x) - d <= p + q + 2:
        raise ArimaError(f"series of length {len(x)} too short", spec)
    if not np.all(np.isfinite(x)):
        raise ArimaError("non-finite values in series", spec)
    w = np.ascontiguousarray(difference(x, d))
    k = p + q
    inc = bool(spec.include_constant)
    converged = True
    if k == 0:
        u = np.zeros(0)
    else:
        budget = max_eval or 200 * k + 100
        mean0 = float(w.mean()) if inc else 0.0
        u_css, _, _, _ = _arma.nelder_mead(np.zeros(k), p, q, w, inc, mean0, 1, 0.5, 1e-4, 1e-8, budget)
        best_u, best_f, ok = None, np.inf, False
        for start in (u_css, np.zeros(k)):
            u1, f1, _, c1 = _arma.nelder_mead(start, p, q, w, inc, 0.0, 0, 0.5, 1e-4, 1e-9, budget)
            if f1 < best_f:
                best_u, best_f, ok = u1, f1, c1
        u = best_u
        converged = ok
    ar, ma = _arma.split_params(u, p, q)
    loglik, mu, sigma2, innov, _, state = _arma.kalman(ar, ma, w, inc)
    if not np.isfinite(loglik):
        raise ArimaError("likelihood optimisation failed", spec)
    boundary = bool(k and np.any(np.abs(u) > 3.8))  # |partial autocorrelation| > 0.999
    return ArimaFit(spec=spec, ar_coefs=ar, ma_coefs=ma, mean=float(mu) if inc else 0.0,
                    sigma2=float(sigma2), loglik=float(loglik), aicc=aicc(loglik, spec.n_params, len(w)),
                    residuals=innov, series=x, state=state, boundary=boundary, converged=converged)


def fit_with_coefs(series, spec: ArimaSpec, ar=(), ma=(), mean: float = 0.0) -> ArimaFit:
    """Filter a series through a model with given coefficients (no estimation)."""
    x = np.ascontiguousarray(series, dtype=float)
    w = np.ascontiguousarray(difference(x, spec.d))
    ar = np.asarray(ar, dtype=float)
    ma = np.asarray(ma, dtype=float)
    loglik, _, sigma2, innov, _, state = _arma.kalman(ar, ma, np.ascontiguousarray(w - mean), False)
    return ArimaFit(spec=spec, ar_coefs=ar, ma_coefs=ma, mean=float(mean), sigma2=float(sigma2),
                    loglik=float(loglik), aicc=aicc(loglik, spec.n_params, len(w)), residuals=innov,
                    series=x, state=state)


def min_root_modulus(fit: ArimaFit) -> float:
    """Smallest modulus among the AR and MA polynomial roots (inf without any)."""
    out = math.inf
    for coefs, sign in ((fit.ar_coefs, -1.0), (fit.ma_coefs, 1.0)):
        c = np.trim_zeros(np.asarray(coefs, dtype=float), "b")
        if len(c):
            out = min(out, float(np.min(np.abs(np.roots(np.concatenate([[1.0], sign * c])[::-1])))))
    return out


def auto_arima(series, p_max: int = 5, q_max: int = 5, d_max: int = 2,
               root_margin: float = UNIT_ROOT_MARGIN) -> ArimaFit:
    """Minimum-AICc ARIMA over the full (p, q) grid for the KPSS-selected d.

    Candidates with an AR or MA root inside ``1 + root_margin`` are dropped:
    such fits sit on the stationarity or invertibility boundary, typically
    with nearly cancelling factors.  Ties go to the smaller ``p + q``, then
    the smaller ``p``.
    """
    x = np.asarray(series, dtype=float)
    d = select_d(x, d_max)
    best, best_key = None, None
    consts = (False, True) if d <= 1 else (False,)
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            for c in consts:
                spec = ArimaSpec(p, d, q, c)
                if len(x) - d <= p + q + 2 or aicc(0.0, spec.n_params, len(x) - d) == math.inf:
                    continue
                try:
                    fit = fit_arima(x, spec)
                except ArimaError as exc:
                    logger.debug("skipping %s", exc)
                    continue
                if min_root_modulus(fit) < 1.0 + root_margin:
                    logger.debug("skipping %s: root near the unit circle", spec)
                    continue
                key = (round(fit.aicc, 10), p + q, p, int(c))
                if best_key is None or key < best_key:
                    best, best_key = fit, key
    if best is None:
        spec = ArimaSpec(0, max(d, 1), 0, False)
        warnings.warn(f"no ARIMA candidate could be fitted; falling back to {spec}", stacklevel=2)
        best = fit_arima(x, spec)
    return best


def forecast_arima(fit: ArimaFit, h: int) -> np.ndarray:
    """Conditional-mean forecasts for horizons ``1..h`` on the original scale."""
    if h < 1:
        raise ValueError("h must be at least 1")
    T, _ = _arma._system(fit.ar_coefs, fit.ma_coefs)
    a = fit.state.copy()
    w = np.empty(h)
    for j in range(h):
        w[j] = fit.mean + a[0]
        a = T @ a
    d = fit.spec.d
    x = fit.series
    for level in range(d - 1, -1, -1):
        last = np.diff(x, n=level)[-1]
        w = last + np.cumsum(w)
    return w


# ---------------------------------------------------------------------------
# curves


@dataclass
class BlockForecast:
    curves: np.ndarray  # (h, omega, p) log scale
    fitted: np.ndarray  # (n, omega, p) one-step in-sample curves, NaN where undefined
    fits: list[ArimaFit]


def forecast_block(model: FpcaModel, h: int, p_max: int = 5, q_max: int = 5, d_max: int = 2) -> BlockForecast:
    """Forecast each retained score series and assemble the block's curves."""
    K = model.K
    if K < 1:
        raise ValueError("model has no retained components")
    n = model.scores.shape[0]
    fc = np.empty((h, K))
    fitted = np.empty((n, K))
    fits = []
    for k in range(K):
        try:
            fit = auto_arima(model.scores[:, k], p_max, q_max, d_max)
        except ArimaError as exc:
            raise ArimaError(f"component {k + 1}: {exc}") from exc
        fits.append(fit)
        fc[:, k] = forecast_arima(fit, h)
        fitted[:, k] = fit.fitted
    return BlockForecast(curves=reconstruct(model.truncate(K), fc) if h else np.empty((0,) + model.mean.shape),
                         fitted=reconstruct(model.truncate(K), fitted), fits=fits)
