"""Weighted L1 penalised regression splines with a partial monotone constraint.

Each year's log-mortality curve is fitted separately over age:

    min_c  sum_i w_i |y_i - theta(x_i)| + tau * sum_i |s_{i+1} - s_i|
    s.t.   theta(x_{i+1}) >= theta(x_i)   for x_i >= monotone_from

where ``theta = B @ c`` is a B-spline and ``s_i`` is the slope of ``theta``
between consecutive grid points.  The problem is solved exactly as a linear
program.  Weights are the inverse Poisson variance of the log rate, ``m * N``,
rescaled to mean one so that ``tau`` does not depend on population size.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .data_model import AgeGrid, MortalityPanel, SeriesKey
from .lp import LPError, linprog


class SmoothingError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothingConfig:
    tau: float = 1.0
    monotone_from: float = 65.0
    basis_knots: int | None = None  # None: one knot per grid point
    basis_order: int = 3  # polynomial degree; 3 is cubic

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be non-negative")
        if self.basis_order < 1:
            raise ValueError("basis_order must be at least 1")
        if self.basis_knots is not None and self.basis_knots < 2:
            raise ValueError("basis_knots must be at least 2")


def poisson_variance(m, N):
    """Approximate variance of the log of a central rate ``m`` with exposure ``N``.

    Returns ``inf`` where ``m <= 0`` or ``N <= 0`` so the matching weight is 0.
    """
    m = np.asarray(m, dtype=float)
    N = np.asarray(N, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = 1.0 / (m * N)
    v = np.where((m > 0) & (N > 0) & np.isfinite(m) & np.isfinite(N), v, np.inf)
    return v[()] if v.ndim == 0 else v


def poisson_weight(m, N):
    v = poisson_variance(m, N)
    with np.errstate(divide="ignore"):
        w = 1.0 / v
    return w


def bspline_basis(x: np.ndarray, n_knots: int | None = None, degree: int = 3) -> np.ndarray:
    """Design matrix ``(len(x), n_basis)`` of clamped B-splines on ``[x[0], x[-1]]``."""
    x = np.asarray(x, dtype=float)
    if n_knots is None or n_knots == len(x):
        knots = x
    else:
        knots = np.linspace(x[0], x[-1], n_knots)
    t = np.concatenate([np.repeat(knots[0], degree), knots, np.repeat(knots[-1], degree)])
    return BSpline.design_matrix(x, t, degree).toarray()


def slope_difference_operator(x: np.ndarray) -> np.ndarray:
    """Matrix mapping grid values to consecutive differences of finite-difference slopes."""
    x = np.asarray(x, dtype=float)
    M = len(x)
    h = np.diff(x)
    slope = np.zeros((M - 1, M))
    slope[np.arange(M - 1), np.arange(M - 1)] = -1.0 / h
    slope[np.arange(M - 1), np.arange(1, M)] = 1.0 / h
    return np.diff(slope, axis=0)


def roughness(theta: np.ndarray, x: np.ndarray) -> float:
    return float(np.abs(slope_difference_operator(x) @ theta).sum())


def objective(y, w, theta, x, tau: float) -> float:
    """Weighted L1 fit plus ``tau`` times the L1 slope-change penalty (weights as given)."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    ok = w > 0
    fit = float(np.sum(w[ok] * np.abs(y[ok] - theta[ok])))
    return fit + tau * roughness(theta, x)


def _monotone_pairs(x: np.ndarray, monotone_from: float) -> np.ndarray:
    return np.flatnonzero(x[:-1] >= monotone_from)


@dataclass
class SmoothFit:
    values: np.ndarray
    coef: np.ndarray
    objective: float
    weights: np.ndarray  # standardised weights used in the fit


def fit_series(y, w, cfg: SmoothingConfig = SmoothingConfig(), x=None) -> SmoothFit:
    """Solve the smoothing LP for one curve; see :func:`smooth_series`."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    x = AgeGrid.default().x if x is None else np.asarray(x, dtype=float)
    if not (len(y) == len(w) == len(x)):
        raise SmoothingError("y, w and the age grid differ in length")
    usable = np.isfinite(y) & np.isfinite(w) & (w > 0)
    if usable.sum() < cfg.basis_order + 1:
        raise SmoothingError(f"only {int(usable.sum())} usable points for a degree-{cfg.basis_order} "
                             "spline; use fewer knots or a lower order")
    ws = w[usable] / w[usable].mean()
    yu = y[usable]
    # Constant offset keeps the LP well scaled; the problem is shift invariant.
    shift = float(np.median(yu))
    yu = yu - shift

    B_full = bspline_basis(x, cfg.basis_knots, cfg.basis_order)
    # Every constraint sees the coefficients only through B @ c, so optimise
    # over the column space of B.  Null-space directions have zero cost and
    # would otherwise look like unbounded rays to the simplex.
    U, sv, _ = np.linalg.svd(B_full, full_matrices=False)
    r = int(np.sum(sv > 1e-10 * sv[0]))
    B = U[:, :r]
    nb = r
    Bu = B[usable]
    nu = len(yu)
    D2 = slope_difference_operator(x) @ B
    nr = D2.shape[0] if cfg.tau > 0 else 0
    mono = _monotone_pairs(x, cfg.monotone_from)

    # variables: c+ (nb), c- (nb), r+ (nu), r- (nu), s+ (nr), s- (nr)
    n = 2 * nb + 2 * nu + 2 * nr
    cost = np.zeros(n)
    cost[2 * nb:2 * nb + nu] = ws
    cost[2 * nb + nu:2 * nb + 2 * nu] = ws
    cost[2 * nb + 2 * nu:] = cfg.tau

    A_eq = np.zeros((nu + nr, n))
    A_eq[:nu, :nb] = Bu
    A_eq[:nu, nb:2 * nb] = -Bu
    A_eq[:nu, 2 * nb:2 * nb + nu] = np.eye(nu)
    A_eq[:nu, 2 * nb + nu:2 * nb + 2 * nu] = -np.eye(nu)
    b_eq = np.concatenate([yu, np.zeros(nr)])
    if nr:
        A_eq[nu:, :nb] = D2[:nr]
        A_eq[nu:, nb:2 * nb] = -D2[:nr]
        A_eq[nu:, 2 * nb + 2 * nu:2 * nb + 2 * nu + nr] = np.eye(nr)
        A_eq[nu:, 2 * nb + 2 * nu + nr:] = -np.eye(nr)

    A_ub = None
    b_ub = None
    if len(mono):
        Dm = B[mono] - B[mono + 1]  # -(theta_{i+1} - theta_i) <= 0
        A_ub = np.zeros((len(mono), n))
        A_ub[:, :nb] = Dm
        A_ub[:, nb:2 * nb] = -Dm
        b_ub = np.zeros(len(mono))

    try:
        res = linprog(cost, A_ub, b_ub, A_eq, b_eq)
    except LPError as exc:  # the constant curve is always feasible
        raise RuntimeError(f"smoothing LP failed: {exc}") from exc
    z = res.x[:nb] - res.x[nb:2 * nb]
    values = B @ z + shift
    coef = np.linalg.lstsq(B_full, values, rcond=None)[0]  # minimum-norm spline coefficients
    obj = float(np.sum(ws * np.abs(y[usable] - values[usable]))) + cfg.tau * roughness(values, x)
    return SmoothFit(values=values, coef=coef, objective=obj, weights=np.where(usable, w / w[usable].mean(), 0.0))


def smooth_series(y, w, cfg: SmoothingConfig = SmoothingConfig(), x=None) -> np.ndarray:
    """Smoothed log-rate curve on the full age grid.

    Missing observations (NaN ``y`` or zero weight) are filled by evaluating
    the fitted spline.
    """
    return fit_series(y, w, cfg, x).values


@dataclass(frozen=True)
class SmoothCurveSet:
    years: np.ndarray
    ages: AgeGrid
    series: tuple[SeriesKey, ...]
    values: np.ndarray  # (n_years, n_ages, n_series), log scale
    weights: np.ndarray
    residual_scale: np.ndarray

    def block(self, keys: Sequence[SeriesKey], upto: int | None = None) -> np.ndarray:
        """Curves of ``keys`` as ``(n_keys, n_years, n_ages)``, optionally for years <= ``upto``."""
        idx = {k: i for i, k in enumerate(self.series)}
        cols = [idx[k] for k in keys]
        vals = self.values if upto is None else self.values[self.years <= upto]
        return np.transpose(vals[:, :, cols], (2, 0, 1))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", "age_center", "series", "log_rate"])
            for t, year in enumerate(self.years):
                for j, key in enumerate(self.series):
                    for a, xa in enumerate(self.ages.centers):
                        w.writerow([int(year), repr(float(xa)), str(key), repr(float(self.values[t, a, j]))])


def _smooth_one(args):
    logr, wts, cfg, x = args
    out = np.empty_like(logr)
    for t in range(logr.shape[0]):
        try:
            out[t] = smooth_series(logr[t], wts[t], cfg, x)
        except SmoothingError as exc:
            raise SmoothingError(f"year index {t}: {exc}") from None
    return out


def smooth_panel(panel: MortalityPanel, cfg: SmoothingConfig = SmoothingConfig(),
                 series_filter: Callable[[SeriesKey], bool] | Sequence[SeriesKey] | None = None,
                 jobs: int = 1) -> SmoothCurveSet:
    """Smooth every (series, year) curve of the panel with Poisson weights ``w = m * N``.

    Zero-death and masked cells get weight 0 and are filled from the spline.
    """
    if series_filter is None:
        keys = list(panel.series)
    elif callable(series_filter):
        keys = [k for k in panel.series if series_filter(k)]
    else:
        keys = list(series_filter)
    rates = panel.rates
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(rates)
    logr[~np.isfinite(logr)] = np.nan
    w = poisson_weight(rates, panel.exposures)
    w[~np.isfinite(logr)] = 0.0
    w = np.nan_to_num(w, nan=0.0, posinf=0.0)
    x = panel.ages.x

    cols = [panel.series_index(k) for k in keys]
    tasks = [(logr[:, :, j], w[:, :, j], cfg, x) for j in cols]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_smooth_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = []
        for key, task in zip(keys, tasks):
            try:
                results.append(_smooth_one(task))
            except SmoothingError as exc:
                raise SmoothingError(f"series {key}: {exc}") from None
    values = np.stack(results, axis=2)
    weights = w[:, :, cols]
    with np.errstate(divide="ignore"):
        scale = np.where(weights > 0, 1.0 / np.sqrt(np.where(weights > 0, weights, 1.0)), math.inf)
    return SmoothCurveSet(panel.years.copy(), panel.ages, tuple(keys), values, weights, scale)
