"""Expanding-window backtests and point forecast error measures.

For every training end year ``T`` from ``first_train_end`` to
``last_year - 1`` the pipeline is refitted on years ``<= T`` and forecasts
``min(H, last_year - T)`` steps.  Errors are computed on the rate scale;
cells whose actual rate is missing or zero are excluded from the sums while
the denominator stays at ``A * (number of windows for horizon h)``, unless
``divide_by_observed`` is set.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import MortalityPanel
from .pipeline import MODELS, ForecastOptions, ForecastSet, run_window
from .reconciliation import METHODS
from .smoothing import SmoothCurveSet, SmoothingConfig, smooth_panel

logger = logging.getLogger(__name__)

LEVEL_NAMES = ("National", "Sex", "Region", "Sex x Region", "Area", "Sex x Area")


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvaluationPlan:
    first_train_end: int = 2011
    last_year: int = 2016
    max_horizon: int = 5
    models: tuple[str, ...] = MODELS
    methods: tuple[str, ...] = ("base",) + METHODS
    age_filter: tuple[float, float] | None = None
    divide_by_observed: bool = False
    skip_failed: bool = False

    def __post_init__(self):
        if self.first_train_end + 1 > self.last_year:
            raise ValueError("first_train_end must be before last_year")
        if not 1 <= self.max_horizon <= self.last_year - self.first_train_end:
            raise ValueError("max_horizon must lie in 1..last_year - first_train_end")
        unknown = set(self.methods) - {"base", *METHODS}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @property
    def train_ends(self) -> list[int]:
        return list(range(self.first_train_end, self.last_year))

    def steps(self, train_end: int) -> int:
        return min(self.max_horizon, self.last_year - train_end)

    def n_windows(self, h: int) -> int:
        """Number of windows that produce an ``h``-step forecast."""
        return sum(1 for T in self.train_ends if self.steps(T) >= h)

    def forecast_options(self, opts: ForecastOptions) -> ForecastOptions:
        methods = tuple(m for m in self.methods if m != "base")
        return ForecastOptions(opts.threshold, opts.quadrature, opts.p_max, opts.q_max, opts.d_max,
                               self.models, methods, opts.clamp_negative)


@dataclass
class Archive:
    plan: EvaluationPlan
    windows: dict[int, ForecastSet]
    failures: dict[int, str] = field(default_factory=dict)

    def pairs(self) -> list[tuple[int, int]]:
        """All (train_end, h) forecast pairs in canonical order."""
        return [(T, h) for T in sorted(self.windows) for h in range(1, self.windows[T].horizons + 1)]

    def count(self, h: int) -> int:
        return sum(1 for T, hh in self.pairs() if hh == h)


def _window_task(args):
    panel, curves, T, steps, opts = args
    try:
        return T, run_window(panel, curves, T, steps, opts), None
    except Exception as exc:  # reported per window
        return T, None, f"{type(exc).__name__}: {exc}"


def prepare_panel(panel: MortalityPanel, plan: EvaluationPlan) -> MortalityPanel:
    panel = panel.select_years(plan.last_year)
    if plan.age_filter is not None:
        lo, hi = plan.age_filter
        panel = panel.select_ages(panel.ages.subset(lo, hi))
    missing = [y for y in range(int(panel.years[0]), plan.last_year + 1) if y not in set(panel.years.tolist())]
    if missing or int(panel.years[-1]) != plan.last_year:
        raise EvaluationError(f"panel lacks years {missing or [plan.last_year]}")
    return panel


def expanding_window(panel: MortalityPanel, plan: EvaluationPlan, opts: ForecastOptions = ForecastOptions(),
                     smoothing: SmoothingConfig = SmoothingConfig(), jobs: int = 1,
                     curves: SmoothCurveSet | None = None) -> Archive:
    """Refit on every expanding training sample and archive the forecasts.

    Smoothing acts on each year's curve separately, so the panel is smoothed
    once and each window uses the curves up to its training end.
    """
    panel = prepare_panel(panel, plan)
    if curves is None:
        curves = smooth_panel(panel, smoothing, jobs=jobs)
    opts = plan.forecast_options(opts)
    tasks = [(panel, curves, T, plan.steps(T), opts) for T in plan.train_ends]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_window_task, tasks))
    else:
        results = [_window_task(t) for t in tasks]
    windows, failures = {}, {}
    for T, fs, err in results:
        if err is None:
            windows[T] = fs
        else:
            failures[T] = err
    if failures and not plan.skip_failed:
        T = min(failures)
        raise EvaluationError(f"window ending {T} failed: {failures[T]}")
    for T, err in failures.items():
        logger.warning("skipping window ending %d: %s", T, err)
    return Archive(plan, windows, failures)


# ---------------------------------------------------------------------------
# error measures


def _included(actuals: np.ndarray) -> np.ndarray:
    return np.isfinite(actuals) & (actuals > 0)


def _denominator(inc: np.ndarray, h, A, H, divide_by_observed: bool) -> float:
    if divide_by_observed:
        return float(inc.sum())
    if A is None or H is None or h is None:
        return float(inc.size)
    return float(A * (H + 1 - h))


def mafe(actuals, forecasts, h: int | None = None, A: int | None = None, H: int | None = None,
         divide_by_observed: bool = False) -> float:
    """Mean absolute forecast error over the cells of all windows contributing to horizon ``h``.

    ``actuals`` and ``forecasts`` hold one row per window and one column per
    age.  The denominator is ``A * (H + 1 - h)`` (or the number of cells when
    those are not given); missing or zero actuals add nothing to the sum.
    """
    a = np.atleast_2d(np.asarray(actuals, dtype=float))
    f = np.atleast_2d(np.asarray(forecasts, dtype=float))
    if a.size == 0:
        raise EvaluationError("no contributing windows")
    inc = _included(a)
    denom = _denominator(inc, h, A, H, divide_by_observed)
    if denom <= 0:
        raise EvaluationError("no observed cells")
    return float(np.sum(np.abs(np.where(inc, a - f, 0.0))) / denom)


def rmsfe(actuals, forecasts, h: int | None = None, A: int | None = None, H: int | None = None,
          divide_by_observed: bool = False) -> float:
    """Root mean squared forecast error with the same cells and denominator as :func:`mafe`."""
    a = np.atleast_2d(np.asarray(actuals, dtype=float))
    f = np.atleast_2d(np.asarray(forecasts, dtype=float))
    if a.size == 0:
        raise EvaluationError("no contributing windows")
    inc = _included(a)
    denom = _denominator(inc, h, A, H, divide_by_observed)
    if denom <= 0:
        raise EvaluationError("no observed cells")
    return float(math.sqrt(np.sum(np.where(inc, a - f, 0.0) ** 2) / denom))


# ---------------------------------------------------------------------------
# summary


@dataclass
class ErrorReport:
    """Per-series errors and level means.

    ``series_errors[(model, method, series, h)] = (mafe, rmsfe)``;
    ``level_errors[(model, method, level, h)]`` averages over the series of a
    level, and ``h = 0`` holds the mean over horizons.
    """

    horizons: int
    series_errors: dict[tuple[str, str, str, int], tuple[float, float]]
    level_errors: dict[tuple[str, str, str, int], tuple[float, float]]
    series_level: dict[str, str]

    def mean(self, model: str, method: str, level: str | None = None, measure: str = "mafe") -> float:
        """Mean over horizons, averaged over the series of ``level`` (all series if None)."""
        i = 0 if measure == "mafe" else 1
        if level is not None:
            return self.level_errors[(model, method, level, 0)][i]
        vals = [v[i] for (mo, me, s, h), v in self.series_errors.items() if mo == model and me == method and h == 0]
        return float(np.mean(vals))

    def methods(self) -> list[tuple[str, str]]:
        seen = []
        for mo, me, _, _ in self.level_errors:
            if (mo, me) not in seen:
                seen.append((mo, me))
        return seen

    def levels(self) -> list[str]:
        return [lv for lv in LEVEL_NAMES if lv in set(self.series_level.values())]

    def rows(self, scale: float = 1.0):
        for (model, method, level, h), (a, r) in self.level_errors.items():
            yield dict(model=model, method=method, level=level, horizon="mean" if h == 0 else h,
                       mafe=a * scale, rmsfe=r * scale)

    def write_csv(self, path: str | Path, scale: float = 1.0, digits: int = 17) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "method", "level", "horizon", "mafe", "rmsfe"])
            for row in self.rows(scale):
                w.writerow([row["model"], row["method"], row["level"], row["horizon"],
                            f"{row['mafe']:.{digits}g}", f"{row['rmsfe']:.{digits}g}"])

    def write_series_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "method", "series", "level", "horizon", "mafe", "rmsfe"])
            for (model, method, series, h), (a, r) in self.series_errors.items():
                w.writerow([model, method, series, self.series_level[series], "mean" if h == 0 else h,
                            f"{a:.17g}", f"{r:.17g}"])


def _actuals(panel: MortalityPanel, year: int) -> np.ndarray:
    """Observed rates ``(n_series, n_ages)`` for ``year``."""
    return panel.rates[panel.year_index(year)].T


def summarize(archive: Archive, panel: MortalityPanel) -> ErrorReport:
    """Per-series, per-horizon MAFE/RMSFE plus horizon means and level means.

    Accumulation follows the canonical (method, series, horizon, window)
    order so the result does not depend on how the windows were computed.
    """
    plan = archive.plan
    panel = prepare_panel(panel, plan)
    if not archive.windows:
        raise EvaluationError("archive is empty")
    first = archive.windows[min(archive.windows)]
    keys = first.series
    structure = panel.structure
    series_level = {str(k): structure.level_name(k) for k in keys}
    A = len(panel.ages)
    H = max(fs.horizons for fs in archive.windows.values())
    actual_cache = {}
    series_errors: dict = {}
    for model, method in first.methods():
        if method not in plan.methods:
            continue
        for i, key in enumerate(keys):
            per_h = []
            for h in range(1, H + 1):
                Ts = [T for T in sorted(archive.windows) if archive.windows[T].horizons >= h]
                if not Ts:
                    raise EvaluationError(f"no forecasts at horizon {h}")
                act, fc = [], []
                for T in Ts:
                    year = T + h
                    if year not in actual_cache:
                        actual_cache[year] = _actuals(panel, year)
                    act.append(actual_cache[year][i])
                    fc.append(archive.windows[T].get(model, method)[h - 1, i])
                n_h = len(Ts)
                a = mafe(act, fc, h, A, n_h + h - 1, plan.divide_by_observed)
                r = rmsfe(act, fc, h, A, n_h + h - 1, plan.divide_by_observed)
                series_errors[(model, method, str(key), h)] = (a, r)
                per_h.append((a, r))
            series_errors[(model, method, str(key), 0)] = (
                float(sum(v[0] for v in per_h) / H), float(sum(v[1] for v in per_h) / H))
    level_errors: dict = {}
    levels = [lv for lv in LEVEL_NAMES if lv in set(series_level.values())]
    for model, method in first.methods():
        if method not in plan.methods:
            continue
        for level in levels:
            members = [str(k) for k in keys if series_level[str(k)] == level]
            for h in list(range(1, H + 1)) + [0]:
                vals = [series_errors[(model, method, s, h)] for s in members]
                level_errors[(model, method, level, h)] = (float(sum(v[0] for v in vals) / len(vals)),
                                                           float(sum(v[1] for v in vals) / len(vals)))
    return ErrorReport(H, series_errors, level_errors, series_level)


def format_report(report: ErrorReport, measure: str = "mafe") -> str:
    """Human-readable table of horizon-mean errors (x100) by level and method."""
    i = 0 if measure == "mafe" else 1
    methods = report.methods()
    levels = report.levels()
    head = f"{'level':<14}" + "".join(f"{mo + ' ' + me:>16}" for mo, me in methods)
    lines = [f"Mean({measure.upper()}) x 100", head]
    for level in levels:
        cells = "".join(f"{100 * report.level_errors[(mo, me, level, 0)][i]:>16.4f}" for mo, me in methods)
        lines.append(f"{level:<14}{cells}")
    return "\n".join(lines) + "\n"
