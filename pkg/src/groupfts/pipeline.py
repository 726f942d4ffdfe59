"""End-to-end forecasting for one training window.

Smoothed log curves are decomposed block by block (every series alone for
FPCA, the structure's joint blocks for MFPCA), score series are forecast
with automatic ARIMA, curves are exponentiated to rates and the base
forecasts of all series are reconciled.  The summing matrix of the last
training year is used for every horizon unless projected exposures are
supplied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data_model import AgeGrid, GroupStructure, MortalityPanel, SeriesKey, build_summing_matrix
from .decomposition import decompose, quadrature_weights
from .reconciliation import METHODS, ErrorCovariance, estimate_W, reconcile_all
from .score_forecasting import ArimaError, forecast_block
from .smoothing import SmoothCurveSet

logger = logging.getLogger(__name__)

MODELS = ("FPCA", "MFPCA")


@dataclass(frozen=True)
class ForecastOptions:
    threshold: float = 0.95
    quadrature: str = "equal"
    p_max: int = 5
    q_max: int = 5
    d_max: int = 2
    models: tuple[str, ...] = MODELS
    methods: tuple[str, ...] = METHODS
    clamp_negative: bool = False

    def __post_init__(self):
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown reconciliation methods {sorted(unknown)}")


@dataclass
class ForecastSet:
    """Base and reconciled rate forecasts from one training window.

    Arrays are ``(h, n_series, n_ages)`` on the natural scale, for horizons
    ``1..h`` after ``train_end``; rows follow ``series``.
    """

    train_end: int
    series: tuple[SeriesKey, ...]
    ages: AgeGrid
    base: dict[str, np.ndarray]
    reconciled: dict[tuple[str, str], np.ndarray]
    intensity: dict[str, float] = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)
    errors: dict[str, np.ndarray] = field(default_factory=dict)  # in-sample one-step errors per model

    @property
    def horizons(self) -> int:
        return next(iter(self.base.values())).shape[0]

    def get(self, model: str, method: str) -> np.ndarray:
        return self.base[model] if method == "base" else self.reconciled[(model, method)]

    def methods(self) -> list[tuple[str, str]]:
        out = []
        for model in self.base:
            out.append((model, "base"))
            out.extend(k for k in self.reconciled if k[0] == model)
        return out


def model_blocks(structure: GroupStructure, model: str) -> tuple[tuple[SeriesKey, ...], ...]:
    if model == "FPCA" or not structure.joint_blocks:
        return structure.univariate_blocks()
    if model == "MFPCA":
        return structure.joint_blocks
    raise ValueError(f"unknown model {model!r}")


def block_label(keys) -> str:
    return "+".join(str(k) for k in keys)


def forecast_curves(curves: SmoothCurveSet, blocks, train_end: int, h: int, opts: ForecastOptions,
                    cache: dict | None = None):
    """Log-scale forecasts ``(h, A, m)`` and one-step in-sample fits ``(n, A, m)`` for every block.

    ``cache`` (keyed by block) lets FPCA and MFPCA share identical singleton blocks.
    """
    keys = list(curves.series)
    col = {k: i for i, k in enumerate(keys)}
    n = int(np.sum(curves.years <= train_end))
    A = len(curves.ages)
    fc = np.full((h, A, len(keys)), np.nan)
    fitted = np.full((n, A, len(keys)), np.nan)
    q = quadrature_weights(curves.ages.x, opts.quadrature)
    diagnostics = []
    for block in blocks:
        block = tuple(block)
        hit = None if cache is None else cache.get(block)
        if hit is None:
            data = curves.block(block, upto=train_end)
            model = decompose(data, q, opts.threshold)
            try:
                res = forecast_block(model, h, opts.p_max, opts.q_max, opts.d_max)
            except ArimaError as exc:
                raise ArimaError(f"block {block_label(block)}: {exc}") from exc
            diag = [dict(block=block_label(block), k=k + 1, p=f.spec.p, d=f.spec.d, q=f.spec.q,
                         constant=int(f.spec.include_constant), aicc=f.aicc, sigma2=f.sigma2)
                    for k, f in enumerate(res.fits)]
            hit = (res.curves, res.fitted, diag)
            if cache is not None:
                cache[block] = hit
        curves_h, fitted_b, diag = hit
        for l, key in enumerate(block):
            fc[:, :, col[key]] = curves_h[:, l, :]
            fitted[:, :, col[key]] = fitted_b[:, l, :]
        diagnostics.extend(diag)
    return fc, fitted, diagnostics


def in_sample_errors(panel: MortalityPanel, curves: SmoothCurveSet, fitted_log: np.ndarray,
                     train_end: int) -> np.ndarray:
    """One-step in-sample rate errors pooled over ages, ``(n_vectors, n_series)``.

    Observed rates are the targets; masked cells fall back to the smoothed
    curve.  Years where any fit is undefined (the first ``d`` points) are dropped.
    """
    years = curves.years[curves.years <= train_end]
    cols = [panel.series_index(k) for k in curves.series]
    t_idx = [panel.year_index(int(y)) for y in years]
    actual = panel.rates[t_idx][:, :, cols]
    smooth = np.exp(curves.values[: len(years)])
    actual = np.where(np.isfinite(actual) & (actual > 0), actual, smooth)
    err = actual - np.exp(fitted_log)
    ok = np.all(np.isfinite(err), axis=(1, 2))
    err = err[ok]
    return err.reshape(-1, err.shape[2])


def run_window(panel: MortalityPanel, curves: SmoothCurveSet, train_end: int, h: int,
               opts: ForecastOptions = ForecastOptions(), projected: MortalityPanel | None = None) -> ForecastSet:
    """Fit every requested model on years ``<= train_end`` and forecast ``h`` steps."""
    structure = panel.structure
    if list(curves.series) != list(panel.series):
        raise ValueError("smoothed curves must cover every panel series in panel order")
    S_list = []
    for step in range(1, h + 1):
        year = train_end + step
        if projected is not None and year in set(int(y) for y in projected.years):
            S_list.append(build_summing_matrix(projected, year, structure))
        else:
            S_list.append(build_summing_matrix(panel, train_end, structure))
    rows = [panel.series_index(k) for k in S_list[0].rows]
    if rows != list(range(len(rows))):
        raise ValueError("panel series are not in canonical order")

    cache: dict = {}
    base, reconciled, intensity, diagnostics, errors = {}, {}, {}, [], {}
    for model in opts.models:
        fc_log, fitted_log, diag = forecast_curves(curves, model_blocks(structure, model), train_end, h, opts, cache)
        for d in diag:
            diagnostics.append(dict(model=model, train_end=train_end, **d))
        rates = np.exp(np.transpose(fc_log, (0, 2, 1)))  # (h, m, A)
        base[model] = rates
        errors[model] = in_sample_errors(panel, curves, fitted_log, train_end)
        W: ErrorCovariance | None = None
        if {"MinT", "Comb_av"} & set(opts.methods):
            W = estimate_W(errors[model])
            intensity[model] = W.intensity
        if not opts.methods:
            continue
        per_h = [reconcile_all(rates[j], S_list[j], W, opts.methods, opts.clamp_negative) for j in range(h)]
        for method in opts.methods:
            reconciled[(model, method)] = np.stack([r[method] for r in per_h])
    return ForecastSet(train_end=int(train_end), series=tuple(panel.series), ages=panel.ages, base=base,
                       reconciled=reconciled, intensity=intensity, diagnostics=diagnostics,
                       errors=errors)
