"""Seeded generator of coherent grouped mortality panels with known structure.

Bottom-series log rates are

    log m_t^(l)(x) = mu^(l)(x) + sum_k beta_{t,k}^(l) phi_k(x) + noise,

with a Gompertz-type mean curve (infant decay, accident hump, exponential
old-age rise) shifted per sex and geography, shared orthonormal
eigenfunctions ``phi_k``, and score series driven by declared ARIMA
dynamics whose innovations are correlated across series.  Deaths are rates
times exposures rounded to integers (or Poisson draws); aggregates are exact
sums of bottom deaths and exposures, so every panel is coherent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import AgeGrid, GroupStructure, MortalityPanel, SeriesKey, Sex, hierarchy, synthesize_aggregates
from .rng import CounterRNG

BURN_IN = 100


@dataclass(frozen=True)
class ScoreDynamics:
    """ARIMA(p, d, q) law of one score series; ``drift`` is the mean of the differenced series."""

    p: int = 0
    d: int = 0
    q: int = 0
    ar: tuple[float, ...] = ()
    ma: tuple[float, ...] = ()
    drift: float = 0.0
    sigma: float = 0.1

    def __post_init__(self):
        if len(self.ar) != self.p or len(self.ma) != self.q:
            raise ValueError("coefficient counts must match p and q")
        if self.p and np.any(np.abs(np.roots(np.r_[1.0, -np.asarray(self.ar)][::-1])) <= 1.0):
            raise ValueError("AR part must be stationary")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class BaseCurve:
    """Shape of the natural-scale mean mortality curve.

    ``m(x) = exp(infant_level - infant_decay x) + hump_amplitude g(x)
    + exp(old_age_level + old_age_slope x)`` with a Gaussian hump ``g``.
    """

    infant_level: float = -4.5
    infant_decay: float = 0.35
    hump_amplitude: float = 6e-4
    hump_center: float = 22.0
    hump_width: float = 6.0
    old_age_level: float = -9.8
    old_age_slope: float = 0.09
    sex_shift: float = 0.15  # log-rate offset, added for M and subtracted for F
    male_hump_factor: float = 1.5
    female_hump_factor: float = 0.4

    def rate(self, x: np.ndarray, sex: Sex = Sex.T) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hump_factor = {Sex.M: self.male_hump_factor, Sex.F: self.female_hump_factor}.get(sex, 1.0)
        m = (np.exp(self.infant_level - self.infant_decay * x)
             + hump_factor * self.hump_amplitude * np.exp(-(((x - self.hump_center) / self.hump_width) ** 2))
             + np.exp(self.old_age_level + self.old_age_slope * x))
        shift = {Sex.M: self.sex_shift, Sex.F: -self.sex_shift}.get(sex, 0.0)
        return m * math.exp(shift)


def _default_dynamics() -> tuple[ScoreDynamics, ...]:
    return (ScoreDynamics(0, 1, 0, drift=-0.15, sigma=0.1),
            ScoreDynamics(1, 0, 0, ar=(0.7,), sigma=0.08))


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    n_areas: int = 4
    n_regions: int = 2  # 0: the geographies are regions and form the bottom level
    n_years: int = 24
    first_year: int = 1993
    n_future: int = 0
    latent_rank: int = 2
    score_dynamics: tuple[ScoreDynamics, ...] = field(default_factory=_default_dynamics)
    cross_series_correlation: float = 0.9
    noise_scale: float = 0.05
    base_curve: BaseCurve = field(default_factory=BaseCurve)
    geo_spread: float = 0.1  # sd of per-geography log-rate offsets
    drift_spread: float = 0.0  # sd of the per-series relative deviation from each component's drift
    exposure_scale: float = 1e4
    exposure_growth: float = 0.01
    poisson: bool = False

    def __post_init__(self):
        if not 0.0 <= self.cross_series_correlation <= 1.0:
            raise ValueError("cross_series_correlation must lie in [0, 1]")
        if self.latent_rank < 1:
            raise ValueError("latent_rank must be at least 1")
        if self.noise_scale < 0 or self.exposure_scale <= 0:
            raise ValueError("noise_scale must be >= 0 and exposure_scale > 0")
        if self.n_years < 2 or self.n_areas < 1:
            raise ValueError("need at least two years and one area")

    def dynamics(self, k: int) -> ScoreDynamics:
        if k < len(self.score_dynamics):
            return self.score_dynamics[k]
        return ScoreDynamics(1, 0, 0, ar=(0.5,), sigma=0.05 / (k + 1))

    def structure(self) -> GroupStructure:
        if self.n_regions <= 0:
            return hierarchy([f"R{i + 1}" for i in range(self.n_areas)])
        regions: dict[str, list[str]] = {f"R{r + 1}": [] for r in range(self.n_regions)}
        for i in range(self.n_areas):
            regions[f"R{i * self.n_regions // self.n_areas + 1}"].append(f"A{i + 1}")
        return hierarchy({r: tuple(a) for r, a in regions.items() if a})


@dataclass(frozen=True)
class GroundTruth:
    years: np.ndarray  # all generated years, including the future ones
    ages: AgeGrid
    bottom_keys: tuple[SeriesKey, ...]
    means: np.ndarray  # (A, n_bottom) log scale
    eigenfunctions: np.ndarray  # (K, A), orthonormal
    scores: np.ndarray  # (T_all, K, n_bottom)
    log_rates: np.ndarray  # (T_all, A, n_bottom) latent, without noise
    full_panel: MortalityPanel  # observed panel over all years


def eigenfunctions(x: np.ndarray, K: int) -> np.ndarray:
    """``K`` smooth orthonormal age profiles (rows), largest entry positive."""
    x = np.asarray(x, dtype=float)
    z = (x - x[0]) / (x[-1] - x[0])
    cols = [1.0 + 0.5 * (1.0 - z), np.exp(-(((x - 25.0) / 12.0) ** 2))]
    j = 1
    while len(cols) < K:
        cols.append(np.cos(j * np.pi * z))
        j += 1
    if K > len(x):
        raise ValueError("latent_rank exceeds the number of ages")
    Q, _ = np.linalg.qr(np.column_stack(cols[:K]))
    Q = Q.T
    idx = np.argmax(np.abs(Q), axis=1)
    return Q * np.sign(Q[np.arange(K), idx])[:, None]


def _arima_path(dyn: ScoreDynamics, innov: np.ndarray, n: int, drift: float | None = None) -> np.ndarray:
    """Score path of length ``n`` from ``BURN_IN + n`` innovations; integrated paths start at 0."""
    e = innov
    w = np.zeros(len(e))
    for t in range(len(e)):
        v = e[t]
        for j in range(dyn.p):
            if t - 1 - j >= 0:
                v += dyn.ar[j] * w[t - 1 - j]
        for j in range(dyn.q):
            if t - 1 - j >= 0:
                v += dyn.ma[j] * e[t - 1 - j]
        w[t] = v
    w = w[-n:] + (dyn.drift if drift is None else drift)
    for _ in range(dyn.d):
        w = np.concatenate([[0.0], np.cumsum(w[1:])])
    return w


def generate(spec: SyntheticSpec, structure: GroupStructure | None = None,
             ages: AgeGrid | None = None) -> tuple[MortalityPanel, GroundTruth]:
    """Generate the observed panel (first ``n_years`` years) and its ground truth."""
    structure = structure or spec.structure()
    ages = ages or AgeGrid.default()
    x = ages.x
    A = len(x)
    K = spec.latent_rank
    T = spec.n_years + spec.n_future
    years = np.arange(spec.first_year, spec.first_year + T)
    bottom = structure.bottom_keys
    nb = len(bottom)
    rng = CounterRNG(spec.seed)
    rho = spec.cross_series_correlation

    phi = eigenfunctions(x, K)
    means = np.empty((A, nb))
    geo_offset: dict[str, float] = {}
    for j, key in enumerate(bottom):
        if key.geo_id not in geo_offset:
            geo_offset[key.geo_id] = spec.geo_spread * rng.normal(("geo", key.geo_id), 1)[0]
        means[:, j] = np.log(spec.base_curve.rate(x, key.sex)) + geo_offset[key.geo_id]
    tail = x[:-1] >= 65.0
    if np.any(np.diff(means, axis=0)[tail] <= 0):
        raise ValueError("base curve is not increasing above age 65")

    scores = np.empty((T, K, nb))
    for k in range(K):
        dyn = spec.dynamics(k)
        common = rng.normal(("common", k), BURN_IN + T)
        for j, key in enumerate(bottom):
            idio = rng.normal(("idio", k, str(key)), BURN_IN + T)
            innov = dyn.sigma * (math.sqrt(rho) * common + math.sqrt(1.0 - rho) * idio)
            drift = dyn.drift * (1.0 + spec.drift_spread * rng.normal(("drift", k, str(key)), 1)[0])
            scores[:, k, j] = _arima_path(dyn, innov, T, drift)
    latent = means[None] + np.einsum("tkj,ka->taj", scores, phi)

    noisy = latent.copy()
    if spec.noise_scale > 0:
        for j, key in enumerate(bottom):
            noisy[:, :, j] += spec.noise_scale * rng.normal(("noise", str(key)), T * A).reshape(T, A)
    rate = np.exp(noisy)

    profile = np.exp(-x / 45.0)
    E = np.empty((T, A, nb))
    for j, key in enumerate(bottom):
        size, growth = rng.normal(("exposure", str(key)), 2)
        g = spec.exposure_growth * (1.0 + 0.5 * growth)
        E[:, :, j] = (spec.exposure_scale * math.exp(0.5 * size) * profile[None, :]
                      * (1.0 + g) ** np.arange(T)[:, None])
    if spec.noise_scale > 0 and not spec.poisson:
        # Rounding deaths moves a log rate by at most 0.5 / D; keep that below noise_scale / 20.
        need = 10.0 / spec.noise_scale
        E *= max(1.0, need / float(np.min(rate * E)))
    E = np.ceil(E)
    if spec.poisson:
        D = rng.poisson("deaths", rate * E)
    elif spec.noise_scale > 0:
        D = np.round(rate * E)
    else:
        D = rate * E
    full = synthesize_aggregates(structure, years, ages, D, E)
    truth = GroundTruth(years=years, ages=ages, bottom_keys=bottom, means=means, eigenfunctions=phi,
                        scores=scores, log_rates=latent, full_panel=full)
    return full.select_years(int(years[spec.n_years - 1])), truth


def true_rates(truth: GroundTruth) -> np.ndarray:
    """Latent rates of every series ``(T_all, A, n_series)``, aggregated with the generated exposures."""
    panel = truth.full_panel
    structure = panel.structure
    cols = [panel.series_index(k) for k in truth.bottom_keys]
    E_b = panel.exposures[:, :, cols]
    m_b = np.exp(truth.log_rates)
    col = {k: j for j, k in enumerate(truth.bottom_keys)}
    out = np.empty(panel.exposures.shape)
    for i, key in enumerate(panel.series):
        idx = [col[m] for m in structure.members(key)]
        out[:, :, i] = (m_b[:, :, idx] * E_b[:, :, idx]).sum(axis=2) / E_b[:, :, idx].sum(axis=2)
    return out


def write_truth(truth: GroundTruth, directory: str | Path) -> None:
    """Ground-truth CSV bundle: latent rates, scores, eigenfunctions and means."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    x = truth.ages.centers
    rates = true_rates(truth)
    keys = truth.full_panel.series
    with open(d / "truth_rates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "age_center", "series", "rate"])
        for t, year in enumerate(truth.years):
            for i, key in enumerate(keys):
                for a, xa in enumerate(x):
                    w.writerow([int(year), repr(float(xa)), str(key), repr(float(rates[t, a, i]))])
    with open(d / "truth_scores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "series", "k", "score"])
        for t, year in enumerate(truth.years):
            for j, key in enumerate(truth.bottom_keys):
                for k in range(truth.scores.shape[1]):
                    w.writerow([int(year), str(key), k + 1, repr(float(truth.scores[t, k, j]))])
    with open(d / "truth_eigenfunctions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "age_center", "value"])
        for k in range(truth.eigenfunctions.shape[0]):
            for a, xa in enumerate(x):
                w.writerow([k + 1, repr(float(xa)), repr(float(truth.eigenfunctions[k, a]))])
    with open(d / "truth_means.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "age_center", "log_rate"])
        for j, key in enumerate(truth.bottom_keys):
            for a, xa in enumerate(x):
                w.writerow([str(key), repr(float(xa)), repr(float(truth.means[a, j]))])
