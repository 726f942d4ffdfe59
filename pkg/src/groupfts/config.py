"""Line-oriented ``key = value`` pipeline configuration.

Keys are dotted (``smoothing.tau``).  Values are layered: built-in defaults,
then the config file, then ``GROUPFTS_<KEY>`` environment variables (dots
become double underscores, e.g. ``GROUPFTS_SMOOTHING__TAU``), then command
line flags.  ``to_text`` writes every key, so parse(write(cfg)) == cfg.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from .evaluation import EvaluationPlan
from .pipeline import MODELS, ForecastOptions
from .reconciliation import METHODS
from .smoothing import SmoothingConfig
from .synthetic import SyntheticSpec

ENV_PREFIX = "GROUPFTS_"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(text: str):
        return None if text.strip().lower() in ("", "none") else parse(text)
    return inner


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.replace(",", " ").split() if t.strip())


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    if isinstance(value, tuple):
        return ", ".join(value)
    return str(value)


# key -> (parser, default, help)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "paths.deaths": (_optional(str), None, "deaths CSV (default: <output_dir>/deaths.csv)"),
    "paths.exposures": (_optional(str), None, "exposures CSV (default: <output_dir>/exposures.csv)"),
    "paths.structure": (_optional(str), None, "group structure file (default: <output_dir>/structure.txt)"),
    "paths.projected_exposures": (_optional(str), None, "exposures for forecast years, same CSV schema"),
    "paths.base_forecasts": (_optional(str), None, "input of reconcile (default: <output_dir>/base_forecasts.csv)"),
    "paths.errors": (_optional(str), None, "in-sample errors for MinT (default: <output_dir>/insample_errors.csv)"),
    "paths.output_dir": (str, "groupfts-out", "directory for all artifacts"),
    "run.seed": (int, 1, "seed of the synthetic generator"),
    "run.jobs": (int, 1, "worker processes"),
    "run.timestamp": (_bool, False, "write run_info.txt with the run time"),
    "ages.min": (_optional(_float), None, "lowest age center kept"),
    "ages.max": (_optional(_float), None, "highest age center kept"),
    "smoothing.tau": (_float, 1.0, "penalty on slope changes"),
    "smoothing.monotone_from": (_float, 65.0, "age from which curves must be non-decreasing (inf: off)"),
    "smoothing.basis_knots": (_optional(int), None, "number of knots (none: one per age group)"),
    "smoothing.basis_order": (int, 3, "spline degree"),
    "decomposition.threshold": (_float, 0.95, "variance fraction that fixes K"),
    "decomposition.quadrature": (str, "equal", "equal or trapezoid"),
    "decomposition.model": (str, "MFPCA", "blocks written by decompose: FPCA or MFPCA"),
    "arima.p_max": (int, 5, "largest AR order"),
    "arima.q_max": (int, 5, "largest MA order"),
    "arima.d_max": (int, 2, "largest differencing order"),
    "forecast.train_end": (_optional(int), None, "last training year (none: last panel year)"),
    "forecast.horizon": (int, 5, "forecast steps"),
    "forecast.models": (_names, MODELS, "FPCA and/or MFPCA"),
    "reconciliation.methods": (_names, METHODS, "BU, OP, MinT, Comb_av"),
    "reconciliation.model": (str, "MFPCA", "base model reconciled by the reconcile command"),
    "reconciliation.clamp_negative": (_bool, False, "set negative reconciled rates to zero"),
    "evaluation.first_train_end": (_optional(int), None, "first training end year (none: last_year - max_horizon)"),
    "evaluation.last_year": (int, 2016, "last year of data used"),
    "evaluation.max_horizon": (int, 5, "largest horizon H"),
    "evaluation.models": (_names, MODELS, "base models compared"),
    "evaluation.methods": (_names, ("base",) + METHODS, "base and reconciliation methods"),
    "evaluation.divide_by_observed": (_bool, False, "divide errors by observed cells instead of A (H + 1 - h)"),
    "evaluation.skip_failed": (_bool, False, "skip windows whose pipeline fails"),
    "simulate.n_areas": (int, 4, "number of bottom geographies"),
    "simulate.n_regions": (int, 2, "regions grouping the areas (0: geographies are regions)"),
    "simulate.n_years": (int, 24, "observed years"),
    "simulate.first_year": (int, 1993, "first calendar year"),
    "simulate.n_future": (int, 0, "extra ground-truth years"),
    "simulate.latent_rank": (int, 2, "true number of components"),
    "simulate.rho": (_float, 0.9, "cross-series score correlation"),
    "simulate.noise_scale": (_float, 0.05, "sd of log-rate noise"),
    "simulate.drift_spread": (_float, 0.0, "per-series relative drift spread"),
    "simulate.exposure_scale": (_float, 1e4, "base exposure per cell"),
    "simulate.poisson": (_bool, False, "Poisson death counts"),
}


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "__")


@dataclass(frozen=True)
class PipelineConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def defaults(cls) -> "PipelineConfig":
        return cls({k: v[1] for k, v in SCHEMA.items()})

    def updated(self, changes: Mapping[str, Any]) -> "PipelineConfig":
        vals = dict(self.values)
        for key, value in changes.items():
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            vals[key] = _parse(key, value) if isinstance(value, str) else value
        out = PipelineConfig(vals)
        out.validate()
        return out

    # -- text -----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        changes: dict[str, Any] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", "expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(key, f"unknown key (line {lineno})")
            changes[key] = _parse(key, value)
        return (base or cls.defaults()).updated(changes)

    @classmethod
    def read(cls, path: str | Path) -> "PipelineConfig":
        if str(path) == "demo":
            return cls.from_text(demo_text())
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        return cls.from_text(text)

    def to_text(self) -> str:
        lines, section = [], None
        for key in SCHEMA:
            head = key.split(".", 1)[0]
            if head != section:
                if section is not None:
                    lines.append("")
                section = head
            lines.append(f"{key} = {_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"

    def with_env(self, environ: Mapping[str, str] | None = None) -> "PipelineConfig":
        environ = os.environ if environ is None else environ
        changes = {k: environ[env_name(k)] for k in SCHEMA if env_name(k) in environ}
        return self.updated(changes) if changes else self

    # -- validation and views --------------------------------------------

    def validate(self) -> None:
        v = self.values
        checks = [
            ("smoothing.tau", v["smoothing.tau"] >= 0, "must be >= 0"),
            ("smoothing.basis_order", v["smoothing.basis_order"] >= 1, "must be >= 1"),
            ("decomposition.threshold", 0 < v["decomposition.threshold"] <= 1, "must lie in (0, 1]"),
            ("decomposition.quadrature", v["decomposition.quadrature"] in ("equal", "trapezoid"),
             "must be equal or trapezoid"),
            ("decomposition.model", v["decomposition.model"] in MODELS, f"must be one of {MODELS}"),
            ("reconciliation.model", v["reconciliation.model"] in MODELS, f"must be one of {MODELS}"),
            ("arima.p_max", v["arima.p_max"] >= 0, "must be >= 0"),
            ("arima.q_max", v["arima.q_max"] >= 0, "must be >= 0"),
            ("arima.d_max", v["arima.d_max"] >= 0, "must be >= 0"),
            ("forecast.horizon", v["forecast.horizon"] >= 1, "must be >= 1"),
            ("run.jobs", v["run.jobs"] >= 1, "must be >= 1"),
            ("simulate.rho", 0 <= v["simulate.rho"] <= 1, "must lie in [0, 1]"),
            ("simulate.noise_scale", v["simulate.noise_scale"] >= 0, "must be >= 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)
        for key, allowed in (("forecast.models", MODELS), ("evaluation.models", MODELS),
                             ("reconciliation.methods", METHODS), ("evaluation.methods", ("base",) + METHODS)):
            bad = [m for m in v[key] if m not in allowed]
            if bad or not v[key]:
                raise ConfigError(key, f"expected names from {', '.join(allowed)}")

    def smoothing(self) -> SmoothingConfig:
        v = self.values
        return SmoothingConfig(v["smoothing.tau"], v["smoothing.monotone_from"], v["smoothing.basis_knots"],
                               v["smoothing.basis_order"])

    def forecast_options(self) -> ForecastOptions:
        v = self.values
        return ForecastOptions(v["decomposition.threshold"], v["decomposition.quadrature"], v["arima.p_max"],
                               v["arima.q_max"], v["arima.d_max"], v["forecast.models"],
                               v["reconciliation.methods"], v["reconciliation.clamp_negative"])

    def age_filter(self) -> tuple[float, float] | None:
        lo, hi = self.values["ages.min"], self.values["ages.max"]
        if lo is None and hi is None:
            return None
        return (-math.inf if lo is None else lo, math.inf if hi is None else hi)

    def plan(self) -> EvaluationPlan:
        v = self.values
        try:
            first = v["evaluation.first_train_end"]
            if first is None:
                first = v["evaluation.last_year"] - v["evaluation.max_horizon"]
            return EvaluationPlan(first, v["evaluation.last_year"],
                                  v["evaluation.max_horizon"], v["evaluation.models"], v["evaluation.methods"],
                                  self.age_filter(), v["evaluation.divide_by_observed"], v["evaluation.skip_failed"])
        except ValueError as exc:
            raise ConfigError("evaluation", str(exc)) from None

    def synthetic(self) -> SyntheticSpec:
        v = self.values
        try:
            return SyntheticSpec(seed=v["run.seed"], n_areas=v["simulate.n_areas"], n_regions=v["simulate.n_regions"],
                                 n_years=v["simulate.n_years"], first_year=v["simulate.first_year"],
                                 n_future=v["simulate.n_future"], latent_rank=v["simulate.latent_rank"],
                                 cross_series_correlation=v["simulate.rho"], noise_scale=v["simulate.noise_scale"],
                                 drift_spread=v["simulate.drift_spread"],
                                 exposure_scale=v["simulate.exposure_scale"], poisson=v["simulate.poisson"])
        except ValueError as exc:
            raise ConfigError("simulate", str(exc)) from None


def _parse(key: str, text: str):
    parse = SCHEMA[key][0]
    try:
        return parse(text)
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {text!r}: {exc}") from None


def demo_text() -> str:
    return resources.files("groupfts").joinpath("data/demo.cfg").read_text(encoding="utf-8")
