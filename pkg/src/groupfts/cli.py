"""Command line front end: ``groupfts <command> [options]``.

Each command runs one pipeline stage and writes its artifacts into the
output directory.  Outputs are staged and moved into place only when the
command succeeds.  Failures print one line to stderr of the form::

    groupfts: error: code=<code> key=<config key or -> message=<text>
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .config import SCHEMA, ConfigError, PipelineConfig
from .data_model import (GroupStructure, MortalityPanel, PanelError, build_summing_matrix, load_exposures,
                         load_panel, write_panel)
from .decomposition import decompose, quadrature_weights
from .evaluation import EvaluationError, expanding_window, format_report, summarize
from .pipeline import ForecastOptions, block_label, model_blocks, run_window
from .reconciliation import METHODS, ErrorCovariance, ReconciliationError, estimate_W, reconcile_all
from .score_forecasting import ArimaError
from .smoothing import SmoothingError, smooth_panel
from .synthetic import generate, write_truth

logger = logging.getLogger("groupfts")

METHOD_ALIASES = {"bu": "BU", "op": "OP", "ols": "OP", "mint": "MinT", "comb_av": "Comb_av", "comb": "Comb_av"}


class CommandError(RuntimeError):
    def __init__(self, code: str, message: str, key: str = "-"):
        super().__init__(message)
        self.code = code
        self.key = key


# ---------------------------------------------------------------------------
# helpers


def _out(cfg: PipelineConfig) -> Path:
    return Path(cfg["paths.output_dir"])


def _input_path(cfg: PipelineConfig, key: str, default_name: str) -> Path:
    value = cfg[key]
    path = Path(value) if value else _out(cfg) / default_name
    if not path.exists():
        raise CommandError("input", f"file not found: {path}", key)
    return path


def load_inputs(cfg: PipelineConfig) -> MortalityPanel:
    structure = GroupStructure.read(_input_path(cfg, "paths.structure", "structure.txt"))
    panel = load_panel(_input_path(cfg, "paths.deaths", "deaths.csv"),
                       _input_path(cfg, "paths.exposures", "exposures.csv"), structure)
    ages = cfg.age_filter()
    if ages is not None:
        panel = panel.select_ages(panel.ages.subset(*ages))
    return panel


def _projected(cfg: PipelineConfig, panel: MortalityPanel) -> MortalityPanel | None:
    if not cfg["paths.projected_exposures"]:
        return None
    proj = load_exposures(_input_path(cfg, "paths.projected_exposures", ""), panel.structure)
    ages = cfg.age_filter()
    if ages is not None:
        proj = proj.select_ages(proj.ages.subset(*ages))
    return proj


def _train_end(cfg: PipelineConfig, panel: MortalityPanel) -> int:
    T = cfg["forecast.train_end"]
    if T is None:
        return int(panel.years[-1])
    if T not in set(panel.years.tolist()):
        raise CommandError("config", f"training end {T} is outside the panel years", "forecast.train_end")
    return int(T)


def _finish(cfg: PipelineConfig, stage: artifacts.Staging, command: str) -> None:
    stage.path("effective_config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    if cfg["run.timestamp"]:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        stage.path("run_info.txt").write_text(f"command = {command}\ntimestamp = {stamp}\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    spec = cfg.synthetic()
    panel, truth = generate(spec)
    with artifacts.Staging(_out(cfg)) as stage:
        write_panel(panel, stage.path("deaths.csv"), stage.path("exposures.csv"))
        stage.path("structure.txt").write_text(panel.structure.to_text(), encoding="utf-8")
        write_truth(truth, stage.tmp / "truth")
        _finish(cfg, stage, "simulate")
    logger.info("simulated %d series over %d years", len(panel.series), len(panel.years))
    return 0


def cmd_smooth(cfg: PipelineConfig, args) -> int:
    panel = load_inputs(cfg)
    curves = smooth_panel(panel, cfg.smoothing(), jobs=cfg["run.jobs"])
    with artifacts.Staging(_out(cfg)) as stage:
        curves.write_csv(stage.path("smoothed.csv"))
        _finish(cfg, stage, "smooth")
    return 0


def cmd_decompose(cfg: PipelineConfig, args) -> int:
    panel = load_inputs(cfg)
    T = _train_end(cfg, panel)
    curves = smooth_panel(panel, cfg.smoothing(), jobs=cfg["run.jobs"])
    model_name = cfg["decomposition.model"]
    q = quadrature_weights(panel.ages.x, cfg["decomposition.quadrature"])
    with artifacts.Staging(_out(cfg)) as stage:
        index = ["block,series,omega,K,explained"]
        for b, block in enumerate(model_blocks(panel.structure, model_name), start=1):
            model = decompose(curves.block(block, upto=T), q, cfg["decomposition.threshold"])
            model.save(stage.tmp / "decomposition" / f"block_{b:03d}")
            index.append(f"{b},{block_label(block)},{model.omega},{model.K},"
                         f"{artifacts.fmt(model.explained[model.K - 1])}")
        stage.path("decomposition/blocks.csv").write_text("\n".join(index) + "\n", encoding="utf-8")
        _finish(cfg, stage, "decompose")
    return 0


def cmd_forecast(cfg: PipelineConfig, args) -> int:
    panel = load_inputs(cfg)
    T = _train_end(cfg, panel)
    curves = smooth_panel(panel.select_years(T), cfg.smoothing(), jobs=cfg["run.jobs"])
    base_opts = cfg.forecast_options()
    opts = ForecastOptions(base_opts.threshold, base_opts.quadrature, base_opts.p_max, base_opts.q_max,
                           base_opts.d_max, base_opts.models, (), base_opts.clamp_negative)
    fs = run_window(panel.select_years(T), curves, T, cfg["forecast.horizon"], opts)
    with artifacts.Staging(_out(cfg)) as stage:
        artifacts.write_forecasts(fs, stage.path("base_forecasts.csv"))
        artifacts.write_errors(fs.errors, fs.series, stage.path("insample_errors.csv"))
        artifacts.write_diagnostics(fs.diagnostics, stage.path("score_diagnostics.csv"))
        _finish(cfg, stage, "forecast")
    return 0


def _methods(cfg: PipelineConfig, args) -> tuple[str, ...]:
    if not getattr(args, "method", None):
        return cfg["reconciliation.methods"]
    out = []
    for name in args.method.replace(",", " ").split():
        m = METHOD_ALIASES.get(name.lower())
        if m is None:
            raise CommandError("usage", f"unknown method {name!r}; choose from {', '.join(METHODS)}", "--method")
        out.append(m)
    return tuple(dict.fromkeys(out))


def cmd_reconcile(cfg: PipelineConfig, args) -> int:
    methods = _methods(cfg, args)
    panel = load_inputs(cfg)
    model = cfg["reconciliation.model"]
    series = list(panel.series)
    T, base = artifacts.read_base_forecasts(_input_path(cfg, "paths.base_forecasts", "base_forecasts.csv"),
                                            model, series, panel.ages.centers)
    projected = _projected(cfg, panel)
    W: ErrorCovariance | None = None
    if {"MinT", "Comb_av"} & set(methods):
        errors = artifacts.read_errors(_input_path(cfg, "paths.errors", "insample_errors.csv"), model, series)
        W = estimate_W(errors)
    result: dict[str, list] = {m: [] for m in methods}
    for j in range(base.shape[0]):
        year = T + j + 1
        if projected is not None and year in set(projected.years.tolist()):
            S = build_summing_matrix(projected, year, panel.structure)
        else:
            S = build_summing_matrix(panel, T, panel.structure)
        rec = reconcile_all(base[j], S, W, methods, cfg["reconciliation.clamp_negative"])
        for m in methods:
            result[m].append(rec[m])
    stacked = {m: np.stack(v) for m, v in result.items()}
    with artifacts.Staging(_out(cfg)) as stage:
        artifacts.write_reconciled(stacked, series, panel.ages.centers, stage.path("reconciled.csv"))
        _finish(cfg, stage, "reconcile")
    return 0


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    from .plotting import plot_report

    panel = load_inputs(cfg)
    plan = dataclasses.replace(cfg.plan(), age_filter=None)  # ages already filtered on load
    archive = expanding_window(panel, plan, cfg.forecast_options(), cfg.smoothing(), jobs=cfg["run.jobs"])
    report = summarize(archive, panel)
    with artifacts.Staging(_out(cfg)) as stage:
        report.write_csv(stage.path("error_report.csv"))
        report.write_csv(stage.path("error_report_x100.csv"), scale=100.0, digits=6)
        report.write_series_csv(stage.path("error_report_series.csv"))
        stage.path("report.txt").write_text(format_report(report, "mafe") + "\n" + format_report(report, "rmsfe"),
                                            encoding="utf-8")
        plot_report(report, stage.tmp / "figures")
        diags = [d for T in sorted(archive.windows) for d in archive.windows[T].diagnostics]
        artifacts.write_diagnostics(diags, stage.path("score_diagnostics.csv"))
        if archive.failures:
            stage.path("failed_windows.txt").write_text(
                "".join(f"{T}\t{msg}\n" for T, msg in sorted(archive.failures.items())), encoding="utf-8")
        _finish(cfg, stage, "evaluate")
    return 0


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic coherent panel and its ground truth"),
    "smooth": (cmd_smooth, "smooth every (series, year) log-mortality curve"),
    "decompose": (cmd_decompose, "functional principal components of each block"),
    "forecast": (cmd_forecast, "base rate forecasts, in-sample errors and ARIMA diagnostics"),
    "reconcile": (cmd_reconcile, "reconcile base forecasts (BU, OP, MinT, Comb_av)"),
    "evaluate": (cmd_evaluate, "expanding-window evaluation with MAFE/RMSFE report and figures"),
}


# ---------------------------------------------------------------------------
# entry point


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="config file, or 'demo' for the bundled demo")
    parser.add_argument("--jobs", type=int, default=default, help="worker processes (run.jobs)")
    parser.add_argument("--seed", type=int, default=default, help="generator seed (run.seed)")
    parser.add_argument("--output-dir", default=default, help="artifact directory (paths.output_dir)")
    parser.add_argument("--set", action="append", default=argparse.SUPPRESS if suppress else [],
                        metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupfts", description="Coherent forecasts of grouped mortality curves.")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_options(p, suppress=True)
        if name == "reconcile":
            p.add_argument("--method", help="comma-separated methods: bu, op, mint, comb_av")
    _global_options(sub.add_parser("config", help="print the effective configuration"), suppress=True)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.read(args.config) if args.config else PipelineConfig.defaults()
    cfg = cfg.with_env()
    changes = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        changes[key.strip()] = value.strip()
    if args.jobs is not None:
        changes["run.jobs"] = str(args.jobs)
    if args.seed is not None:
        changes["run.seed"] = str(args.seed)
    if args.output_dir is not None:
        changes["paths.output_dir"] = args.output_dir
    return cfg.updated(changes) if changes else cfg


def _error_line(code: str, key: str, message: str) -> str:
    return f"groupfts: error: code={code} key={key} message={json.dumps(message)}"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "config":
            sys.stdout.write(cfg.to_text())
            return 0
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(_error_line("config", exc.key, str(exc)), file=sys.stderr)
        return 2
    except CommandError as exc:
        print(_error_line(exc.code, exc.key, str(exc)), file=sys.stderr)
        return 2 if exc.code in ("usage", "config") else 1
    except (PanelError, SmoothingError, ReconciliationError, ArimaError, EvaluationError, ValueError,
            OSError) as exc:
        print(_error_line(type(exc).__name__, "-", str(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "resolve_config", "SCHEMA"]
