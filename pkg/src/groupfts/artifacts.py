"""CSV artifacts exchanged between command line stages, and atomic output staging."""

from __future__ import annotations

import csv
import os
import shutil
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

from .data_model import SeriesKey
from .pipeline import ForecastSet


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


class Staging:
    """Collect outputs in a temporary directory and move them into place only on success.

    Each file is moved with ``os.replace``, so readers never see a partly
    written file, and nothing is left behind when the stage fails.
    """

    def __init__(self, output_dir: str | Path):
        self.output_dir = Path(output_dir)

    def __enter__(self) -> "Staging":
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.output_dir))
        return self

    def path(self, name: str) -> Path:
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for src in sorted(self.tmp.rglob("*")):
                    if src.is_file():
                        dst = self.output_dir / src.relative_to(self.tmp)
                        dst.parent.mkdir(parents=True, exist_ok=True)
                        os.replace(src, dst)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def write_forecasts(fs: ForecastSet, path: str | Path, which: str = "base") -> None:
    """Base forecasts as ``model,train_end,horizon,series,age_center,rate``, or reconciled ones as
    ``model,method,horizon,series,age_center,rate`` (``which="reconciled"``)."""
    x = fs.ages.centers
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if which == "base":
            w.writerow(["model", "train_end", "horizon", "series", "age_center", "rate"])
            for model, arr in fs.base.items():
                for h in range(arr.shape[0]):
                    for i, key in enumerate(fs.series):
                        for a, xa in enumerate(x):
                            w.writerow([model, fs.train_end, h + 1, str(key), fmt(xa), fmt(arr[h, i, a])])
        else:
            w.writerow(["model", "method", "horizon", "series", "age_center", "rate"])
            for (model, method), arr in fs.reconciled.items():
                for h in range(arr.shape[0]):
                    for i, key in enumerate(fs.series):
                        for a, xa in enumerate(x):
                            w.writerow([model, method, h + 1, str(key), fmt(xa), fmt(arr[h, i, a])])


def read_base_forecasts(path: str | Path, model: str, series: list[SeriesKey],
                        centers) -> tuple[int, np.ndarray]:
    """Read one model's base forecasts into ``(h, n_series, n_ages)``; returns (train_end, array)."""
    row_of = {str(k): i for i, k in enumerate(series)}
    col_of = {float(c): a for a, c in enumerate(centers)}
    cells: dict[int, dict[tuple[int, int], float]] = defaultdict(dict)
    train_ends = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"model", "train_end", "horizon", "series", "age_center", "rate"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {', '.join(sorted(need))}")
        for rowno, row in enumerate(reader, start=2):
            if row["model"] != model:
                continue
            try:
                i = row_of[str(SeriesKey.parse(row["series"]))]
                a = col_of[float(row["age_center"])]
                h = int(row["horizon"])
                cells[h][(i, a)] = float(row["rate"])
                train_ends.add(int(row["train_end"]))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: row {rowno}: {exc}") from None
    if not cells:
        raise ValueError(f"{path}: no forecasts for model {model}")
    if len(train_ends) != 1:
        raise ValueError(f"{path}: expected one training end year, found {sorted(train_ends)}")
    H = max(cells)
    out = np.full((H, len(series), len(centers)), np.nan)
    for h, vals in cells.items():
        for (i, a), v in vals.items():
            out[h - 1, i, a] = v
    if np.isnan(out).any():
        raise ValueError(f"{path}: base forecasts do not cover every series, age and horizon")
    return train_ends.pop(), out


def write_reconciled(result: dict[str, np.ndarray], series, centers, path: str | Path) -> None:
    """Reconciled forecasts ``method,horizon,series,age_center,rate`` from arrays ``(h, m, A)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "horizon", "series", "age_center", "rate"])
        for method, arr in result.items():
            for h in range(arr.shape[0]):
                for i, key in enumerate(series):
                    for a, xa in enumerate(centers):
                        w.writerow([method, h + 1, str(key), fmt(xa), fmt(arr[h, i, a])])


def write_errors(errors: dict[str, np.ndarray], series, path: str | Path) -> None:
    """In-sample error vectors ``model,vector,series,error``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "vector", "series", "error"])
        for model, E in errors.items():
            for v in range(E.shape[0]):
                for i, key in enumerate(series):
                    w.writerow([model, v, str(key), fmt(E[v, i])])


def read_errors(path: str | Path, model: str, series) -> np.ndarray:
    row_of = {str(k): i for i, k in enumerate(series)}
    vals: dict[int, dict[int, float]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        for rowno, row in enumerate(csv.DictReader(fh), start=2):
            if row["model"] != model:
                continue
            try:
                vals[int(row["vector"])][row_of[str(SeriesKey.parse(row["series"]))]] = float(row["error"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: row {rowno}: {exc}") from None
    if not vals:
        raise ValueError(f"{path}: no errors for model {model}")
    E = np.full((max(vals) + 1, len(series)), np.nan)
    for v, d in vals.items():
        for i, e in d.items():
            E[v, i] = e
    if np.isnan(E).any():
        raise ValueError(f"{path}: incomplete error vectors")
    return E


def write_diagnostics(rows: list[dict], path: str | Path) -> None:
    cols = ["model", "train_end", "block", "k", "p", "d", "q", "constant", "aicc", "sigma2"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r[c]) if c in ("aicc", "sigma2") else r[c] for c in cols])
