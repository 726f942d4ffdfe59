"""Mortality panels, grouped hierarchies and exposure-weighted summing matrices.

Series are identified by ``SeriesKey(level, geo_id, sex)``.  A hierarchy has
a national node, regions and (optionally) areas, each split by sex; the most
disaggregated series are the sex-specific series of the lowest geographic
level.  Rates of an aggregate series are exposure-weighted averages of the
bottom rates, so the summing matrix holds exposure shares and differs by age.
"""

from __future__ import annotations

import csv
import enum
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CSV_HEADER = ["year", "age_group", "level", "geo_id", "sex", "value"]


class PanelError(ValueError):
    """Raised for malformed or inconsistent panel input."""


class Level(enum.IntEnum):
    National = 0
    Region = 1
    Area = 2


class Sex(enum.IntEnum):
    T = 0
    F = 1
    M = 2


def _natural_key(text: str) -> tuple:
    parts = re.split(r"(\d+)", text)
    return tuple(int(p) if p.isdigit() else p for p in parts)


@dataclass(frozen=True)
class SeriesKey:
    level: Level
    geo_id: str
    sex: Sex

    def __post_init__(self):
        object.__setattr__(self, "level", Level[self.level] if isinstance(self.level, str) else Level(self.level))
        object.__setattr__(self, "sex", Sex[self.sex] if isinstance(self.sex, str) else Sex(self.sex))

    @property
    def tier(self) -> int:
        """Position of the key's level in the listing National, Sex, Region,
        Sex x Region, Area, Sex x Area."""
        return 2 * int(self.level) + (0 if self.sex is Sex.T else 1)

    def sort_key(self) -> tuple:
        return (self.tier, _natural_key(self.geo_id), int(self.sex))

    def __lt__(self, other: "SeriesKey") -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return f"{self.level.name}:{self.geo_id}:{self.sex.name}"

    @classmethod
    def parse(cls, text: str) -> "SeriesKey":
        try:
            level, geo, sex = text.strip().split(":")
            return cls(Level[level], geo, Sex[sex])
        except (ValueError, KeyError) as exc:
            raise PanelError(f"cannot parse series key {text!r}; expected LEVEL:GEO:SEX") from exc


def canonical_order(keys: Iterable[SeriesKey]) -> list[SeriesKey]:
    return sorted(keys, key=SeriesKey.sort_key)


@dataclass(frozen=True)
class AgeGrid:
    """Age groups and the representative age of each group."""

    group_labels: tuple[str, ...]
    centers: tuple[float, ...]

    def __post_init__(self):
        if len(self.group_labels) != len(self.centers):
            raise ValueError("labels and centers differ in length")
        c = np.asarray(self.centers, dtype=float)
        if len(c) and np.any(np.diff(c) <= 0):
            raise ValueError("age centers must be strictly increasing")

    def __len__(self) -> int:
        return len(self.group_labels)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=float)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "AgeGrid":
        """Build a grid from labels such as ``"0-4"`` and ``"85+"``.

        Closed groups use their midpoint; an open group ``"a+"`` is centred
        half of the preceding group width above ``a``.
        """
        centers = []
        width = 5.0
        for lab in labels:
            lab = lab.strip()
            if lab.endswith("+"):
                lo = float(lab[:-1])
                centers.append(lo + width / 2.0)
            elif "-" in lab:
                lo, hi = (float(v) for v in lab.split("-"))
                centers.append((lo + hi) / 2.0)
                width = hi - lo + 1.0
            else:
                centers.append(float(lab))
                width = 1.0
        return cls(tuple(labels), tuple(centers))

    @classmethod
    def default(cls) -> "AgeGrid":
        labels = [f"{a}-{a + 4}" for a in range(0, 85, 5)] + ["85+"]
        return cls.from_labels(labels)

    def index(self, label: str) -> int:
        try:
            return self.group_labels.index(label)
        except ValueError:
            raise PanelError(f"unknown age group {label!r}") from None

    def subset(self, min_age: float | None = None, max_age: float | None = None) -> np.ndarray:
        """Indices of groups whose center lies in ``[min_age, max_age]``."""
        x = self.x
        keep = np.ones(len(x), dtype=bool)
        if min_age is not None:
            keep &= x >= min_age
        if max_age is not None:
            keep &= x <= max_age
        return np.flatnonzero(keep)


@dataclass(frozen=True)
class GroupStructure:
    bottom_keys: tuple[SeriesKey, ...]
    agg_rows: Mapping[SeriesKey, tuple[SeriesKey, ...]]
    joint_blocks: tuple[tuple[SeriesKey, ...], ...] = ()

    def __post_init__(self):
        bottom = set(self.bottom_keys)
        if len(bottom) != len(self.bottom_keys):
            raise PanelError("duplicate bottom keys")
        object.__setattr__(self, "bottom_keys", tuple(canonical_order(self.bottom_keys)))
        for key, members in self.agg_rows.items():
            if key in bottom:
                raise PanelError(f"{key} is both bottom and aggregate")
            if not members:
                raise PanelError(f"aggregate {key} has no members")
            missing = [m for m in members if m not in bottom]
            if missing:
                raise PanelError(f"aggregate {key} lists non-bottom members {missing[:3]}")
        if self.joint_blocks:
            seen: dict[SeriesKey, int] = {}
            for b, block in enumerate(self.joint_blocks):
                for key in block:
                    if key in seen:
                        raise PanelError(f"{key} appears in more than one joint block")
                    seen[key] = b
            missing = [k for k in self.all_keys if k not in seen]
            extra = [k for k in seen if k not in set(self.all_keys)]
            if missing or extra:
                raise PanelError(f"joint blocks do not partition the series (missing {missing[:3]}, unknown {extra[:3]})")

    @property
    def all_keys(self) -> list[SeriesKey]:
        return canonical_order(list(self.agg_rows) + list(self.bottom_keys))

    @property
    def n_series(self) -> int:
        return len(self.agg_rows) + len(self.bottom_keys)

    def members(self, key: SeriesKey) -> tuple[SeriesKey, ...]:
        if key in self.agg_rows:
            return tuple(canonical_order(self.agg_rows[key]))
        return (key,)

    def indicator(self) -> np.ndarray:
        """0/1 aggregation matrix (rows in canonical order, bottom columns)."""
        col = {k: j for j, k in enumerate(self.bottom_keys)}
        keys = self.all_keys
        out = np.zeros((len(keys), len(self.bottom_keys)))
        for i, key in enumerate(keys):
            for m in self.members(key):
                out[i, col[m]] = 1.0
        return out

    def univariate_blocks(self) -> tuple[tuple[SeriesKey, ...], ...]:
        """Every series in its own block (the univariate FPCA layout)."""
        return tuple((k,) for k in self.all_keys)

    def with_blocks(self, blocks: Sequence[Sequence[SeriesKey]]) -> "GroupStructure":
        return GroupStructure(self.bottom_keys, dict(self.agg_rows), tuple(tuple(b) for b in blocks))

    def level_name(self, key: SeriesKey) -> str:
        names = ["National", "Sex", "Region", "Sex x Region", "Area", "Sex x Area"]
        return names[key.tier]

    # -- text format -----------------------------------------------------

    def to_text(self) -> str:
        lines = ["[bottom]"]
        lines += [str(k) for k in self.bottom_keys]
        lines.append("")
        lines.append("[aggregates]")
        for key in canonical_order(self.agg_rows):
            lines.append(f"{key} = " + " ".join(str(m) for m in self.members(key)))
        lines.append("")
        lines.append("[joint_blocks]")
        for block in self.joint_blocks:
            lines.append(" ".join(str(k) for k in block))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GroupStructure":
        section = None
        bottom: list[SeriesKey] = []
        aggs: dict[SeriesKey, tuple[SeriesKey, ...]] = {}
        blocks: list[tuple[SeriesKey, ...]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in ("bottom", "aggregates", "joint_blocks"):
                    raise PanelError(f"line {lineno}: unknown section [{section}]")
                continue
            try:
                if section == "bottom":
                    bottom.extend(SeriesKey.parse(tok) for tok in line.split())
                elif section == "aggregates":
                    lhs, rhs = line.split("=", 1)
                    key = SeriesKey.parse(lhs)
                    if key in aggs:
                        raise PanelError(f"aggregate {key} defined twice")
                    aggs[key] = tuple(SeriesKey.parse(tok) for tok in rhs.split())
                elif section == "joint_blocks":
                    blocks.append(tuple(SeriesKey.parse(tok) for tok in line.split()))
                else:
                    raise PanelError("content before the first section header")
            except PanelError as exc:
                raise PanelError(f"line {lineno}: {exc}") from None
            except ValueError:
                raise PanelError(f"line {lineno}: expected 'KEY = key1 key2 ...'") from None
        return cls(tuple(bottom), aggs, tuple(blocks))

    @classmethod
    def read(cls, path: str | Path) -> "GroupStructure":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def hierarchy(regions: Mapping[str, Sequence[str]] | Sequence[str], with_areas: bool = True,
              national_id: str = "AUS") -> GroupStructure:
    """Grouped geography x sex structure with the default joint blocks.

    ``regions`` maps region ids to their area ids.  With ``with_areas=False``
    (or a plain list of region ids) the region x sex series are the bottom
    level.  Joint blocks: sex pairs at every node, area totals within each
    region, all region totals together, the national total alone.
    """
    if not isinstance(regions, Mapping):
        regions = {r: () for r in regions}
        with_areas = False
    nat = lambda s: SeriesKey(Level.National, national_id, s)  # noqa: E731
    reg = lambda r, s: SeriesKey(Level.Region, r, s)  # noqa: E731
    area = lambda a, s: SeriesKey(Level.Area, a, s)  # noqa: E731
    FS = (Sex.F, Sex.M)

    if with_areas:
        bottom = [area(a, s) for r in regions for a in regions[r] for s in FS]
    else:
        bottom = [reg(r, s) for r in regions for s in FS]

    aggs: dict[SeriesKey, tuple[SeriesKey, ...]] = {}
    for s in Sex:
        sexes = FS if s is Sex.T else (s,)
        aggs[nat(s)] = tuple(k for k in bottom if k.sex in sexes)
    for r in regions:
        for s in Sex:
            sexes = FS if s is Sex.T else (s,)
            if with_areas:
                key = reg(r, s)
                aggs[key] = tuple(area(a, x) for a in regions[r] for x in sexes)
            elif s is Sex.T:
                aggs[reg(r, s)] = (reg(r, Sex.F), reg(r, Sex.M))
    if with_areas:
        for r in regions:
            for a in regions[r]:
                aggs[area(a, Sex.T)] = (area(a, Sex.F), area(a, Sex.M))

    blocks: list[tuple[SeriesKey, ...]] = [(nat(Sex.T),), (nat(Sex.F), nat(Sex.M))]
    blocks.append(tuple(reg(r, Sex.T) for r in regions))
    blocks.extend((reg(r, Sex.F), reg(r, Sex.M)) for r in regions)
    if with_areas:
        blocks.extend(tuple(area(a, Sex.T) for a in regions[r]) for r in regions)
        blocks.extend((area(a, Sex.F), area(a, Sex.M)) for r in regions for a in regions[r])
    return GroupStructure(tuple(bottom), aggs, tuple(blocks))


# Remoteness classification of the 47 harmonised areas: seven capital cities
# and four broader regions.
AUSTRALIAN_REGIONS: dict[str, tuple[str, ...]] = {
    "R1": ("A1",),
    "R2": ("A2", "A3", "A4"),
    "R3": ("A5",),
    "R4": ("A6", "A7", "A8", "A9", "A10"),
    "R5": ("A11",),
    "R6": ("A12",),
    "R7": ("A13",),
    "R8": ("A14",),
    "R9": ("A15",),
    "R10": tuple(f"A{i}" for i in range(16, 35)),
    "R11": tuple(f"A{i}" for i in range(35, 48)),
}

REGION_NAMES = {
    "R1": "Sydney", "R2": "NSW Coast", "R3": "Melbourne", "R4": "Country Victoria",
    "R5": "Brisbane", "R6": "Adelaide", "R7": "Perth", "R8": "Greater Hobart",
    "R9": "Canberra", "R10": "Regional Australia", "R11": "Remote Australia",
}


def australian_structure() -> GroupStructure:
    """The 177-series Australia / Region / Area x sex structure."""
    return hierarchy(AUSTRALIAN_REGIONS)


# ---------------------------------------------------------------------------
# panel


@dataclass(frozen=True)
class MortalityPanel:
    """Deaths and exposures indexed ``[year, age, series]``; NaN marks absent cells."""

    years: np.ndarray
    ages: AgeGrid
    series: tuple[SeriesKey, ...]
    deaths: np.ndarray
    exposures: np.ndarray
    structure: GroupStructure | None = None
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        object.__setattr__(self, "years", years)
        shape = (len(years), len(self.ages), len(self.series))
        for name in ("deaths", "exposures"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise PanelError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.series)})

    @property
    def mask(self) -> np.ndarray:
        """True where no rate is defined."""
        with np.errstate(invalid="ignore"):
            return np.isnan(self.deaths) | np.isnan(self.exposures) | ~(self.exposures > 0)

    @property
    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.deaths / self.exposures
        r[self.mask] = np.nan
        return r

    def series_index(self, key: SeriesKey) -> int:
        return self._index[key]

    def year_index(self, year: int) -> int:
        hits = np.flatnonzero(self.years == year)
        if not len(hits):
            raise PanelError(f"year {year} not in panel ({self.years[0]}-{self.years[-1]})")
        return int(hits[0])

    def select_years(self, last_year: int) -> "MortalityPanel":
        keep = self.years <= last_year
        return MortalityPanel(self.years[keep], self.ages, self.series, self.deaths[keep],
                              self.exposures[keep], self.structure)

    def select_ages(self, idx: Sequence[int]) -> "MortalityPanel":
        idx = np.asarray(idx, dtype=int)
        grid = AgeGrid(tuple(self.ages.group_labels[i] for i in idx), tuple(self.ages.centers[i] for i in idx))
        return MortalityPanel(self.years, grid, self.series, self.deaths[:, idx], self.exposures[:, idx],
                              self.structure)


def synthesize_aggregates(structure: GroupStructure, years, ages: AgeGrid,
                          bottom_deaths: np.ndarray, bottom_exposures: np.ndarray) -> MortalityPanel:
    """Panel with every aggregate computed by exact summation of bottom D and E.

    An aggregate cell is absent when any contributing bottom cell is absent.
    """
    keys = structure.all_keys
    col = {k: j for j, k in enumerate(structure.bottom_keys)}
    T, A = bottom_deaths.shape[:2]
    D = np.empty((T, A, len(keys)))
    E = np.empty((T, A, len(keys)))
    for i, key in enumerate(keys):
        cols = [col[m] for m in structure.members(key)]
        D[:, :, i] = bottom_deaths[:, :, cols].sum(axis=2)
        E[:, :, i] = bottom_exposures[:, :, cols].sum(axis=2)
    return MortalityPanel(np.asarray(years), ages, tuple(keys), D, E, structure)


def _read_values(path: Path, ages: AgeGrid, what: str) -> dict[tuple[int, int, SeriesKey], float]:
    out: dict[tuple[int, int, SeriesKey], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise PanelError(f"{path}: row 1: header must be {','.join(CSV_HEADER)}")
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise PanelError(f"{path}: row {rowno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                year = int(row[0])
                age = ages.index(row[1].strip())
                key = SeriesKey(Level[row[2].strip()], row[3].strip(), Sex[row[4].strip()])
                value = float(row[5])
            except (ValueError, KeyError, PanelError) as exc:
                raise PanelError(f"{path}: row {rowno}: {exc}") from None
            if not np.isfinite(value):
                raise PanelError(f"{path}: row {rowno}: non-finite {what}")
            if what == "deaths" and value < 0:
                raise PanelError(f"{path}: row {rowno}: negative death count {value}")
            if what == "exposures" and value < 0:
                raise PanelError(f"{path}: row {rowno}: negative exposure {value}")
            cell = (year, age, key)
            if cell in out:
                raise PanelError(f"{path}: row {rowno}: duplicate cell ({year}, {row[1]}, {key})")
            out[cell] = value
    return out


def load_panel(deaths_file: str | Path, exposures_file: str | Path, structure: GroupStructure,
               ages: AgeGrid | None = None, rel_tol: float = 1e-9) -> MortalityPanel:
    """Read deaths and exposures CSVs and build a coherent panel.

    Aggregates are always recomputed from the bottom series; aggregate rows
    found in the input are only cross-checked.  Zero exposures are accepted
    and masked.
    """
    ages = ages or AgeGrid.default()
    d_vals = _read_values(Path(deaths_file), ages, "deaths")
    e_vals = _read_values(Path(exposures_file), ages, "exposures")
    bottom = set(structure.bottom_keys)
    known = bottom | set(structure.agg_rows)
    for cell in list(d_vals) + list(e_vals):
        if cell[2] not in known:
            raise PanelError(f"series {cell[2]} is not part of the group structure")
    years = sorted({c[0] for c in d_vals} | {c[0] for c in e_vals})
    if not years:
        raise PanelError("no data rows")
    present = {c[2] for c in d_vals} | {c[2] for c in e_vals}
    absent = [k for k in structure.bottom_keys if k not in present]
    if absent:
        raise PanelError(f"bottom series missing from input: {', '.join(map(str, absent[:5]))}")

    yidx = {y: i for i, y in enumerate(years)}
    col = {k: j for j, k in enumerate(structure.bottom_keys)}
    shape = (len(years), len(ages), len(structure.bottom_keys))
    D = np.full(shape, np.nan)
    E = np.full(shape, np.nan)
    for (y, a, k), v in d_vals.items():
        if k in bottom:
            D[yidx[y], a, col[k]] = v
    for (y, a, k), v in e_vals.items():
        if k in bottom:
            E[yidx[y], a, col[k]] = v
    panel = synthesize_aggregates(structure, years, ages, D, E)

    mismatches = 0
    for source, arr in ((d_vals, panel.deaths), (e_vals, panel.exposures)):
        for (y, a, k), v in source.items():
            if k in bottom:
                continue
            ref = arr[yidx[y], a, panel.series_index(k)]
            if np.isfinite(ref) and abs(ref - v) > rel_tol * max(abs(ref), abs(v), 1e-300):
                mismatches += 1
    if mismatches:
        warnings.warn(f"{mismatches} supplied aggregate cells differ from the sum of their bottom series; "
                      "using recomputed aggregates", stacklevel=2)
    return panel


def load_exposures(exposures_file: str | Path, structure: GroupStructure,
                   ages: AgeGrid | None = None) -> MortalityPanel:
    """Exposure-only panel (deaths absent), e.g. projected exposures for forecast years."""
    ages = ages or AgeGrid.default()
    e_vals = _read_values(Path(exposures_file), ages, "exposures")
    years = sorted({c[0] for c in e_vals})
    if not years:
        raise PanelError("no data rows")
    yidx = {y: i for i, y in enumerate(years)}
    col = {k: j for j, k in enumerate(structure.bottom_keys)}
    E = np.full((len(years), len(ages), len(col)), np.nan)
    for (y, a, k), v in e_vals.items():
        if k in col:
            E[yidx[y], a, col[k]] = v
    return synthesize_aggregates(structure, years, ages, np.full_like(E, np.nan), E)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def write_panel(panel: MortalityPanel, deaths_file: str | Path, exposures_file: str | Path,
                include_aggregates: bool = True) -> None:
    """Write both CSVs in canonical order (year, series, age); absent cells are omitted."""
    bottom = set(panel.structure.bottom_keys) if panel.structure is not None else None
    for path, arr in ((deaths_file, panel.deaths), (exposures_file, panel.exposures)):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for t, year in enumerate(panel.years):
                for j, key in enumerate(panel.series):
                    if not include_aggregates and bottom is not None and key not in bottom:
                        continue
                    for a, label in enumerate(panel.ages.group_labels):
                        v = arr[t, a, j]
                        if np.isnan(v):
                            continue
                        w.writerow([int(year), label, key.level.name, key.geo_id, key.sex.name, _fmt(v)])


# ---------------------------------------------------------------------------
# summing matrix


@dataclass(frozen=True)
class SummingMatrix:
    """Exposure-share matrix per age: ``entries[a]`` maps bottom rates to all rates."""

    year: int
    rows: tuple[SeriesKey, ...]
    cols: tuple[SeriesKey, ...]
    entries: np.ndarray  # (n_ages, n_rows, n_cols)

    def at(self, age: int) -> np.ndarray:
        return self.entries[age]

    @property
    def bottom_rows(self) -> np.ndarray:
        idx = {k: i for i, k in enumerate(self.rows)}
        return np.array([idx[k] for k in self.cols])


def summing_from_exposures(structure: GroupStructure, bottom_exposures: np.ndarray, year: int = 0) -> SummingMatrix:
    """Summing matrix from bottom exposures of shape ``(n_ages, n_bottom)``."""
    E = np.atleast_2d(np.asarray(bottom_exposures, dtype=float))
    bad = ~(np.isfinite(E) & (E > 0))
    if bad.any():
        j = int(np.flatnonzero(bad.any(axis=0))[0])
        raise PanelError(f"missing or non-positive exposure for bottom series {structure.bottom_keys[j]} in {year}")
    ind = structure.indicator()
    num = ind[None, :, :] * E[:, None, :]
    entries = num / num.sum(axis=2, keepdims=True)
    return SummingMatrix(int(year), tuple(structure.all_keys), tuple(structure.bottom_keys), entries)


def build_summing_matrix(panel: MortalityPanel, year: int, structure: GroupStructure | None = None) -> SummingMatrix:
    structure = structure or panel.structure
    t = panel.year_index(year)
    cols = [panel.series_index(k) for k in structure.bottom_keys]
    return summing_from_exposures(structure, panel.exposures[t][:, cols], year)


def coherence_residual(R: np.ndarray, S: np.ndarray | SummingMatrix, bottom_rows: Sequence[int] | None = None,
                       bottom: np.ndarray | None = None) -> tuple[float, int]:
    """Max |R - S b| over (row, age) and the number of skipped cells.

    ``R`` is ``(n_series, n_ages)``; ``b`` defaults to the bottom rows of ``R``.
    Cells with any non-finite contributor are skipped.
    """
    if isinstance(S, SummingMatrix):
        bottom_rows = S.bottom_rows if bottom_rows is None else bottom_rows
        S = S.entries
    R = np.asarray(R, dtype=float)
    b = R[np.asarray(bottom_rows)] if bottom is None else np.asarray(bottom, dtype=float)
    S3 = S if S.ndim == 3 else np.broadcast_to(S, (R.shape[1],) + S.shape)
    worst, skipped = 0.0, 0
    for a in range(R.shape[1]):
        Sa = S3[a]
        bad_b = ~np.isfinite(b[:, a])
        recon = Sa @ np.where(bad_b, 0.0, b[:, a])
        touched = (Sa[:, bad_b] != 0).any(axis=1) | ~np.isfinite(R[:, a])
        skipped += int(touched.sum())
        ok = ~touched
        if ok.any():
            worst = max(worst, float(np.max(np.abs(R[ok, a] - recon[ok]))))
    return worst, skipped


def verify_coherence(panel: MortalityPanel, year: int, with_skipped: bool = False):
    """Largest exposure-weighted coherence residual of the panel's rates in ``year``."""
    S = build_summing_matrix(panel, year)
    t = panel.year_index(year)
    rows = [panel.series_index(k) for k in S.rows]
    R = panel.rates[t][:, rows].T
    worst, skipped = coherence_residual(R, S)
    if skipped:
        logger.info("verify_coherence(%s): skipped %d cells with masked contributors", year, skipped)
    return (worst, skipped) if with_skipped else worst
