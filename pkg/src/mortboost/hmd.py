"""Parsers and writers for HMD 1x1 tables and the cause-of-death CSV schema.

HMD 1x1 layout: two header lines (and, in files as published, a column-name
line starting with "Year", which is tolerated), then whitespace-separated
rows Year Age Female Male Total. "." marks a missing value; a trailing "+"
marks the open age interval.

Cause-of-death interchange CSV: header exactly gender,age_group,year,cause,deaths
with 1-based age-group indices, the cause as a 1-based registry index or a
case-insensitive label, and an empty deaths field meaning MISSING (which is
distinct from 0). Cells never mentioned in the file are MISSING too.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .grids import GENDERS, AgeBucketing, FeatureSpace, MortalityTable

DEFAULT_CAUSES = (
    "infectious diseases",
    "malignant tumors",
    "diabetes mellitus",
    "dementia",
    "circulatory system",
    "respiratory organs",
    "alcoholic liver cirrhosis",
    "urinary organs",
    "congenital malformation",
    "perinatal causes",
    "accidents and violent impacts",
    "others/unknown",
)


class ParseError(ValueError):
    """Malformed input; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class RawHmdRecord:
    """One parsed 1x1 data row; NaN marks the "." missing value."""

    year: int
    age: int
    open_age: bool
    female: float
    male: float
    total: float


def _parse_hmd_row(tokens: list[str], ln_no: int) -> RawHmdRecord:
    if len(tokens) != 5:
        raise ParseError(f"expected 5 columns, got {len(tokens)}", ln_no)
    try:
        year = int(tokens[0])
        age_tok = tokens[1]
        open_age = age_tok.endswith("+")
        age = int(age_tok[:-1]) if open_age else int(age_tok)
        values = tuple(float("nan") if v == "." else float(v) for v in tokens[2:5])
    except ValueError as exc:
        raise ParseError(str(exc), ln_no) from None
    for v in values:
        if not np.isnan(v) and v < 0:
            raise ParseError(f"negative value {v}", ln_no)
    return RawHmdRecord(year, age, open_age, *values)


@dataclass(frozen=True)
class HmdGrid:
    """One parsed HMD 1x1 file: per-gender (age, year) grids, NaN = missing."""

    kind: str  # "deaths" or "exposures"
    ages: np.ndarray
    years: np.ndarray
    female: np.ndarray  # (n_ages, n_years)
    male: np.ndarray
    total: np.ndarray
    open_age: int | None = None  # age that carried the "+" marker

    def gender_grid(self, gender: str) -> np.ndarray:
        return {"female": self.female, "male": self.male}[gender]


def parse_hmd_1x1(text: str, kind: str) -> HmdGrid:
    """Parse an HMD 1x1 deaths or exposures file into dense per-gender grids."""
    if kind not in ("deaths", "exposures"):
        raise ValueError(f"kind must be 'deaths' or 'exposures', got {kind!r}")
    records: dict[tuple[int, int], RawHmdRecord] = {}
    open_age = None
    for ln_no, raw in enumerate(text.splitlines(), start=1):
        if ln_no <= 2:
            continue  # two-line header
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0].lower() == "year":
            continue  # column-name line in published files
        rec = _parse_hmd_row(tokens, ln_no)
        if rec.open_age:
            open_age = rec.age if open_age is None else max(open_age, rec.age)
        if (rec.age, rec.year) in records:
            raise ParseError(f"duplicate entry for age {tokens[1]}, year {rec.year}", ln_no)
        records[(rec.age, rec.year)] = rec
    if not records:
        raise ParseError("no data rows found")
    ages = np.array(sorted({a for a, _ in records}))
    years = np.array(sorted({t for _, t in records}))
    shape = (ages.size, years.size)
    female = np.full(shape, np.nan)
    male = np.full(shape, np.nan)
    total = np.full(shape, np.nan)
    a_pos = {int(a): i for i, a in enumerate(ages)}
    t_pos = {int(t): i for i, t in enumerate(years)}
    for (a, t), rec in records.items():
        female[a_pos[a], t_pos[t]] = rec.female
        male[a_pos[a], t_pos[t]] = rec.male
        total[a_pos[a], t_pos[t]] = rec.total
    return HmdGrid(kind, ages, years, female, male, total, open_age)


def write_hmd_1x1(grid: HmdGrid, title: str | None = None) -> str:
    """Serialize a grid back to the 1x1 layout (full-precision values)."""
    buf = io.StringIO()
    buf.write((title or f"Synthetic, {grid.kind.capitalize()} (period 1x1)") + "\n")
    buf.write("\n")
    buf.write("  Year          Age             Female            Male           Total\n")

    def fmt(v: float) -> str:
        return "." if np.isnan(v) else repr(float(v))

    for ti, t in enumerate(grid.years):
        for ai, a in enumerate(grid.ages):
            age_tok = f"{a}+" if grid.open_age is not None and a == grid.open_age else str(a)
            buf.write(
                f"  {t}  {age_tok}  {fmt(grid.female[ai, ti])}  {fmt(grid.male[ai, ti])}  "
                f"{fmt(grid.total[ai, ti])}\n"
            )
    return buf.getvalue()


@dataclass
class ClipReport:
    warnings: list[str]
    n_rounded: int
    max_rounding_delta: float
    total_rounding_delta: float


def clip_to_space(
    deaths: HmdGrid,
    exposures: HmdGrid,
    space: FeatureSpace,
    pool_top_age: bool,
) -> tuple[MortalityTable, ClipReport]:
    """Cut per-gender grids down to a feature space, optionally pooling all
    ages >= age_max into the top row; deaths are rounded to integers."""
    if deaths.kind != "deaths" or exposures.kind != "exposures":
        raise ValueError("pass the deaths grid first and the exposures grid second")
    report = ClipReport([], 0, 0.0, 0.0)
    requested_years = set(range(space.year_min, space.year_max + 1))
    for grid in (deaths, exposures):
        missing_years = sorted(requested_years - {int(t) for t in grid.years})
        if missing_years:
            raise ValueError(f"{grid.kind} file lacks requested years: {missing_years}")
        missing_ages = sorted(set(range(space.age_min, space.age_max + 1)) - {int(a) for a in grid.ages})
        if missing_ages:
            raise ValueError(f"{grid.kind} file lacks requested ages: {missing_ages}")

    def cut(grid: HmdGrid, gender: str) -> np.ndarray:
        src = grid.gender_grid(gender)
        t_sel = np.isin(grid.years, np.arange(space.year_min, space.year_max + 1))
        out = np.zeros((space.n_ages, space.n_years))
        for ai, a in enumerate(range(space.age_min, space.age_max + 1)):
            row = src[np.nonzero(grid.ages == a)[0][0], t_sel]
            out[ai] = row
        if pool_top_age:
            top = np.zeros(space.n_years)
            for a in grid.ages[grid.ages >= space.age_max]:
                top = top + np.nan_to_num(src[np.nonzero(grid.ages == a)[0][0], t_sel], nan=0.0)
            out[-1] = top
        nan_cells = np.nonzero(np.isnan(out))
        if nan_cells[0].size:
            report.warnings.append(
                f"{grid.kind}/{gender}: {nan_cells[0].size} missing cells treated as zero"
            )
            out = np.nan_to_num(out, nan=0.0)
        return out

    E = np.stack([cut(exposures, g) for g in GENDERS])
    D_raw = np.stack([cut(deaths, g) for g in GENDERS])
    orphan = (E == 0) & (D_raw > 0)
    if np.any(orphan):
        report.warnings.append(
            f"{int(orphan.sum())} cells had deaths with zero exposure; deaths zeroed"
        )
        D_raw = np.where(orphan, 0.0, D_raw)
    D = np.rint(D_raw)
    delta = np.abs(D - D_raw)
    report.n_rounded = int((delta > 0).sum())
    report.max_rounding_delta = float(delta.max()) if delta.size else 0.0
    report.total_rounding_delta = float(delta.sum())
    return MortalityTable(space, E, D.astype(np.int64)), report


@dataclass(frozen=True)
class CauseDeathTable:
    """Cause-split death counts over (gender, age bucket, year, cause)."""

    causes: tuple[str, ...]
    n_buckets: int
    year_min: int
    year_max: int
    counts: np.ndarray  # (2, I, T, K) int64; 0 in missing cells
    missing: np.ndarray  # bool, same shape
    bucketing: AgeBucketing | None = None

    def __post_init__(self):
        if len(self.causes) < 1:
            raise ValueError("need at least one cause")
        shape = (len(GENDERS), self.n_buckets, self.n_years, len(self.causes))
        counts = np.asarray(self.counts, dtype=np.int64)
        missing = np.asarray(self.missing, dtype=bool)
        if counts.shape != shape or missing.shape != shape:
            raise ValueError(f"counts/missing must have shape {shape}")
        if np.any(counts < 0):
            raise ValueError("negative death count")
        if np.any(counts[missing] != 0):
            raise ValueError("missing cells must carry count 0")
        counts = np.array(counts)
        counts.setflags(write=False)
        missing = np.array(missing)
        missing.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "causes", tuple(self.causes))

    @property
    def n_years(self) -> int:
        return self.year_max - self.year_min + 1

    @property
    def n_causes(self) -> int:
        return len(self.causes)

    def all_cause_counts(self) -> np.ndarray:
        """(2, I, T) sums over causes with available data."""
        return self.counts.sum(axis=3)


def parse_cod_csv(
    text: str,
    causes: tuple[str, ...] = DEFAULT_CAUSES,
    bucketing: AgeBucketing | None = None,
) -> CauseDeathTable:
    """Parse the cause-of-death CSV into a dense table; unmentioned cells are MISSING."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file") from None
    if [h.strip() for h in header] != ["gender", "age_group", "year", "cause", "deaths"]:
        raise ParseError("header must be exactly gender,age_group,year,cause,deaths", 1)
    label_of = {c.lower(): k for k, c in enumerate(causes)}
    rows: dict[tuple[int, int, int, int], int | None] = {}
    for ln_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", ln_no)
        g_tok, bucket_tok, year_tok, cause_tok, deaths_tok = (f.strip() for f in row)
        if g_tok.lower() not in GENDERS:
            raise ParseError(f"unknown gender {g_tok!r}", ln_no)
        gi = GENDERS.index(g_tok.lower())
        try:
            bucket = int(bucket_tok)
            year = int(year_tok)
        except ValueError as exc:
            raise ParseError(str(exc), ln_no) from None
        if bucket < 1:
            raise ParseError(f"age_group must be a 1-based index, got {bucket}", ln_no)
        cause_tok_l = cause_tok.lower()
        if cause_tok_l in label_of:
            k = label_of[cause_tok_l]
        else:
            try:
                k = int(cause_tok) - 1
            except ValueError:
                raise ParseError(f"unknown cause {cause_tok!r}", ln_no) from None
            if not 0 <= k < len(causes):
                raise ParseError(f"cause index {cause_tok} outside registry 1..{len(causes)}", ln_no)
        if deaths_tok == "":
            count: int | None = None
        else:
            try:
                count = int(deaths_tok)
            except ValueError:
                raise ParseError(f"deaths must be an integer or empty, got {deaths_tok!r}", ln_no) from None
            if count < 0:
                raise ParseError(f"negative death count {count}", ln_no)
        key = (gi, bucket, year, k)
        if key in rows:
            raise ParseError(
                f"duplicate entry for ({g_tok},{bucket},{year},{causes[k]})", ln_no
            )
        rows[key] = count
    if not rows:
        raise ParseError("no data rows found")
    n_buckets = max(b for _, b, _, _ in rows)
    year_min = min(t for _, _, t, _ in rows)
    year_max = max(t for _, _, t, _ in rows)
    shape = (len(GENDERS), n_buckets, year_max - year_min + 1, len(causes))
    counts = np.zeros(shape, dtype=np.int64)
    missing = np.ones(shape, dtype=bool)
    for (gi, bucket, year, k), count in rows.items():
        if count is not None:
            counts[gi, bucket - 1, year - year_min, k] = count
            missing[gi, bucket - 1, year - year_min, k] = False
    return CauseDeathTable(
        causes=tuple(causes),
        n_buckets=n_buckets,
        year_min=year_min,
        year_max=year_max,
        counts=counts,
        missing=missing,
        bucketing=bucketing,
    )


def write_cod_csv(table: CauseDeathTable) -> str:
    """Full-grid serialization; MISSING cells get an empty deaths field."""
    buf = io.StringIO()
    buf.write("gender,age_group,year,cause,deaths\n")
    for gi, g in enumerate(GENDERS):
        for b in range(table.n_buckets):
            for ti in range(table.n_years):
                for k in range(table.n_causes):
                    val = "" if table.missing[gi, b, ti, k] else str(int(table.counts[gi, b, ti, k]))
                    buf.write(f"{g},{b + 1},{table.year_min + ti},{k + 1},{val}\n")
    return buf.getvalue()


def cause_total_report(table: CauseDeathTable, all_cause: np.ndarray) -> list[str]:
    """Cross-validate cause sums against an all-cause grid (2, I, T).

    The sum over available causes should not exceed the all-cause count;
    violations are reported, not raised.
    """
    all_cause = np.asarray(all_cause)
    expected_shape = (len(GENDERS), table.n_buckets, table.n_years)
    if all_cause.shape != expected_shape:
        raise ValueError(f"all-cause grid must have shape {expected_shape}")
    partial = table.counts.sum(axis=3)
    report = []
    for gi, b, ti in zip(*np.nonzero(partial > all_cause)):
        report.append(
            f"({GENDERS[gi]}, bucket {b + 1}, {table.year_min + ti}): cause sum "
            f"{int(partial[gi, b, ti])} exceeds all-cause count {int(all_cause[gi, b, ti])}"
        )
    return report
