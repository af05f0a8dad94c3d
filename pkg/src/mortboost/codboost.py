"""Cause-of-death decomposition by one-step tree boosting.

Starting from a prior conditional cause probability theta0 (uniform 1/K by
default), the working volume theta0 * q * E per (feature, cause) cell turns
the tree's fitted factor mu into boosted probabilities theta_tree = mu *
theta0. Pearson residuals against the all-cause counts diagnose the result.
The tree is grown over (gender, age bucket, year, cause) without a cohort
feature.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .grids import GENDERS, BucketedRates
from .hmd import CauseDeathTable
from .tree import PoissonTree, TreeConfig, WorkingData, grow_tree

COD_FEATURES = ("gender", "bucket", "year")


@dataclass(frozen=True)
class ThetaSurface:
    """Conditional cause probabilities per (gender, age bucket, year, cause)."""

    values: np.ndarray  # (2, I, T, K) in [0, 1]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4 or values.shape[0] != len(GENDERS):
            raise ValueError(f"theta must have shape (2, I, T, K), got {values.shape}")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("theta values must lie in [0, 1]")
        values = np.array(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_causes(self) -> int:
        return self.values.shape[3]

    def cause_sums(self) -> np.ndarray:
        return self.values.sum(axis=3)


def init_theta(
    n_causes: int,
    n_buckets: int,
    n_years: int,
    mode: str = "uniform",
    cod: CauseDeathTable | None = None,
) -> ThetaSurface:
    """Feature-independent prior: uniform 1/K, or global observed frequencies."""
    if n_causes < 1:
        raise ValueError(f"need at least one cause, got {n_causes}")
    shape = (len(GENDERS), n_buckets, n_years, n_causes)
    if mode == "uniform":
        return ThetaSurface(np.full(shape, 1.0 / n_causes))
    if mode == "empirical":
        if cod is None:
            raise ValueError("empirical initialization needs the cause-of-death table")
        if cod.n_causes != n_causes:
            raise ValueError("cause count mismatch")
        per_cause = cod.counts.sum(axis=(0, 1, 2)).astype(np.float64)
        total = per_cause.sum()
        if total <= 0:
            raise ValueError("no observed deaths to take frequencies from")
        freq = per_cause / total
        return ThetaSurface(np.broadcast_to(freq, shape).copy())
    raise ValueError(f"unknown theta initialization mode {mode!r}")


@dataclass(frozen=True)
class CodWorkingData:
    """Working points over (gender, bucket, year) x cause, plus grid metadata."""

    data: WorkingData
    n_buckets: int
    year_min: int
    n_years: int
    available: np.ndarray  # (2, I, T, K): response present (not MISSING)
    dropped: tuple[tuple[str, int, int, str], ...]


def make_cod_working_data(
    cod: CauseDeathTable, qtilde: BucketedRates, theta0: ThetaSurface
) -> CodWorkingData:
    """Volumes d = theta0 * q * E per (feature, cause); MISSING responses kept.

    The condensed rates must come from the same bucket scheme and years as
    the cause table (aggregate_rates does the Remark-style condensation).
    """
    if qtilde.bucketing.n_buckets != cod.n_buckets:
        raise ValueError(
            f"bucket mismatch: rates have {qtilde.bucketing.n_buckets}, table has {cod.n_buckets}"
        )
    if (qtilde.year_min, qtilde.year_max) != (cod.year_min, cod.year_max):
        raise ValueError(
            f"year mismatch: rates cover {qtilde.year_min}..{qtilde.year_max}, "
            f"table covers {cod.year_min}..{cod.year_max}"
        )
    K = cod.n_causes
    if theta0.values.shape != (len(GENDERS), cod.n_buckets, cod.n_years, K):
        raise ValueError("theta0 shape does not match the cause table")
    support = theta0.values == 0
    observed_positive = (~cod.missing) & (cod.counts > 0)
    if np.any(support & observed_positive):
        gi, b, ti, k = [idx[0] for idx in np.nonzero(support & observed_positive)]
        raise ValueError(
            f"theta0 = 0 with observed deaths at ({GENDERS[gi]}, bucket {b + 1}, "
            f"{cod.year_min + ti}, {cod.causes[k]})"
        )
    volume = theta0.values * qtilde.rate[..., None] * qtilde.exposure[..., None]
    if np.any((volume == 0) & observed_positive):
        gi, b, ti, k = [idx[0] for idx in np.nonzero((volume == 0) & observed_positive)]
        raise ValueError(
            f"zero working volume with observed deaths at ({GENDERS[gi]}, bucket {b + 1}, "
            f"{cod.year_min + ti}, {cod.causes[k]})"
        )
    response = np.where(cod.missing, np.nan, cod.counts.astype(np.float64))

    g, b, t, k = np.meshgrid(
        np.arange(len(GENDERS), dtype=np.float64),
        np.arange(1, cod.n_buckets + 1, dtype=np.float64),
        np.arange(cod.year_min, cod.year_max + 1, dtype=np.float64),
        np.arange(K),
        indexing="ij",
    )
    keep = volume.ravel() > 0
    dropped = []
    for flat in np.nonzero(~keep)[0]:
        gi, bi, ti, ki = np.unravel_index(int(flat), volume.shape)
        dropped.append((GENDERS[gi], int(bi + 1), int(cod.year_min + ti), cod.causes[ki]))
    data = WorkingData(
        ordered_names=COD_FEATURES,
        ordered=np.column_stack([g.ravel(), b.ravel(), t.ravel()])[keep],
        volume=volume.ravel()[keep],
        deaths=response.ravel()[keep],
        cause=k.ravel().astype(np.int64)[keep],
        cause_labels=cod.causes,
    )
    return CodWorkingData(
        data=data,
        n_buckets=cod.n_buckets,
        year_min=cod.year_min,
        n_years=cod.n_years,
        available=~cod.missing,
        dropped=tuple(dropped),
    )


def estimate_theta_tree(
    working: CodWorkingData, theta0: ThetaSurface, cfg: TreeConfig = TreeConfig()
) -> tuple[ThetaSurface, ThetaSurface, PoissonTree]:
    """Grow the tree over features x causes; return (raw, normalized, tree).

    raw = clamp(mu * theta0, 0, 1) is the direct product estimate; the
    normalized variant divides by the per-feature sum of raw over causes with
    available data, making those sum to 1 (within float accumulation).
    """
    tree = grow_tree(working.data, cfg)
    shape = theta0.values.shape
    n_buckets, n_years, K = shape[1], shape[2], shape[3]
    if (n_buckets, n_years) != (working.n_buckets, working.n_years):
        raise ValueError("theta0 shape does not match the working data grid")
    g, b, t, k = np.meshgrid(
        np.arange(len(GENDERS), dtype=np.float64),
        np.arange(1, n_buckets + 1, dtype=np.float64),
        np.arange(working.year_min, working.year_min + n_years, dtype=np.float64),
        np.arange(K),
        indexing="ij",
    )
    X = np.column_stack([g.ravel(), b.ravel(), t.ravel()])
    mu = tree.predict(X, k.ravel().astype(np.int64)).reshape(shape)
    raw = np.clip(mu * theta0.values, 0.0, 1.0)
    denom = (raw * working.available).sum(axis=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(denom[..., None] > 0, raw / np.where(denom[..., None] > 0, denom[..., None], 1.0), 0.0)
    return ThetaSurface(raw), ThetaSurface(np.clip(norm, 0.0, 1.0)), tree


@dataclass(frozen=True)
class ResidualGrid:
    """Pearson residuals per (gender, bucket, year, cause); finite everywhere."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("residuals must be finite")
        values = np.array(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def pearson_residuals(
    cod: CauseDeathTable,
    theta: ThetaSurface,
    all_cause: np.ndarray | None = None,
) -> ResidualGrid:
    """(D_xk - theta * D_x) / sqrt(theta * D_x); 0 where the denominator is 0
    or the cell is MISSING. Without an all-cause grid, D_x is the sum over
    available causes."""
    if theta.values.shape != cod.counts.shape:
        raise ValueError("theta shape does not match the cause table")
    if all_cause is None:
        D_x = cod.all_cause_counts().astype(np.float64)
    else:
        D_x = np.asarray(all_cause, dtype=np.float64)
        if D_x.shape != cod.counts.shape[:3]:
            raise ValueError("all-cause grid shape does not match the cause table")
    expected = theta.values * D_x[..., None]
    valid = (expected > 0) & ~cod.missing
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(valid, (cod.counts - expected) / np.sqrt(np.where(valid, expected, 1.0)), 0.0)
    return ResidualGrid(delta)


def smooth_series(values, window: int = 5) -> np.ndarray:
    """Centered moving average with shrinking windows at the edges.

    Presentation-only smoothing for exported series; raw values are always
    exported alongside.
    """
    y = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return y.copy()
    half = window // 2
    out = np.empty_like(y)
    for i in range(y.size):
        lo = max(0, i - half)
        hi = min(y.size, i + half + 1)
        out[i] = y[lo:hi].mean()
    return out


def theta_to_csv(
    cod: CauseDeathTable,
    raw: ThetaSurface,
    norm: ThetaSurface,
    smooth_window: int | None = None,
) -> str:
    """Columns gender,age_group,year,cause,theta_raw,theta_norm[,theta_raw_smooth].

    Smoothing (when requested) runs over years within each (gender, bucket,
    cause) series.
    """
    header = "gender,age_group,year,cause,theta_raw,theta_norm"
    if smooth_window:
        header += ",theta_raw_smooth"
    buf = io.StringIO()
    buf.write(header + "\n")
    smoothed = None
    if smooth_window:
        smoothed = np.empty_like(raw.values)
        for gi in range(len(GENDERS)):
            for b in range(cod.n_buckets):
                for k in range(cod.n_causes):
                    smoothed[gi, b, :, k] = smooth_series(raw.values[gi, b, :, k], smooth_window)
    for gi, g in enumerate(GENDERS):
        for b in range(cod.n_buckets):
            for ti in range(cod.n_years):
                for k in range(cod.n_causes):
                    row = (
                        f"{g},{b + 1},{cod.year_min + ti},{k + 1},"
                        f"{float(raw.values[gi, b, ti, k])!r},{float(norm.values[gi, b, ti, k])!r}"
                    )
                    if smooth_window:
                        row += f",{float(smoothed[gi, b, ti, k])!r}"
                    buf.write(row + "\n")
    return buf.getvalue()


def residuals_to_csv(cod: CauseDeathTable, residuals: ResidualGrid) -> str:
    """Columns gender,age_group,year,cause,delta."""
    buf = io.StringIO()
    buf.write("gender,age_group,year,cause,delta\n")
    for gi, g in enumerate(GENDERS):
        for b in range(cod.n_buckets):
            for ti in range(cod.n_years):
                for k in range(cod.n_causes):
                    buf.write(
                        f"{g},{b + 1},{cod.year_min + ti},{k + 1},"
                        f"{float(residuals.values[gi, b, ti, k])!r}\n"
                    )
    return buf.getvalue()
