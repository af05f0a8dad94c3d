"""Deterministic Poisson sampling of death counts, the generative side of the
model: D ~ Poisson(q * E) per cell, and D_k ~ Poisson(theta_k * q * E) per
cause on the bucketed grid.

Every cell (and cause) draws from its own counter block of a Philox stream
keyed by (seed, domain), so draws are independent by construction,
order-independent, and bit-reproducible for a given seed regardless of how
the cells are traversed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codboost import ThetaSurface
from .grids import (
    GENDERS,
    AgeBucketing,
    FeatureSpace,
    MortalityTable,
    RateSurface,
    aggregate_rates,
)
from .hmd import CauseDeathTable

_MASK64 = (1 << 64) - 1
_DOMAIN_DEATHS = 0
_DOMAIN_CAUSES = 1


def _draw_poisson(seed: int, domain: int, index: int, mean: float) -> int:
    """One Poisson draw from the (seed, domain, index) counter block."""
    key = (seed & _MASK64) | (domain << 64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=index << 128))
    return int(gen.poisson(mean))


@dataclass(frozen=True)
class SimSpec:
    """True rates, exposures and (optionally) cause probabilities plus a seed."""

    q: RateSurface
    exposure: np.ndarray  # (2, A, T)
    seed: int
    theta: ThetaSurface | None = None
    bucketing: AgeBucketing | None = None
    cause_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        exposure = np.asarray(self.exposure, dtype=np.float64)
        if exposure.shape != self.q.space.shape:
            raise ValueError(f"exposure shape {exposure.shape} != space shape {self.q.space.shape}")
        if np.any(exposure < 0):
            raise ValueError("negative exposure")
        object.__setattr__(self, "exposure", exposure)
        if self.theta is not None:
            if self.bucketing is None:
                raise ValueError("theta requires a bucketing for the condensed grid")
            sums = self.theta.cause_sums()
            if np.any(np.abs(sums - 1.0) > 1e-8):
                raise ValueError("theta must sum to 1 over causes for every feature")
            expected = (
                len(GENDERS),
                self.bucketing.n_buckets,
                self.q.space.n_years,
                self.theta.n_causes,
            )
            if self.theta.values.shape != expected:
                raise ValueError(f"theta shape {self.theta.values.shape} != {expected}")
            labels = self.cause_labels or tuple(
                f"cause {k + 1}" for k in range(self.theta.n_causes)
            )
            if len(labels) != self.theta.n_causes:
                raise ValueError("cause_labels length != number of causes")
            object.__setattr__(self, "cause_labels", tuple(labels))


def sample_deaths(spec: SimSpec) -> MortalityTable:
    """Independent Poisson draws D ~ Pois(q * E) per grid cell."""
    space = spec.q.space
    means = (spec.q.rate * spec.exposure).ravel()
    deaths = np.empty(means.size, dtype=np.int64)
    for i in range(means.size):
        deaths[i] = _draw_poisson(spec.seed, _DOMAIN_DEATHS, i, means[i])
    return MortalityTable(space, spec.exposure, deaths.reshape(space.shape))


def sample_cause_deaths(spec: SimSpec) -> tuple[CauseDeathTable, np.ndarray]:
    """Cause-level draws D_k ~ Pois(theta_k * q * E) on the bucketed grid.

    Returns the cause table and the implied all-cause grid (the cause sum,
    which by Poisson additivity has the aggregated q * E mean).
    """
    if spec.theta is None:
        raise ValueError("spec has no cause probabilities")
    space = spec.q.space
    zero_table = MortalityTable(space, spec.exposure, np.zeros(space.shape, dtype=np.int64))
    condensed = aggregate_rates(spec.q, zero_table, spec.bucketing)
    means = spec.theta.values * (condensed.rate * condensed.exposure)[..., None]
    K = spec.theta.n_causes
    flat = means.reshape(-1, K)
    counts = np.empty_like(flat, dtype=np.int64)
    for cell in range(flat.shape[0]):
        for k in range(K):
            counts[cell, k] = _draw_poisson(spec.seed, _DOMAIN_CAUSES, cell * K + k, flat[cell, k])
    counts = counts.reshape(means.shape)
    table = CauseDeathTable(
        causes=spec.cause_labels,
        n_buckets=spec.bucketing.n_buckets,
        year_min=space.year_min,
        year_max=space.year_max,
        counts=counts,
        missing=np.zeros(means.shape, dtype=bool),
        bucketing=spec.bucketing,
    )
    return table, counts.sum(axis=3)


# --- config-file loading -----------------------------------------------------

_SPEC_DEFAULTS = {
    "exposure": 1e5,
    "base_rate": 5e-5,
    "age_slope": 0.085,
    "year_drift": 0.0,
    "male_factor": 1.0,
    "theta": "uniform",
}


def _parse_range(token: str) -> tuple[int, int]:
    lo, hi = token.split(":")
    return int(lo), int(hi)


def load_sim_spec(source: str | Path) -> SimSpec:
    """Build a SimSpec from key = value lines (a path or the raw text).

    Required keys: ages=A:B, years=T0:T1, seed. Optional: exposure,
    base_rate, age_slope, year_drift, male_factor, causes (with buckets).
    The rate surface is log-linear in age and calendar year:
    q = base_rate * exp(age_slope*a + year_drift*(t - t_min)) * male_factor^[male].
    """
    path = Path(source)
    text = path.read_text() if path.exists() else str(source)
    values: dict[str, str] = {}
    for ln_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"spec line {ln_no}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ValueError(f"spec line {ln_no}: duplicate key {key!r}")
        values[key] = val
    for required in ("ages", "years", "seed"):
        if required not in values:
            raise ValueError(f"simulation spec needs the {required!r} key")
    age_min, age_max = _parse_range(values["ages"])
    year_min, year_max = _parse_range(values["years"])
    space = FeatureSpace(age_min, age_max, year_min, year_max)
    seed = int(values["seed"])
    get = lambda k: float(values.get(k, _SPEC_DEFAULTS[k]))

    ages = space.ages().astype(np.float64)
    years = space.years().astype(np.float64)
    base = get("base_rate") * np.exp(
        get("age_slope") * ages[:, None] + get("year_drift") * (years[None, :] - year_min)
    )
    rate = np.stack([base, base * get("male_factor")])
    rate = np.minimum(rate, 1.0)
    exposure = np.full(space.shape, get("exposure"))

    theta = None
    bucketing = None
    if "causes" in values:
        K = int(values["causes"])
        if "buckets" not in values:
            raise ValueError("causes given without a buckets partition spec")
        bucketing = AgeBucketing.from_spec(values["buckets"], age_min, age_max)
        mode = values.get("theta", _SPEC_DEFAULTS["theta"])
        if mode != "uniform":
            raise ValueError(f"unsupported theta mode {mode!r} (only 'uniform' in spec files)")
        theta = ThetaSurface(
            np.full((len(GENDERS), bucketing.n_buckets, space.n_years, K), 1.0 / K)
        )
    return SimSpec(
        q=RateSurface(space, rate),
        exposure=exposure,
        seed=seed,
        theta=theta,
        bucketing=bucketing,
    )
