"""Command-line surface: fit, backtest, cod, simulate, check.

Batch in, files out. Every run writes exactly one manifest.json next to its
outputs. All dense CSV exports iterate gender-major, age-major, year-minor
(the package's storage order) and print floats at full round-trip precision.
Exit codes: 0 ok, 2 usage, 3 parse/data error, 4 non-convergence, 5 internal
error. MORTBOOST_THREADS is recorded for provenance; the implementation is
single-threaded, so outputs do not depend on it. A key = value config file
passed with --config supplies flag defaults; explicit flags override it.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import codboost, hmd, leecarter, renshawhaberman, svgplot
from .backtest import backtest as run_backtest
from .backtest import export_delta_heatmap
from .grids import (
    GENDERS,
    AgeBucketing,
    BucketedRates,
    FeatureSpace,
    aggregate_rates,
    crude_rates,
    rate_surface_from_csv,
    rate_surface_to_csv,
)
from .manifest import write_manifest
from .simulate import load_sim_spec, sample_cause_deaths, sample_deaths
from .tree import TreeConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOCONV = 4
EXIT_INTERNAL = 5

DEFAULT_BUCKETS = "0;1-14;15-44;45-64;65-84;85+"


class DataError(Exception):
    pass


def _parse_range(token: str, flag: str) -> tuple[int, int]:
    try:
        lo, hi = token.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise DataError(f"{flag} expects LO:HI, got {token!r}") from None


def _load_table(deaths_path, exposures_path, space, pool_top_age):
    deaths = hmd.parse_hmd_1x1(Path(deaths_path).read_text(), "deaths")
    exposures = hmd.parse_hmd_1x1(Path(exposures_path).read_text(), "exposures")
    return hmd.clip_to_space(deaths, exposures, space, pool_top_age)


def _env_threads() -> str:
    return os.environ.get("MORTBOOST_THREADS", "")


def cmd_fit(args) -> int:
    ages = _parse_range(args.ages, "--ages")
    years = _parse_range(args.years, "--years")
    space = FeatureSpace(ages[0], ages[1], years[0], years[1])
    table, report = _load_table(args.deaths, args.exposures, space, not args.no_pool_top_age)
    # rh: weakly identified directions make the last decades of relative
    # deviance improvement (1e-8 .. 1e-10) cost minutes for statistically
    # irrelevant gains, so the CLI default stops earlier; --tol overrides
    default_tol = 1e-8 if args.model == "rh" else 1e-10
    cfg = leecarter.FitConfig(
        max_iterations=args.max_iter
        if args.max_iter is not None
        else (50000 if args.model == "rh" else 10000),
        deviance_tol=args.tol if args.tol is not None else default_tol,
        rate_floor=args.rate_floor,
    )
    warnings = list(report.warnings)
    if args.model == "lc":
        fits = {g: leecarter.fit_lc(table, g, cfg) for g in GENDERS}
        params_csv = leecarter.params_to_csv(fits)
    else:
        warm = None
        if args.warm_start:
            warm = leecarter.params_from_csv(Path(args.warm_start).read_text())
        fits = {
            g: renshawhaberman.fit_rh(table, g, cfg, warm_start=warm[g] if warm else None)
            for g in GENDERS
        }
        params_csv = renshawhaberman.rh_params_to_csv(fits)
    for g in GENDERS:
        warnings.extend(f"{g}: {flag}" for flag in fits[g].flags)
    surface = leecarter.rate_surface(space, fits)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "params.csv").write_text(params_csv)
    (out / "qfit.csv").write_text(rate_surface_to_csv(surface))
    converged = {g: fits[g].converged for g in GENDERS}
    inputs = [args.deaths, args.exposures] + ([args.warm_start] if args.warm_start else [])
    write_manifest(
        out,
        f"fit {args.model}",
        {
            "ages": args.ages,
            "years": args.years,
            "max_iterations": cfg.max_iterations,
            "deviance_tol": cfg.deviance_tol,
            "rate_floor": cfg.rate_floor,
            "pool_top_age": not args.no_pool_top_age,
            "threads": _env_threads(),
        },
        inputs,
        [out / "params.csv", out / "qfit.csv"],
        warnings,
        extra={
            "converged": converged,
            "deviance": {g: fits[g].deviance for g in GENDERS},
            "iterations": {g: fits[g].n_iterations for g in GENDERS},
        },
    )
    if not all(converged.values()):
        print("fit did not converge; outputs written with converged=false", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_backtest(args) -> int:
    q_init = rate_surface_from_csv(Path(args.qfit).read_text())
    space = q_init.space
    table, report = _load_table(args.deaths, args.exposures, space, not args.no_pool_top_age)
    cfg = TreeConfig(cp=args.cp, min_bucket=args.min_bucket, max_depth=args.max_depth)
    result = run_backtest(q_init, table, cfg, initial_model_tag=args.tag)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = export_delta_heatmap(result, out, white_band=args.white_band, svg=args.svg)
    tree_path = out / "tree.txt"
    tree_path.write_text(result.tree.to_text())
    outputs.append(tree_path)
    if args.svg and args.years_to_plot:
        years = [int(y) for y in args.years_to_plot.split(",")]
        crude, _ = crude_rates(table)
        for gi, g in enumerate(GENDERS):
            panels = []
            for year in years:
                if not space.year_min <= year <= space.year_max:
                    raise DataError(f"--years-to-plot year {year} outside {space.year_min}:{space.year_max}")
                ti = year - space.year_min
                ages = space.ages()
                panels.append(
                    {
                        "title": f"{g} {year}",
                        "x": ages,
                        "series": [
                            ("initial", q_init.rate[gi, :, ti]),
                            ("boosted", result.q_tree.rate[gi, :, ti]),
                        ],
                        "dots": list(zip(ages, crude.rate[gi, :, ti])),
                        "y_log": True,
                    }
                )
            path = out / f"rates_{g}.svg"
            path.write_text(svgplot.panels_svg(panels))
            outputs.append(path)
    write_manifest(
        out,
        "backtest",
        {
            "cp": cfg.cp,
            "min_bucket": cfg.min_bucket,
            "max_depth": cfg.max_depth,
            "white_band": args.white_band,
            "tag": args.tag,
            "pool_top_age": not args.no_pool_top_age,
            "threads": _env_threads(),
        },
        [args.qfit, args.deaths, args.exposures],
        outputs,
        report.warnings,
        extra={
            "dropped_cells": [list(c) for c in result.dropped],
            "n_splits": result.tree.n_splits,
            "split_features": result.tree.split_features(),
        },
    )
    return EXIT_OK


def _cause_registry(spec: str) -> tuple[str, ...]:
    """Either a cause count (generic labels) or pipe-separated labels."""
    spec = spec.strip()
    if spec.isdigit():
        return tuple(f"cause {k + 1}" for k in range(int(spec)))
    labels = tuple(part.strip() for part in spec.split("|"))
    if any(not lab for lab in labels):
        raise DataError("empty cause label in --causes")
    return labels


def cmd_cod(args) -> int:
    causes = _cause_registry(args.causes) if args.causes else hmd.DEFAULT_CAUSES
    cod = hmd.parse_cod_csv(Path(args.cod).read_text(), causes=causes)
    q_full = rate_surface_from_csv(Path(args.qfit).read_text())
    space = q_full.space
    exposures = hmd.parse_hmd_1x1(Path(args.exposures).read_text(), "exposures")
    deaths_placeholder = hmd.HmdGrid(
        "deaths",
        exposures.ages,
        exposures.years,
        np.zeros_like(exposures.female),
        np.zeros_like(exposures.male),
        np.zeros_like(exposures.total),
        exposures.open_age,
    )
    table, report = hmd.clip_to_space(deaths_placeholder, exposures, space, not args.no_pool_top_age)
    bucketing = AgeBucketing.from_spec(args.buckets, space.age_min, space.age_max)
    if bucketing.n_buckets != cod.n_buckets:
        raise DataError(
            f"bucket spec has {bucketing.n_buckets} buckets, cause table has {cod.n_buckets}"
        )
    if cod.year_min < space.year_min or cod.year_max > space.year_max:
        raise DataError(
            f"cause table years {cod.year_min}..{cod.year_max} are not covered by "
            f"the fitted rates ({space.year_min}..{space.year_max})"
        )
    condensed = aggregate_rates(q_full, table, bucketing)
    sl = slice(cod.year_min - space.year_min, cod.year_max - space.year_min + 1)
    qtilde = BucketedRates(
        bucketing, cod.year_min, cod.year_max, condensed.rate[:, :, sl], condensed.exposure[:, :, sl]
    )
    theta0 = codboost.init_theta(
        cod.n_causes, cod.n_buckets, cod.n_years, mode=args.theta_init, cod=cod
    )
    working = codboost.make_cod_working_data(cod, qtilde, theta0)
    cfg = TreeConfig(cp=args.cp, min_bucket=args.min_bucket, max_depth=args.max_depth)
    raw, norm, tree = codboost.estimate_theta_tree(working, theta0, cfg)
    residuals = codboost.pearson_residuals(cod, raw)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "theta.csv", out / "residuals.csv", out / "tree.txt"]
    (out / "theta.csv").write_text(
        codboost.theta_to_csv(cod, raw, norm, smooth_window=args.smooth_window)
    )
    (out / "residuals.csv").write_text(codboost.residuals_to_csv(cod, residuals))
    (out / "tree.txt").write_text(tree.to_text())
    if args.svg:
        years = np.arange(cod.year_min, cod.year_max + 1)
        for gi, g in enumerate(GENDERS):
            theta_panels = []
            resid_panels = []
            for k, cause in enumerate(cod.causes):
                theta_panels.append(
                    {
                        "title": f"{cause} ({g})",
                        "x": years,
                        "series": [
                            (bucketing.label(b), raw.values[gi, b, :, k])
                            for b in range(cod.n_buckets)
                        ],
                    }
                )
                dots = [
                    (years[ti], residuals.values[gi, b, ti, k])
                    for b in range(cod.n_buckets)
                    for ti in range(cod.n_years)
                ]
                resid_panels.append({"title": f"{cause} ({g})", "x": years, "dots": dots})
            p1 = out / f"theta_{g}.svg"
            p1.write_text(svgplot.panels_svg(theta_panels))
            p2 = out / f"residuals_{g}.svg"
            p2.write_text(svgplot.panels_svg(resid_panels))
            outputs.extend([p1, p2])
    missing_note = (
        "all-cause totals for residuals use the sum over available causes; "
        "years with missing cause data use the partial sum"
    )
    write_manifest(
        out,
        "cod",
        {
            "buckets": args.buckets,
            "causes": list(causes),
            "cp": cfg.cp,
            "min_bucket": cfg.min_bucket,
            "max_depth": cfg.max_depth,
            "theta_init": args.theta_init,
            "theta_init_value": (
                1.0 / cod.n_causes if args.theta_init == "uniform" else "empirical"
            ),
            "smooth_window": args.smooth_window,
            "pool_top_age": not args.no_pool_top_age,
            "threads": _env_threads(),
        },
        [args.cod, args.qfit, args.exposures],
        outputs,
        report.warnings + [missing_note],
        extra={
            "dropped_cells": [list(c) for c in working.dropped],
            "n_splits": tree.n_splits,
        },
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = load_sim_spec(args.spec)
    table = sample_deaths(spec)
    space = spec.q.space

    def grid(values) -> hmd.HmdGrid:
        female = values[0].astype(np.float64)
        male = values[1].astype(np.float64)
        return hmd.HmdGrid(
            kind="deaths" if values.dtype.kind in "iu" else "exposures",
            ages=space.ages(),
            years=space.years(),
            female=female,
            male=male,
            total=female + male,
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "deaths.txt", out / "exposures.txt"]
    (out / "deaths.txt").write_text(hmd.write_hmd_1x1(grid(table.deaths)))
    (out / "exposures.txt").write_text(hmd.write_hmd_1x1(grid(table.exposure)))
    if spec.theta is not None:
        cod_table, _ = sample_cause_deaths(spec)
        (out / "cod.csv").write_text(hmd.write_cod_csv(cod_table))
        outputs.append(out / "cod.csv")
    write_manifest(
        out,
        "simulate",
        {"seed": spec.seed, "threads": _env_threads()},
        [args.spec] if Path(args.spec).exists() else [],
        outputs,
        [],
    )
    return EXIT_OK


def cmd_check(args) -> int:
    text = Path(args.params).read_text()
    if args.kind == "lc":
        fits = leecarter.params_from_csv(text)
        rows = [("beta1 sum - 1", lambda p: p.beta1.sum() - 1.0), ("kappa sum", lambda p: p.kappa.sum())]
    else:
        fits = renshawhaberman.rh_params_from_csv(text)

        def gamma_sum(p):
            ages = np.arange(p.age_min, p.age_min + p.n_ages)
            years = np.arange(p.year_min, p.year_min + p.n_years)
            ci = (years[None, :] - ages[:, None]) - p.cohort_min
            mult = np.bincount(ci.ravel(), minlength=p.n_cohorts)
            return float((mult * p.gamma).sum())

        rows = [
            ("beta1 sum - 1", lambda p: p.beta1.sum() - 1.0),
            ("beta2 sum - 1", lambda p: p.beta2.sum() - 1.0),
            ("kappa sum", lambda p: p.kappa.sum()),
            ("grid-weighted gamma sum", gamma_sum),
        ]
    ok = True
    for g, p in sorted(fits.items()):
        for name, fn in rows:
            value = float(fn(p))
            status = "ok" if abs(value) <= args.tol else "FAIL"
            ok &= status == "ok"
            print(f"{g} {name}: {value:.3e} [{status}]")
    return EXIT_OK if ok else EXIT_DATA


# config keys that may supply defaults for same-named flags (dashes allowed)
_CONFIG_KEYS = {
    "cp": float,
    "min_bucket": int,
    "max_depth": int,
    "white_band": float,
    "tol": float,
    "max_iter": int,
    "rate_floor": float,
    "buckets": str,
    "causes": str,
    "theta_init": str,
    "smooth_window": int,
    "tag": str,
}


def _load_config_defaults(path: str) -> dict:
    defaults = {}
    for ln_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {ln_no}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in _CONFIG_KEYS:
            raise DataError(f"config line {ln_no}: unknown key {key!r}")
        try:
            defaults[dest] = _CONFIG_KEYS[dest](value)
        except ValueError:
            raise DataError(f"config line {ln_no}: bad value for {key!r}: {value!r}") from None
    return defaults


def build_parser(config_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mortboost", description=__doc__)
    parser.add_argument("--config", help="key = value file supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a mortality model by Poisson maximum likelihood")
    fit.add_argument("model", choices=["lc", "rh"])
    fit.add_argument("--deaths", required=True)
    fit.add_argument("--exposures", required=True)
    fit.add_argument("--ages", required=True, help="age range LO:HI")
    fit.add_argument("--years", required=True, help="year range LO:HI")
    fit.add_argument("--out", required=True)
    fit.add_argument("--max-iter", type=int, default=None)
    fit.add_argument("--tol", type=float, default=None, help="relative deviance-change stop (default 1e-10 for lc, 1e-8 for rh)")
    fit.add_argument("--rate-floor", type=float, default=1e-12)
    fit.add_argument("--warm-start", help="params.csv of an lc fit (rh only)")
    fit.add_argument("--no-pool-top-age", action="store_true")
    fit.set_defaults(func=cmd_fit)

    back = sub.add_parser("backtest", help="one-step tree boosting back-test of fitted rates")
    back.add_argument("--qfit", required=True)
    back.add_argument("--deaths", required=True)
    back.add_argument("--exposures", required=True)
    back.add_argument("--out", required=True)
    back.add_argument("--cp", type=float, default=2e-3)
    back.add_argument("--min-bucket", type=int, default=10)
    back.add_argument("--max-depth", type=int, default=30)
    back.add_argument("--white-band", type=float, default=0.05)
    back.add_argument("--tag", default="external", help="initial-model label for outputs")
    back.add_argument("--years-to-plot", help="comma-separated years for the rates chart")
    back.add_argument("--svg", action="store_true")
    back.add_argument("--no-pool-top-age", action="store_true")
    back.set_defaults(func=cmd_backtest)

    cod = sub.add_parser("cod", help="cause-of-death probabilities and residuals")
    cod.add_argument("--cod", required=True)
    cod.add_argument("--qfit", required=True)
    cod.add_argument("--exposures", required=True)
    cod.add_argument("--out", required=True)
    cod.add_argument("--buckets", default=DEFAULT_BUCKETS)
    cod.add_argument(
        "--causes",
        help="cause registry: a count (generic labels) or pipe-separated labels; "
        "default is the built-in 12-cause registry",
    )
    cod.add_argument("--cp", type=float, default=2e-3)
    cod.add_argument("--min-bucket", type=int, default=10)
    cod.add_argument("--max-depth", type=int, default=30)
    cod.add_argument("--theta-init", choices=["uniform", "empirical"], default="uniform")
    cod.add_argument("--smooth-window", type=int, default=None)
    cod.add_argument("--svg", action="store_true")
    cod.add_argument("--no-pool-top-age", action="store_true")
    cod.set_defaults(func=cmd_cod)

    sim = sub.add_parser("simulate", help="sample synthetic data in the ingest formats")
    sim.add_argument("--spec", required=True, help="key = value simulation spec file")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    check = sub.add_parser("check", help="verify identifiability constraints of a params.csv")
    check.add_argument("--params", required=True)
    check.add_argument("--kind", choices=["lc", "rh"], required=True)
    check.add_argument("--tol", type=float, default=1e-10)
    check.set_defaults(func=cmd_check)

    if config_defaults:
        for sp in (fit, back, cod, sim, check):
            applicable = {
                k: v for k, v in config_defaults.items()
                if any(a.dest == k for a in sp._actions)
            }
            sp.set_defaults(**applicable)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        config_defaults = None
        probe = argparse.ArgumentParser(add_help=False)
        probe.add_argument("--config")
        known, _ = probe.parse_known_args(argv)
        if known.config:
            config_defaults = _load_config_defaults(known.config)
        parser = build_parser(config_defaults)
        args = parser.parse_args(argv)
        return args.func(args)
    except (hmd.ParseError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
