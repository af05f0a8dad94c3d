"""Benchmark: compiled vs pure-python split scan on a realistic workload.

Grows the back-test tree on a Swiss-sized synthetic grid (27,244 working
points, gender/age/year/cohort features) with each kernel backend and prints
the timings plus a consistency check. Run:

    python3 benchmarks/bench_split_kernel.py
"""

import sys
import time

import numpy as np

from mortboost import FeatureSpace, RateSurface, SimSpec, TreeConfig, kernels, sample_deaths
from mortboost import _scan_py
from mortboost.backtest import make_working_data
from mortboost.leecarter import fit_lc_both, rate_surface
from mortboost.tree import grow_tree

try:
    from mortboost import _scan_cy
except ImportError:
    _scan_cy = None


def swiss_sized_working_data():
    space = FeatureSpace(0, 97, 1876, 2014)
    ages, years = space.ages(), space.years()
    log_q = np.log(
        np.clip(3e-4 * np.exp(0.088 * ages[:, None]) * np.exp(-0.008 * (years[None, :] - 1876)), 1e-6, 0.7)
    )
    rng = np.random.default_rng(12)
    cohort_ripple = rng.normal(0, 0.08, space.n_cohorts)
    ci = space.cohort_grid() - space.cohort_min
    log_q = log_q + cohort_ripple[ci]
    q = np.clip(np.exp(np.stack([log_q, log_q + 0.15])), 0, 1)
    table = sample_deaths(
        SimSpec(q=RateSurface(space, q), exposure=np.full(space.shape, 3e4), seed=5)
    )
    fits = fit_lc_both(table)
    data, _ = make_working_data(rate_surface(space, fits), table)
    return data


def time_backend(data, cfg, best_cut, repeats):
    kernels.best_cut = best_cut
    times = []
    tree = None
    for _ in range(repeats):
        start = time.perf_counter()
        tree = grow_tree(data, cfg)
        times.append(time.perf_counter() - start)
    return min(times), tree


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    data = swiss_sized_working_data()
    cfg = TreeConfig(cp=5e-4, min_bucket=10, max_depth=30)
    print(f"working points: {data.n}, cp={cfg.cp}, repeats={repeats}")

    original = kernels.best_cut
    try:
        t_py, tree_py = time_backend(data, cfg, _scan_py.best_cut, repeats)
        print(f"python kernel: {t_py * 1e3:8.1f} ms/grow  ({tree_py.n_splits} splits)")
        if _scan_cy is None:
            print("cython kernel: not built (pip install -e . builds it)")
            return
        t_cy, tree_cy = time_backend(data, cfg, _scan_cy.best_cut, repeats)
        print(f"cython kernel: {t_cy * 1e3:8.1f} ms/grow  ({tree_cy.n_splits} splits)")
        print(f"speedup: {t_py / t_cy:.2f}x")
        same = tree_py.to_text() == tree_cy.to_text()
        print(f"identical trees: {same}")
        if not same:
            mu_gap = np.max(
                np.abs(tree_py.predict(data.ordered) - tree_cy.predict(data.ordered))
            )
            print(f"max mu difference: {mu_gap:.3e}")
    finally:
        kernels.best_cut = original


if __name__ == "__main__":
    main()
