"""Numpy fallback for the ordered-feature split scan.

Mirrors mortboost._scan_cy: sequential prefix sums over points sorted by the
candidate feature, deviance reductions compared at float32 so that tie-breaks
are stable across backends.
"""

from __future__ import annotations

import numpy as np


def best_cut(values, slogs, deaths, vols, min_bucket):
    """Best midpoint cut of a block sorted ascending by `values`.

    slogs holds the per-point terms D*log(D/d) (0 where D = 0). Returns
    (cut_index, reduction) where the cut separates index <= cut_index from
    the rest, or (-1, 0.0) when no admissible cut exists. The first cut
    attaining the float32 maximum wins, i.e. the smallest threshold.
    """
    n = values.shape[0]
    if n < 2 or n < 2 * min_bucket:
        return (-1, 0.0)
    cs = np.cumsum(slogs)
    cD = np.cumsum(deaths)
    cd = np.cumsum(vols)
    s_tot, d_tot, v_tot = cs[-1], cD[-1], cd[-1]
    parent = 2.0 * (s_tot - (d_tot * np.log(d_tot / v_tot) if d_tot > 0 else 0.0))

    sL, DL, dL = cs[:-1], cD[:-1], cd[:-1]
    sR, DR, dR = s_tot - sL, d_tot - DL, v_tot - dL
    with np.errstate(divide="ignore", invalid="ignore"):
        dev_left = 2.0 * (sL - np.where(DL > 0, DL * np.log(DL / dL), 0.0))
        dev_right = 2.0 * (sR - np.where(DR > 0, DR * np.log(DR / dR), 0.0))
    red = parent - dev_left - dev_right

    left_n = np.arange(1, n)
    ok = (left_n >= min_bucket) & (n - left_n >= min_bucket) & (values[:-1] != values[1:])
    if not ok.any():
        return (-1, 0.0)
    red32 = np.where(ok, red, -np.inf).astype(np.float32)
    best = int(np.argmax(red32))
    if not ok[best]:
        return (-1, 0.0)
    return (best, float(red[best]))
