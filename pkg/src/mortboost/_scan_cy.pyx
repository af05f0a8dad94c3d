# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ordered-feature split scan; see _scan_py for the reference semantics."""

from libc.math cimport log, INFINITY


def best_cut(double[::1] values, double[::1] slogs, double[::1] deaths,
             double[::1] vols, Py_ssize_t min_bucket):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t i, best = -1
    cdef double s_tot = 0.0, d_tot = 0.0, v_tot = 0.0
    cdef double sL = 0.0, DL = 0.0, dL = 0.0
    cdef double sR, DR, dR, dev_left, dev_right, red, parent
    cdef double best_red = 0.0
    cdef float best32 = -INFINITY, red32

    if n < 2 or n < 2 * min_bucket:
        return (-1, 0.0)
    for i in range(n):
        s_tot += slogs[i]
        d_tot += deaths[i]
        v_tot += vols[i]
    parent = 2.0 * (s_tot - (d_tot * log(d_tot / v_tot) if d_tot > 0.0 else 0.0))

    for i in range(n - 1):
        sL += slogs[i]
        DL += deaths[i]
        dL += vols[i]
        if i + 1 < min_bucket:
            continue
        if n - 1 - i < min_bucket:
            break
        if values[i] == values[i + 1]:
            continue
        sR = s_tot - sL
        DR = d_tot - DL
        dR = v_tot - dL
        dev_left = 2.0 * (sL - (DL * log(DL / dL) if DL > 0.0 else 0.0))
        dev_right = 2.0 * (sR - (DR * log(DR / dR) if DR > 0.0 else 0.0))
        red = parent - dev_left - dev_right
        red32 = <float> red
        if red32 > best32:
            best32 = red32
            best = i
            best_red = red
    if best < 0:
        return (-1, 0.0)
    return (best, best_red)
