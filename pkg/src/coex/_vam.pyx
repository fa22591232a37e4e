# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernel for the row-penalty Vogel assignment heuristic.

Hot loop of the balanced-transport solver: called twice per training step,
once for selection labels and once for loss-weight assignments.  Must stay
step-for-step identical to ``coex._vam_py.solve_btp_kernel``; the test
suite asserts bit-identical assignments across the two backends.
"""

from libc.math cimport INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef void _recompute_penalties(const double[:, ::1] costs,
                               const cnp.uint8_t[::1] active_col,
                               const cnp.uint8_t[::1] assigned,
                               double[::1] penalty,
                               Py_ssize_t n_active) noexcept nogil:
    cdef Py_ssize_t m = costs.shape[0]
    cdef Py_ssize_t n = costs.shape[1]
    cdef Py_ssize_t j, k
    cdef double lo, lo2, c
    if n_active == 1:
        for j in range(m):
            penalty[j] = 0.0
        return
    for j in range(m):
        if assigned[j]:
            continue
        lo = INFINITY
        lo2 = INFINITY
        for k in range(n):
            if not active_col[k]:
                continue
            c = costs[j, k]
            if c < lo:
                lo2 = lo
                lo = c
            elif c < lo2:
                lo2 = c
        penalty[j] = lo2 - lo


def solve_btp_kernel(const double[:, ::1] costs, demands):
    """Greedy assignment: repeatedly take the unassigned row with the largest
    penalty (ties: smallest row index) and send it to its cheapest active
    column (ties: smallest column index)."""
    cdef Py_ssize_t m = costs.shape[0]
    cdef Py_ssize_t n = costs.shape[1]

    assignment_arr = np.full(m, -1, dtype=np.int64)
    demand_arr = np.asarray(demands, dtype=np.int64).copy()
    active_arr = np.zeros(n, dtype=np.uint8)
    assigned_arr = np.zeros(m, dtype=np.uint8)
    penalty_arr = np.zeros(m, dtype=np.float64)

    cdef cnp.int64_t[::1] assignment = assignment_arr
    cdef cnp.int64_t[::1] demand = demand_arr
    cdef cnp.uint8_t[::1] active_col = active_arr
    cdef cnp.uint8_t[::1] assigned = assigned_arr
    cdef double[::1] penalty = penalty_arr

    cdef Py_ssize_t i, j, k, best_row, best_col, n_active
    cdef double best_pen, cmin

    n_active = 0
    for k in range(n):
        if demand[k] > 0:
            active_col[k] = 1
            n_active += 1

    _recompute_penalties(costs, active_col, assigned, penalty, n_active)

    for i in range(m):
        best_row = -1
        best_pen = -INFINITY
        for j in range(m):
            if not assigned[j] and penalty[j] > best_pen:
                best_pen = penalty[j]
                best_row = j
        best_col = -1
        cmin = INFINITY
        for k in range(n):
            if active_col[k] and costs[best_row, k] < cmin:
                cmin = costs[best_row, k]
                best_col = k
        assignment[best_row] = best_col
        assigned[best_row] = 1
        demand[best_col] -= 1
        if demand[best_col] == 0:
            active_col[best_col] = 0
            n_active -= 1
            if n_active > 0:
                _recompute_penalties(costs, active_col, assigned, penalty, n_active)

    return assignment_arr
