# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Semantics mirror :mod:`mibench._pykernels` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

cdef double TAU = 1e-12
cdef Py_ssize_t CHUNK_BITS = 16


def signflip_count(const double[::1] d, double threshold):
    """Count sign patterns s in {-1,+1}^n with sum(s * d) >= threshold.

    Bit i of the pattern index set means +d[i].  Sums over the low bits are
    built by doubling, then each high pattern adds its own sequential sum.
    """
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t low = n if n < CHUNK_BITS else CHUNK_BITS
    cdef Py_ssize_t size = 1, k, m
    cdef long long hi, count = 0
    cdef double hi_sum, v
    low_arr = np.zeros(1 << low, dtype=np.float64)
    cdef double[::1] low_sums = low_arr
    for k in range(low):
        v = d[k]
        for m in range(size):
            low_sums[m + size] = low_sums[m] + v
            low_sums[m] = low_sums[m] - v
        size *= 2
    for hi in range(1LL << (n - low)):
        hi_sum = 0.0
        for k in range(n - low):
            if (hi >> k) & 1:
                hi_sum = hi_sum + d[low + k]
            else:
                hi_sum = hi_sum - d[low + k]
        for m in range(size):
            if low_sums[m] + hi_sum >= threshold:
                count += 1
    return count


def signed_rank_counts(const long long[::1] ranks2):
    """Number of sign assignments giving each value of twice the positive rank sum."""
    cdef Py_ssize_t n = ranks2.shape[0]
    cdef long long total = 0
    cdef Py_ssize_t i, v
    cdef long long r
    for i in range(n):
        total += ranks2[i]
    counts_arr = np.zeros(total + 1, dtype=np.int64)
    cdef long long[::1] counts = counts_arr
    counts[0] = 1
    cdef long long reach = 0
    for i in range(n):
        r = ranks2[i]
        reach += r
        # descending so each rank is used at most once
        for v in range(reach, r - 1, -1):
            counts[v] += counts[v - r]
    return counts_arr


def smo_solve(const double[:, ::1] Q, const double[::1] y, double c,
              double[::1] alpha, double[::1] G, double eps, long long max_iter):
    """Two-variable decomposition on the SVM dual, updating alpha and G in place.

    Returns (iterations, converged).
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t t, i, j
    cdef long long it = 0
    cdef double gmax, gmax2, grad_diff, quad_coef, obj_diff, obj_min
    cdef double delta, diff, total, old_i, old_j, dai, daj
    while it < max_iter:
        gmax = -INFINITY
        gmax2 = -INFINITY
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < c and -G[t] > gmax:
                    gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] > gmax:
                    gmax = G[t]
                    i = t
        if i < 0:
            return it, True
        j = -1
        obj_min = INFINITY
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    if G[t] > gmax2:
                        gmax2 = G[t]
                    grad_diff = gmax + G[t]
                    if grad_diff > 0:
                        quad_coef = Q[i, i] + Q[t, t] - 2.0 * (y[i] * Q[i, t])
                        if quad_coef <= 0:
                            quad_coef = TAU
                        obj_diff = -(grad_diff * grad_diff) / quad_coef
                        if obj_diff < obj_min:
                            obj_min = obj_diff
                            j = t
            else:
                if alpha[t] < c:
                    if -G[t] > gmax2:
                        gmax2 = -G[t]
                    grad_diff = gmax - G[t]
                    if grad_diff > 0:
                        quad_coef = Q[i, i] + Q[t, t] + 2.0 * (y[i] * Q[i, t])
                        if quad_coef <= 0:
                            quad_coef = TAU
                        obj_diff = -(grad_diff * grad_diff) / quad_coef
                        if obj_diff < obj_min:
                            obj_min = obj_diff
                            j = t
        if gmax + gmax2 < eps or j < 0:
            return it, True

        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad_coef = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if quad_coef <= 0:
                quad_coef = TAU
            delta = (-G[i] - G[j]) / quad_coef
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = c - diff
            else:
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = c + diff
        else:
            quad_coef = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if quad_coef <= 0:
                quad_coef = TAU
            delta = (G[i] - G[j]) / quad_coef
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = total - c
            else:
                if alpha[j] < 0:
                    alpha[j] = 0
                    alpha[i] = total
            if total > c:
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = total - c
            else:
                if alpha[i] < 0:
                    alpha[i] = 0
                    alpha[j] = total
        dai = alpha[i] - old_i
        daj = alpha[j] - old_j
        for t in range(n):
            G[t] += Q[i, t] * dai + Q[j, t] * daj
        it += 1
    return it, False
