# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Semantics mirror svyconform._kernels._pure exactly: accumulations are
sequential left-to-right and comparisons match np.searchsorted, so both
backends return identical results on identical inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

CUM_RTOL = 1e-12
cdef double _CUM_RTOL = 1e-12


cdef Py_ssize_t _lower_bound(const double[::1] arr, double target) noexcept nogil:
    # First index with arr[i] >= target (searchsorted side="left").
    cdef Py_ssize_t lo = 0, hi = arr.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < target:
            lo = mid + 1
        else:
            hi = mid
    return lo


def padded_quantile_indices(cum_weights, total_weight, tail_weights, beta):
    """See svyconform._kernels._pure.padded_quantile_indices."""
    cdef const double[::1] cum = np.ascontiguousarray(cum_weights, dtype=np.float64)
    cdef const double[::1] tails = np.ascontiguousarray(tail_weights, dtype=np.float64)
    cdef double total = total_weight
    cdef double b = beta
    cdef Py_ssize_t m = tails.shape[0], i
    out_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef double target
    with nogil:
        for i in range(m):
            target = b * (total + tails[i]) * (1.0 - _CUM_RTOL)
            out[i] = _lower_bound(cum, target)
    return out_arr


def ppswor_indices(sizes, n_draw, uniforms):
    """See svyconform._kernels._pure.ppswor_indices."""
    cdef double[::1] remaining = np.array(sizes, dtype=np.float64, copy=True)
    cdef const double[::1] u_arr = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = n_draw, size_n = remaining.shape[0], i, j
    out_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef double total, u, acc
    with nogil:
        for i in range(n):
            total = 0.0
            for j in range(size_n):
                total += remaining[j]
            u = u_arr[i] * total
            acc = 0.0
            j = 0
            while j < size_n:
                acc += remaining[j]
                if acc > u:
                    break
                j += 1
            if j >= size_n:
                j = size_n - 1
            while remaining[j] == 0.0 and j > 0:
                j -= 1
            out[i] = j
            remaining[j] = 0.0
    return out_arr
