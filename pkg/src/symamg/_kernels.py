"""Low-level CSR kernels compiled with numba.

Every kernel reduces a row in a fixed (stored column) order, so results are
bitwise reproducible regardless of the thread count.
"""
import numba
import numpy as np
from numba import prange

_opts = dict(cache=True, nogil=True)


@numba.njit(parallel=True, **_opts)
def spmv(indptr, indices, data, x, y):
    for i in prange(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] = acc


@numba.njit(parallel=True, **_opts)
def spmv_add(indptr, indices, data, x, y):
    # y += A x
    for i in prange(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] += acc


@numba.njit(parallel=True, **_opts)
def spmm(indptr, indices, data, X, Y):
    m = X.shape[1]
    for i in prange(indptr.shape[0] - 1):
        for c in range(m):
            Y[i, c] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            j = indices[p]
            for c in range(m):
                Y[i, c] += a * X[j, c]


@numba.njit(**_opts)
def spmm_counted(indptr, indices, data, X, Y, counter):
    # Instrumented serial twin of `spmm`: counter[0] += one per value load.
    m = X.shape[1]
    for i in range(indptr.shape[0] - 1):
        for c in range(m):
            Y[i, c] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            counter[0] += 1
            j = indices[p]
            for c in range(m):
                Y[i, c] += a * X[j, c]


@numba.njit(**_opts)
def spmv_counted(indptr, indices, data, x, y, counter):
    for i in range(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            counter[0] += 1
            acc += data[p] * x[indices[p]]
        y[i] = acc


@numba.njit(**_opts)
def spgemm_symbolic(a_ptr, a_idx, b_ptr, b_idx, n_cols):
    n = a_ptr.shape[0] - 1
    c_ptr = np.zeros(n + 1, dtype=np.int64)
    mark = np.full(n_cols, -1, dtype=np.int64)
    for i in range(n):
        cnt = 0
        for p in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[p]
            for q in range(b_ptr[k], b_ptr[k + 1]):
                j = b_idx[q]
                if mark[j] != i:
                    mark[j] = i
                    cnt += 1
        c_ptr[i + 1] = c_ptr[i] + cnt
    return c_ptr


@numba.njit(**_opts)
def spgemm_numeric(a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, c_ptr, n_cols):
    # Gustavson: dense accumulator row of length n_cols.
    n = a_ptr.shape[0] - 1
    nnz = c_ptr[n]
    c_idx = np.empty(nnz, dtype=np.int64)
    c_val = np.empty(nnz, dtype=np.float64)
    acc = np.zeros(n_cols, dtype=np.float64)
    mark = np.full(n_cols, -1, dtype=np.int64)
    for i in range(n):
        start = c_ptr[i]
        pos = start
        for p in range(a_ptr[i], a_ptr[i + 1]):
            k = a_idx[p]
            av = a_val[p]
            for q in range(b_ptr[k], b_ptr[k + 1]):
                j = b_idx[q]
                if mark[j] != i:
                    mark[j] = i
                    c_idx[pos] = j
                    pos += 1
                    acc[j] = av * b_val[q]
                else:
                    acc[j] += av * b_val[q]
        row = np.sort(c_idx[start:pos])
        for t in range(pos - start):
            j = row[t]
            c_idx[start + t] = j
            c_val[start + t] = acc[j]
    return c_idx, c_val
