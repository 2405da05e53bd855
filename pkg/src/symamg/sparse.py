"""Sparse matrix storage and the kernel set everything else composes.

`SparseMatrix` is a CSR container with zero-based indices and sorted,
duplicate-free rows.  `MultiVector` is the SpMM operand: ``n_blocks`` columns
of length ``block_len`` whose flat layout is block after block.
`BlockOperator` is the split ``I_nb (x) inner + outer`` used by the fused
SpMM + SpMV + axpy apply.
"""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import _kernels


class SparseMatrix:
    """Immutable CSR matrix."""

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values", "_scipy")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, check=True):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if check:
            self._validate()
        for a in (self.row_offsets, self.col_indices, self.values):
            a.flags.writeable = False
        self._scipy = None

    def _validate(self):
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if ro[0] != 0 or ro[-1] != ci.shape[0] or ci.shape != self.values.shape:
            raise ValueError("row_offsets inconsistent with stored entries")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing inside a row: every non-row-start step must grow
            steps = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[ro[:-1][np.diff(ro) > 0]] = True
            if np.any(steps[~row_start[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        if np.isnan(self.values).any():
            raise ValueError("NaN stored in sparse matrix")

    # construction -------------------------------------------------------
    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a, keep_zeros=False) -> "SparseMatrix":
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        mask = np.ones_like(a, dtype=bool) if keep_zeros else a != 0
        rows, cols = np.nonzero(mask)
        ptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=a.shape[0]), out=ptr[1:])
        return cls(a.shape[0], a.shape[1], ptr, cols, a[rows, cols])

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def zeros(cls, n_rows, n_cols=None) -> "SparseMatrix":
        n_cols = n_rows if n_cols is None else n_cols
        return cls(n_rows, n_cols, np.zeros(n_rows + 1), np.zeros(0), np.zeros(0))

    # views ---------------------------------------------------------------
    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def to_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            m = sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)
            m.has_sorted_indices = True
            self._scipy = m
        return self._scipy

    def toarray(self):
        return self.to_scipy().toarray()

    def diagonal(self):
        return self.to_scipy().diagonal()

    def row_nnz(self):
        return np.diff(self.row_offsets)

    def transpose(self) -> "SparseMatrix":
        return transpose(self)

    @property
    def T(self):
        return transpose(self)

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return spgemm(self, other)
        if isinstance(other, MultiVector):
            return spmm(self, other)
        other = np.asarray(other)
        if other.ndim == 2:
            return spmm(self, other)
        return spmv(self, other)

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


class MultiVector:
    """``n_blocks`` column vectors of length ``block_len``.

    ``data`` is a ``(block_len, n_blocks)`` Fortran-ordered view, so block ``j``
    occupies flat indices ``[j*block_len, (j+1)*block_len)``.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("MultiVector data must be 2-D")
        self.data = np.asfortranarray(data)

    @classmethod
    def from_flat(cls, x, n_blocks) -> "MultiVector":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size % n_blocks:
            raise ValueError(f"cannot split a vector of length {x.size} into {n_blocks} blocks")
        return cls(x.reshape(n_blocks, -1).T)

    @property
    def block_len(self):
        return self.data.shape[0]

    @property
    def n_blocks(self):
        return self.data.shape[1]

    def flat(self):
        return self.data.T.reshape(-1)

    def column(self, j):
        return self.data[:, j]


def _check_vec(A, x):
    if x.shape[0] != A.n_cols:
        raise ValueError(f"dimension mismatch: matrix has {A.n_cols} columns, operand has {x.shape[0]} rows")


def spmv(A: SparseMatrix, x, out=None):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("spmv expects a vector")
    _check_vec(A, x)
    y = np.empty(A.n_rows) if out is None else out
    _kernels.spmv(A.row_offsets, A.col_indices, A.values, x, y)
    return y


def spmm(A: SparseMatrix, X):
    """Sparse times multi-vector.  Each stored value of ``A`` is loaded once per apply."""
    wrap = isinstance(X, MultiVector)
    data = X.data if wrap else np.asarray(X, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("spmm expects a 2-D operand")
    _check_vec(A, data)
    Y = np.empty((A.n_rows, data.shape[1]), order="F" if wrap else "C")
    _kernels.spmm(A.row_offsets, A.col_indices, A.values, data, Y)
    return MultiVector(Y) if wrap else Y


def spmm_counted(A: SparseMatrix, X: MultiVector):
    """Instrumented SpMM.  Returns ``(result, number of matrix-value loads)``."""
    _check_vec(A, X.data)
    counter = np.zeros(1, dtype=np.int64)
    Y = np.empty((A.n_rows, X.n_blocks), order="F")
    _kernels.spmm_counted(A.row_offsets, A.col_indices, A.values, X.data, Y, counter)
    return MultiVector(Y), int(counter[0])


def spmv_counted(A: SparseMatrix, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    _check_vec(A, x)
    counter = np.zeros(1, dtype=np.int64)
    y = np.empty(A.n_rows)
    _kernels.spmv_counted(A.row_offsets, A.col_indices, A.values, x, y, counter)
    return y, int(counter[0])


def transpose(A: SparseMatrix) -> SparseMatrix:
    rows = np.repeat(np.arange(A.n_rows, dtype=np.int64), A.row_nnz())
    order = np.argsort(A.col_indices, kind="stable")  # rows stay ascending within each column
    ptr = np.zeros(A.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(A.col_indices, minlength=A.n_cols), out=ptr[1:])
    return SparseMatrix(A.n_cols, A.n_rows, ptr, rows[order], A.values[order], check=False)


def spgemm(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    """Exact sparse product with a Gustavson dense accumulator (no dropping)."""
    if A.n_cols != B.n_rows:
        raise ValueError(f"dimension mismatch: {A.shape} @ {B.shape}")
    ptr = _kernels.spgemm_symbolic(A.row_offsets, A.col_indices, B.row_offsets, B.col_indices, B.n_cols)
    idx, val = _kernels.spgemm_numeric(A.row_offsets, A.col_indices, A.values,
                                       B.row_offsets, B.col_indices, B.values, ptr, B.n_cols)
    return SparseMatrix(A.n_rows, B.n_cols, ptr, idx, val, check=False)


def triple_product_rap(P: SparseMatrix, A: SparseMatrix, symmetrize=False) -> SparseMatrix:
    """Galerkin product ``P^T A P``.

    With ``symmetrize=True`` (for symmetric ``A``) the result is averaged with
    its transpose so it is symmetric to the last bit; the pattern is already
    symmetric by construction.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    if A.n_cols != P.n_rows:
        raise ValueError(f"dimension mismatch: A is {A.shape}, P is {P.shape}")
    C = spgemm(transpose(P), spgemm(A, P))
    if symmetrize:
        Ct = transpose(C)
        C = SparseMatrix(C.n_rows, C.n_cols, C.row_offsets, C.col_indices,
                         0.5 * (C.values + Ct.values), check=False)
    return C


class BlockOperator:
    """``H = I_{n_blocks} (x) inner + outer`` with disjoint supports."""

    def __init__(self, n_blocks, inner: SparseMatrix, outer: SparseMatrix):
        if inner.n_rows != inner.n_cols:
            raise ValueError("inner block must be square")
        if outer.n_rows != n_blocks * inner.n_rows or outer.n_cols != outer.n_rows:
            raise ValueError("outer part must be n x n with n = n_blocks * block_len")
        self.n_blocks = int(n_blocks)
        self.inner = inner
        self.outer = outer

    @property
    def shape(self):
        return self.outer.shape

    @property
    def block_len(self):
        return self.inner.n_rows

    @classmethod
    def split(cls, H: SparseMatrix, n_blocks) -> "BlockOperator":
        """Split ``H`` so ``inner`` holds every diagonal-block entry shared by all blocks."""
        n = H.n_rows
        if n % n_blocks:
            raise ValueError(f"size {n} not divisible into {n_blocks} blocks")
        L = n // n_blocks
        Hs = H.to_scipy().tocoo()
        r, c, v = Hs.row.astype(np.int64), Hs.col.astype(np.int64), Hs.data
        on_diag = (r // L) == (c // L)
        key = (r % L) * L + (c % L)
        # an entry belongs to inner iff every block stores the same value there
        kd, vd = key[on_diag], v[on_diag]
        uniq, inv, counts = np.unique(kd, return_inverse=True, return_counts=True)
        first = np.full(uniq.size, np.nan)
        first[inv[::-1]] = vd[::-1]
        agree = np.ones(uniq.size, dtype=bool)
        np.logical_and.at(agree, inv, vd == first[inv])
        shared = agree & (counts == n_blocks)
        keep_inner = np.zeros(r.size, dtype=bool)
        keep_inner[np.flatnonzero(on_diag)] = shared[inv]
        inner = SparseMatrix.from_scipy(sp.csr_matrix(
            (first[shared], (uniq[shared] // L, uniq[shared] % L)), shape=(L, L)))
        outer = SparseMatrix.from_scipy(sp.csr_matrix(
            (v[~keep_inner], (r[~keep_inner], c[~keep_inner])), shape=(n, n)))
        return cls(n_blocks, inner, outer)

    def materialize(self) -> SparseMatrix:
        full = sp.kron(sp.identity(self.n_blocks, format="csr"), self.inner.to_scipy(), format="csr")
        return SparseMatrix.from_scipy(full + self.outer.to_scipy())

    def apply(self, x):
        return fused_block_apply(self, x)

    def __matmul__(self, x):
        return fused_block_apply(self, x)


def fused_block_apply(H: BlockOperator, x):
    """``(I (x) inner) x + outer x``: one SpMM, one SpMV-accumulate."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != H.outer.n_rows:
        raise ValueError(f"dimension mismatch: operator is {H.shape}, vector has length {x.shape[0]}")
    X = x.reshape(H.n_blocks, H.block_len).T
    Y = np.empty((H.n_blocks, H.block_len)).T  # Fortran view; flat memory = block-major result
    _kernels.spmm(H.inner.row_offsets, H.inner.col_indices, H.inner.values, X, Y)
    y = Y.T.reshape(-1)
    _kernels.spmv_add(H.outer.row_offsets, H.outer.col_indices, H.outer.values, x, y)
    return y


def read_matrix_market(path) -> SparseMatrix:
    return SparseMatrix.from_scipy(scipy.io.mmread(str(path)))


def write_matrix_market(path, A: SparseMatrix, symmetric=False):
    scipy.io.mmwrite(str(path), A.to_scipy(), field="real",
                     symmetry="symmetric" if symmetric else "general")


def set_threads(n):
    """Set kernel thread count (clamped to what numba was started with)."""
    import numba
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
