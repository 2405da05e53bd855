"""Static-pattern factored sparse approximate inverse, ``G^T G ~ A^{-1}``."""
from __future__ import annotations

import numba
import numpy as np

from . import _kernels  # noqa: F401  (shares the numba cache directory)
from .krylov import Preconditioner
from .sparse import MultiVector, SparseMatrix, spgemm, spmm, spmv, transpose


@numba.njit(cache=True)
def _fsai_rows(a_ptr, a_idx, a_val, p_ptr, p_idx):
    n = p_ptr.shape[0] - 1
    g_val = np.empty(p_idx.shape[0])
    bad = -1
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        lo, hi = p_ptr[i], p_ptr[i + 1]
        m = hi - lo
        for t in range(m):
            pos[p_idx[lo + t]] = t
        local = np.zeros((m, m))
        for t in range(m):
            r = p_idx[lo + t]
            for q in range(a_ptr[r], a_ptr[r + 1]):
                c = pos[a_idx[q]]
                if c >= 0:
                    local[t, c] = a_val[q]
        rhs = np.zeros(m)
        rhs[m - 1] = 1.0
        ok = True
        if m == 1:
            g = rhs / local[0, 0] if local[0, 0] != 0.0 else rhs * np.nan
        else:
            g = np.linalg.solve(local, rhs)
        d = g[m - 1]
        if not (d > 0.0) or not np.all(np.isfinite(g)):
            ok = False
        for t in range(m):
            pos[p_idx[lo + t]] = -1
        if not ok:
            bad = i
            break
        # diag(G A G^T) = g^T A_PP g = g_last before scaling
        g_val[lo:hi] = g / np.sqrt(d)
    return g_val, bad


def lower_pattern(A: SparseMatrix, power=1) -> SparseMatrix:
    """Lower triangle (diagonal included) of the structure of ``A**power``."""
    if power not in (1, 2, 3):
        raise ValueError("pattern_power must be 1, 2 or 3")
    S = SparseMatrix(A.n_rows, A.n_cols, A.row_offsets, A.col_indices, np.ones(A.nnz), check=False)
    P = S
    for _ in range(power - 1):
        P = spgemm(P, S)
    Ps = P.to_scipy().tocoo()
    keep = Ps.col <= Ps.row
    rows, cols = Ps.row[keep], Ps.col[keep]
    # every row must contain its diagonal
    diag = np.arange(A.n_rows)
    rows = np.concatenate([rows, diag])
    cols = np.concatenate([cols, diag])
    key = np.unique(rows.astype(np.int64) * A.n_cols + cols)
    rows, cols = key // A.n_cols, key % A.n_cols
    ptr = np.zeros(A.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=A.n_rows), out=ptr[1:])
    return SparseMatrix(A.n_rows, A.n_cols, ptr, cols, np.ones(cols.size))


class FsaiFactor(Preconditioner):
    """Lower-triangular ``G`` with ``diag(G A G^T) = 1``; applies ``G^T G r``."""

    name = "fsai"
    symmetric = True

    def __init__(self, G: SparseMatrix, pattern_power=1):
        self.G = G
        self.Gt = transpose(G)
        self.pattern_power = pattern_power

    @property
    def nnz(self):
        return self.G.nnz

    def apply(self, r):
        if isinstance(r, MultiVector):
            return MultiVector(spmm(self.Gt, spmm(self.G, r.data)))
        r = np.asarray(r, dtype=np.float64)
        if r.ndim == 2:
            return spmm(self.Gt, spmm(self.G, r))
        return spmv(self.Gt, spmv(self.G, r))


def build_fsai(A: SparseMatrix, pattern_power=1) -> FsaiFactor:
    if A.n_rows != A.n_cols:
        raise ValueError("FSAI needs a square matrix")
    pat = lower_pattern(A, pattern_power)
    try:
        vals, bad = _fsai_rows(A.row_offsets, A.col_indices, A.values, pat.row_offsets, pat.col_indices)
    except Exception as exc:  # numba's LAPACK wrapper raises on exact singularity
        raise np.linalg.LinAlgError(f"FSAI local system is singular: {exc}") from None
    if bad >= 0:
        raise np.linalg.LinAlgError(
            f"FSAI row {bad}: local system is singular or indefinite (A is not SPD on that pattern)")
    G = SparseMatrix(A.n_rows, A.n_cols, pat.row_offsets, pat.col_indices, vals, check=False)
    return FsaiFactor(G, pattern_power)


def apply_fsai(F: FsaiFactor, r):
    return F.apply(r)
