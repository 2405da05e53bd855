"""Smallest eigenpairs of implicitly defined operators.

Both solvers wrap ARPACK (implicitly restarted Lanczos / Arnoldi) through
``scipy.sparse.linalg``; the operator is only ever applied, never formed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs, eigsh

MAX_RESTARTS = 3


@dataclass
class SymEigenPairs:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # orthonormal columns

    @property
    def k(self):
        return self.values.size

    def head(self, k):
        return SymEigenPairs(self.values[:k], self.vectors[:, :k])


@dataclass
class BiEigenPairs:
    values: np.ndarray  # ascending by real part
    right: np.ndarray
    left: np.ndarray  # left.T @ right = I

    @property
    def k(self):
        return self.values.size

    def head(self, k):
        return BiEigenPairs(self.values[:k], self.right[:, :k], self.left[:, :k])


def _operator(X, n):
    if isinstance(X, LinearOperator):
        return X
    if callable(X):
        return LinearOperator((n, n), matvec=X, dtype=np.float64)
    return LinearOperator((n, n), matvec=lambda v: X @ v, dtype=np.float64)


def _ncv(n, k):
    return min(n, max(2 * k + 8, 20))


def _start(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def _dense_fallback(op, n):
    # column by column: callables are written for 1-D vectors
    return np.column_stack([op.matvec(e) for e in np.eye(n)])


def smallest_eigs_sym(X, n, k, tol=1e-2, seed=0, maxiter=None) -> SymEigenPairs:
    """``k`` smallest (algebraic) eigenpairs of a symmetric operator of size ``n``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, n)
    op = _operator(X, n)
    if k >= n - 1 or n <= 32:
        w, V = np.linalg.eigh(_dense_fallback(op, n))
        return SymEigenPairs(w[:k], V[:, :k])
    maxiter = maxiter or 50 * n
    for attempt in range(MAX_RESTARTS + 1):
        try:
            w, V = eigsh(op, k=k, which="SA", tol=tol, ncv=_ncv(n, k), maxiter=maxiter,
                         v0=_start(n, seed + attempt))
            break
        except ArpackNoConvergence as exc:
            if attempt == MAX_RESTARTS:
                if exc.eigenvalues.size == 0:
                    raise
                warnings.warn(f"Lanczos converged {exc.eigenvalues.size} of {k} pairs", RuntimeWarning)
                w, V = exc.eigenvalues, exc.eigenvectors
    order = np.argsort(w)
    w, V = w[order], V[:, order]
    V, _ = np.linalg.qr(V)  # restore orthonormality lost to the loose tolerance
    return SymEigenPairs(w, V * np.sign(V[np.argmax(np.abs(V), axis=0), range(V.shape[1])]))


def _arnoldi_smallest(op, n, k, tol, seed, maxiter):
    if k >= n - 1 or n <= 32:
        w, U = np.linalg.eig(_dense_fallback(op, n))
    else:
        for attempt in range(MAX_RESTARTS + 1):
            try:
                w, U = eigs(op, k=k, which="SR", tol=tol, ncv=_ncv(n, k), maxiter=maxiter,
                            v0=_start(n, seed + attempt))
                break
            except ArpackNoConvergence as exc:
                if attempt == MAX_RESTARTS:
                    if exc.eigenvalues.size == 0:
                        raise
                    warnings.warn(f"Arnoldi converged {exc.eigenvalues.size} of {k} pairs", RuntimeWarning)
                    w, U = exc.eigenvalues, exc.eigenvectors
    order = np.lexsort((w.imag, w.real))[:k]
    return w[order], U[:, order]


def smallest_eigs_nonsym(X, Xt, n, k, tol=1e-2, seed=0, maxiter=None, cond_max=1e8) -> BiEigenPairs:
    """Right and left eigenpairs of the ``k`` eigenvalues of smallest real part, biorthonormalised.

    ``Xt`` applies the transpose.  The model operators are similar to SPD
    ones, so eigenvalues are expected real; tiny imaginary parts are dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, n)
    maxiter = maxiter or 50 * n
    wr, U = _arnoldi_smallest(_operator(X, n), n, k, tol, seed, maxiter)
    wl, V = _arnoldi_smallest(_operator(Xt, n), n, k, tol, seed + 17, maxiter)
    if np.abs(wr.imag).max(initial=0) > 1e-6 * np.abs(wr).max(initial=1):
        warnings.warn("complex Ritz values discarded to their real parts", RuntimeWarning)
    wr, wl = wr.real, wl.real
    U, V = U.real, V.real
    # pair left vectors with right ones by eigenvalue
    used = np.zeros(wl.size, dtype=bool)
    match = np.empty(wr.size, dtype=np.int64)
    for i, lam in enumerate(wr):
        d = np.where(used, np.inf, np.abs(wl - lam))
        match[i] = np.argmin(d)
        used[match[i]] = True
    V = V[:, match]
    while True:
        C = V.T @ U
        if np.linalg.cond(C) <= cond_max or k == 1:
            break
        k -= 1
        warnings.warn(f"ill-conditioned biorthonormalisation; reducing k to {k}", RuntimeWarning)
        wr, U, V = wr[:k], U[:, :k], V[:, :k]
    # V <- V C^{-T} so that V^T U = I
    V = np.linalg.solve(C, V.T).T
    return BiEigenPairs(wr, U, V)
