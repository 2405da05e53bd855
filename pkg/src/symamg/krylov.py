"""Preconditioned CG and right-preconditioned GMRES.

Both drivers start from a zero guess, measure the relative 2-norm residual
``||b - A x|| / ||b||`` and only declare convergence after recomputing it from
scratch.  For pure-Neumann systems ``nullspace_projection`` keeps iterates and
residuals mean-free.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import BlockOperator, SparseMatrix, spmv

STATS_CSV_HEADER = ["method", "preconditioner", "n_b", "n", "iterations", "time"]


@dataclass(frozen=True)
class KrylovConfig:
    method: str = "pcg"
    tolerance: float = 1e-8
    max_iterations: int = 2000
    gmres_restart: int | None = None
    nullspace_projection: bool = True

    def __post_init__(self):
        if self.method not in ("pcg", "gmres"):
            raise ValueError(f"unknown Krylov method {self.method!r}")
        if not 0 < self.tolerance < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gmres_restart is not None and self.gmres_restart < 1:
            raise ValueError("gmres_restart must be >= 1 or None")


@dataclass
class SolveStats:
    method: str
    iterations: int = 0
    relative_residuals: list = field(default_factory=lambda: [1.0])
    converged: bool = False
    wall_time: float = 0.0
    final_residual: float = 1.0
    failure: str | None = None  # "breakdown", "stagnation" or "max_iterations"

    def as_csv_row(self, preconditioner, n_b, n):
        return [self.method, preconditioner, n_b, n, self.iterations, f"{self.wall_time:.6g}"]


class Preconditioner:
    """Uniform ``M r`` interface shared by every preconditioner in the package."""

    symmetric = True
    name = "preconditioner"

    def apply(self, r):
        raise NotImplementedError

    def __call__(self, r):
        return self.apply(r)


class IdentityPreconditioner(Preconditioner):
    name = "none"

    def apply(self, r):
        return np.array(r, dtype=np.float64, copy=True)


class JacobiPreconditioner(Preconditioner):
    name = "jacobi"

    def __init__(self, A):
        d = as_scipy(A).diagonal()
        if np.any(d <= 0):
            raise ValueError("Jacobi needs a positive diagonal")
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self.inv_diag * r if r.ndim == 1 else self.inv_diag[:, None] * r


class MatrixPreconditioner(Preconditioner):
    """Explicit (dense or sparse) approximate inverse."""

    name = "matrix"

    def __init__(self, M, symmetric=None):
        self.M = M
        if symmetric is None:
            Md = M.toarray() if sp.issparse(M) else np.asarray(M)
            symmetric = np.allclose(Md, Md.T, rtol=1e-12, atol=0)
        self.symmetric = symmetric

    def apply(self, r):
        return self.M @ r


class FunctionPreconditioner(Preconditioner):
    def __init__(self, fn, symmetric=True, name="function"):
        self.fn = fn
        self.symmetric = symmetric
        self.name = name

    def apply(self, r):
        return self.fn(r)


def as_preconditioner(M) -> Preconditioner:
    if M is None:
        return IdentityPreconditioner()
    if isinstance(M, Preconditioner):
        return M
    if isinstance(M, SparseMatrix):
        return MatrixPreconditioner(M.to_scipy())
    if isinstance(M, np.ndarray) or sp.issparse(M):
        return MatrixPreconditioner(M)
    if callable(M):
        return FunctionPreconditioner(M)
    raise TypeError(f"cannot use {type(M).__name__} as a preconditioner")


def as_scipy(A):
    if isinstance(A, SparseMatrix):
        return A.to_scipy()
    if isinstance(A, BlockOperator):
        return A.materialize().to_scipy()
    return sp.csr_matrix(A)


def as_operator(A):
    if isinstance(A, SparseMatrix):
        return lambda x: spmv(A, x)
    if isinstance(A, BlockOperator):
        return A.apply
    if isinstance(A, np.ndarray) or sp.issparse(A):
        return lambda x: A @ x
    if callable(A):
        return A
    raise TypeError(f"cannot use {type(A).__name__} as a linear operator")


def project_nullspace(x):
    """Remove the constant component: ``x - mean(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean()


def pcg(A, M, b, cfg: KrylovConfig = KrylovConfig()):
    """Preconditioned conjugate gradients.  Returns ``(x, SolveStats)``."""
    M = as_preconditioner(M)
    if not M.symmetric:
        raise ValueError(f"PCG needs a symmetric preconditioner; {M.name!r} is nonsymmetric (use GMRES)")
    Aop = as_operator(A)
    proj = project_nullspace if cfg.nullspace_projection else (lambda v: v)
    t0 = time.perf_counter()
    stats = SolveStats("pcg")
    b = proj(np.asarray(b, dtype=np.float64))
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        stats.converged, stats.final_residual = True, 0.0
        return x, stats
    tol = cfg.tolerance
    r = b.copy()
    z = proj(M(r))
    p = z.copy()
    rz = r @ z
    while stats.iterations < cfg.max_iterations:
        Ap = Aop(p)
        pAp = p @ Ap
        if not pAp > 1e-300 or not rz > 0:
            stats.failure = "breakdown"
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        x, r = proj(x), proj(r)
        stats.iterations += 1
        rel = np.linalg.norm(r) / bnorm
        stats.relative_residuals.append(rel)
        if rel <= tol:
            r = proj(b - Aop(x))
            true_rel = np.linalg.norm(r) / bnorm
            if true_rel <= tol:
                stats.converged = True
                break
            stats.relative_residuals[-1] = true_rel
        z = proj(M(r))
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        stats.failure = "max_iterations"
    stats.final_residual = np.linalg.norm(b - Aop(x)) / bnorm
    stats.wall_time = time.perf_counter() - t0
    return x, stats


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    h = np.hypot(a, b)
    return a / h, b / h


def gmres(A, M, b, cfg: KrylovConfig = KrylovConfig(method="gmres")):
    """Right-preconditioned GMRES with modified Gram-Schmidt.  Returns ``(x, SolveStats)``."""
    M = as_preconditioner(M)
    Aop = as_operator(A)
    proj = project_nullspace if cfg.nullspace_projection else (lambda v: v)
    t0 = time.perf_counter()
    stats = SolveStats("gmres")
    b = proj(np.asarray(b, dtype=np.float64))
    n = b.size
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        stats.converged, stats.final_residual = True, 0.0
        return x, stats
    tol = cfg.tolerance
    m_max = cfg.gmres_restart or cfg.max_iterations
    r = b.copy()
    beta = bnorm
    while stats.iterations < cfg.max_iterations:
        m = min(m_max, cfg.max_iterations - stats.iterations, n)
        V = [r / beta]
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        cycle_start = beta
        j_used = 0
        happy = False
        for j in range(m):
            w = Aop(M(V[j]))
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            happy = H[j + 1, j] <= 1e-14 * np.linalg.norm(H[:j + 2, j])
            if not happy:
                V.append(w / H[j + 1, j])
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            stats.iterations += 1
            j_used = j + 1
            est = abs(g[j + 1]) / bnorm
            stats.relative_residuals.append(est)
            if est <= tol or happy:
                break
        y = np.linalg.solve(np.triu(H[:j_used, :j_used]), g[:j_used]) if j_used else np.zeros(0)
        x = proj(x + M(np.asarray(V[:j_used]).T @ y))
        r = proj(b - Aop(x))
        beta = np.linalg.norm(r)
        true_rel = beta / bnorm
        if true_rel <= tol:
            stats.converged = True
            break
        if beta >= cycle_start * (1 - 1e-12):
            stats.failure = "stagnation"
            break
    else:
        stats.failure = "max_iterations"
    if not stats.converged and stats.failure is None:
        stats.failure = "max_iterations"
    stats.final_residual = np.linalg.norm(b - Aop(x)) / bnorm
    stats.wall_time = time.perf_counter() - t0
    return x, stats


def solve(A, M, b, cfg: KrylovConfig):
    return (pcg if cfg.method == "pcg" else gmres)(A, M, b, cfg)


class PermutedPreconditioner(Preconditioner):
    """Runs ``inner`` in another numbering; ``perm[q]`` is the outer index of inner unknown ``q``."""

    def __init__(self, inner: Preconditioner, perm):
        self.inner = inner
        self.perm = np.asarray(perm, dtype=np.int64)
        self.symmetric = inner.symmetric
        self.name = inner.name

    def apply(self, r):
        out = np.empty_like(r, dtype=np.float64)
        out[self.perm] = self.inner.apply(np.asarray(r, dtype=np.float64)[self.perm])
        return out
