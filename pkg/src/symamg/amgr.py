"""Multigrid reduction over an inner-interface layout.

Coarse set: every interface unknown plus a greedy MIS of ``T**power_k``
computed once on the base inner block and replicated to all blocks.  The
prolongation has the ``[W; I]`` shape (fine rows interpolate, coarse rows
are injected), the reduced operator is Galerkin and is handed to a standard
AMG hierarchy.

The cycle is F-relaxation only: the fine unknowns are exactly the inner
unknowns of every block, whose self-coupling is ``I (x) K``, so one FSAI of
``K`` smooths all blocks at once through SpMM.  Pre- and post-smoothing use
the same damped sweep, which keeps the operator symmetric for PCG.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .amg import (AmgConfig, AmgHierarchy, CoarseningStats, apply_vcycle, coarsen_mis,
                  interpolate_with_demotion, setup_amg, strength_graph)
from .fsai import FsaiFactor, build_fsai
from .krylov import Preconditioner
from .problems import InnerInterfaceLayout, SymmetricProblem, make_inner_interface_layout
from .sparse import SparseMatrix, spmm, spmv, transpose, triple_product_rap


@dataclass(frozen=True)
class AmgrConfig:
    theta: float = 0.25
    power_k: int = 2
    interp: str = "distance2"
    smoother_power: int = 1
    n_smooth: int = 1
    amg_config: AmgConfig = AmgConfig()

    def __post_init__(self):
        if self.power_k not in (1, 2, 3):
            raise ValueError("power_k must be 1, 2 or 3")
        if self.n_smooth < 1:
            raise ValueError("n_smooth must be >= 1")


@dataclass
class ReductionSplit:
    coarse: np.ndarray  # bool mask in inner-interface numbering
    power_k: int
    promoted: int = 0

    @property
    def coarse_ids(self):
        return np.flatnonzero(self.coarse)

    @property
    def fine_ids(self):
        return np.flatnonzero(~self.coarse)


@dataclass
class SmootherCounters:
    setup_rows: int  # FSAI rows factorised
    setup_local_entries: int  # sum of local system sizes squared
    storage_nnz: int


def classify_fc(layout: InnerInterfaceLayout, theta=0.25, power_k=2) -> ReductionSplit:
    """Interface unknowns coarse; MIS of the base inner block replicated over all blocks."""
    if power_k not in (1, 2, 3):
        raise ValueError("power_k must be 1, 2 or 3")
    nK = layout.block_inner_len
    coarse = np.ones(layout.n_inn + layout.n_ifc, dtype=bool)
    if nK:
        local = coarsen_mis(strength_graph(layout.K, theta).T, power_k)
        coarse[:layout.n_inn] = np.tile(local, layout.n_blocks)
    return ReductionSplit(coarse, power_k)


class AmgrPrecond(Preconditioner):
    """Two-level reduction cycle; ``apply`` takes vectors in the problem's numbering."""

    name = "amgr"
    symmetric = True

    def __init__(self, layout, split, P, A_c, coarse_solver, smoother, omega, config, counters):
        self.layout = layout
        self.split = split
        self.P = P
        self.R = transpose(P)
        self.A_c = A_c
        self.coarse_solver = coarse_solver
        self.smoother = smoother
        self.omega = omega
        self.config = config
        self.counters = counters
        self.A = layout.matrix
        self.stats = CoarseningStats(A_c.n_rows / self.A.n_rows, A_c.nnz / max(A_c.n_rows, 1))

    def _smooth(self, res):
        """Damped FSAI sweep on the inner unknowns of all blocks (one SpMM pair)."""
        lay = self.layout
        out = np.zeros_like(res)
        if lay.n_inn:
            Rb = res[:lay.n_inn].reshape(lay.n_blocks, -1).T
            Z = spmm(self.smoother.Gt, spmm(self.smoother.G, Rb))
            out[:lay.n_inn] = self.omega * Z.T.reshape(-1)
        return out

    def apply_layout(self, r):
        A = self.A
        x = self._smooth(r)
        for _ in range(self.config.n_smooth - 1):
            x += self._smooth(r - spmv(A, x))
        rc = spmv(self.R, r - spmv(A, x))
        if isinstance(self.coarse_solver, AmgHierarchy):
            ec = apply_vcycle(self.coarse_solver, rc)
        else:
            ec = self.coarse_solver @ rc
        x += spmv(self.P, ec)
        for _ in range(self.config.n_smooth):
            x += self._smooth(r - spmv(A, x))
        return x

    def apply(self, r):
        perm = self.layout.perm
        out = np.empty_like(r, dtype=np.float64)
        out[perm] = self.apply_layout(np.asarray(r, dtype=np.float64)[perm])
        return out


def _largest_eig(F: FsaiFactor, K: SparseMatrix):
    n = K.n_rows
    if n <= 2:
        M = F.G.toarray() @ K.toarray() @ F.Gt.toarray()
        return float(np.linalg.eigvalsh(M).max())
    op = LinearOperator((n, n), matvec=lambda v: spmv(F.G, spmv(K, spmv(F.Gt, v))), dtype=np.float64)
    return float(eigsh(op, k=1, which="LA", tol=1e-3, v0=np.ones(n), return_eigenvectors=False)[0])


def build_amgr(problem: SymmetricProblem, layout: InnerInterfaceLayout | None = None,
               config: AmgrConfig = AmgrConfig()) -> AmgrPrecond:
    if layout is None:
        layout = make_inner_interface_layout(problem)
    A = layout.matrix
    split = classify_fc(layout, config.theta, config.power_k)
    T = strength_graph(A, config.theta).T
    P, coarse, promoted = interpolate_with_demotion(A, split.coarse, config.interp, T)
    if promoted:
        warnings.warn(f"{promoted} fine unknown(s) promoted to coarse for interpolability", RuntimeWarning)
        split = ReductionSplit(coarse, config.power_k, promoted)
    A_c = triple_product_rap(P, A)
    if A_c.n_rows <= config.amg_config.coarse_size:
        Ad = A_c.toarray()
        coarse_solver = np.linalg.pinv(0.5 * (Ad + Ad.T), hermitian=True)
    else:
        coarse_solver = setup_amg(A_c, config.amg_config)
    K = layout.K
    if K.n_rows:
        smoother = build_fsai(K, config.smoother_power)
        # damping keeps the smoother convergent: omega * lambda_max(G K G^T) < 2
        lam = _largest_eig(smoother, K)
        omega = min(1.0, 1.5 / lam)
        pat = np.diff(smoother.G.row_offsets)
        counters = SmootherCounters(K.n_rows, int(np.sum(pat ** 2)), smoother.nnz)
    else:
        smoother, omega = None, 0.0
        counters = SmootherCounters(0, 0, 0)
    return AmgrPrecond(layout, split, P, A_c, coarse_solver, smoother, omega, config, counters)


def apply_amgr(M: AmgrPrecond, r):
    return M.apply(r)
