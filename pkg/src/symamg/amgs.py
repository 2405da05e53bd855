"""Block-LDU Schur-complement preconditioner on the inner-interface layout.

With ``A = [[I(x)K, I(x)B], [(I(x)B)^T, Cbar]]`` the exact inverse is the
product of a unit upper factor, ``diag(Kbar^-1, S^-1)`` and a unit lower
factor.  Here ``Kbar^-1`` is one AMG hierarchy of ``K`` (applied to all
blocks at once) in the lower factor, an FSAI of ``K`` in the upper factor,
and ``S^-1`` is approximated in the reflection basis of the interface by an
FSAI of ``C_1 - B^T G_K^T G_K B`` plus per-block low-rank corrections.
The mismatch between the two K approximations makes the operator
nonsymmetric, so it is used with GMRES.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .amg import AmgConfig, AmgHierarchy, apply_vcycle, setup_amg
from .eigen import smallest_eigs_sym
from .fsai import FsaiFactor, build_fsai
from .krylov import Preconditioner
from .lowrank import EIG_FLOOR
from .problems import InnerInterfaceLayout, SymmetricProblem, make_inner_interface_layout
from .sparse import SparseMatrix, spgemm, spmm, spmv, transpose
from .symmetry import SymmetryBasis, apply_basis, sign_matrix


@dataclass(frozen=True)
class AmgsConfig:
    k: int = 0
    drop_tol: float = 1e-3
    fsai_power: int = 1
    schur_fsai_power: int = 1
    eig_tol: float = 1e-2
    eig_floor: float = EIG_FLOOR
    seed: int = 0
    amg_config: AmgConfig = AmgConfig()


def approximate_schur(layout: InnerInterfaceLayout, fsai_K: FsaiFactor | None, drop_tol=1e-3) -> SparseMatrix:
    """Sparse ``C_1 - B^T G^T G B`` with relative dropping, symmetrised."""
    nI = layout.block_ifc_len
    if nI == 0:
        return SparseMatrix.zeros(0, 0)
    C1 = layout.C[0].to_scipy()
    if layout.block_inner_len == 0 or layout.B.nnz == 0:
        S = C1
    else:
        GB = spgemm(fsai_K.G, layout.B)
        S = C1 - spgemm(transpose(GB), GB).to_scipy()
    S = sp.csr_matrix(S)
    if drop_tol > 0 and S.nnz:
        S.data[np.abs(S.data) < drop_tol * np.abs(S.data).max()] = 0.0
        S.eliminate_zeros()
    S = (0.5 * (S + S.T)).tocsr()
    S.sort_indices()
    return SparseMatrix.from_scipy(S)


def decoupled_interface_blocks(layout: InnerInterfaceLayout):
    """``C_hat_i = sum_j W[i, j] C_j`` for the interface blocks."""
    W = sign_matrix(layout.n_blocks.bit_length() - 1)
    mats = [C.to_scipy() for C in layout.C]
    out = []
    for i in range(layout.n_blocks):
        acc = mats[0].copy()
        for j in range(1, layout.n_blocks):
            acc = acc + W[i, j] * mats[j]
        out.append(SparseMatrix.from_scipy(sp.csr_matrix(acc)))
    return out


def schur_amg_operator(layout: InnerInterfaceLayout, amg_K: AmgHierarchy, C_hat: SparseMatrix):
    """``v -> C_hat v - B^T M_K B v``; never materialised."""
    B, Bt = layout.B, transpose(layout.B)

    def op(v):
        out = spmv(C_hat, v)
        if layout.block_inner_len:
            out -= spmv(Bt, apply_vcycle(amg_K, spmv(B, v)))
        return out
    return op


class SchurPrecond(Preconditioner):
    """``apply`` takes vectors in the problem's numbering."""

    name = "amgs"
    symmetric = False

    def __init__(self, layout, amg_K, fsai_K, S1_approx, schur_fsai, corrections, basis, config):
        self.layout = layout
        self.amg_K = amg_K
        self.fsai_K = fsai_K
        self.S1_approx = S1_approx
        self.schur_fsai = schur_fsai
        self.corrections = corrections  # per decoupled block: (Z, theta)
        self.basis = basis
        self.config = config
        self.Bt = transpose(layout.B)

    def _inner_blocks(self, v):
        return v.reshape(self.layout.n_blocks, -1).T

    def _schur_solve(self, rs):
        y = apply_basis(self.basis, rs)
        Y = self._inner_blocks(y)
        F = self.schur_fsai
        out = spmm(F.Gt, spmm(F.G, Y))
        for i, (Z, theta) in enumerate(self.corrections):
            if theta.size:
                out[:, i] += Z @ (theta * (Z.T @ Y[:, i]))
        return apply_basis(self.basis, out.T.reshape(-1))

    def apply_layout(self, r):
        lay = self.layout
        n_inn = lay.n_inn
        rK, rS = r[:n_inn], r[n_inn:]
        # lower factor with the AMG approximation of Kbar
        if n_inn:
            rK1 = apply_vcycle(self.amg_K, self._inner_blocks(rK)).T.reshape(-1)
            rS1 = rS - spmm(self.Bt, self._inner_blocks(rK1)).T.reshape(-1)
        else:
            rK1, rS1 = rK, rS
        xS = self._schur_solve(rS1) if lay.n_ifc else rS1
        # upper factor with the FSAI of Kbar
        if n_inn:
            BxS = spmm(lay.B, self._inner_blocks(xS))
            F = self.fsai_K
            xK = rK1 - spmm(F.Gt, spmm(F.G, BxS)).T.reshape(-1)
        else:
            xK = rK1
        return np.concatenate([xK, xS])

    def apply(self, r):
        perm = self.layout.perm
        out = np.empty_like(r, dtype=np.float64)
        out[perm] = self.apply_layout(np.asarray(r, dtype=np.float64)[perm])
        return out


def build_amgs(problem: SymmetricProblem, layout: InnerInterfaceLayout | None = None,
               config: AmgsConfig = AmgsConfig()):
    """AMGS for a mirrored problem; with no symmetry (``s = 0``) it is plain AMG."""
    if problem.kind == "repeated" or problem.n_b != 1 << problem.s:
        raise ValueError("AMGS needs a reflection-symmetric problem")
    if problem.s == 0:
        H = setup_amg(problem.matrix, config.amg_config)
        H.name = "amgs"
        return H
    layout = layout or make_inner_interface_layout(problem)
    amg_K = setup_amg(layout.K, config.amg_config)
    fsai_K = build_fsai(layout.K, config.fsai_power)
    S1 = approximate_schur(layout, fsai_K, config.drop_tol)
    schur_fsai = build_fsai(S1, config.schur_fsai_power)
    basis = SymmetryBasis(problem.s, layout.n_ifc)
    corrections = []
    nI = layout.block_ifc_len
    for i, C_hat in enumerate(decoupled_interface_blocks(layout)):
        if not config.k:
            corrections.append((np.zeros((nI, 0)), np.zeros(0)))
            continue
        op = schur_amg_operator(layout, amg_K, C_hat)
        G, Gt = schur_fsai.G, schur_fsai.Gt
        X = lambda v, op=op: spmv(G, op(spmv(Gt, v)))
        ep = smallest_eigs_sym(X, nI, min(config.k + 1, nI), config.eig_tol, config.seed + i)
        keep = ep.values > config.eig_floor
        if (~keep).any():
            warnings.warn(f"Schur block {i}: dropped {int((~keep).sum())} non-positive pair(s)", RuntimeWarning)
        lam, V = ep.values[keep][:config.k], ep.vectors[:, keep][:, :config.k]
        theta = (1.0 - lam) / lam
        Z = spmm(Gt, np.asfortranarray(V))
        corrections.append((Z, theta))
    return SchurPrecond(layout, amg_K, fsai_K, S1, schur_fsai, corrections, basis, config)


def apply_amgs(M: Preconditioner, r):
    return M.apply(r)


def ldu_inverse_apply(layout: InnerInterfaceLayout, r):
    """Exact three-factor product with dense ``K^-1`` and ``S^+`` (small layouts only)."""
    n_inn = layout.n_inn
    A = layout.matrix.toarray()
    Kb, Bb, Cb = A[:n_inn, :n_inn], A[:n_inn, n_inn:], A[n_inn:, n_inn:]
    Kinv = np.linalg.inv(Kb) if n_inn else np.zeros((0, 0))
    S = Cb - Bb.T @ Kinv @ Bb
    Sinv = np.linalg.pinv(S, hermitian=True)
    r = np.asarray(r, dtype=np.float64)
    rK, rS = r[:n_inn], r[n_inn:]
    yK = Kinv @ rK
    xS = Sinv @ (rS - Bb.T @ yK)
    xK = yK - Kinv @ (Bb @ xS)
    return np.concatenate([xK, xS])

