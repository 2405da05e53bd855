"""Low-rank corrected preconditioners for the decoupled subsystems.

Both preconditioners share one approximation of the base-mesh block
``A_inn`` across every subsystem and add a rank-``k`` correction per
subsystem built from the smallest eigenpairs of the preconditioned
subsystem ``X``.

* LRCFSAI: ``M_i = G^T G + Z Theta Z^T`` with ``X = G A_i G^T``,
  ``Z = G^T V`` and ``Theta = (1 - lambda) / lambda``.  Symmetric.
* LRCAMG: ``M_i = (I + U (Theta - I) V^T) M_inn`` with ``X = M_inn A_i``,
  biorthonormal ``V^T U = I`` and ``Theta = 1 / lambda``.  Nonsymmetric.

Pairs with ``|lambda|`` below ``eig_floor`` (the Neumann null mode of the
first subsystem) are dropped: the Krylov drivers project that mode out.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .amg import AmgConfig, AmgHierarchy, apply_vcycle, setup_amg
from .eigen import BiEigenPairs, SymEigenPairs, smallest_eigs_nonsym, smallest_eigs_sym
from .fsai import FsaiFactor, build_fsai
from .krylov import Preconditioner
from .sparse import spmm, spmv
from .symmetry import SubsystemSet, SymmetryBasis, TransformedPreconditioner, is_singular_neumann

EIG_FLOOR = 1e-8


def _blocks_view(r, n_blocks):
    """Block-stacked vector as an ``(L, n_blocks)`` Fortran array (no copy)."""
    return np.asarray(r, dtype=np.float64).reshape(n_blocks, -1).T


class _Correction:
    """Per-subsystem rank-k term in factored form."""

    __slots__ = ("left", "theta", "right")

    def __init__(self, left, theta, right):
        self.left, self.theta, self.right = left, theta, right

    @property
    def k(self):
        return self.theta.size

    def apply(self, y):
        if not self.k:
            return 0.0
        return self.left @ (self.theta * (self.right.T @ y))


class LrcFsaiPrecond(Preconditioner):
    """Block-diagonal LRCFSAI acting on the decoupled (transformed) vector."""

    name = "lrcfsai"
    symmetric = True

    def __init__(self, fsai: FsaiFactor, corrections, eigenpairs, k):
        self.fsai = fsai
        self.corrections = corrections
        self.eigenpairs = eigenpairs
        self.k = k

    @property
    def n_blocks(self):
        return len(self.corrections)

    def apply(self, r):
        R = _blocks_view(r, self.n_blocks)
        out = spmm(self.fsai.Gt, spmm(self.fsai.G, R))
        for i, c in enumerate(self.corrections):
            if c.k:
                out[:, i] += c.apply(R[:, i])
        return out.T.reshape(-1)

    def subsystem(self, i) -> Preconditioner:
        return _SubsystemView(self, i)


class LrcAmgPrecond(Preconditioner):
    """Block-diagonal LRCAMG acting on the decoupled (transformed) vector."""

    name = "lrcamg"
    symmetric = False

    def __init__(self, amg: AmgHierarchy, corrections, eigenpairs, k):
        self.amg = amg
        self.corrections = corrections
        self.eigenpairs = eigenpairs
        self.k = k

    @property
    def n_blocks(self):
        return len(self.corrections)

    def apply(self, r):
        Y = apply_vcycle(self.amg, _blocks_view(r, self.n_blocks))
        out = np.array(Y, order="F")
        for i, c in enumerate(self.corrections):
            if c.k:
                out[:, i] += c.apply(Y[:, i])
        return out.T.reshape(-1)

    def subsystem(self, i) -> Preconditioner:
        return _SubsystemView(self, i)


class _SubsystemView(Preconditioner):
    def __init__(self, parent, i):
        self.parent, self.i = parent, i
        self.symmetric = parent.symmetric
        self.name = parent.name

    def apply(self, r):
        c = self.parent.corrections[self.i]
        if isinstance(self.parent, LrcFsaiPrecond):
            F = self.parent.fsai
            y = spmv(F.Gt, spmv(F.G, r))
            return y + c.apply(r) if c.k else y
        y = apply_vcycle(self.parent.amg, r)
        return y + c.apply(y) if c.k else y


def _keep(values, floor, what, expected=0):
    keep = np.abs(values) >= floor
    if (~keep).sum() > expected:
        warnings.warn(f"{what}: dropped {int((~keep).sum())} eigenpair(s) below {floor:g}", RuntimeWarning)
    return keep


def _n_wanted(A, k):
    # one extra pair absorbs the constant null mode of a singular subsystem
    return k + 1 if is_singular_neumann(A) else k


def subsystem_eigs_fsai(subset: SubsystemSet, fsai: FsaiFactor, k, tol=1e-2, seed=0):
    """Smallest pairs of ``G A_i G^T`` for every subsystem (operator form)."""
    G, Gt = fsai.G, fsai.Gt
    out = []
    for i, Ai in enumerate(subset.subsystems):
        m = _n_wanted(Ai, k)
        X = lambda v, Ai=Ai: spmv(G, spmv(Ai, spmv(Gt, v)))
        out.append(smallest_eigs_sym(X, Ai.n_rows, m, tol, seed + i))
    return out


def build_lrcfsai(subset: SubsystemSet, k, pattern_power=1, eig_tol=1e-2, eig_floor=EIG_FLOOR,
                  seed=0, fsai: FsaiFactor | None = None, eigenpairs=None) -> LrcFsaiPrecond:
    """LRCFSAI(k).  ``eigenpairs`` (computed for some ``k' >= k``) may be reused across ranks."""
    if k < 0:
        raise ValueError("k must be >= 0")
    fsai = fsai or build_fsai(subset.inner, pattern_power)
    if k and eigenpairs is None:
        eigenpairs = subsystem_eigs_fsai(subset, fsai, k, eig_tol, seed)
    corrections = []
    for i in range(subset.n_blocks):
        if not k:
            corrections.append(_Correction(np.zeros((subset.block_len, 0)), np.zeros(0), np.zeros((subset.block_len, 0))))
            continue
        ep: SymEigenPairs = eigenpairs[i]
        keep = _keep(ep.values, eig_floor, f"subsystem {i}", int(is_singular_neumann(subset.subsystems[i])))
        lam, V = ep.values[keep][:k], ep.vectors[:, keep][:, :k]
        sigma = 1.0 - lam
        if np.any(lam > 1.0):
            warnings.warn(f"subsystem {i}: eigenvalues above 1 give negative corrections", RuntimeWarning)
        sigma = np.minimum(sigma, 1.0 - eig_floor)
        theta = sigma / (1.0 - sigma)
        Z = spmm(fsai.Gt, np.asfortranarray(V)) if V.shape[1] else V
        corrections.append(_Correction(Z, theta, Z))
    return LrcFsaiPrecond(fsai, corrections, eigenpairs, k)


def subsystem_eigs_amg(subset: SubsystemSet, amg: AmgHierarchy, k, tol=1e-2, seed=0):
    """Smallest bi-eigenpairs of ``M_inn A_i``; the transpose is ``A_i M_inn`` (symmetric cycle)."""
    out = []
    for i, Ai in enumerate(subset.subsystems):
        m = _n_wanted(Ai, k)
        X = lambda v, Ai=Ai: apply_vcycle(amg, spmv(Ai, v))
        Xt = lambda v, Ai=Ai: spmv(Ai, apply_vcycle(amg, v))
        out.append(smallest_eigs_nonsym(X, Xt, Ai.n_rows, m, tol, seed + i))
    return out


def build_lrcamg(subset: SubsystemSet, k, amg_config: AmgConfig = AmgConfig(), eig_tol=1e-2,
                 eig_floor=EIG_FLOOR, seed=0, amg: AmgHierarchy | None = None, eigenpairs=None) -> LrcAmgPrecond:
    """LRCAMG(k), applied as ``M_inn r + U (Theta - I) V^T M_inn r`` with ``Theta = Lambda^-1``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    amg = amg or setup_amg(subset.inner, amg_config)
    if k and eigenpairs is None:
        eigenpairs = subsystem_eigs_amg(subset, amg, k, eig_tol, seed)
    corrections = []
    L = subset.block_len
    for i in range(subset.n_blocks):
        if not k:
            corrections.append(_Correction(np.zeros((L, 0)), np.zeros(0), np.zeros((L, 0))))
            continue
        ep: BiEigenPairs = eigenpairs[i]
        keep = _keep(ep.values, eig_floor, f"subsystem {i}", int(is_singular_neumann(subset.subsystems[i])))
        lam = ep.values[keep][:k]
        U, V = ep.right[:, keep][:, :k], ep.left[:, keep][:, :k]
        theta = 1.0 / lam
        corrections.append(_Correction(U, theta - 1.0, V))
    return LrcAmgPrecond(amg, corrections, eigenpairs, k)


def lrcamg_theta(values):
    """``Theta = Lambda^-1`` for the LRCAMG correction."""
    return 1.0 / np.asarray(values, dtype=np.float64)


def transformed(basis: SymmetryBasis, M: Preconditioner) -> TransformedPreconditioner:
    """Preconditioner for the original numbering: ``P_s M P_s``."""
    return TransformedPreconditioner(basis, M)


def _random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


@dataclass
class TheoremReport:
    n: int
    seed: int
    fsai_error: float
    amg_error: float
    tol: float = 1e-9
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.fsai_error <= self.tol and self.amg_error <= self.tol


def verify_correction_theorems(n=16, seed=0, A=None, B=None, tol=1e-9) -> TheoremReport:
    """Dense full-rank check of both correction identities for SPD ``A`` (target) and ``B`` (approximation).

    Factored form: ``A^-1 = B^-1 + L^-T V S (I - S)^-1 V^T L^-1`` with ``B = L L^T``
    and ``I - L^-1 A L^-T = V S V^T``.  Non-factored form:
    ``A^-1 = (I + U (S^-1 - V^T U)^-1 V^T) B^-1`` with ``I - B^-1 A = U S V^T``.
    """
    if n > 64:
        raise ValueError("the dense self-test is limited to n <= 64")
    rng = np.random.default_rng(seed)
    A = _random_spd(rng, n) if A is None else np.asarray(A, dtype=np.float64)
    B = _random_spd(rng, n) if B is None else np.asarray(B, dtype=np.float64)
    Ainv = np.linalg.inv(A)
    scale = np.linalg.norm(Ainv)

    L = np.linalg.cholesky(B)
    Li = sla.solve_triangular(L, np.eye(n), lower=True)
    Y = np.eye(n) - Li @ A @ Li.T
    S, V = np.linalg.eigh(0.5 * (Y + Y.T))
    M1 = Li.T @ Li + Li.T @ V @ np.diag(S / (1.0 - S)) @ V.T @ Li
    e1 = np.linalg.norm(M1 - Ainv) / scale

    Binv = np.linalg.inv(B)
    # I - B^-1 A = L^-T Y L^T: right vectors L^-T V, left vectors L V (biorthonormal)
    U, Vl = Li.T @ V, L @ V
    nz = np.abs(S) > 1e-14 * max(1.0, np.abs(S).max())
    if nz.any():
        Uk, Vk, Sk = U[:, nz], Vl[:, nz], S[nz]
        core = np.linalg.inv(np.diag(1.0 / Sk) - Vk.T @ Uk)
        M2 = (np.eye(n) + Uk @ core @ Vk.T) @ Binv
    else:
        M2 = Binv
    e2 = np.linalg.norm(M2 - Ainv) / scale
    return TheoremReport(n, seed, e1, e2, tol, {"rank": int(nz.sum())})
