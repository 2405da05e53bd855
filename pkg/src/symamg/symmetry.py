"""Change of basis for ``s`` reflection symmetries.

The orthogonal, involutory basis is the normalised Sylvester-Hadamard matrix
of order ``2**s`` tensored with the identity, applied as ``s`` butterfly sweeps.
In that basis the mirrored operator becomes block diagonal; its blocks are
signed sums of the first block row.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .krylov import KrylovConfig, Preconditioner, solve
from .sparse import SparseMatrix

_SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class SymmetryBasis:
    s: int
    n: int

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be non-negative")
        if self.n % (1 << self.s):
            raise ValueError(f"n={self.n} is not divisible by 2**{self.s}")

    @property
    def n_blocks(self):
        return 1 << self.s

    def apply(self, x):
        return apply_basis(self, x)


def apply_basis(basis: SymmetryBasis, x):
    """``P_s x`` in ``s`` butterfly sweeps; also accepts ``(n, m)`` arrays column-wise."""
    y = np.array(x, dtype=np.float64, copy=True)
    if y.shape[0] != basis.n:
        raise ValueError(f"vector length {y.shape[0]} does not match basis size {basis.n}")
    tail = y.shape[1:]
    for i in range(1, basis.s + 1):
        v = y.reshape((1 << (i - 1), 2, basis.n >> i) + tail)
        a, b = v[:, 0].copy(), v[:, 1]
        v[:, 0] = (a + b) * _SQRT_HALF
        v[:, 1] = (a - b) * _SQRT_HALF
    return y


def sign_matrix(s):
    """Unnormalised order-``2**s`` Sylvester sign matrix."""
    W = np.ones((1, 1), dtype=np.int64)
    for _ in range(s):
        W = np.block([[W, W], [W, -W]])
    return W


@dataclass
class SubsystemSet:
    subsystems: list  # decoupled blocks, one per symmetry class
    inner: SparseMatrix  # base-mesh self coupling, shared by all subsystems
    outers: list  # subsystem minus inner, sparse

    @property
    def n_blocks(self):
        return len(self.subsystems)

    @property
    def block_len(self):
        return self.inner.n_rows


def extract_subsystems(blocks) -> SubsystemSet:
    """Decoupled blocks ``sum_j W[i, j] A_j`` from the first block row ``A_1..A_{2**s}``."""
    n_b = len(blocks)
    s = n_b.bit_length() - 1
    if n_b != 1 << s:
        raise ValueError("the number of blocks must be a power of two")
    shape = blocks[0].shape
    if shape[0] != shape[1] or any(B.shape != shape for B in blocks):
        raise ValueError("all blocks must be square and of equal size")
    W = sign_matrix(s)
    mats = [B.to_scipy() for B in blocks]
    subs = []
    for i in range(n_b):
        acc = mats[0].copy()
        for j in range(1, n_b):
            acc = acc + W[i, j] * mats[j]
        subs.append(SparseMatrix.from_scipy(acc))
    inner, outers = split_inner_outer_parts(subs, blocks[0])
    return SubsystemSet(subs, inner, outers)


def split_inner_outer_parts(subsystems, inner: SparseMatrix):
    outers = []
    for S in subsystems:
        D = (S.to_scipy() - inner.to_scipy()).tocsr()
        scale = max(np.abs(S.values).max(initial=0.0), np.abs(inner.values).max(initial=0.0))
        D.data[np.abs(D.data) < 1e-14 * scale] = 0.0
        D.eliminate_zeros()
        outers.append(SparseMatrix.from_scipy(D))
    return inner, outers


def split_inner_outer(subset: SubsystemSet):
    """``(A_inn, [A_out_i])`` with ``subsystem_i = A_inn + A_out_i``."""
    return split_inner_outer_parts(subset.subsystems, subset.inner)


def block_diagonal(subset: SubsystemSet) -> SparseMatrix:
    return SparseMatrix.from_scipy(sp.block_diag([S.to_scipy() for S in subset.subsystems], format="csr"))


def is_singular_neumann(A: SparseMatrix, rtol=1e-12):
    """True when constants lie in the kernel (all row sums vanish)."""
    rs = np.abs(A.to_scipy() @ np.ones(A.n_cols))
    return bool(rs.max(initial=0.0) <= rtol * np.abs(A.values).max(initial=1.0))


class TransformedPreconditioner(Preconditioner):
    """Wraps a preconditioner built in the decoupled basis: ``P_s M_hat P_s``."""

    def __init__(self, basis: SymmetryBasis, inner: Preconditioner):
        self.basis = basis
        self.inner = inner
        self.symmetric = inner.symmetric
        self.name = inner.name

    def apply(self, r):
        return apply_basis(self.basis, self.inner.apply(apply_basis(self.basis, r)))


class BlockDiagonalPreconditioner(Preconditioner):
    """One preconditioner per contiguous block (decoupled basis)."""

    def __init__(self, parts, name="blockdiag"):
        self.parts = list(parts)
        self.symmetric = all(p.symmetric for p in self.parts)
        self.name = name

    def apply(self, r):
        L = r.shape[0] // len(self.parts)
        return np.concatenate([p.apply(r[i * L:(i + 1) * L]) for i, p in enumerate(self.parts)])


@dataclass
class SymmetricSolveStats:
    subsystem_stats: list
    relative_residual: float
    converged: bool
    wall_time: float
    failed_subsystems: list = field(default_factory=list)

    @property
    def iterations(self):
        return [st.iterations for st in self.subsystem_stats]


def symmetric_solve(problem, b, cfg: KrylovConfig = KrylovConfig(), make_preconditioner=None):
    """Decoupled solve: forward transform, one Krylov solve per subsystem, backward transform.

    ``make_preconditioner(A_i)`` builds the preconditioner of each subsystem
    (default: FSAI with the lower pattern of ``A_i``).  Subsystems with
    vanishing row sums get mean projection; the others are solved as is.
    """
    if make_preconditioner is None:
        from .fsai import build_fsai
        make_preconditioner = build_fsai
    if problem.n_b != 1 << problem.s:
        raise ValueError("symmetric_solve needs a reflection-symmetric (mirrored) problem")
    t0 = time.perf_counter()
    basis = SymmetryBasis(problem.s, problem.n)
    subset = extract_subsystems(problem.blocks)
    b = np.asarray(b, dtype=np.float64)
    bh = apply_basis(basis, b)
    L = subset.block_len
    xh = np.zeros_like(bh)
    stats, failed = [], []
    for i, Ai in enumerate(subset.subsystems):
        sub_cfg = KrylovConfig(cfg.method, cfg.tolerance, cfg.max_iterations, cfg.gmres_restart,
                               nullspace_projection=is_singular_neumann(Ai))
        xi, st = solve(Ai, make_preconditioner(Ai), bh[i * L:(i + 1) * L], sub_cfg)
        xh[i * L:(i + 1) * L] = xi
        stats.append(st)
        if not st.converged:
            failed.append(i)
    x = apply_basis(basis, xh)
    if cfg.nullspace_projection:
        x -= x.mean()
    r = b - problem.matrix.to_scipy() @ x
    bn = np.linalg.norm(b)
    rel = np.linalg.norm(r) / bn if bn else 0.0
    return x, SymmetricSolveStats(stats, rel, not failed, time.perf_counter() - t0, failed)
