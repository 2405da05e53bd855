"""Model problems: Neumann Poisson on a wall-stretched unit cube.

Cell-centred finite volumes with a 7-point stencil.  Face transmissibility is
face area over the distance between the two cell centres; homogeneous Neumann
walls contribute nothing, so every row sums to zero.

Three numberings are produced from the lexicographic assembly:

* ``mirrored``: ``s`` reflection planes (x, then y, then z).  Block ``b`` has
  bit ``s-1`` set when it lies on the upper x half, and so on.  Inside each
  block cells are numbered lexicographically starting at the outer wall, so
  mirrored cells share a local index.
* ``inner-interface``: same blocks as ``mirrored``; the layout helper then
  reorders inner unknowns first and interface unknowns last.
* ``repeated``: ``n_b`` copies of the grid chained along x (translational).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sparse import BlockOperator, SparseMatrix, write_matrix_market

KINDS = ("mirrored", "inner-interface", "repeated")


@dataclass(frozen=True)
class StretchedGrid:
    nx: int
    ny: int
    nz: int
    gamma: tuple
    node_coords: tuple  # per-axis face coordinates, length n+1
    widths: tuple  # per-axis cell widths, mirror-symmetric to the last bit

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def n(self):
        return self.nx * self.ny * self.nz


def stretched_coords(n, gamma):
    """Face coordinates ``0 = x_1 < ... < x_{n+1} = 1`` clustered at both walls."""
    i = np.arange(n + 1)
    if gamma == 0:
        return i / n
    return 0.5 * (1.0 + np.tanh(gamma * (2.0 * i / n - 1.0)) / np.tanh(gamma))


def build_stretched_grid(nx, ny=1, nz=1, gamma=1.5) -> StretchedGrid:
    sizes = (int(nx), int(ny), int(nz))
    if min(sizes) < 1:
        raise ValueError(f"grid sizes must be positive, got {sizes}")
    gam = tuple(float(g) for g in (gamma if np.ndim(gamma) else (gamma,) * 3))
    if min(gam) < 0:
        raise ValueError("stretching factors must be non-negative")
    coords, widths = [], []
    for n, g in zip(sizes, gam):
        x = stretched_coords(n, g)
        w = np.diff(x)
        coords.append(x)
        widths.append(0.5 * (w + w[::-1]))
    return StretchedGrid(*sizes, gam, tuple(coords), tuple(widths))


def _chain_grid(grid: StretchedGrid, n_b) -> StretchedGrid:
    wx = np.tile(grid.widths[0], n_b)
    x = np.concatenate([[0.0], np.cumsum(wx)])
    return StretchedGrid(grid.nx * n_b, grid.ny, grid.nz, grid.gamma,
                         (x, grid.node_coords[1], grid.node_coords[2]),
                         (wx, grid.widths[1], grid.widths[2]))


def assemble_poisson(grid: StretchedGrid) -> SparseMatrix:
    """Neumann FV Laplacian (symmetric positive semidefinite), lexicographic order."""
    nx, ny, nz = grid.shape
    wx, wy, wz = grid.widths
    idx = np.arange(grid.n).reshape(nz, ny, nx)  # [k, j, i]
    rows, cols, vals = [], [], []
    diag_parts = []
    for axis, (w, other) in enumerate(((wx, (wy, wz)), (wy, (wx, wz)), (wz, (wx, wy)))):
        m = w.size
        lo = np.zeros((nz, ny, nx))
        hi = np.zeros((nz, ny, nx))
        if m > 1:
            dist = 0.5 * (w[:-1] + w[1:])
            if axis == 0:
                t = (wz[:, None, None] * wy[None, :, None]) / dist[None, None, :]
                a, b = idx[:, :, :-1], idx[:, :, 1:]
                hi[:, :, :-1] = t
                lo[:, :, 1:] = t
            elif axis == 1:
                t = (wz[:, None, None] * wx[None, None, :]) / dist[None, :, None]
                a, b = idx[:, :-1, :], idx[:, 1:, :]
                hi[:, :-1, :] = t
                lo[:, 1:, :] = t
            else:
                t = (wy[None, :, None] * wx[None, None, :]) / dist[:, None, None]
                a, b = idx[:-1], idx[1:]
                hi[:-1] = t
                lo[1:] = t
            t = np.broadcast_to(t, a.shape).ravel()
            rows += [a.ravel(), b.ravel()]
            cols += [b.ravel(), a.ravel()]
            vals += [-t, -t]
        # lo + hi is invariant under a reflection along this axis (commutative add)
        diag_parts.append((lo + hi).ravel())
    diag = (diag_parts[0] + diag_parts[1]) + diag_parts[2]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.n, grid.n))
    return SparseMatrix.from_scipy(A)


@dataclass
class SymmetricProblem:
    kind: str
    s: int
    n_b: int
    grid: StretchedGrid  # base (per-block) grid for repeated, full grid otherwise
    ordering: np.ndarray  # ordering[p] = lexicographic index of symmetric unknown p
    matrix: SparseMatrix  # full operator in symmetry-aware numbering
    blocks: list  # first block row A_1..A_{n_b}
    block_operator: BlockOperator = field(repr=False)

    @property
    def n(self):
        return self.matrix.n_rows

    @property
    def block_len(self):
        return self.n // self.n_b


def _mirrored_ordering(grid: StretchedGrid, s):
    nx, ny, nz = grid.shape
    dims = [nx, ny, nz]
    for a in range(s):
        if dims[a] % 2:
            raise ValueError(f"axis {'xyz'[a]} has {dims[a]} cells; a mirror plane needs an even count")
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    loc = [i.ravel(), j.ravel(), k.ravel()]
    bdims = list(dims)
    block = np.zeros(grid.n, dtype=np.int64)
    for a in range(s):
        half = dims[a] // 2
        upper = loc[a] >= half
        block += upper.astype(np.int64) << (s - 1 - a)
        loc[a] = np.where(upper, dims[a] - 1 - loc[a], loc[a])
        bdims[a] = half
    local = loc[0] + bdims[0] * (loc[1] + bdims[1] * loc[2])
    L = grid.n >> s
    new = block * L + local
    ordering = np.empty(grid.n, dtype=np.int64)
    ordering[new] = np.arange(grid.n)
    return ordering


def _chain_ordering(grid: StretchedGrid, n_b):
    nx, ny, nz = grid.shape
    k, j, I = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx * n_b), indexing="ij")
    B, i = I.ravel() // nx, I.ravel() % nx
    new = B * grid.n + i + nx * (j.ravel() + ny * k.ravel())
    ordering = np.empty(grid.n * n_b, dtype=np.int64)
    ordering[new] = np.arange(grid.n * n_b)
    return ordering


def permute(A: SparseMatrix, ordering) -> SparseMatrix:
    """Symmetric permutation ``A[ordering][:, ordering]``."""
    return SparseMatrix.from_scipy(A.to_scipy()[ordering][:, ordering])


def first_block_row(A: SparseMatrix, n_b):
    L = A.n_rows // n_b
    row = A.to_scipy()[:L]
    return [SparseMatrix.from_scipy(row[:, j * L:(j + 1) * L]) for j in range(n_b)]


def make_symmetric_problem(grid: StretchedGrid, s=0, kind="mirrored", n_b=None) -> SymmetricProblem:
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
    if kind == "repeated":
        n_b = int(n_b or 1)
        if n_b < 1:
            raise ValueError("repeated problems need n_b >= 1")
        full = _chain_grid(grid, n_b)
        ordering = _chain_ordering(grid, n_b)
        s = 0
    else:
        if not 0 <= s <= 3:
            raise ValueError("between 0 and 3 reflection symmetries are supported")
        full = grid
        ordering = _mirrored_ordering(grid, s)
        n_b = 2 ** s
    A = permute(assemble_poisson(full), ordering)
    return SymmetricProblem(kind, s, n_b, grid, ordering, A, first_block_row(A, n_b),
                            BlockOperator.split(A, n_b))


def expand_base_blocks(blocks) -> SparseMatrix:
    """Materialize the reflection pattern ``H[i, j] = A_{(i xor j) + 1}``."""
    n_b = len(blocks)
    grid = [[blocks[i ^ j].to_scipy() for j in range(n_b)] for i in range(n_b)]
    return SparseMatrix.from_scipy(sp.bmat(grid, format="csr"))


@dataclass
class InnerInterfaceLayout:
    n_blocks: int
    n_inn: int
    n_ifc: int
    inner_of_block: list  # per block: indices (symmetric numbering), local order shared
    interface_ids: np.ndarray  # interface unknowns, block after block
    perm: np.ndarray  # perm[q] = symmetric index of inner-interface unknown q
    K: SparseMatrix  # inner block of one subdomain
    B: SparseMatrix  # inner-to-own-interface couplings of one subdomain
    C: list  # interface couplings of block 0 with block j
    Cbar: SparseMatrix  # full interface-interface block
    matrix: SparseMatrix  # full operator in inner-interface numbering

    @property
    def block_inner_len(self):
        return self.n_inn // self.n_blocks

    @property
    def block_ifc_len(self):
        return self.n_ifc // self.n_blocks


def interface_locals(problem: SymmetricProblem):
    """Local indices coupled to another block in at least one block."""
    A = problem.matrix.to_scipy().tocoo()
    L = problem.block_len
    cross = (A.row // L) != (A.col // L)
    return np.unique(A.row[cross] % L)


def make_inner_interface_layout(problem: SymmetricProblem) -> InnerInterfaceLayout:
    n_b, L = problem.n_b, problem.block_len
    ifc_loc = interface_locals(problem)
    inn_loc = np.setdiff1d(np.arange(L), ifc_loc)
    inner_of_block = [b * L + inn_loc for b in range(n_b)]
    interface_ids = np.concatenate([b * L + ifc_loc for b in range(n_b)]) if n_b else ifc_loc
    perm = np.concatenate(inner_of_block + [interface_ids])
    Ai = problem.matrix.to_scipy()[perm][:, perm].tocsr()
    nK, nI = inn_loc.size, ifc_loc.size
    n_inn = nK * n_b
    Cbar = Ai[n_inn:, n_inn:]
    return InnerInterfaceLayout(
        n_blocks=n_b, n_inn=n_inn, n_ifc=nI * n_b,
        inner_of_block=inner_of_block, interface_ids=interface_ids, perm=perm,
        K=SparseMatrix.from_scipy(Ai[:nK, :nK]),
        B=SparseMatrix.from_scipy(Ai[:nK, n_inn:n_inn + nI]),
        C=[SparseMatrix.from_scipy(Cbar[:nI, j * nI:(j + 1) * nI]) for j in range(n_b)],
        Cbar=SparseMatrix.from_scipy(Cbar),
        matrix=SparseMatrix.from_scipy(Ai),
    )


def make_compatible_rhs(n, seed=0):
    """Uniform random in [-1, 1], shifted to zero mean (Neumann compatibility)."""
    b = np.random.default_rng(seed).uniform(-1.0, 1.0, int(n))
    return b - b.mean()


def export_problem(problem: SymmetricProblem, stem):
    """Write ``<stem>.mtx`` and ``<stem>.ordering`` (one lexicographic index per line)."""
    stem = Path(stem)
    write_matrix_market(stem.with_suffix(".mtx"), problem.matrix, symmetric=True)
    np.savetxt(stem.with_suffix(".ordering"), problem.ordering, fmt="%d")
    return stem.with_suffix(".mtx"), stem.with_suffix(".ordering")
