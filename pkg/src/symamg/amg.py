"""Classical algebraic multigrid.

Setup per level: strength graph, greedy MIS on ``T**power`` (coarse points),
direct or extended+i interpolation, Galerkin ``P^T A P``.  The cycle is a
V(n_pre, n_post) with weighted Jacobi or FSAI smoothing and a dense
pseudo-inverse on the coarsest level, so it is a fixed symmetric operator.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .krylov import PermutedPreconditioner, Preconditioner
from .problems import SymmetricProblem, _chain_grid, assemble_poisson
from .sparse import MultiVector, SparseMatrix, transpose, triple_product_rap

INTERP_SCHEMES = ("direct", "distance2")
SMOOTHERS = ("jacobi", "fsai")


@dataclass(frozen=True)
class AmgConfig:
    theta: float = 0.25
    power: int = 1
    interp: str = "distance2"
    smoother: str = "jacobi"
    omega: float = 2.0 / 3.0
    n_pre: int = 1
    n_post: int = 1
    fsai_power: int = 1
    trunc_factor: float = 0.2
    max_elements: int = 4
    coarse_size: int = 64
    max_levels: int = 25

    def __post_init__(self):
        if self.interp not in INTERP_SCHEMES:
            raise ValueError(f"interp must be one of {INTERP_SCHEMES}")
        if self.smoother not in SMOOTHERS:
            raise ValueError(f"smoother must be one of {SMOOTHERS}")
        if self.power < 1:
            raise ValueError("power must be >= 1")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")


@dataclass
class StrengthGraph:
    T: SparseMatrix
    theta: float


@dataclass
class CoarseningStats:
    coarsening_ratio: float
    avg_nnzr: float


class InterpolationError(RuntimeError):
    def __init__(self, nodes):
        self.nodes = np.atleast_1d(nodes)
        super().__init__(f"fine node(s) {self.nodes[:10].tolist()} reach no coarse point")


def strength_graph(A: SparseMatrix, theta=0.25) -> StrengthGraph:
    """Symmetrized 0/1 graph of couplings with ``|a_ij| >= theta * max_k |a_ik|``."""
    S = A.to_scipy().tocoo()
    off = (S.row != S.col) & (S.data != 0)
    r, c, v = S.row[off], S.col[off], np.abs(S.data[off])
    rmax = np.zeros(A.n_rows)
    np.maximum.at(rmax, r, v)
    keep = v >= theta * rmax[r]
    r, c = r[keep], c[keep]
    T = sp.csr_matrix((np.ones(r.size), (r, c)), shape=A.shape)
    T = ((T + T.T) > 0).astype(np.float64).tocsr()
    T.sort_indices()
    return StrengthGraph(SparseMatrix.from_scipy(T), theta)


def graph_power(T: SparseMatrix, power):
    """Pattern of ``T**power`` without the diagonal, as scipy CSR."""
    G = T.to_scipy()
    G = G.astype(bool).astype(np.int8)
    P = G
    for _ in range(power - 1):
        P = ((P @ G) + P).astype(bool).astype(np.int8)
    P = P.tocsr()
    P.setdiag(0)
    P.eliminate_zeros()
    return P


@numba.njit(cache=True)
def _greedy_mis(ptr, idx, n, forced, blocked):
    label = np.zeros(n, dtype=np.int8)  # 0 undecided, 1 coarse, -1 fine
    for i in range(n):
        if forced[i]:
            label[i] = 1
    for i in range(n):
        if forced[i]:
            for q in range(ptr[i], ptr[i + 1]):
                j = idx[q]
                if label[j] == 0 and blocked[j]:
                    label[j] = -1
    for i in range(n):
        if label[i] != 0:
            continue
        label[i] = 1
        for q in range(ptr[i], ptr[i + 1]):
            j = idx[q]
            if label[j] == 0:
                label[j] = -1
    return label


def coarsen_mis(T, power=1, forced=None, forced_blocks=False):
    """Greedy maximal independent set of ``T**power``; returns a bool mask of coarse points.

    Nodes are visited in ascending index.  ``forced`` nodes are coarse up
    front; with ``forced_blocks`` they also exclude their neighbours.
    """
    if power < 1:
        raise ValueError("power must be >= 1")
    T = T.T if isinstance(T, StrengthGraph) else T
    n = T.n_rows
    G = graph_power(T, power)
    forced = np.zeros(n, dtype=np.bool_) if forced is None else np.asarray(forced, dtype=np.bool_)
    blocked = np.full(n, bool(forced_blocks))
    lab = _greedy_mis(G.indptr.astype(np.int64), G.indices.astype(np.int64), n, forced, blocked)
    return lab == 1


@numba.njit(cache=True)
def _interp_rows(a_ptr, a_idx, a_val, t_ptr, t_idx, coarse, cmap, ext):
    """Weights of every fine row; returns (row counts, cols, vals, first bad row)."""
    n = a_ptr.size - 1
    cap = 0
    for i in range(n):
        cap += (a_ptr[i + 1] - a_ptr[i]) * (8 if ext else 1) + 1
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap)
    cnt = np.zeros(n, dtype=np.int64)
    strong = np.zeros(n, dtype=np.bool_)
    mark = np.full(n, -1, dtype=np.int64)  # position in the local coarse set
    acc = np.zeros(n)
    diag = np.zeros(n)
    for i in range(n):
        for q in range(a_ptr[i], a_ptr[i + 1]):
            if a_idx[q] == i:
                diag[i] = a_val[q]
    pos = 0
    for i in range(n):
        if coarse[i]:
            cols[pos] = cmap[i]
            vals[pos] = 1.0
            cnt[i] = 1
            pos += 1
            continue
        for q in range(t_ptr[i], t_ptr[i + 1]):
            strong[t_idx[q]] = True
        # local coarse set
        loc = np.empty(0, dtype=np.int64)
        nl = 0
        buf = np.empty(64, dtype=np.int64)
        for q in range(t_ptr[i], t_ptr[i + 1]):
            j = t_idx[q]
            if coarse[j] and mark[j] < 0:
                if nl == buf.size:
                    buf = np.concatenate((buf, np.empty(buf.size, dtype=np.int64)))
                mark[j] = nl
                buf[nl] = j
                nl += 1
        if ext:
            for q in range(t_ptr[i], t_ptr[i + 1]):
                k = t_idx[q]
                if coarse[k]:
                    continue
                for qq in range(t_ptr[k], t_ptr[k + 1]):
                    j = t_idx[qq]
                    if coarse[j] and mark[j] < 0:
                        if nl == buf.size:
                            buf = np.concatenate((buf, np.empty(buf.size, dtype=np.int64)))
                        mark[j] = nl
                        buf[nl] = j
                        nl += 1
        loc = buf[:nl]
        if nl == 0:
            for q in range(t_ptr[i], t_ptr[i + 1]):
                strong[t_idx[q]] = False
            return cnt, cols, vals, i
        aii = diag[i]
        if not ext:
            # classical direct interpolation with separate negative/positive scaling
            sn_all = 0.0
            sp_all = 0.0
            sn_c = 0.0
            sp_c = 0.0
            for q in range(a_ptr[i], a_ptr[i + 1]):
                j = a_idx[q]
                if j == i:
                    continue
                v = a_val[q]
                if v < 0:
                    sn_all += v
                    if mark[j] >= 0:
                        sn_c += v
                else:
                    sp_all += v
                    if mark[j] >= 0:
                        sp_c += v
            if sp_c == 0.0:
                aii += sp_all
            alpha = sn_all / sn_c if sn_c != 0.0 else 0.0
            beta = sp_all / sp_c if sp_c != 0.0 else 0.0
            for q in range(a_ptr[i], a_ptr[i + 1]):
                j = a_idx[q]
                if j != i and mark[j] >= 0:
                    v = a_val[q]
                    acc[mark[j]] += -(alpha if v < 0 else beta) * v / aii
        else:
            # extended+i: strong fine neighbours distribute through their own rows
            aii_t = aii
            for q in range(a_ptr[i], a_ptr[i + 1]):
                j = a_idx[q]
                if j == i:
                    continue
                v = a_val[q]
                if (v > 0) == (aii > 0):
                    aii_t += v  # same sign as the diagonal: lumped
                elif mark[j] >= 0:
                    acc[mark[j]] += v
                elif strong[j] and not coarse[j]:
                    k = j
                    akk = diag[k]
                    den = 0.0
                    aki = 0.0
                    for qq in range(a_ptr[k], a_ptr[k + 1]):
                        l = a_idx[qq]
                        w = a_val[qq]
                        if l == k or (w > 0) == (akk > 0):
                            continue  # a-bar keeps only opposite-sign entries
                        if l == i:
                            aki = w
                            den += w
                        elif mark[l] >= 0:
                            den += w
                    if den == 0.0:
                        aii_t += v
                        continue
                    for qq in range(a_ptr[k], a_ptr[k + 1]):
                        l = a_idx[qq]
                        w = a_val[qq]
                        if l == k or (w > 0) == (akk > 0):
                            continue
                        if mark[l] >= 0:
                            acc[mark[l]] += v * w / den
                    aii_t += v * aki / den
                else:
                    aii_t += v  # weak, lumped onto the diagonal
            aii = aii_t
            for t in range(nl):
                acc[t] = -acc[t] / aii
        if pos + nl > cols.size:
            grow = max(cols.size, nl)
            cols = np.concatenate((cols, np.empty(grow, dtype=np.int64)))
            vals = np.concatenate((vals, np.empty(grow)))
        for t in range(nl):
            cols[pos + t] = cmap[loc[t]]
            vals[pos + t] = acc[t]
            acc[t] = 0.0
            mark[loc[t]] = -1
        cnt[i] = nl
        pos += nl
        for q in range(t_ptr[i], t_ptr[i + 1]):
            strong[t_idx[q]] = False
    return cnt, cols[:pos], vals[:pos], -1


def build_interpolation(A: SparseMatrix, coarse, scheme="direct", T=None, theta=0.25) -> SparseMatrix:
    """Prolongation ``P`` (n x n_c); coarse rows are unit rows.

    Raises :class:`InterpolationError` naming a fine node without reachable
    coarse points.
    """
    if scheme not in INTERP_SCHEMES:
        raise ValueError(f"scheme must be one of {INTERP_SCHEMES}")
    coarse = np.asarray(coarse, dtype=np.bool_)
    if T is None:
        T = strength_graph(A, theta).T
    elif isinstance(T, StrengthGraph):
        T = T.T
    cmap = np.cumsum(coarse) - 1
    cnt, cols, vals, bad = _interp_rows(A.row_offsets, A.col_indices, A.values, T.row_offsets,
                                        T.col_indices, coarse, cmap, scheme == "distance2")
    if bad >= 0:
        raise InterpolationError(bad)
    ptr = np.zeros(A.n_rows + 1, dtype=np.int64)
    np.cumsum(cnt, out=ptr[1:])
    P = sp.csr_matrix((vals, cols, ptr), shape=(A.n_rows, int(coarse.sum())))
    P.sort_indices()
    return SparseMatrix.from_scipy(P)


@numba.njit(cache=True)
def _truncate_rows(ptr, idx, val, factor, max_elements):
    n = ptr.size - 1
    keep = np.zeros(val.size, dtype=np.bool_)
    out = val.copy()
    for i in range(n):
        lo, hi = ptr[i], ptr[i + 1]
        if hi - lo <= 1:
            keep[lo:hi] = True
            continue
        w = val[lo:hi]
        a = np.abs(w)
        order = np.argsort(-a, kind="mergesort")
        cut = factor * a[order[0]]
        total = w.sum()
        kept = 0.0
        m = 0
        for t in order:
            if a[t] < cut or (max_elements > 0 and m >= max_elements):
                break
            keep[lo + t] = True
            kept += w[t]
            m += 1
        if kept != 0.0:
            for t in range(hi - lo):
                if keep[lo + t]:
                    out[lo + t] = w[t] * (total / kept)
    return keep, out


def truncate_interpolation(P: SparseMatrix, factor=0.2, max_elements=4) -> SparseMatrix:
    """Drop small weights per row (``< factor * max``, at most ``max_elements`` kept), preserving row sums."""
    if factor <= 0 and max_elements <= 0:
        return P
    keep, vals = _truncate_rows(P.row_offsets, P.col_indices, P.values, float(factor), int(max_elements))
    counts = np.add.reduceat(keep.astype(np.int64), P.row_offsets[:-1]) if P.nnz else np.zeros(P.n_rows, np.int64)
    counts[np.diff(P.row_offsets) == 0] = 0
    ptr = np.zeros(P.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return SparseMatrix(P.n_rows, P.n_cols, ptr, P.col_indices[keep], vals[keep])


def interpolate_with_demotion(A, coarse, scheme, T):
    """Interpolation after turning unreachable fine nodes coarse (iterated to a fixed point)."""
    coarse = np.array(coarse, dtype=np.bool_)
    demoted = 0
    while True:
        try:
            return build_interpolation(A, coarse, scheme, T), coarse, demoted
        except InterpolationError as exc:
            coarse[exc.nodes] = True
            demoted += exc.nodes.size


class JacobiSmoother:
    def __init__(self, A: SparseMatrix, omega):
        d = A.diagonal()
        if np.any(d <= 0):
            raise ValueError("Jacobi smoothing needs a positive diagonal")
        self.scale = omega / d

    def apply(self, r):
        return self.scale * r if r.ndim == 1 else self.scale[:, None] * r

    @property
    def nnz(self):
        return self.scale.size


@dataclass
class AmgLevel:
    A: SparseMatrix
    P: SparseMatrix | None = None
    R: SparseMatrix | None = None
    smoother: object = None


@dataclass
class AmgHierarchy(Preconditioner):
    levels: list
    coarsest_inverse: np.ndarray
    config: AmgConfig
    stats: CoarseningStats
    demoted: int = 0
    symmetric: bool = field(default=True, init=False)
    name: str = field(default="amg", init=False)

    @property
    def n(self):
        return self.levels[0].A.n_rows

    @property
    def operator_complexity(self):
        return sum(l.A.nnz for l in self.levels) / self.levels[0].A.nnz

    def summary(self):
        """Per-level ``(n, nnz, ratio to previous level, avg nnz per row)``."""
        out = []
        for i, l in enumerate(self.levels):
            n = l.A.n_rows
            ratio = n / self.levels[i - 1].A.n_rows if i else 1.0
            out.append({"level": i, "n": n, "nnz": l.A.nnz, "ratio": ratio, "avg_nnzr": l.A.nnz / max(n, 1)})
        return out

    def format_summary(self):
        lines = [f"{'level':>5} {'n':>9} {'nnz':>10} {'ratio':>7} {'nnzr':>7}"]
        for row in self.summary():
            lines.append(f"{row['level']:>5} {row['n']:>9} {row['nnz']:>10} {row['ratio']:>7.3f} {row['avg_nnzr']:>7.2f}")
        return "\n".join(lines)

    def apply(self, r):
        return apply_vcycle(self, r)


def _make_smoother(A, cfg: AmgConfig):
    if cfg.smoother == "fsai":
        from .fsai import build_fsai
        return build_fsai(A, cfg.fsai_power)
    return JacobiSmoother(A, cfg.omega)


def setup_amg(A: SparseMatrix, config: AmgConfig = AmgConfig()) -> AmgHierarchy:
    levels = []
    demoted = 0
    cur = A
    while cur.n_rows > config.coarse_size and len(levels) < config.max_levels - 1:
        T = strength_graph(cur, config.theta).T
        coarse = coarsen_mis(T, config.power)
        P, coarse, d = interpolate_with_demotion(cur, coarse, config.interp, T)
        P = truncate_interpolation(P, config.trunc_factor, config.max_elements)
        demoted += d
        if P.n_cols == cur.n_rows:
            warnings.warn("coarsening stalled; stopping the hierarchy early", RuntimeWarning)
            break
        levels.append(AmgLevel(cur, P, transpose(P), _make_smoother(cur, config)))
        cur = triple_product_rap(P, cur)
    levels.append(AmgLevel(cur))
    # pinv keeps the cycle well defined on singular (pure Neumann) coarse operators
    Ac = cur.toarray()
    inv = np.linalg.pinv(0.5 * (Ac + Ac.T), hermitian=True)
    A0, A1 = levels[0].A, levels[min(1, len(levels) - 1)].A
    ratio = A1.n_rows / A0.n_rows
    stats = CoarseningStats(ratio, A1.nnz / A1.n_rows)
    return AmgHierarchy(levels, inv, config, stats, demoted)


def _cycle(H: AmgHierarchy, lvl, b):
    L = H.levels[lvl]
    if lvl == len(H.levels) - 1:
        return H.coarsest_inverse @ b
    cfg = H.config
    A = L.A
    x = L.smoother.apply(b)
    for _ in range(cfg.n_pre - 1):
        x += L.smoother.apply(b - A @ x)
    rc = L.R @ (b - A @ x)
    x += L.P @ _cycle(H, lvl + 1, rc)
    for _ in range(cfg.n_post):
        x += L.smoother.apply(b - A @ x)
    return x


def apply_vcycle(H: AmgHierarchy, r):
    """One V-cycle from a zero guess; ``r`` may be a vector, 2-D array or MultiVector."""
    if isinstance(r, MultiVector):
        return MultiVector(np.asfortranarray(apply_vcycle(H, r.data)))
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] != H.n:
        raise ValueError(f"residual of length {r.shape[0]} does not match hierarchy size {H.n}")
    if r.ndim == 2:
        r = np.asfortranarray(r)
    return _cycle(H, 0, r)


def natural_amg(problem: SymmetricProblem, config: AmgConfig = AmgConfig()) -> PermutedPreconditioner:
    """Baseline AMG built on the lexicographic numbering, applied in the problem's numbering.

    Greedy MIS depends on node order, so building on one fixed numbering makes
    the baseline the same preconditioner for every symmetry count.
    """
    grid = _chain_grid(problem.grid, problem.n_b) if problem.kind == "repeated" else problem.grid
    H = setup_amg(assemble_poisson(grid), config)
    return PermutedPreconditioner(H, np.argsort(problem.ordering))
