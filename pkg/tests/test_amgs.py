import numpy as np
import pytest

from symamg.amg import AmgHierarchy, natural_amg, setup_amg
from symamg.amgs import (AmgsConfig, SchurPrecond, apply_amgs, approximate_schur, build_amgs,
                         decoupled_interface_blocks, ldu_inverse_apply, schur_amg_operator)
from symamg.fsai import build_fsai
from symamg.krylov import KrylovConfig, gmres, pcg
from symamg.problems import (InnerInterfaceLayout, build_stretched_grid, make_compatible_rhs,
                             make_inner_interface_layout, make_symmetric_problem)
from symamg.sparse import SparseMatrix
from symamg.symmetry import SymmetryBasis


def hand_layout(K, B, C_blocks):
    """Two-block inner-interface layout assembled from its pieces."""
    nb = len(C_blocks)
    nK, nI = K.shape[0], C_blocks[0].shape[0]
    Cbar = np.block([[C_blocks[i ^ j] for j in range(nb)] for i in range(nb)])
    Kbar = np.kron(np.eye(nb), K)
    Bbar = np.kron(np.eye(nb), B)
    A = np.block([[Kbar, Bbar], [Bbar.T, Cbar]])
    ids = np.arange(nb * (nK + nI))
    return InnerInterfaceLayout(
        n_blocks=nb, n_inn=nb * nK, n_ifc=nb * nI,
        inner_of_block=[ids[b * nK:(b + 1) * nK] for b in range(nb)], interface_ids=ids[nb * nK:], perm=ids,
        K=SparseMatrix.from_dense(K), B=SparseMatrix.from_dense(B, keep_zeros=False),
        C=[SparseMatrix.from_dense(C) for C in C_blocks], Cbar=SparseMatrix.from_dense(Cbar),
        matrix=SparseMatrix.from_dense(A))


@pytest.fixture(scope="module")
def cube16():
    prob = make_symmetric_problem(build_stretched_grid(16, 16, 16), 1)
    return prob, make_inner_interface_layout(prob)


def test_schur_with_zero_coupling_is_c1():
    K = np.diag([2.0, 3.0, 4.0])
    C1 = np.array([[3.0, -1.0], [-1.0, 3.0]])
    lay = hand_layout(K, np.zeros((3, 2)), [C1, -0.5 * np.eye(2)])
    S = approximate_schur(lay, build_fsai(lay.K), drop_tol=0.0)
    assert np.array_equal(S.toarray(), C1)


def test_schur_diagonal_k_dense_oracle():
    rng = np.random.default_rng(0)
    K = np.diag([2.0, 5.0, 3.0, 4.0])
    B = rng.standard_normal((4, 3))
    C1 = 10 * np.eye(3) + 0.1 * np.ones((3, 3))
    lay = hand_layout(K, B, [C1, -np.eye(3)])
    F = build_fsai(lay.K)
    assert np.allclose(F.G.toarray(), np.diag(1 / np.sqrt(np.diag(K))))
    S = approximate_schur(lay, F, drop_tol=0.0).toarray()
    assert np.allclose(S, C1 - B.T @ np.linalg.inv(K) @ B, rtol=0, atol=1e-12)


def test_schur_1d_eight_cells():
    prob = make_symmetric_problem(build_stretched_grid(8, 1, 1), 1)
    lay = make_inner_interface_layout(prob)
    F = build_fsai(lay.K)
    S = approximate_schur(lay, F, drop_tol=0.0)
    assert S.shape == (1, 1)
    G, B = F.G.toarray(), lay.B.toarray()
    ref = lay.C[0].toarray() - B.T @ G.T @ G @ B
    assert np.allclose(S.toarray(), ref, atol=1e-12)
    exact = lay.C[0].toarray() - B.T @ np.linalg.inv(lay.K.toarray()) @ B
    assert S.toarray()[0, 0] >= exact[0, 0] - 1e-12  # G^T G underestimates K^-1 on B's range


def test_schur_approx_symmetric_positive_diagonal(cube16):
    _, lay = cube16
    S = approximate_schur(lay, build_fsai(lay.K)).to_scipy()
    assert abs(S - S.T).max() == 0
    assert S.diagonal().min() > 0


def test_schur_amg_operator_dense_oracle():
    prob = make_symmetric_problem(build_stretched_grid(8, 8, 4), 1)
    lay = make_inner_interface_layout(prob)
    M = build_amgs(prob, lay, AmgsConfig(k=0))
    C_hat = decoupled_interface_blocks(lay)[1]
    op = schur_amg_operator(lay, M.amg_K, C_hat)
    nK = lay.block_inner_len
    MK = np.column_stack([M.amg_K.apply(e) for e in np.eye(nK)])
    B = lay.B.toarray()
    dense = C_hat.toarray() - B.T @ MK @ B
    x = np.random.default_rng(1).standard_normal(lay.block_ifc_len)
    assert lay.matrix.n_rows <= 512
    assert np.linalg.norm(op(x) - dense @ x) <= 1e-10 * np.linalg.norm(dense @ x)


def test_decoupled_blocks_sign_pattern(cube16):
    _, lay = cube16
    C = [c.to_scipy() for c in lay.C]
    hat = decoupled_interface_blocks(lay)
    assert abs(hat[0].to_scipy() - (C[0] + C[1])).max() == 0
    assert abs(hat[1].to_scipy() - (C[0] - C[1])).max() == 0


def test_zero_coupling_decouples():
    K = np.array([[2.0, -1.0, 0], [-1.0, 2.0, -1.0], [0, -1.0, 2.0]])
    C1 = np.array([[3.0, -1.0], [-1.0, 3.0]])
    C2 = -0.5 * np.eye(2)
    lay = hand_layout(K, np.zeros((3, 2)), [C1, C2])
    amg_K = setup_amg(lay.K)
    fsai_K = build_fsai(lay.K)
    S1 = approximate_schur(lay, fsai_K, 0.0)
    sf = build_fsai(S1)
    M = SchurPrecond(lay, amg_K, fsai_K, S1, sf, [(np.zeros((2, 0)), np.zeros(0))] * 2,
                     SymmetryBasis(1, 4), AmgsConfig())
    r = np.random.default_rng(0).standard_normal(10)
    x = M.apply_layout(r)
    assert np.allclose(x[:3], amg_K.apply(r[:3])) and np.allclose(x[3:6], amg_K.apply(r[3:6]))
    # interface: transform, G^T G per decoupled block, transform back
    P = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    Pb = np.kron(P, np.eye(2))
    GtG = np.column_stack([sf.apply(e) for e in np.eye(2)])
    assert np.allclose(x[6:], Pb @ np.kron(np.eye(2), GtG) @ Pb @ r[6:], atol=1e-14)


def test_amgs_linear_nonsymmetric(cube16):
    prob, lay = cube16
    M = build_amgs(prob, lay, AmgsConfig(k=4))
    assert not M.symmetric
    rng = np.random.default_rng(0)
    r, q = rng.standard_normal((2, prob.n))
    Mr, Mq = apply_amgs(M, r), apply_amgs(M, q)
    assert np.linalg.norm(M.apply(2 * r - 3 * q) - (2 * Mr - 3 * Mq)) <= 1e-12 * np.linalg.norm(2 * Mr - 3 * Mq)
    assert abs(r @ Mq - q @ Mr) > 1e-6 * np.linalg.norm(Mr) * np.linalg.norm(q)
    with pytest.raises(ValueError, match="nonsymmetric"):
        pcg(prob.matrix, M, make_compatible_rhs(prob.n))


def test_amgs_16cube_gmres(cube16):
    prob, lay = cube16
    b = make_compatible_rhs(prob.n, 0)
    cfg = KrylovConfig("gmres")
    M = build_amgs(prob, lay, AmgsConfig(k=8))
    x, st = gmres(prob.matrix, M, b, cfg)
    assert st.converged
    assert np.linalg.norm(b - prob.matrix.to_scipy() @ x) <= 1e-8 * np.linalg.norm(b)
    _, base = gmres(prob.matrix, natural_amg(prob), b, cfg)
    assert base.converged and st.iterations >= base.iterations


def test_ldu_identity():
    prob = make_symmetric_problem(build_stretched_grid(8, 8, 4), 1)
    lay = make_inner_interface_layout(prob)
    assert lay.matrix.n_rows <= 512
    A = lay.matrix.toarray()
    x0 = np.random.default_rng(3).standard_normal(A.shape[0])
    x0 -= x0.mean()
    x = ldu_inverse_apply(lay, A @ x0)
    x -= x.mean()
    assert np.linalg.norm(x - x0) <= 1e-9 * np.linalg.norm(x0)


def test_amgs_s0_and_gating():
    g = build_stretched_grid(8, 8, 8)
    M = build_amgs(make_symmetric_problem(g, 0))
    assert isinstance(M, AmgHierarchy) and M.name == "amgs"
    with pytest.raises(ValueError):
        build_amgs(make_symmetric_problem(g, kind="repeated", n_b=2))
