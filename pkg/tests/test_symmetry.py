import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symamg.krylov import KrylovConfig, pcg
from symamg.fsai import build_fsai
from symamg.problems import build_stretched_grid, make_compatible_rhs, make_symmetric_problem
from symamg.sparse import SparseMatrix
from symamg.symmetry import (SymmetryBasis, apply_basis, block_diagonal, extract_subsystems, sign_matrix,
                             split_inner_outer, symmetric_solve)


def dense_basis(s, n):
    """``P_s`` assembled column by column from the definition (Kronecker of 2x2 reflections)."""
    L = n >> s
    h = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    P = np.eye(1)
    for _ in range(s):
        P = np.kron(P, h)
    return np.kron(P, np.eye(L))


def test_apply_basis_examples():
    r = 1 / np.sqrt(2)
    assert np.allclose(apply_basis(SymmetryBasis(1, 4), [1, 2, 3, 4]), [4 * r, 6 * r, -2 * r, -2 * r], atol=1e-15)
    assert np.allclose(apply_basis(SymmetryBasis(2, 4), [1, 0, 0, 0]), [0.5] * 4, atol=1e-15)


def test_basis_rejects_bad_size():
    with pytest.raises(ValueError):
        SymmetryBasis(2, 6)
    with pytest.raises(ValueError):
        apply_basis(SymmetryBasis(1, 4), np.ones(6))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_basis_involution_and_dense_oracle(s, L, seed):
    n = L << s
    x = np.random.default_rng(seed).standard_normal(n)
    B = SymmetryBasis(s, n)
    y = apply_basis(B, x)
    assert np.allclose(y, dense_basis(s, n) @ x, rtol=0, atol=1e-13 * max(1, np.abs(x).max()))
    assert np.linalg.norm(apply_basis(B, y) - x) <= 1e-13 * np.linalg.norm(x)


def test_basis_columnwise():
    X = np.random.default_rng(0).standard_normal((16, 3))
    B = SymmetryBasis(2, 16)
    Y = apply_basis(B, X)
    for j in range(3):
        assert np.array_equal(Y[:, j], apply_basis(B, X[:, j]))


def test_sign_matrix():
    assert np.array_equal(sign_matrix(1), [[1, 1], [1, -1]])
    W = sign_matrix(3)
    assert np.array_equal(W @ W.T, 8 * np.eye(8))


def test_extract_s1_example():
    A1 = SparseMatrix.from_dense([[2, -1], [-1, 2]])
    A2 = SparseMatrix.from_dense([[0, 0], [0, -1]])
    sub = extract_subsystems([A1, A2])
    assert np.array_equal(sub.subsystems[0].toarray(), [[2, -1], [-1, 1]])
    assert np.array_equal(sub.subsystems[1].toarray(), [[2, -1], [-1, 3]])
    # explicit congruence on the assembled 4x4
    H = np.block([[A1.toarray(), A2.toarray()], [A2.toarray(), A1.toarray()]])
    P = dense_basis(1, 4)
    assert np.allclose(P @ H @ P, block_diagonal(sub).toarray(), atol=1e-14)
    inner, outers = split_inner_outer(sub)
    assert np.array_equal(inner.toarray(), A1.toarray())
    assert np.array_equal(outers[0].toarray(), [[0, 0], [0, -1]])
    assert np.array_equal(outers[1].toarray(), [[0, 0], [0, 1]])


@pytest.mark.parametrize("s", [0, 1, 2, 3])
def test_decoupled_blocks_when_no_outer(s):
    A1 = SparseMatrix.from_dense([[3, -1], [-1, 3]])
    sub = extract_subsystems([A1] + [SparseMatrix.zeros(2)] * ((1 << s) - 1))
    for S in sub.subsystems:
        assert np.array_equal(S.toarray(), A1.toarray())
    assert all(O.nnz == 0 for O in split_inner_outer(sub)[1])


@pytest.mark.parametrize("s", [1, 2, 3])
def test_transform_decouples_mirrored_problem(mirrored8, s):
    prob = mirrored8[s]
    A = prob.matrix.toarray()
    P = dense_basis(s, prob.n)
    T = P @ A @ P
    D = block_diagonal(extract_subsystems(prob.blocks)).toarray()
    L = prob.block_len
    mask = np.kron(np.eye(prob.n_b), np.ones((L, L))) == 0
    assert np.abs(T[mask]).max() <= 1e-12 * np.linalg.norm(A)
    assert np.abs(T - D).max() <= 1e-12 * np.linalg.norm(A)


def test_transform_on_8x8x1():
    prob = make_symmetric_problem(build_stretched_grid(8, 8, 1), 2)
    A = prob.matrix.toarray()
    T = dense_basis(2, prob.n) @ A @ dense_basis(2, prob.n)
    mask = np.kron(np.eye(4), np.ones((16, 16))) == 0
    assert np.abs(T[mask]).max() < 1e-12 * np.linalg.norm(A)


def test_only_first_subsystem_singular(mirrored8):
    sub = extract_subsystems(mirrored8[2].blocks)
    ones = np.ones(sub.block_len)
    sums = [np.abs(S.to_scipy() @ ones).max() for S in sub.subsystems]
    assert sums[0] < 1e-12 and min(sums[1:]) > 1e-6


def test_symmetric_solve_s0_is_plain_solve(mirrored8):
    prob = mirrored8[0]
    b = make_compatible_rhs(prob.n, 0)
    x, st = symmetric_solve(prob, b)
    _, ref = pcg(prob.matrix, build_fsai(prob.matrix), b, KrylovConfig())
    assert st.iterations == [ref.iterations]
    assert st.converged and st.relative_residual <= 1e-8


def test_symmetric_solve_16cube_s1():
    prob = make_symmetric_problem(build_stretched_grid(16, 16, 16), 1)
    b = make_compatible_rhs(prob.n, 1)
    x, st = symmetric_solve(prob, b)
    r = b - prob.matrix.to_scipy() @ x
    assert st.converged and not st.failed_subsystems
    assert np.linalg.norm(r) <= 1e-8 * np.linalg.norm(b)


def test_symmetric_solve_reports_failures(mirrored8):
    prob = mirrored8[1]
    b = make_compatible_rhs(prob.n, 0)
    _, st = symmetric_solve(prob, b, KrylovConfig(max_iterations=2))
    assert not st.converged
    assert st.failed_subsystems == [0, 1]
