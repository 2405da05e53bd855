import numpy as np
import pytest

from symamg.problems import (assemble_poisson, build_stretched_grid, export_problem, make_compatible_rhs,
                             make_inner_interface_layout, make_symmetric_problem)
from symamg.sparse import read_matrix_market


def test_grid_midpoint():
    g = build_stretched_grid(2, 1, 1, 1.5)
    assert np.allclose(g.node_coords[0], [0, 0.5, 1], atol=1e-15)


def test_grid_small_gamma_is_uniform():
    g = build_stretched_grid(4, 1, 1, 1e-4)
    assert np.allclose(g.node_coords[0], [0, 0.25, 0.5, 0.75, 1], atol=1e-6)


def test_grid_wall_clustering():
    g = build_stretched_grid(64, 1, 1, 1.5)
    assert g.node_coords[0][1] - g.node_coords[0][0] < 1 / 64


def test_two_cell_neumann():
    A = assemble_poisson(build_stretched_grid(2, 1, 1, 1e-12)).toarray()
    c = A[0, 0]
    assert c > 0
    assert np.allclose(A, c * np.array([[1, -1], [-1, 1]]))


def test_poisson_properties(cube8):
    A = assemble_poisson(cube8).to_scipy()
    assert abs(A - A.T).max() == 0
    assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-12 * abs(A).max()
    w = np.linalg.eigvalsh(A.toarray())
    assert w[0] > -1e-10 and w[1] > 1e-8  # semidefinite with a one-dimensional kernel
    assert np.all(A.getnnz(axis=1) <= 7)


def test_s0_ordering_is_identity(cube8):
    prob = make_symmetric_problem(cube8, 0)
    assert prob.n_b == 1
    assert np.array_equal(prob.ordering, np.arange(cube8.n))


@pytest.mark.parametrize("s", [1, 2, 3])
def test_mirrored_blocks_are_reflection_pattern(mirrored8, s):
    prob = mirrored8[s]
    A = prob.matrix.to_scipy()
    L = prob.block_len
    for i in range(prob.n_b):
        for j in range(prob.n_b):
            blk = A[i * L:(i + 1) * L, j * L:(j + 1) * L]
            assert abs(blk - prob.blocks[i ^ j].to_scipy()).max() == 0


def test_odd_axis_rejected():
    with pytest.raises(ValueError):
        make_symmetric_problem(build_stretched_grid(5, 4, 4), 1)
    with pytest.raises(ValueError):
        make_symmetric_problem(build_stretched_grid(4, 4, 4), 4)


def test_layout_1d():
    prob = make_symmetric_problem(build_stretched_grid(8, 1, 1), 1)
    lay = make_inner_interface_layout(prob)
    assert (lay.n_ifc, lay.n_inn) == (2, 6)


def test_layout_cube_s1(cube8, mirrored8):
    lay = make_inner_interface_layout(mirrored8[1])
    assert lay.n_ifc == 2 * 8 * 8
    A = lay.matrix.to_scipy()
    nK = lay.block_inner_len
    # no inner-inner coupling across blocks, and the inner blocks are all K
    for b in range(lay.n_blocks):
        assert abs(A[b * nK:(b + 1) * nK, b * nK:(b + 1) * nK] - lay.K.to_scipy()).max() == 0
        for c in range(lay.n_blocks):
            if c != b:
                assert A[b * nK:(b + 1) * nK, c * nK:(c + 1) * nK].nnz == 0


def test_compatible_rhs():
    assert np.array_equal(make_compatible_rhs(1, 5), [0.0])
    a = make_compatible_rhs(2, 7)
    assert a[0] == -a[1]
    assert np.array_equal(make_compatible_rhs(100, 3), make_compatible_rhs(100, 3))
    assert abs(make_compatible_rhs(1000, 3).sum()) < 1e-12


def test_repeated_chain_blocks():
    g = build_stretched_grid(4, 4, 4)
    prob = make_symmetric_problem(g, kind="repeated", n_b=3)
    assert prob.n == 3 * g.n and prob.s == 0
    A = prob.matrix.to_scipy()
    L = g.n
    # translational copies: diagonal blocks differ only on the shared faces
    assert A[:L, 2 * L:].nnz == 0


def test_export(tmp_path, mirrored8):
    mtx, order = export_problem(mirrored8[2], tmp_path / "p")
    A = read_matrix_market(mtx)
    assert np.allclose(A.toarray(), mirrored8[2].matrix.toarray(), rtol=1e-15, atol=0)
    assert np.array_equal(np.loadtxt(order, dtype=int), mirrored8[2].ordering)
