import numpy as np
import pytest
import scipy.sparse as sp

from symamg.krylov import (JacobiPreconditioner, KrylovConfig, MatrixPreconditioner, FunctionPreconditioner,
                           PermutedPreconditioner, gmres, pcg, project_nullspace, solve)
from symamg.problems import assemble_poisson, build_stretched_grid, make_compatible_rhs


def test_pcg_identity():
    b = np.array([1.0, -2.0, 0.5])
    x, st = pcg(np.eye(3), None, b, KrylovConfig(nullspace_projection=False))
    assert st.converged and st.iterations == 1
    assert np.allclose(x, b)


def test_pcg_perfect_preconditioner():
    A = np.diag([1.0, 2.0, 3.0])
    b = np.array([1.0, 1.0, 1.0])
    x, st = pcg(A, np.linalg.inv(A), b, KrylovConfig(nullspace_projection=False))
    assert st.iterations == 1
    assert np.allclose(x, [1, 0.5, 1 / 3])


def test_pcg_neumann_jacobi():
    A = assemble_poisson(build_stretched_grid(16, 16, 16))
    b = make_compatible_rhs(A.n_rows, 0)
    x, st = pcg(A, JacobiPreconditioner(A), b)
    assert st.converged and st.iterations > 1
    assert abs(x.mean()) < 1e-12
    assert np.linalg.norm(b - A.to_scipy() @ x) <= 1e-8 * np.linalg.norm(b)
    assert len(st.relative_residuals) == st.iterations + 1


def test_pcg_rejects_nonsymmetric_preconditioner():
    M = FunctionPreconditioner(lambda r: r, symmetric=False, name="odd")
    with pytest.raises(ValueError, match="GMRES"):
        pcg(np.eye(2), M, np.ones(2))


def test_pcg_breakdown_on_indefinite():
    A = np.diag([1.0, -1.0])
    _, st = pcg(A, None, np.array([1.0, 1.0]), KrylovConfig(nullspace_projection=False))
    assert not st.converged and st.failure == "breakdown"


def test_pcg_max_iterations():
    A = assemble_poisson(build_stretched_grid(8, 8, 8))
    _, st = pcg(A, None, make_compatible_rhs(A.n_rows), KrylovConfig(max_iterations=3))
    assert not st.converged and st.iterations == 3 and st.failure == "max_iterations"


def test_gmres_identity():
    _, st = gmres(np.eye(4), None, np.arange(1.0, 5.0), KrylovConfig("gmres", nullspace_projection=False))
    assert st.converged and st.iterations == 1


def test_gmres_finite_termination():
    rng = np.random.default_rng(5)
    A = np.eye(8) * 4 + rng.standard_normal((8, 8))
    b = rng.standard_normal(8)
    x, st = gmres(A, None, b, KrylovConfig("gmres", nullspace_projection=False))
    assert st.converged and st.iterations <= 8
    assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_gmres_restart_still_converges():
    A = assemble_poisson(build_stretched_grid(8, 8, 8))
    b = make_compatible_rhs(A.n_rows)
    x, st = gmres(A, JacobiPreconditioner(A), b, KrylovConfig("gmres", gmres_restart=10))
    assert st.converged
    assert np.linalg.norm(b - A.to_scipy() @ x) <= 1e-8 * np.linalg.norm(b)


def test_pcg_and_gmres_agree_on_spd():
    A = assemble_poisson(build_stretched_grid(12, 12, 12))
    b = make_compatible_rhs(A.n_rows, 2)
    M = JacobiPreconditioner(A)
    _, s1 = pcg(A, M, b, KrylovConfig("pcg"))
    _, s2 = gmres(A, M, b, KrylovConfig("gmres"))
    assert abs(s1.iterations - s2.iterations) <= 2


def test_project_nullspace():
    assert np.array_equal(project_nullspace([1, 1, 1]), [0, 0, 0])
    assert np.array_equal(project_nullspace([1, -1]), [1, -1])


def test_config_validation():
    for bad in (dict(method="bicg"), dict(tolerance=0), dict(max_iterations=0), dict(gmres_restart=0)):
        with pytest.raises(ValueError):
            KrylovConfig(**bad)


def test_solve_dispatch():
    A = sp.diags([2.0, 3.0])
    _, st = solve(A, None, np.ones(2), KrylovConfig("gmres", nullspace_projection=False))
    assert st.method == "gmres" and st.converged


def test_matrix_preconditioner_symmetry_detection():
    assert MatrixPreconditioner(np.eye(2)).symmetric
    assert not MatrixPreconditioner(np.array([[1.0, 1.0], [0.0, 1.0]])).symmetric


def test_permuted_preconditioner():
    d = np.array([1.0, 2.0, 4.0])
    inner = FunctionPreconditioner(lambda r: r / d)
    perm = np.array([2, 0, 1])
    M = PermutedPreconditioner(inner, perm)
    r = np.array([1.0, 1.0, 1.0])
    out = M.apply(r)
    # inner unknown q lives at outer index perm[q]
    assert np.allclose(out[perm], r[perm] / d)
