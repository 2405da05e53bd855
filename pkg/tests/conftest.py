import numpy as np
import pytest
import scipy.sparse as sp

from symamg.problems import build_stretched_grid, make_symmetric_problem
from symamg.sparse import SparseMatrix


def laplace_1d(n, neumann=False):
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="lil")
    if neumann:
        A[0, 0] = A[n - 1, n - 1] = 1.0
    return SparseMatrix.from_scipy(A.tocsr())


def random_sparse(rng, n, m=None, density=0.5):
    m = n if m is None else m
    A = sp.random(n, m, density=density, random_state=np.random.RandomState(rng.integers(2**31)), format="csr")
    return SparseMatrix.from_scipy(A)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cube8():
    return build_stretched_grid(8, 8, 8, 1.5)


@pytest.fixture(scope="session")
def mirrored8(cube8):
    return {s: make_symmetric_problem(cube8, s) for s in range(4)}


# acceptance outcomes, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
