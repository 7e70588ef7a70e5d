import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from alereact import geometry as geo
from alereact.errors import ConvergenceError, SingularSystemError, SolverError
from alereact.fluid import FluidSettings, assemble_coupled_system
from alereact.linalg import (SparseSystem, block_diagonal_preconditioner, factorize_regularized, solve_direct,
                             solve_krylov)
from alereact.mesh import Domain, generate_fitted_mesh


def test_identity_and_diagonal():
    b = np.array([3.0, -1.0, 2.5])
    np.testing.assert_array_equal(solve_direct(SparseSystem(3, matrix=sp.identity(3), rhs=b)), b)
    s = SparseSystem(2, rows=[0, 1], cols=[0, 1], vals=[2.0, 4.0], rhs=[2.0, 4.0])
    np.testing.assert_allclose(solve_direct(s), [1.0, 1.0], rtol=1e-15)


def test_duplicates_summed_and_bad_indices():
    s = SparseSystem(2, rows=[0, 0, 1], cols=[0, 0, 1], vals=[1.0, 1.0, 1.0], rhs=[2.0, 1.0])
    np.testing.assert_allclose(solve_direct(s), [1.0, 1.0])
    with pytest.raises(SolverError):
        SparseSystem(2, rows=[0, 2], cols=[0, 0], vals=[1.0, 1.0])
    with pytest.raises(SingularSystemError):
        solve_direct(SparseSystem(2, rows=[0], cols=[0], vals=[1.0]))


def test_random_spd_matches_dense_oracle():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((50, 50))
    A = M @ M.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve_direct(SparseSystem(50, matrix=sp.csr_matrix(A), rhs=b))
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9, atol=1e-12)


def test_mean_zero_constraint():
    # pure-Neumann 1D Laplacian is singular; the constraint row fixes the constant
    n = 6
    L = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tolil()
    L[0, 0] = L[-1, -1] = 1.0
    b = np.linspace(-1, 1, n)
    b -= b.mean()
    x = solve_direct(SparseSystem(n, matrix=L.tocsr(), rhs=b, constraint=np.ones(n)))
    assert abs(x.sum()) < 1e-12
    np.testing.assert_allclose(L @ x, b, atol=1e-12)


def test_krylov_diagonal_jacobi_one_iteration():
    d = np.array([1.0, 3.0, 7.0, 0.5])
    x, it = solve_krylov(SparseSystem(4, matrix=sp.diags(d), rhs=np.ones(4)), "jacobi", return_iterations=True)
    np.testing.assert_allclose(x, 1 / d, rtol=1e-12)
    assert it == 1


def test_krylov_unreachable_tolerance():
    rng = np.random.default_rng(2)
    A = sp.csr_matrix(rng.standard_normal((40, 40)) + 0.1 * np.eye(40))
    with pytest.raises(ConvergenceError):
        solve_krylov(SparseSystem(40, matrix=A, rhs=np.ones(40)), "none", tol=1e-14, max_iter=1, restart=2)


@pytest.fixture(scope="module")
def stokes_system():
    X = geo.circle_polyline((0, 0), 0.25, 16)
    mesh = generate_fitted_mesh(Domain(-0.5, 0.5, -0.5, 0.5), [X], 0.1)
    s = FluidSettings(Re=1.0, We=1.0, rho=(1.0, 1.0), eta=(1.0, 1.0), gravity=0.0, dt=0.1)
    sys_ = assemble_coupled_system(mesh, np.zeros((mesh.n_p2, 2)), np.zeros((mesh.n_vertices, 2)),
                                   np.ones(mesh.n_triangles), np.ones(16), s)
    return sys_


def test_saddle_point_block_preconditioned_gmres(stokes_system):
    S = stokes_system.saddle_matrix()
    rng = np.random.default_rng(3)
    b = rng.standard_normal(S.shape[0])
    b[stokes_system.dofs.n_free:] = 0.0
    system = SparseSystem(S.shape[0], matrix=S, rhs=b)
    M = block_diagonal_preconditioner(S, stokes_system.dofs.n_free)
    x = solve_krylov(system, M, tol=1e-10, max_iter=2000, restart=200)
    assert system.residual(x) <= 1e-8 * (1 + np.abs(b).max())
    xd = solve_direct(system)
    # condition number is ~1e8, so a 1e-10 residual pins the solution only to ~1e-5
    np.testing.assert_allclose(x, xd, rtol=0, atol=1e-4 * np.abs(xd).max())


def test_regularized_factor_is_close(stokes_system):
    S = stokes_system.saddle_matrix()
    b = np.zeros(S.shape[0])
    b[: stokes_system.dofs.n_free] = 1.0
    x = factorize_regularized(S).solve(b)
    xd = solve_direct(SparseSystem(S.shape[0], matrix=S, rhs=b))
    assert np.abs(x - xd).max() <= 1e-6 * np.abs(xd).max()


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 31))
def test_direct_and_krylov_agree(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    s = SparseSystem(n, matrix=sp.csr_matrix(A), rhs=b)
    xd = solve_direct(s)
    xk = solve_krylov(s, "jacobi", tol=1e-12, max_iter=500, restart=n)
    np.testing.assert_allclose(xk, xd, rtol=1e-8, atol=1e-8 * np.abs(xd).max())
