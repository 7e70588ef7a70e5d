import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings, strategies as st

from alereact import geometry as geo
from alereact.errors import PicardError, SurfaceTensionError
from alereact.fem import EDGE_POINTS, EDGE_WEIGHTS
from alereact.fluid import (FluidSettings, FluidState, _bulk_blocks, _interface_geometry, _marangoni,
                            antisymmetric_advection, picard_fluid_step)
from alereact.mesh import Domain, FittedMesh, generate_fitted_mesh

WALLS = dict(left="wall", right="wall", bottom="wall", top="wall")


def _settings(**kw):
    base = dict(Re=10.0, We=1.0, rho=(10.0, 1.0), eta=(10.0, 1.0), gravity=0.0, dt=0.01)
    base.update(kw)
    return FluidSettings(**base)


def _circle(J, kinds=WALLS, r=0.25):
    X = geo.circle_polyline((0, 0), r, J)
    return generate_fitted_mesh(Domain(-0.5, 0.5, -0.5, 0.5), [X], geo.perimeter(X) / J, boundary_kinds=kinds)


def _step(mesh, gamma, s):
    return picard_fluid_step(mesh, FluidState.zeros(mesh), np.zeros((mesh.n_vertices, 2)),
                             np.ones(mesh.n_triangles), np.asarray(gamma, float), s)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_advection_antisymmetry(circle_mesh, seed):
    rng = np.random.default_rng(seed)
    n = circle_mesh.n_p2
    g, u, v = (rng.standard_normal((n, 2)) for _ in range(3))
    rho = np.where(circle_mesh.regions == 0, 10.0, 1.0)
    assert abs(antisymmetric_advection(circle_mesh, rho, g, v, v)) <= 1e-12
    a = antisymmetric_advection(circle_mesh, rho, g, u, v)
    assert antisymmetric_advection(circle_mesh, rho, g, v, u) == pytest.approx(-a, rel=1e-12, abs=1e-13)


def test_advection_matches_symbolic_on_one_triangle():
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = FittedMesh(V, np.array([[0, 1, 2]]), np.zeros(1, np.int64), [], Domain(0, 1, 0, 1))
    x, y = sy.symbols("x y")
    g = (sy.Rational(3, 10), sy.Rational(-7, 10))
    u = (1 + 2 * x - y, 3 * y)
    v = (x + y, 2 - x)
    rho = 2
    conv = lambda a, b: sum((g[0] * sy.diff(a[d], x) + g[1] * sy.diff(a[d], y)) * b[d] for d in (0, 1))
    expr = sy.Rational(1, 2) * rho * (conv(u, v) - conv(v, u))
    exact = float(sy.integrate(sy.integrate(expr, (y, 0, 1 - x)), (x, 0, 1)))
    nodes = mesh.p2_nodes
    ev = lambda f: np.column_stack([sy.lambdify((x, y), f[d])(nodes[:, 0], nodes[:, 1]) * np.ones(len(nodes))
                                    for d in (0, 1)])
    gq = np.tile(np.array(g, float), (len(nodes), 1))
    assert antisymmetric_advection(mesh, rho, gq, ev(u), ev(v)) == pytest.approx(exact, rel=1e-13)


def test_rigid_translation_leaves_no_mass_or_advection_residual(circle_mesh):
    c = np.array([0.3, -0.2])
    u_old = np.tile(c, (circle_mesh.n_p2, 1))
    w = np.tile(c, (circle_mesh.n_vertices, 1))
    K, rhs, _ = _bulk_blocks(circle_mesh, _settings(), u_old, w, np.ones(circle_mesh.n_triangles))
    loc = np.concatenate([np.full(6, c[0]), np.full(6, c[1])])
    res = np.einsum("tij,j->ti", K, loc) - rhs
    assert np.abs(res).max() <= 1e-12 * np.abs(rhs).max()


def test_marangoni_load_matches_edge_quadrature(circle_mesh):
    m = circle_mesh
    X = m.interface_positions(0)
    theta = np.arctan2(X[:, 1], X[:, 0])
    gamma = 1.0 + 0.1 * theta / np.pi
    ifaces, _ = _interface_geometry(m)
    got = _marangoni(m, ifaces, m.n_p2, gamma)
    grad = geo.surface_gradient(gamma, X)
    ell = geo.edge_lengths(X)
    # independent 3-point Gauss evaluation of the P2 edge basis (start, end, midpoint)
    s = EDGE_POINTS
    basis = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)
    integral = ell[:, None] * (EDGE_WEIGHTS @ basis)[None]
    want = np.zeros(2 * m.n_p2)
    nodes = m.interface_edge_nodes(0)
    for d in (0, 1):
        np.add.at(want, d * m.n_p2 + nodes, grad[:, d][:, None] * integral)
    np.testing.assert_allclose(got, want, atol=1e-14)
    assert np.abs(got).max() > 1e-3


def test_static_circle_laplace_young():
    errs = []
    for J in (16, 32):
        mesh = _circle(J)
        res = _step(mesh, np.ones(J), _settings())
        assert np.abs(res.velocity).max() <= 1e-10
        # the default defect-correction path is exact up to its Picard tolerance
        assert np.abs(res.X[0] - mesh.interface_positions(0)).max() <= 10 * _settings().picard_tol
        exact = _step(mesh, np.ones(J), _settings(method="schur"))
        assert exact.iterations <= 2
        assert np.abs(exact.X[0] - mesh.interface_positions(0)).max() <= 1e-12
        errs.append(np.abs(res.kappa[0] - 4.0).max())
        p = res.pressure_p1[mesh.triangles].mean(axis=1) + res.pressure_p0
        a = mesh.areas
        inside = np.sum((a * p)[mesh.regions == 1]) / a[mesh.regions == 1].sum()
        outside = np.sum((a * p)[mesh.regions == 0]) / a[mesh.regions == 0].sum()
        assert inside - outside == pytest.approx(res.kappa[0].mean(), rel=1e-6)
        assert abs(np.sum(a * p)) <= 1e-10
    assert errs[0] / errs[1] > 3.5


def test_ellipse_first_step_conserves_area():
    X = geo.ellipse_polyline((0, 0), (0.3125, 0.2), 32)
    mesh = generate_fitted_mesh(Domain(-0.5, 0.5, -0.5, 0.5), [X], geo.perimeter(X) / 32,
                                boundary_kinds=dict(left="wall", right="wall", bottom="free", top="free"))
    s = _settings(dt=0.01)
    res = _step(mesh, np.full(32, 0.8), s)
    a0, a1 = geo.enclosed_area(X), geo.enclosed_area(res.X[0])
    assert abs(a1 - a0) <= 1e-10 * a0
    assert abs(a1 - a0) <= 10 * s.picard_tol * geo.perimeter(X)
    assert np.abs(res.X[0] - X).max() > 1e-5


def test_picard_zero_tolerance_fails():
    mesh = _circle(16)
    with pytest.raises(PicardError):
        _step(mesh, np.ones(16), _settings(picard_tol=0.0, picard_max_iter=5))


def test_nonpositive_surface_tension():
    mesh = _circle(16)
    gamma = np.ones(16)
    gamma[3] = -0.1
    with pytest.raises(SurfaceTensionError):
        _step(mesh, gamma, _settings())
    res = _step(mesh, gamma, _settings(clamp_gamma=True))
    assert np.all(np.isfinite(res.velocity))


def test_schur_and_defect_paths_agree():
    X = geo.ellipse_polyline((0, 0), (0.3125, 0.2), 16)
    mesh = generate_fitted_mesh(Domain(-0.5, 0.5, -0.5, 0.5), [X], geo.perimeter(X) / 16)
    a = _step(mesh, np.ones(16), _settings(method="defect"))
    b = _step(mesh, np.ones(16), _settings(method="schur"))
    np.testing.assert_allclose(a.X[0], b.X[0], atol=1e-9)
    np.testing.assert_allclose(a.velocity, b.velocity, atol=1e-8)
