import numpy as np
import pytest

from alereact import geometry as geo
from alereact.fluid import FluidSettings, FluidState, picard_fluid_step
from alereact.mesh import Domain, FittedMesh, generate_fitted_mesh, update_vertices
from alereact.meshmotion import solve_elastic_displacement, stiffness_weight


def test_stiffness_weight_examples(circle_mesh):
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    two = FittedMesh(V, np.array([[0, 1, 2], [1, 3, 2]]), np.zeros(2, np.int64), [], Domain(0, 2, 0, 2))
    np.testing.assert_allclose(two.areas, [1.0, 2.0])
    np.testing.assert_allclose(stiffness_weight(two), [2.0, 1.5])
    sq = FittedMesh(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]), np.array([[0, 1, 2], [0, 2, 3]]),
                    np.zeros(2, np.int64), [], Domain(0, 1, 0, 1))
    np.testing.assert_array_equal(stiffness_weight(sq), 1.0)
    lam = stiffness_weight(circle_mesh)
    order = np.argsort(circle_mesh.areas)
    assert np.all(np.diff(lam[order]) <= 0)


def test_zero_interface_displacement(circle_mesh):
    rec = solve_elastic_displacement(circle_mesh, [np.zeros((32, 2))], 0.1)
    assert np.all(rec.displacement == 0) and np.all(rec.velocity == 0)
    np.testing.assert_array_equal(rec.jacobian, 1.0)


@pytest.fixture(scope="module")
def big_mesh():
    X = geo.circle_polyline((0, 0), 0.2, 32)
    return generate_fitted_mesh(Domain(-1, 1, -1, 1), [X], geo.perimeter(X) / 32, h_bulk=0.12)


def test_translation_decays_and_respects_boundary(big_mesh):
    m = big_mesh
    d = np.array([0.01, 0.005])
    rec = solve_elastic_displacement(m, [np.tile(d, (32, 1))], 0.1)
    np.testing.assert_array_equal(rec.displacement[m.interfaces[0]], np.tile(d, (32, 1)))
    for side, comp in (("left", 0), ("right", 0), ("bottom", 1), ("top", 1)):
        assert np.all(rec.displacement[m.side_vertices(side), comp] == 0.0)
    r = np.hypot(*m.vertices.T)
    mag = np.hypot(*rec.displacement.T)
    assert mag[r > 0.7].max() < mag[r < 0.21].min()
    np.testing.assert_allclose(rec.velocity, rec.displacement / 0.1)
    assert np.all(rec.jacobian > 0)


def test_jacobian_matches_divergence_to_second_order(big_mesh):
    m = big_mesh
    X = m.interface_positions(0)
    theta = np.arctan2(X[:, 1], X[:, 0])
    shape = np.column_stack([np.cos(2 * theta), 0.5 * np.sin(theta)]) * 0.02
    errs = []
    for s in (1.0, 0.5, 0.25):
        dt = 0.1 * s
        rec = solve_elastic_displacement(m, [s * shape], dt)
        moved = update_vertices(m, rec)
        g = moved.grad_lambda
        w = rec.velocity[m.triangles]
        div = np.einsum("tkd,tkd->t", g, w)
        errs.append(np.abs(rec.jacobian - (1 - dt * div)).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_mesh_velocity_satisfies_kinematic_row():
    X = geo.ellipse_polyline((0, 0), (0.3125, 0.2), 32)
    m = generate_fitted_mesh(Domain(-0.5, 0.5, -0.5, 0.5), [X], geo.perimeter(X) / 32,
                             boundary_kinds=dict(left="wall", right="wall", bottom="free", top="free"))
    dt = 0.01
    s = FluidSettings(10.0, 1.0, (10.0, 1.0), (10.0, 1.0), 0.0, dt)
    res = picard_fluid_step(m, FluidState.zeros(m), np.zeros((m.n_vertices, 2)), np.ones(m.n_triangles),
                            np.full(32, 0.8), s)
    rec = solve_elastic_displacement(m, [res.X[0] - X], dt)
    wG = rec.velocity[m.interfaces[0]]
    nh = geo.time_weighted_normals(X, res.X[0])
    lhs = geo.lumped_inner_product(1.0, np.stack([np.sum(wG * nh, 1), np.sum(np.roll(wG, -1, 0) * nh, 1)], 1),
                                   X, v_edgewise=True)
    nodes = m.interface_edge_nodes(0)
    u = res.velocity[nodes]                                     # (J, 3, 2): start, end, midpoint
    simpson = (u[:, 0] + u[:, 1]) / 6 + 2 * u[:, 2] / 3
    rhs = np.sum(geo.edge_lengths(X) * np.sum(simpson * geo.element_normals(X), axis=1))
    assert abs(lhs - rhs) <= 10 * s.picard_tol * geo.perimeter(X) / dt
    assert abs(rhs) <= 1e-8
