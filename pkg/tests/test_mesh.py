import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alereact import geometry as geo
from alereact.errors import InvertedElementError, MeshGenerationError
from alereact.fluid import FluidState
from alereact.mesh import (Domain, FittedMesh, MeshMotionRecord, generate_fitted_mesh, needs_regeneration,
                           quality, regenerate_and_interpolate, update_vertices)
from alereact.transport import SpeciesLayout, initial_state
from alereact.diagnostics import bulk_integral


def _motion(mesh, disp):
    return MeshMotionRecord(disp, disp, np.ones(mesh.n_triangles))


def test_reference_mesh_size(unit_domain):
    X = geo.circle_polyline((0, 0), 0.25, 64)
    m = generate_fitted_mesh(unit_domain, [X], geo.perimeter(X) / 64)
    assert 0.75 * 1940 <= m.n_vertices <= 1.25 * 1940
    assert 0.75 * 4010 <= m.n_triangles <= 1.25 * 4010
    m.check_fitted()
    np.testing.assert_array_equal(m.interface_positions(0), X)


def test_two_circles_give_three_regions(unit_domain):
    polys = [geo.circle_polyline((-0.2, -0.2), 0.25, 64), geo.circle_polyline((0.25, 0.25), 0.15, 48)]
    m = generate_fitted_mesh(unit_domain, polys, 0.025)
    assert m.region_labels == (0, 1, 2)
    m.check_fitted()
    for i, X in enumerate(polys):
        assert m.areas[m.regions == i + 1].sum() == pytest.approx(geo.enclosed_area(X), rel=1e-12)


def test_overlapping_polylines_rejected(unit_domain):
    polys = [geo.circle_polyline((0, 0), 0.2, 32), geo.circle_polyline((0.1, 0), 0.2, 32)]
    with pytest.raises(MeshGenerationError):
        generate_fitted_mesh(unit_domain, polys, 0.04)


def test_area_sum_equals_domain(circle_mesh, unit_domain):
    assert circle_mesh.areas.sum() == pytest.approx(unit_domain.area, rel=1e-12)


def test_update_vertices_identity_translation_and_collapse(circle_mesh):
    m = circle_mesh
    same = update_vertices(m, _motion(m, np.zeros_like(m.vertices)))
    np.testing.assert_array_equal(same.vertices, m.vertices)
    shifted = update_vertices(m, _motion(m, np.tile([0.1, 0.0], (m.n_vertices, 1))))
    np.testing.assert_allclose(shifted.areas, m.areas, rtol=1e-12)
    np.testing.assert_array_equal(shifted.triangles, m.triangles)
    np.testing.assert_array_equal(shifted.regions, m.regions)
    disp = np.zeros_like(m.vertices)
    a, b, c = m.triangles[0]
    disp[a] = m.vertices[b] - m.vertices[a] + 0.5 * (m.vertices[c] - m.vertices[b])
    with pytest.raises(InvertedElementError):
        update_vertices(m, _motion(m, disp))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_update_and_reverse_is_identity(circle_mesh, seed):
    m = circle_mesh
    disp = 1e-4 * np.random.default_rng(seed).standard_normal(m.vertices.shape)
    there = update_vertices(m, _motion(m, disp))
    back = update_vertices(there, _motion(m, -disp))
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-15)


def _bare_mesh(vertices, triangles):
    v = np.asarray(vertices, float)
    t = np.asarray(triangles, np.int64)
    return FittedMesh(v, t, np.zeros(len(t), np.int64), [], Domain(v[:, 0].min(), v[:, 0].max(),
                                                                     v[:, 1].min(), v[:, 1].max()))


def test_quality_examples():
    eq = _bare_mesh([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]], [[0, 1, 2]])
    assert quality(eq)[0] == pytest.approx(60.0, abs=1e-6)
    n = 4
    xs, ys = np.meshgrid(np.linspace(0, 1, n + 1), np.linspace(0, 1, n + 1))
    V = np.column_stack([xs.ravel(), ys.ravel()])
    T = []
    for j in range(n):
        for i in range(n):
            k = j * (n + 1) + i
            T += [[k, k + 1, k + n + 2], [k, k + n + 2, k + n + 1]]
    ang, ratio, amin = quality(_bare_mesh(V, T))
    assert ang == pytest.approx(45.0, abs=1e-6)
    assert ratio == pytest.approx(1.0)
    assert amin == pytest.approx(0.5 / n ** 2)


def test_sheared_mesh_triggers_regeneration(circle_mesh):
    m = circle_mesh
    assert not needs_regeneration(m)
    v = m.vertices.copy()
    v[:, 0] += 3.0 * v[:, 1] * (0.5 - np.abs(v[:, 1]))
    try:
        sheared = update_vertices(m, _motion(m, v - m.vertices))
    except InvertedElementError:
        return
    assert needs_regeneration(sheared)


def _relax_state(mesh, network):
    return initial_state(SpeciesLayout(mesh, network))


def test_regeneration_transfers_constants_linears_and_jumps(circle_mesh, relax_network):
    m = circle_mesh
    st0 = _relax_state(m, relax_network)
    lay = st0.layout
    fluid = FluidState.zeros(m)
    fluid.velocity[:] = m.p2_nodes * [1.0, -2.0]
    # constant
    new, new_fluid, st1 = regenerate_and_interpolate(m, fluid, st0)
    new.check_fitted()
    np.testing.assert_array_equal(new.interface_positions(0), m.interface_positions(0))
    np.testing.assert_allclose(st1.bulk[0], 0.8, atol=1e-14)
    assert bulk_integral(st1, 0) == pytest.approx(bulk_integral(st0, 0), rel=1e-12)
    np.testing.assert_allclose(new_fluid.velocity, new.p2_nodes * [1.0, -2.0], atol=1e-12)
    # linear on the exterior, discontinuous across the interface
    vals = np.zeros_like(st0.bulk[0])
    plus = m.region_vertices(0)
    minus = m.region_vertices(1)
    vals[lay.vert2dof[0][0][plus]] = m.vertices[plus, 0]
    vals[lay.vert2dof[0][1][minus]] = 0.0
    st0.bulk[0] = vals
    new, _, st1 = regenerate_and_interpolate(m, None, st0)
    nl = st1.layout
    vp = new.region_vertices(0)
    vm = new.region_vertices(1)
    np.testing.assert_allclose(st1.bulk[0][nl.vert2dof[0][0][vp]], new.vertices[vp, 0], atol=1e-12)
    np.testing.assert_array_equal(st1.bulk[0][nl.vert2dof[0][1][vm]], 0.0)
