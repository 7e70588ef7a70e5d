import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from alereact import geometry as geo
from alereact.errors import GeometryError


def _quadrature_normal(e0, e1, npts=5):
    """Independent oracle: Gauss-Legendre average of the rotated edge vector along the linear motion."""
    s, w = np.polynomial.legendre.leggauss(npts)
    t = 0.5 * (s + 1.0)
    acc = np.zeros(2)
    for ti, wi in zip(t, 0.5 * w):
        e = (1 - ti) * np.asarray(e0) + ti * np.asarray(e1)
        d = e[1] - e[0]
        acc += wi * np.array([d[1], -d[0]])
    d0 = np.asarray(e0[1]) - np.asarray(e0[0])
    return acc / np.hypot(*d0)


def test_element_normal_examples():
    np.testing.assert_allclose(geo.element_normal((0, 0), (0, 1)), [1, 0], atol=0)
    np.testing.assert_allclose(geo.element_normal((0, 0), (1, 0)), [0, -1], atol=0)
    with pytest.raises(GeometryError):
        geo.element_normal((1, 1), (1, 1))


def test_ccw_polygon_normals_point_outward():
    X = geo.circle_polyline((0.3, -0.1), 0.4, 17)
    n = geo.element_normals(X)
    mid = 0.5 * (X + np.roll(X, -1, axis=0)) - geo.polygon_centroid(X)
    assert np.all(np.sum(n * mid, axis=1) > 0)


def test_time_weighted_normal_stationary_and_closed_forms():
    e = [(0.0, 0.0), (0.3, 0.4)]
    np.testing.assert_allclose(geo.time_weighted_normal(e, e), geo.element_normal(*e), atol=1e-15)
    rotated = [(0.0, 0.0), (-0.4, 0.3)]
    got = geo.time_weighted_normal(e, rotated)
    np.testing.assert_allclose(got, _quadrature_normal(e, rotated), atol=1e-14)
    assert np.hypot(*got) == pytest.approx(np.sqrt(2) / 2, rel=1e-14)
    stretched = [(0.0, 0.0), (0.6, 0.8)]
    np.testing.assert_allclose(geo.time_weighted_normal(e, stretched), 1.5 * geo.element_normal(*e),
                               atol=1e-15)
    np.testing.assert_allclose(geo.time_weighted_normal(e, stretched), _quadrature_normal(e, stretched),
                               atol=1e-14)


def test_lumped_inner_product_examples():
    X = geo.circle_polyline((0, 0), 0.25, 40)
    assert geo.lumped_inner_product(1.0, 1.0, X) == pytest.approx(geo.perimeter(X), rel=1e-14)
    # one edge of length 1 as a degenerate two-vertex loop contributes both directions; use a triangle
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    u = np.array([0.0, 1.0, 0.0])
    # edges: 0-1 (len 1): (0 + 1)/2 ; 1-2 (len sqrt2): (1 + 0) sqrt2/2 ; 2-0: 0
    assert geo.lumped_inner_product(u, u, tri) == pytest.approx(0.5 + np.sqrt(2) / 2, rel=1e-15)
    n = geo.element_normals(X)
    both = np.stack([n, n], axis=1)
    np.testing.assert_allclose(geo.lumped_inner_product(1.0, both, X, v_edgewise=True), 0.0, atol=1e-15)


def test_enclosed_area_examples():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert geo.enclosed_area(sq) == 1.0
    J, r = 23, 0.7
    assert geo.enclosed_area(geo.circle_polyline((0, 0), r, J)) == pytest.approx(
        0.5 * J * r ** 2 * np.sin(2 * np.pi / J), rel=1e-13)
    # parametric sampling inscribes an affine image of the regular 64-gon: deficit (2 pi / J)^2 / 6
    ell = geo.enclosed_area(geo.ellipse_polyline((0, 0), (0.3125, 0.2), 64))
    assert ell == pytest.approx(32 * 0.3125 * 0.2 * np.sin(2 * np.pi / 64), rel=1e-13)
    assert ell == pytest.approx(np.pi * 0.0625, rel=2e-3)
    bowtie = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(GeometryError):
        geo.enclosed_area(bowtie)


def test_surface_gradient_examples():
    X = geo.circle_polyline((0, 0), 1.0, 12)
    np.testing.assert_allclose(geo.surface_gradient(np.full(12, 3.0), X), 0.0, atol=1e-15)
    np.testing.assert_allclose(geo.surface_gradient(np.array([0.2, 0.7]), np.array([[0.2, 1.0], [0.7, 1.0]])),
                               [1.0, 0.0], atol=1e-15)


def test_surface_tension_gradient_opposes_species_gradient():
    rng = np.random.default_rng(4)
    X = geo.circle_polyline((0, 0), 0.5, 30)
    A = rng.uniform(0.2, 1.0, 30)
    E, wa = 0.3, 2.0
    gamma = 1.0 - E * wa * A          # linear surface tension in A (other species fixed)
    ga = geo.surface_gradient(gamma, X)
    aa = geo.surface_gradient(A, X)
    np.testing.assert_allclose(ga, -E * wa * aa, rtol=1e-12, atol=1e-14)


def test_volume_identity_examples():
    X = geo.circle_polyline((0, 0), 0.25, 64)
    assert abs(geo.volume_identity_check(X, X + [0.1, -0.05])) <= 1e-15
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert abs(geo.volume_identity_check(sq, 1.01 * sq)) <= 1e-12
    rng = np.random.default_rng(0)
    assert abs(geo.volume_identity_check(X, X + 1e-3 * rng.standard_normal(X.shape))) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (20, 2), elements=st.floats(-0.01, 0.01)))
def test_volume_identity_property(perturb):
    X = geo.circle_polyline((0, 0), 0.3, 20)
    assert abs(geo.volume_identity_check(X, X + perturb)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (15, 2), elements=st.floats(-0.02, 0.02)),
       arrays(np.float64, 15, elements=st.floats(-5, 5)), arrays(np.float64, 15, elements=st.floats(-5, 5)))
def test_closure_and_symmetry(perturb, u, v):
    X = geo.circle_polyline((0, 0), 0.3, 15) + perturb
    A = geo.orientation_vectors(X)
    np.testing.assert_allclose(A.sum(axis=0), 0.0, atol=1e-15)
    a = geo.lumped_inner_product(u, v, X)
    assert a == pytest.approx(geo.lumped_inner_product(v, u, X), rel=1e-14, abs=1e-14)
    assert geo.lumped_inner_product(2 * u + v, v, X) == pytest.approx(
        2 * a + geo.lumped_inner_product(v, v, X), rel=1e-12, abs=1e-12)
