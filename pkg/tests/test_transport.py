import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alereact import geometry as geo
from alereact.config import load_scenario
from alereact.diagnostics import total_mass
from alereact.mesh import Domain, generate_fitted_mesh
from alereact.params import (BulkSpecies, SpeciesNetworkConfig, default_network, derive_parameters,
                             validate_network)
from alereact.transport import (SpeciesLayout, adsorption_source, assemble_species_system, gate,
                                initial_state, reaction_rate, species_step, tilde_power, transmembrane_flux)

from conftest import RELAX_RAW

pos = st.floats(0.05, 5.0)


def test_reaction_rate_examples():
    assert reaction_rate(0.3 * 0.5 * 2, 0.5, 2.0, Bi=0.4, k_r=1.0, lambda_c=0.3) == pytest.approx(0, abs=1e-16)
    assert reaction_rate(0.8, 0.8, 0.8, Bi=0.4, k_r=1.0, lambda_c=1.0) == pytest.approx(-0.064, rel=1e-14)
    base = reaction_rate(0.2, 0.7, 0.4, Bi=0.4, k_r=1.0, lambda_c=2.0)
    assert reaction_rate(0.2, 0.7, 0.4, Bi=0.4, k_r=3.0, lambda_c=2.0) == pytest.approx(3 * base, rel=1e-14)


def test_adsorption_examples():
    assert adsorption_source(0.7, 0.7, Bi=0.3, k_d=2.0, lambda_a=1.0) == pytest.approx(0, abs=1e-16)
    assert adsorption_source(0.1, 1.0, Bi=0.1, k_d=1.0, lambda_a=10.0) == pytest.approx(0, abs=1e-16)
    assert adsorption_source(1.0, 0.0, Bi=0.2, k_d=0.5, lambda_a=4.0) == pytest.approx(0.2 * 2.0)


def test_transmembrane_flux_examples():
    assert transmembrane_flux(0.4, 0.4, Bi=0.3) == 0.0
    rule = dict(k_max=0.1, A0=0.8, beta=50.0)
    assert transmembrane_flux(1.0, 0.5, Bi=0.2, gated=rule, controller=0.8) == pytest.approx(0.2 * 0.05 * 0.5)
    sealed = gate(0.0, 0.1, 0.8, 50.0)
    assert sealed == pytest.approx(0.1 * np.exp(-40) / (1 + np.exp(-40)), rel=1e-10)
    assert 4e-19 < sealed < 4.5e-19


def test_tilde_power_clips_only_fractional():
    c = [0]
    np.testing.assert_array_equal(tilde_power(np.array([-1.0, 2.0]), 2, c), [1.0, 4.0])
    assert c[0] == 0
    out = tilde_power(np.array([-1.0, 4.0]), 0.5, c)
    assert c[0] == 1 and out[0] == pytest.approx(1e-6) and out[1] == 2.0


@pytest.fixture(scope="module")
def ellipse_mesh():
    X = geo.ellipse_polyline((0, 0), (0.3125, 0.2), 32)
    return generate_fitted_mesh(Domain(-0.5, 0.5, -0.5, 0.5), [X], geo.perimeter(X) / 32)


def _zero_motion(mesh):
    return np.zeros((mesh.n_p2, 2)), np.zeros((mesh.n_vertices, 2))


def test_constant_is_fixed_point_of_pure_diffusion(ellipse_mesh):
    p = derive_parameters(RELAX_RAW)
    cfg = SpeciesNetworkConfig(bulk_species=(BulkSpecies("C", ("plus", "minus"), {"plus": 0.5, "minus": 1.0},
                                                         {"plus": 0.3, "minus": 0.9}),))
    st0 = initial_state(SpeciesLayout(ellipse_mesh, validate_network(cfg, 1)))
    u, w = _zero_motion(ellipse_mesh)
    st1, _ = species_step(ellipse_mesh, ellipse_mesh.vertices, u, w, st0, p, 0.1)
    np.testing.assert_allclose(st1.vector(), st0.vector(), rtol=0, atol=1e-14)


def test_equilibrium_data_is_fixed_point(ellipse_mesh):
    p = derive_parameters(dict(RELAX_RAW, lambda_c=2.0, lambda_a=3.0))
    B, CG = 0.8, 0.6
    init = dict(A_G=2.0 * B * CG, B_G=B, C_G=CG, C=CG / 3.0)
    st0 = initial_state(SpeciesLayout(ellipse_mesh, validate_network(default_network(p, init), 1)))
    u, w = _zero_motion(ellipse_mesh)
    st1, _ = species_step(ellipse_mesh, ellipse_mesh.vertices, u, w, st0, p, 0.05)
    np.testing.assert_allclose(st1.vector(), st0.vector(), rtol=0, atol=1e-12)


def test_one_relaxation_step_conserves_both_combinations(ellipse_mesh, relax_params):
    net = validate_network(default_network(relax_params, dict(C=0.8, A_G=0.8, B_G=0.8, C_G=0.8)), 1)
    st0 = initial_state(SpeciesLayout(ellipse_mesh, net))
    # moved mesh: shrink x, stretch y (area preserved up to the vertex motion), with a fake velocity
    rng = np.random.default_rng(0)
    new_vertices = ellipse_mesh.vertices * [0.995, 1.005]
    moved = ellipse_mesh.with_vertices(new_vertices)
    u = 0.01 * rng.standard_normal((moved.n_p2, 2))
    w = (new_vertices - ellipse_mesh.vertices) / 0.01
    st1, _ = species_step(moved, ellipse_mesh.vertices, u, w, st0, relax_params, 0.01)
    for label in ("m_AB", "m_ACC"):
        m0, m1 = total_mass(label, st0, 1.0), total_mass(label, st1, 1.0)
        assert abs(m1 - m0) <= 1e-12 * abs(m0)
    assert np.abs(st1.vector() - st0.vector()).max() > 1e-6


@settings(max_examples=15, deadline=None)
@given(A=pos, B=pos, C=pos, wa=st.sampled_from([1.0, 2.0, 0.5]), wb=st.sampled_from([1.0, 1.5]),
       wc=st.sampled_from([1.0, 3.0]))
def test_linearised_reaction_consistent_with_nonlinear(ellipse_mesh, A, B, C, wa, wb, wc):
    p = derive_parameters(dict(RELAX_RAW, omega_a=wa, omega_b=wb, omega_c=wc, lambda_c=1.7))
    net = validate_network(default_network(p, dict(A_G=A, B_G=B, C_G=C, C=0.0)), 1)
    st0 = initial_state(SpeciesLayout(ellipse_mesh, net))
    u, w = _zero_motion(ellipse_mesh)
    sys_ = assemble_species_system(ellipse_mesh, ellipse_mesh.vertices, u, w, st0, p, 0.1).system
    r = sys_.csr() @ st0.vector() - sys_.rhs
    lay = st0.layout
    k = net.surface_index("A_G")
    rows = slice(lay.surface_offset[k], lay.surface_offset[k + 1])
    L = geo.perimeter(ellipse_mesh.interface_positions(0))
    R = reaction_rate(A, B, C, p.Bi, p.k_r, p.lambda_c, wa, wb, wc)
    assert r[rows].sum() == pytest.approx(-R * L, rel=1e-10, abs=1e-13)


def test_cholesterol_system_structure():
    sc = load_scenario(preset="cholesterol", overrides=["interfaces.1=shape=circle; center=-0.2 -0.2; "
                                                        "radius=0.25; vertices=24",
                                                        "interfaces.2=shape=circle; center=0.25 0.25; "
                                                        "radius=0.15; vertices=16"])
    polys = [s.polyline() for s in sc.interfaces]
    mesh = generate_fitted_mesh(sc.domain, polys, sc.interface_spacing())
    net = validate_network(sc.network, 2)
    lay = SpeciesLayout(mesh, net)
    st0 = initial_state(lay)
    u, w = _zero_motion(mesh)
    A = assemble_species_system(mesh, mesh.vertices, u, w, st0, sc.params, 0.01).system.csr()
    assert not net.permeability
    for b, spec in enumerate(net.bulk):
        assert len(spec.regions) == 1
    # each coupling touches only the configured side's dofs of its bulk species
    for cp in net.couplings:
        s = cp.surface
        srows = np.arange(lay.surface_offset[s], lay.surface_offset[s + 1])
        cols = np.unique(A[srows].indices)
        bulk_cols = cols[cols < lay.bulk_offset[-1]]
        b = cp.bulk
        region = cp.sides[0][0]
        allowed = set(lay.vert2dof[b][region][mesh.interfaces[cp.interface]] + lay.bulk_offset[b])
        assert set(bulk_cols.tolist()) <= allowed


def test_gated_rule_uses_previous_controller(ellipse_mesh):
    sc = load_scenario(preset="gating")
    net = validate_network(sc.network, 1)
    st0 = initial_state(SpeciesLayout(ellipse_mesh, net))
    u, w = _zero_motion(ellipse_mesh)
    info = assemble_species_system(ellipse_mesh, ellipse_mesh.vertices, u, w, st0, sc.params, 0.01).sources
    ((ip, k),) = info.gate_values.items()
    rule = net.permeability[ip]
    assert rule.rule == "gated"
    np.testing.assert_allclose(k, gate(st0.surface[rule.controller], 0.1, 0.8, 50.0), rtol=1e-15)
    assert k.max() <= 1e-6 * 0.1
