"""Observables of a run: areas, masses, energy, bubble metrics and the equilibrium oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipe

from . import geometry as geo
from .errors import ConfigError
from .fem import EDGE_P1, EDGE_WEIGHTS, P1_AT_QUAD, P2_AT_QUAD, TRI_WEIGHTS
from .transport import adsorption_source, reaction_rate

CLIP = 1e-12


# ---------------------------------------------------------------------------
# integrals

def surface_integral(X: np.ndarray, values: np.ndarray) -> float:
    """Integral of the piecewise linear nodal field over the closed polyline X."""
    ell = geo.edge_lengths(X)
    v = np.asarray(values, float)
    return float(np.sum(ell * 0.5 * (v + np.roll(v, -1))))


def bulk_integral(state, b: int, regions=None) -> float:
    """Integral of bulk species ``b`` over the given regions (default: all it lives in)."""
    lay = state.layout
    mesh = lay.mesh
    regions = lay.network.bulk[b].regions if regions is None else regions
    total = 0.0
    for r in regions:
        if r not in lay.vert2dof[b]:
            continue
        sel = mesh.regions == r
        dof = lay.vert2dof[b][r][mesh.triangles[sel]]
        total += float(np.sum(mesh.areas[sel] * state.bulk[b][dof].mean(axis=1)))
    return total


def species_masses(state) -> dict:
    """Per-species totals: bulk integrals per region and surface integrals."""
    lay = state.layout
    mesh, net = lay.mesh, lay.network
    out = {}
    for b, spec in enumerate(net.bulk):
        for r in spec.regions:
            out[f"{spec.name}@{r}"] = bulk_integral(state, b, (r,))
    for k, spec in enumerate(net.surface):
        out[spec.name] = surface_integral(mesh.interface_positions(spec.interface), state.surface[k])
    return out


def total_mass(selector, state, Da: float) -> float:
    """m_s for a weighted combination of species.

    ``selector`` is the label of one of the network's configured combinations
    or a mapping {species name: weight}. Surface species enter with their line
    integral, bulk species with their area integral divided by Da.
    """
    net = state.layout.network
    if isinstance(selector, str):
        found = [terms for label, terms in net.mass_combinations if label == selector]
        if not found:
            raise ConfigError(f"unknown mass combination {selector!r}")
        terms = found[0]
    else:
        terms = []
        for name, w in dict(selector).items():
            if name in [b.name for b in net.bulk]:
                terms.append(("bulk", net.bulk_index(name), float(w)))
            else:
                terms.append(("surface", net.surface_index(name), float(w)))
    mesh = state.layout.mesh
    total = 0.0
    for kind, idx, w in terms:
        if kind == "bulk":
            total += w * bulk_integral(state, idx) / Da
        else:
            X = mesh.interface_positions(net.surface[idx].interface)
            total += w * surface_integral(X, state.surface[idx])
    return total


# ---------------------------------------------------------------------------
# free-energy densities

def f_density(C, E: float, U: float):
    return E * (U + np.log(C) - 1.0) * C


def g_density(K, E: float, U: float, omega: float):
    return E * (U + omega * (np.log(K) - 1.0)) * K


def f_prime(C, E: float, U: float):
    return E * (U + np.log(C))


def g_prime(K, E: float, U: float, omega: float):
    return E * (U + omega * np.log(K))


def dissipation_signs(A, B, C_G, C_plus, C_minus, p, k_perm: float = 1.0):
    """The three source/flux products whose signs make the energy decay.

    Returns ((g'(C_G) - f'(C^+)) S^+, (g'(C_G) - f'(C^-)) S^-,
    (g'(A) - g'(B) - g'(C_G)) R, [f'(C)] J_s) for the default species set with
    the potentials stored in ``p``. The first three are <= 0, the last >= 0.
    """
    E = p.E if p.E > 0 else 1.0
    gC = g_prime(C_G, E, p.U_CG, p.omega_c)
    s_plus = adsorption_source(C_plus, C_G, p.Bi, p.k_d_plus, p.lambda_a, p.omega_c)
    s_minus = adsorption_source(C_minus, C_G, p.Bi, p.k_d_minus, p.lambda_a, p.omega_c)
    R = reaction_rate(A, B, C_G, p.Bi, p.k_r, p.lambda_c, p.omega_a, p.omega_b, p.omega_c)
    fp, fm = f_prime(C_plus, E, p.U_C), f_prime(C_minus, E, p.U_C)
    J = p.Bi * k_perm * (np.asarray(C_plus) - np.asarray(C_minus))
    return ((gC - fp) * s_plus, (gC - fm) * s_minus,
            (g_prime(A, E, p.U_A, p.omega_a) - g_prime(B, E, p.U_B, p.omega_b) - gC) * R,
            (fp - fm) * J)


def _clip(v, flag: list):
    v = np.asarray(v, float)
    if np.any(v <= 0):
        flag[0] = True
        return np.maximum(v, CLIP)
    return v


def kinetic_energy(mesh, fluid, rho) -> float:
    uq = np.einsum("qi,tid->tqd", P2_AT_QUAD, fluid.velocity[mesh.p2_dofs])
    dens = np.where(mesh.regions == 0, rho[0], rho[1])
    return float(0.5 * np.sum(dens * mesh.areas * np.einsum("q,tq->t", TRI_WEIGHTS, np.sum(uq ** 2, axis=2))))


def total_energy(mesh, fluid, state, p, return_flag: bool = False):
    """Kinetic + bulk mixing + interface energy.

    Bulk and surface terms use quadrature of f, g applied to the P1 fields
    (7-point on triangles, 3-point Gauss on edges). Nonpositive concentrations
    are clipped to 1e-12 inside the logarithms; ``return_flag`` reports that.
    """
    flag = [False]
    net = state.layout.network
    E = p.E
    kin = kinetic_energy(mesh, fluid, (p.rho_plus, p.rho_minus)) if fluid is not None else 0.0
    bulk = 0.0
    if E > 0:
        for b, spec in enumerate(net.bulk):
            for r in spec.regions:
                sel = mesh.regions == r
                dof = state.layout.vert2dof[b][r][mesh.triangles[sel]]
                cq = _clip(state.bulk[b][dof] @ P1_AT_QUAD.T, flag)
                bulk += float(np.sum(mesh.areas[sel] * (f_density(cq, E, spec.U) @ TRI_WEIGHTS)))
    surf = 0.0
    for i in range(mesh.n_interfaces):
        X = mesh.interface_positions(i)
        ell = geo.edge_lengths(X)
        dens = np.ones((len(X), len(EDGE_WEIGHTS)))
        if E > 0:
            for k in net.surface_on(i):
                s = net.surface[k]
                v = state.surface[k]
                kq = _clip(np.column_stack([v, np.roll(v, -1)]) @ EDGE_P1.T, flag)
                dens = dens + g_density(kq, E, s.U, s.omega)
        surf += float(np.sum(ell * (dens @ EDGE_WEIGHTS)))
    value = kin + bulk / (p.We * p.Da) + surf / p.We
    return (value, flag[0]) if return_flag else value


# ---------------------------------------------------------------------------
# shape and bubble metrics

def circularity(X: np.ndarray) -> float:
    """Perimeter of the area-equivalent circle over the polyline perimeter."""
    return 2.0 * math.sqrt(math.pi * geo.enclosed_area(X, check_simple=False)) / geo.perimeter(X)


def ellipse_perimeter(a: float, b: float) -> float:
    a, b = max(a, b), min(a, b)
    return 4.0 * a * float(ellipe(1.0 - (b / a) ** 2))


def region_centroid(mesh, region: int) -> np.ndarray:
    sel = mesh.regions == region
    c = mesh.vertices[mesh.triangles[sel]].mean(axis=1)
    a = mesh.areas[sel]
    return (a[:, None] * c).sum(axis=0) / a.sum()


def region_mean_velocity(mesh, fluid, region: int) -> np.ndarray:
    sel = mesh.regions == region
    # P2 vertex functions integrate to zero, edge functions to area / 3
    mid = fluid.velocity[mesh.p2_dofs[sel][:, 3:]].mean(axis=1)
    a = mesh.areas[sel]
    return (a[:, None] * mid).sum(axis=0) / a.sum()


def bubble_metrics(mesh, fluid, interface: int = 0):
    """(C_d, y_c, V_c) of the region enclosed by ``interface``."""
    X = mesh.interface_positions(interface)
    yc = region_centroid(mesh, interface + 1)[1]
    Vc = region_mean_velocity(mesh, fluid, interface + 1)[1] if fluid is not None else 0.0
    return circularity(X), float(yc), float(Vc)


def marangoni_asymmetry(X: np.ndarray, gamma: np.ndarray) -> float:
    """x-component of the line integral of the surface gradient of the P1 field gamma."""
    d = geo.edge_vectors(X)
    ell = np.linalg.norm(d, axis=1)
    return float(np.sum((np.roll(gamma, -1) - gamma) * d[:, 0] / ell))


# ---------------------------------------------------------------------------
# equilibrium oracle

@dataclass
class EquilibriumState:
    L: float
    A_G: float
    B_G: float
    C_G: float
    C: float


def regular_polygon_perimeter(area: float, n: int) -> float:
    """Perimeter of the regular n-gon with the given area."""
    return math.sqrt(4.0 * n * area * math.tan(math.pi / n))


def equilibrium_oracle(m_AB: float, m_ACC: float, area: float, p, domain_area: float,
                       n_vertices: int | None = None) -> EquilibriumState:
    """Spatially uniform steady state of the default network.

    The interface becomes the circle of the conserved ``area`` (or the regular
    polygon with ``n_vertices`` vertices, the discrete equilibrium shape). The
    concentrations satisfy R = 0, S = 0 and the two conserved masses
    m_AB = (A + B) L and m_ACC = (A + C_G) L + C |Omega| / Da.
    """
    if area <= 0 or m_AB < 0 or m_ACC <= 0:
        raise ConfigError("equilibrium oracle needs positive area and masses")
    L = 2.0 * math.sqrt(math.pi * area) if n_vertices is None else regular_polygon_perimeter(area, n_vertices)
    total_AB = m_AB / L

    def product_given(cg):
        # k_r A^wa = k_f (total_AB - A)^wb cg^wc, increasing residual in A
        if total_AB == 0 or cg == 0:
            return 0.0
        res = lambda a: p.k_r * a ** p.omega_a - p.k_f * (total_AB - a) ** p.omega_b * cg ** p.omega_c
        if p.k_r == 0:
            return total_AB
        return brentq(res, 0.0, total_AB, xtol=1e-16, rtol=1e-15)

    def bulk_given(cg):
        return cg ** p.omega_c / p.lambda_a

    def mass_residual(cg):
        return (product_given(cg) + cg) * L + bulk_given(cg) * domain_area / p.Da - m_ACC

    hi = 1.0
    while mass_residual(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise ConfigError("equilibrium oracle: no positive root")
    cg = brentq(mass_residual, 0.0, hi, xtol=1e-16, rtol=1e-15)
    A = product_given(cg)
    return EquilibriumState(L, A, total_AB - A, cg, bulk_given(cg))


def equilibrium_energy(eq: EquilibriumState, p, domain_area: float) -> float:
    """Total energy of the uniform equilibrium at rest (default network potentials)."""
    E = p.E
    surf = 1.0
    bulk = 0.0
    if E > 0:
        surf += (g_density(eq.A_G, E, p.U_A, p.omega_a) + g_density(eq.B_G, E, p.U_B, p.omega_b)
                 + g_density(eq.C_G, E, p.U_CG, p.omega_c))
        bulk = f_density(eq.C, E, p.U_C) * domain_area
    return float(bulk / (p.We * p.Da) + surf * eq.L / p.We)


# ---------------------------------------------------------------------------
# per-step record

@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    area: list
    perimeter: list
    masses: dict
    energy: float
    energy_clipped: bool
    max_u: float
    min_gamma: float
    x_c: float
    y_c: float
    V_c: float
    C_d: float
    marangoni_x: float
    k_gate_min: float
    k_gate_max: float
    species: dict = field(default_factory=dict)
    picard_iterations: int = 0
    regenerated: bool = False

    def row(self) -> dict:
        """Flat mapping for the CSV writer."""
        out = dict(step=self.step, t=self.t)
        for i, (a, L) in enumerate(zip(self.area, self.perimeter)):
            out[f"area_{i + 1}"] = a
            out[f"perimeter_{i + 1}"] = L
        for k, v in self.masses.items():
            out[f"mass_{k}"] = v
        out.update(energy=self.energy, energy_clipped=int(self.energy_clipped), max_u=self.max_u,
                   min_gamma=self.min_gamma, x_c=self.x_c, y_c=self.y_c, V_c=self.V_c, C_d=self.C_d,
                   marangoni_x=self.marangoni_x, k_gate_min=self.k_gate_min, k_gate_max=self.k_gate_max)
        for k, v in self.species.items():
            out[f"species_{k}"] = v
        out.update(picard_iterations=self.picard_iterations, regenerated=int(self.regenerated))
        return out


def collect(step: int, t: float, mesh, fluid, state, p, gamma: np.ndarray | None = None,
            gate_values: dict | None = None, picard_iterations: int = 0,
            regenerated: bool = False) -> DiagnosticsRecord:
    net = state.layout.network
    X = [mesh.interface_positions(i) for i in range(mesh.n_interfaces)]
    areas = [geo.enclosed_area(x, check_simple=False) for x in X]
    if any(a <= 0 for a in areas):
        raise ConfigError("an interface encloses nonpositive area")
    masses = {label: total_mass(label, state, p.Da) for label, _ in net.mass_combinations}
    energy, clipped = total_energy(mesh, fluid, state, p, return_flag=True)
    if X:
        c = region_centroid(mesh, 1)
        vel = region_mean_velocity(mesh, fluid, 1) if fluid is not None else np.zeros(2)
        C_d = circularity(X[0])
    else:
        c, vel, C_d = np.full(2, np.nan), np.full(2, np.nan), np.nan
    min_gamma = float(np.min(gamma)) if gamma is not None and len(gamma) else 1.0
    mx = 0.0
    if gamma is not None and X:
        mx = marangoni_asymmetry(X[0], gamma[:len(X[0])])
    k_all = np.concatenate(list(gate_values.values())) if gate_values else np.zeros(0)
    return DiagnosticsRecord(
        step, t, areas, [geo.perimeter(x) for x in X], masses, energy, clipped,
        fluid.max_speed if fluid is not None else 0.0, min_gamma, float(c[0]), float(c[1]),
        float(vel[1]), C_d, mx,
        float(k_all.min()) if k_all.size else float("nan"),
        float(k_all.max()) if k_all.size else float("nan"),
        species_masses(state), picard_iterations, regenerated)

