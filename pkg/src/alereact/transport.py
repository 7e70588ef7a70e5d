"""Bulk and surface species on the moving fitted mesh.

Bulk species live in per-region continuous P1 spaces, so interface vertices
carry one dof per adjacent region and jumps across an interface are
representable. Surface species are P1 on each interface polyline. All species
of one step are solved together in a single linear system assembled on the new
mesh, with the old-mesh mass on the right-hand side (same coefficients, old
geometry).
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigError, SourceTermError
from .fem import (EDGE_P1, EDGE_P2, EDGE_WEIGHTS, P1_AT_QUAD, P1_MASS_REF, P2_AT_QUAD, TRI_WEIGHTS,
                  triangle_geometry)
from .linalg import SparseSystem, solve_direct
from .params import CheckedNetwork, DimensionlessParams

log = logging.getLogger(__name__)

CLIP = 1e-12


# ---------------------------------------------------------------------------
# nonlinear reference sources

def _power(x, e):
    x = np.asarray(x, dtype=float)
    if float(e).is_integer():
        return x ** int(e)
    if np.any(x <= 0):
        raise SourceTermError("non-integer exponent applied to a nonpositive concentration")
    return x ** e


def reaction_rate(A, B, C_G, Bi: float, k_r: float, lambda_c: float,
                  omega_a: float = 1.0, omega_b: float = 1.0, omega_c: float = 1.0):
    """Bi (k_f B^wb C^wc - k_r A^wa) with k_f = lambda_c k_r."""
    k_f = lambda_c * k_r
    return Bi * (k_f * _power(B, omega_b) * _power(C_G, omega_c) - k_r * _power(A, omega_a))


def adsorption_source(C_side, C_G, Bi: float, k_d: float, lambda_a: float, omega_c: float = 1.0):
    """Bi (k_ad C - k_d C_G^wc) with k_ad = lambda_a k_d."""
    return Bi * (lambda_a * k_d * np.asarray(C_side, float) - k_d * _power(C_G, omega_c))


def gate(controller, k_max: float, A0: float, beta: float):
    """Logistic permeability k_max / (1 + exp(-beta (A - A0)))."""
    # expit keeps relative accuracy in the sealed tail, where 1 + tanh(.) would cancel to zero
    return k_max * expit(beta * (np.asarray(controller, dtype=float) - A0))


def transmembrane_flux(C_plus, C_minus, Bi: float, k: float = 1.0, gated: dict | None = None,
                       controller=None):
    """Bi k [C] for a constant rule, or Bi k_gate(A) [C] for a gated one."""
    jump = np.asarray(C_plus, float) - np.asarray(C_minus, float)
    if gated is not None:
        return Bi * gate(controller, gated["k_max"], gated["A0"], gated["beta"]) * jump
    return Bi * k * jump


def tilde_power(values: np.ndarray, exponent: float, counter: list | None = None) -> np.ndarray:
    """Power of a previous-step field used in the linearised sources.

    Integer exponents are evaluated as is; for other exponents the base is
    clipped at 1e-12 and the number of clipped entries is added to ``counter``.
    """
    v = np.asarray(values, float)
    if float(exponent).is_integer():
        return v ** int(exponent)
    bad = v < CLIP
    if bad.any():
        if counter is not None:
            counter[0] += int(bad.sum())
        v = np.where(bad, CLIP, v)
    return v ** exponent


# ---------------------------------------------------------------------------
# dof layout

@dataclass(frozen=True)
class DirichletRule:
    """Prescribed bulk concentration on boundary sides (value: number or expression in x, y, t)."""
    bulk: str
    sides: tuple
    value: float | str


_EXPR_NS = {k: getattr(np, k) for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh",
                                        "arctan2", "minimum", "maximum", "where", "pi", "hypot")}


def evaluate_expression(expr, x: np.ndarray, y: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Evaluate a numeric or string initial/boundary expression at points."""
    if isinstance(expr, (int, float, np.floating)):
        return np.full(len(x), float(expr))
    s = str(expr).strip()
    try:
        return np.full(len(x), float(s))
    except ValueError:
        pass
    ns = dict(_EXPR_NS, x=x, y=y, t=t, r=np.hypot(x, y))
    try:
        out = eval(compile(s, "<expression>", "eval"), {"__builtins__": {}}, ns)
    except Exception as exc:
        raise ConfigError(f"cannot evaluate expression {s!r}: {exc}") from exc
    return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()


class SpeciesLayout:
    """Global numbering of all species dofs on one mesh.

    ``vert2dof[b][r]`` maps every mesh vertex to the dof of bulk species ``b``
    in region ``r`` (-1 where the vertex does not touch ``r``); periodic
    partner vertices share a dof. Global order: bulk species in turn, then
    surface species in turn.
    """

    def __init__(self, mesh, network: CheckedNetwork, dirichlet: tuple = ()):
        self.mesh = mesh
        self.network = network
        self.dirichlet = tuple(dirichlet)
        N = mesh.n_vertices
        master = mesh.vertex_master
        self.vert2dof = []
        self._bulk_sizes = []
        for b in network.bulk:
            per_region = {}
            n = 0
            for r in b.regions:
                inside = np.zeros(N, bool)
                inside[mesh.region_vertices(r)] = True
                owners = np.unique(master[inside])
                local = -np.ones(N, dtype=np.int64)
                local[owners] = n + np.arange(len(owners))
                m = local[master]
                m[~inside] = -1
                per_region[r] = m
                n += len(owners)
            self.vert2dof.append(per_region)
            self._bulk_sizes.append(n)
        self.bulk_offset = np.concatenate([[0], np.cumsum(self._bulk_sizes)]).astype(np.int64)
        n_bulk = int(self.bulk_offset[-1])
        sizes = [len(mesh.interfaces[s.interface]) for s in network.surface]
        self.surface_offset = n_bulk + np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_dofs = int(self.surface_offset[-1])
        for rule in self.dirichlet:
            if rule.bulk not in [b.name for b in network.bulk]:
                raise ConfigError(f"Dirichlet rule for unknown bulk species {rule.bulk!r}")

    def bulk_size(self, b: int) -> int:
        return self._bulk_sizes[b]

    def surface_size(self, k: int) -> int:
        return int(self.surface_offset[k + 1] - self.surface_offset[k])

    def for_mesh(self, mesh) -> "SpeciesLayout":
        """Layout on a different triangulation (after regeneration)."""
        return SpeciesLayout(mesh, self.network, self.dirichlet)

    def rebind(self, mesh) -> "SpeciesLayout":
        """Same numbering on a moved copy of the mesh (connectivity unchanged)."""
        new = copy.copy(self)
        new.mesh = mesh
        return new

    def bulk_global(self, b: int, r: int, vertices) -> np.ndarray:
        loc = self.vert2dof[b][r][vertices]
        if np.any(loc < 0):
            raise SourceTermError(f"bulk species {self.network.bulk[b].name!r} has no dof in region {r}")
        return self.bulk_offset[b] + loc

    def surface_global(self, k: int, local) -> np.ndarray:
        return self.surface_offset[k] + np.asarray(local)

    def region_nodal(self, b: int, r: int, values: np.ndarray) -> np.ndarray:
        """Vertex values of bulk species ``b`` seen from region ``r`` (NaN outside)."""
        m = self.vert2dof[b][r]
        out = np.full(self.mesh.n_vertices, np.nan)
        ok = m >= 0
        out[ok] = values[m[ok]]
        return out

    def dirichlet_dofs(self, t: float = 0.0):
        """Global dofs and values of every Dirichlet rule on the current mesh."""
        idx, val = [], []
        names = [b.name for b in self.network.bulk]
        for rule in self.dirichlet:
            b = names.index(rule.bulk)
            verts = np.unique(np.concatenate([self.mesh.side_vertices(s) for s in rule.sides]))
            P = self.mesh.vertices[verts]
            v = evaluate_expression(rule.value, P[:, 0], P[:, 1], t)
            for r in self.network.bulk[b].regions:
                loc = self.vert2dof[b][r][verts]
                ok = loc >= 0
                idx.append(self.bulk_offset[b] + loc[ok])
                val.append(v[ok])
        if not idx:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        idx = np.concatenate(idx)
        val = np.concatenate(val)
        idx, first = np.unique(idx, return_index=True)
        return idx, val[first]


@dataclass
class SpeciesState:
    layout: SpeciesLayout
    bulk: list                 # per bulk species, (bulk_size,) coefficients
    surface: list              # per surface species, (J_i,) nodal values
    t: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate(list(self.bulk) + list(self.surface)) if (self.bulk or self.surface) \
            else np.zeros(0)

    @classmethod
    def from_vector(cls, layout: SpeciesLayout, x: np.ndarray, t: float) -> "SpeciesState":
        bulk = [x[layout.bulk_offset[b]:layout.bulk_offset[b + 1]].copy()
                for b in range(len(layout.network.bulk))]
        surf = [x[layout.surface_offset[k]:layout.surface_offset[k + 1]].copy()
                for k in range(len(layout.network.surface))]
        return cls(layout, bulk, surf, t)

    def copy(self) -> "SpeciesState":
        return SpeciesState(self.layout, [b.copy() for b in self.bulk], [s.copy() for s in self.surface],
                            self.t)

    def surface_by_name(self, name: str) -> np.ndarray:
        return self.surface[self.layout.network.surface_index(name)]


def initial_state(layout: SpeciesLayout, t: float = 0.0) -> SpeciesState:
    """Nodal interpolation of the configured initial data, region by region."""
    mesh, net = layout.mesh, layout.network
    bulk = []
    for b, spec in enumerate(net.bulk):
        vals = np.zeros(layout.bulk_size(b))
        for r in spec.regions:
            m = layout.vert2dof[b][r]
            verts = np.nonzero(m >= 0)[0]
            P = mesh.vertices[verts]
            vals[m[verts]] = evaluate_expression(spec.init[r], P[:, 0], P[:, 1], t)
        bulk.append(vals)
    surf = []
    for s in net.surface:
        P = mesh.interface_positions(s.interface)
        surf.append(evaluate_expression(s.init, P[:, 0], P[:, 1], t))
    state = SpeciesState(layout, bulk, surf, t)
    idx, val = layout.dirichlet_dofs(t)
    if len(idx):
        x = state.vector()
        x[idx] = val
        state = SpeciesState.from_vector(layout, x, t)
    return state


def surface_tension(state: SpeciesState, E: float) -> np.ndarray:
    """gamma = 1 - E sum_K omega_K K at the stacked interface vertices."""
    mesh, net = state.layout.mesh, state.layout.network
    parts = []
    for i in range(mesh.n_interfaces):
        g = np.ones(len(mesh.interfaces[i]))
        for k in net.surface_on(i):
            g -= E * net.surface[k].omega * state.surface[k]
        parts.append(g)
    return np.concatenate(parts) if parts else np.zeros(0)


# ---------------------------------------------------------------------------
# assembly

@dataclass
class SourceEval:
    """Diagnostics of the linearised sources of one step."""
    clipped: int = 0
    gate_values: dict = field(default_factory=dict)   # permeability index -> per-vertex k


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, block):
        """rows (E, a), cols (E, b), block (E, a, b)."""
        E, a, b = block.shape
        self.r.append(np.broadcast_to(rows[:, :, None], (E, a, b)).ravel())
        self.c.append(np.broadcast_to(cols[:, None, :], (E, a, b)).ravel())
        self.v.append(block.ravel())

    def matrix(self, n):
        if not self.r:
            return sp.csr_matrix((n, n))
        return sp.coo_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                             shape=(n, n)).tocsr()


def _edge_data(X: np.ndarray):
    Xn = np.roll(X, -1, axis=0)
    d = Xn - X
    ell = np.linalg.norm(d, axis=1)
    return ell, d / ell[:, None]


def _edge_mass(ell, coef_q=None):
    """Local (J, 2, 2) of sum_q w_q |s| c(q) phi_i phi_j on each edge."""
    c = np.ones((len(ell), len(EDGE_WEIGHTS))) if coef_q is None else coef_q
    return np.einsum("q,jq,qa,qb->jab", EDGE_WEIGHTS, c * ell[:, None], EDGE_P1, EDGE_P1)


def _at_edge_quad(values: np.ndarray) -> np.ndarray:
    """Linear interpolation of vertex values around a closed polyline to edge quadrature points (J, Q)."""
    return np.einsum("qa,ja->jq", EDGE_P1, np.stack([values, np.roll(values, -1)], axis=1))


@dataclass
class SpeciesSystem:
    system: SparseSystem
    sources: SourceEval


def assemble_species_system(mesh_new, old_vertices: np.ndarray, velocity: np.ndarray, w_mesh: np.ndarray,
                            state: SpeciesState, params: DimensionlessParams, dt: float,
                            t_new: float | None = None) -> SpeciesSystem:
    """Linear system for all species at the next time level on ``mesh_new``.

    ``velocity`` holds the P2 velocity coefficients (n_p2, 2) and ``w_mesh`` the
    vertex mesh velocity (N, 2); both are read on the new mesh. ``old_vertices``
    gives the previous vertex positions of the same connectivity. The layout of
    ``state`` must already be bound to ``mesh_new``.
    """
    lay = state.layout
    net = lay.network
    n = lay.n_dofs
    trip = _Triplets()
    rhs = np.zeros(n)
    info = SourceEval()
    clip = [0]
    T = mesh_new.triangles
    area_new = mesh_new.areas
    area_old, _ = triangle_geometry(old_vertices, T)
    gl = mesh_new.grad_lambda

    # bulk velocity minus mesh velocity at quadrature points (T, Q, 2)
    uq = np.einsum("qi,tid->tqd", P2_AT_QUAD, velocity[mesh_new.p2_dofs])
    wq = np.einsum("qi,tid->tqd", P1_AT_QUAD, w_mesh[T])
    rel = uq - wq
    # advection -(phi_j rel . grad phi_i): (T, 3 test, 3 trial)
    adv = -np.einsum("q,qj,tqd,tid->tij", TRI_WEIGHTS, P1_AT_QUAD, rel, gl) * area_new[:, None, None]
    stiff_ref = np.einsum("tid,tjd->tij", gl, gl) * area_new[:, None, None]

    for b, spec in enumerate(net.bulk):
        for r in spec.regions:
            sel = np.nonzero(mesh_new.regions == r)[0]
            dofs = lay.bulk_global(b, r, T[sel])
            mass_new = area_new[sel, None, None] * P1_MASS_REF / dt
            block = mass_new + spec.D[r] / params.Pe * stiff_ref[sel] + adv[sel]
            trip.add(dofs, dofs, block)
            old = state.bulk[b][dofs - lay.bulk_offset[b]]
            np.add.at(rhs, dofs, np.einsum("tij,tj->ti", area_old[sel, None, None] * P1_MASS_REF / dt, old))

    # surface transport
    edge_info = {}
    for i in range(mesh_new.n_interfaces):
        idx = mesh_new.interfaces[i]
        Xn, Xo = mesh_new.vertices[idx], old_vertices[idx]
        ell_n, tau = _edge_data(Xn)
        ell_o, _ = _edge_data(Xo)
        nodes = mesh_new.interface_edge_nodes(i)
        u_edge = np.einsum("qa,jad->jqd", EDGE_P2, velocity[nodes])
        wG = (Xn - Xo) / dt
        w_edge = np.einsum("qa,jad->jqd", EDGE_P1, np.stack([wG, np.roll(wG, -1, axis=0)], axis=1))
        rel_t = np.einsum("jqd,jd->jq", u_edge - w_edge, tau)
        loc = np.stack([np.arange(len(idx)), np.roll(np.arange(len(idx)), -1)], axis=1)
        edge_info[i] = (ell_n, loc)
        dpsi = np.array([-1.0, 1.0])
        # -(K rel_t, d/ds psi): test a, trial b
        adv_s = -np.einsum("q,jq,qb,a->jab", EDGE_WEIGHTS, rel_t, EDGE_P1, dpsi)
        lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
        for k in net.surface_on(i):
            s = net.surface[k]
            dofs = lay.surface_global(k, loc)
            block = _edge_mass(ell_n) / dt + (s.D / params.Pe_G) * lap[None] / ell_n[:, None, None] + adv_s
            trip.add(dofs, dofs, block)
            old = state.surface[k][loc]
            np.add.at(rhs, dofs, np.einsum("jab,jb->ja", _edge_mass(ell_o) / dt, old))

    Bi, Da = params.Bi, params.Da

    def surface_q(k):
        return _at_edge_quad(state.surface[k])

    # reactions  P <=> A + B (product row -R, reactant rows +R)
    for rx in net.reactions:
        ell, loc = edge_info[rx.interface]
        a, bb = rx.reactants
        p = rx.product
        wa, wb, wp = net.surface[a].omega, net.surface[bb].omega, net.surface[p].omega
        Aq, Bq, Pq = surface_q(a), surface_q(bb), surface_q(p)
        # R = Bi (1/2 k_f (a a~^(wa-1) b~^wb + b a~^wa b~^(wb-1)) - k_r p p~^(wp-1))
        coef = {
            a: 0.5 * Bi * rx.k_f * tilde_power(Aq, wa - 1, clip) * tilde_power(Bq, wb, clip),
            bb: 0.5 * Bi * rx.k_f * tilde_power(Aq, wa, clip) * tilde_power(Bq, wb - 1, clip),
            p: -Bi * rx.k_r * tilde_power(Pq, wp - 1, clip),
        }
        for row, sign in ((p, -1.0), (a, 1.0), (bb, 1.0)):
            rdofs = lay.surface_global(row, loc)
            for col, c in coef.items():
                trip.add(rdofs, lay.surface_global(col, loc), sign * _edge_mass(ell, c))

    # adsorption: bulk rows +Da S, surface rows -S, S = Bi (k_ad C - k_d K K~^(w-1))
    for cp in net.couplings:
        ell, loc = edge_info[cp.interface]
        idx = mesh_new.interfaces[cp.interface]
        w = net.surface[cp.surface].omega
        Kq = surface_q(cp.surface)
        sdofs = lay.surface_global(cp.surface, loc)
        for region, _sign, k_d, k_ad in cp.sides:
            bdofs = lay.bulk_global(cp.bulk, region, idx[loc])
            m_ad = _edge_mass(ell, np.full_like(Kq, Bi * k_ad))
            m_d = _edge_mass(ell, -Bi * k_d * tilde_power(Kq, w - 1, clip))
            trip.add(bdofs, bdofs, Da * m_ad)
            trip.add(bdofs, sdofs, Da * m_d)
            trip.add(sdofs, bdofs, -m_ad)
            trip.add(sdofs, sdofs, -m_d)

    # permeability: plus row +Da J, minus row -Da J, J = Bi k (C+ - C-)
    for ip, pr in enumerate(net.permeability):
        i = pr.interface
        ell, loc = edge_info[i]
        idx = mesh_new.interfaces[i]
        if pr.rule == "gated":
            Aq = surface_q(pr.controller)
            kq = gate(Aq, pr.k_max, pr.A0, pr.beta)
            info.gate_values[ip] = gate(state.surface[pr.controller], pr.k_max, pr.A0, pr.beta)
        else:
            kq = np.full((len(idx), len(EDGE_WEIGHTS)), pr.k)
        M = _edge_mass(ell, Bi * kq)
        plus = lay.bulk_global(pr.bulk, 0, idx[loc])
        minus = lay.bulk_global(pr.bulk, i + 1, idx[loc])
        trip.add(plus, plus, Da * M)
        trip.add(plus, minus, -Da * M)
        trip.add(minus, plus, -Da * M)
        trip.add(minus, minus, Da * M)

    A = trip.matrix(n)
    bc_idx, bc_val = lay.dirichlet_dofs(state.t + dt if t_new is None else t_new)
    if len(bc_idx):
        keep = np.ones(n)
        keep[bc_idx] = 0.0
        A = sp.diags(keep) @ A + sp.csr_matrix((np.ones(len(bc_idx)), (bc_idx, bc_idx)), shape=(n, n))
        rhs[bc_idx] = bc_val
    if clip[0]:
        log.warning("clipped %d nonpositive previous-step values before non-integer powers", clip[0])
    info.clipped = clip[0]
    return SpeciesSystem(SparseSystem(n, matrix=sp.csr_matrix(A), rhs=rhs), info)


def species_step(mesh_new, old_vertices: np.ndarray, velocity: np.ndarray, w_mesh: np.ndarray,
                 state: SpeciesState, params: DimensionlessParams, dt: float):
    """Advance every species by one step; returns (new state, SourceEval)."""
    layout = state.layout if state.layout.mesh is mesh_new else state.layout.rebind(mesh_new)
    state = SpeciesState(layout, state.bulk, state.surface, state.t)
    if layout.n_dofs == 0:
        return SpeciesState(layout, [], [], state.t + dt), SourceEval()
    sys_ = assemble_species_system(mesh_new, old_vertices, velocity, w_mesh, state, params, dt)
    x = solve_direct(sys_.system)
    return SpeciesState.from_vector(layout, x, state.t + dt), sys_.sources
