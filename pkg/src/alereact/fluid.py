"""Coupled velocity / pressure / interface-position / curvature step on the current mesh.

Velocity is continuous P2 (component-major dof vector), pressure is P1 + P0
with one P0 dof removed to kill the redundant constant. Interface unknowns
(curvature and positions) are P1 on the polylines. Each Picard iterate only
changes the time-weighted vertex normals, which enter a small dense block; the
bulk saddle-point matrix is factorised once per step and the interface
unknowns are obtained through a Schur complement (algebraically identical to
the monolithic solve, which is also available).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .errors import PicardError, SurfaceTensionError
from .fem import (EDGE_P1, EDGE_P2, EDGE_POINTS, EDGE_WEIGHTS, P1_AT_QUAD, P2_AT_QUAD,
                  P2_MASS_REF, TRI_WEIGHTS, p2_gradients)
from .linalg import SparseSystem, factorize, factorize_regularized, solve_direct


@dataclass
class FluidState:
    velocity: np.ndarray          # (n_p2, 2)
    pressure_p1: np.ndarray       # (n_vertices,)
    pressure_p0: np.ndarray       # (n_triangles,)
    t: float = 0.0

    @property
    def max_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.velocity, axis=1), initial=0.0))

    @classmethod
    def zeros(cls, mesh, t: float = 0.0) -> "FluidState":
        return cls(np.zeros((mesh.n_p2, 2)), np.zeros(mesh.n_vertices), np.zeros(mesh.n_triangles), t)

    def pressure_mean(self, mesh) -> float:
        a = mesh.areas
        return float(np.sum(a * (self.pressure_p1[mesh.triangles].mean(axis=1) + self.pressure_p0)) / a.sum())


@dataclass
class CoupledUnknowns:
    velocity: np.ndarray          # (n_p2, 2)
    pressure_p1: np.ndarray
    pressure_p0: np.ndarray
    X: list                       # new interface positions per interface
    kappa: list                   # curvature per interface
    iterations: int = 0
    picard_change: float = 0.0


@dataclass
class FluidSettings:
    Re: float
    We: float
    rho: tuple                    # (plus, minus)
    eta: tuple
    gravity: float = 0.0
    dt: float = 1e-3
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    clamp_gamma: bool = False
    method: str = "defect"        # defect | schur | monolithic

    @classmethod
    def from_params(cls, p, dt: float, **kw) -> "FluidSettings":
        return cls(p.Re, p.We, (p.rho_plus, p.rho_minus), (p.eta_plus, p.eta_minus), p.gravity, dt, **kw)


# ---------------------------------------------------------------------------
# dof bookkeeping

class FluidDofs:
    """Velocity constraints, periodic identification and pressure numbering for one mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        n2 = mesh.n_p2
        self.n_full = 2 * n2
        master = mesh.p2_master
        self.vel_master = np.concatenate([master, master + n2])
        cons_val = {}
        kinds = mesh.boundary_kinds
        for side in ("left", "right", "bottom", "top"):
            kind = kinds.get(side, "wall")
            nodes = mesh.side_p2_nodes(side)
            if kind == "wall":
                for d in (0, 1):
                    for n in nodes:
                        cons_val[d * n2 + master[n]] = 0.0
            elif kind == "slip":
                d = 0 if side in ("left", "right") else 1
                for n in nodes:
                    cons_val[d * n2 + master[n]] = 0.0
            elif kind == "shear":
                y = mesh.p2_nodes[nodes, 1]
                for n, yy in zip(nodes, y):
                    cons_val[master[n]] = float(yy)
                    cons_val[n2 + master[n]] = 0.0
        self.constrained = np.array(sorted(cons_val), dtype=np.int64)
        self.constrained_values = np.array([cons_val[k] for k in self.constrained])
        is_master = self.vel_master == np.arange(self.n_full)
        free_mask = is_master.copy()
        free_mask[self.constrained] = False
        self.free = np.nonzero(free_mask)[0]
        self.n_free = len(self.free)

        # pressure: P1 on master vertices, P0 on all triangles but the first
        vm = mesh.vertex_master
        masters = np.unique(vm)
        self.p1_index = np.searchsorted(masters, vm)
        self.n_p1 = len(masters)
        self.p0_index = np.concatenate([[-1], self.n_p1 + np.arange(mesh.n_triangles - 1)])
        self.n_p = self.n_p1 + mesh.n_triangles - 1
        self.enclosed = "free" not in kinds.values()

    def expand_velocity(self, u_free: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_full)
        full[self.free] = u_free
        full[self.constrained] = self.constrained_values
        full = full[self.vel_master]
        return full.reshape(2, -1).T.copy()

    def expand_pressure(self, p: np.ndarray):
        p1 = p[self.p1_index]
        p0 = np.zeros(self.mesh.n_triangles)
        p0[1:] = p[self.n_p1:self.n_p]
        return p1, p0


# ---------------------------------------------------------------------------
# element kernels

def _material(mesh, values):
    return np.where(mesh.regions == 0, values[0], values[1]).astype(float)


def velocity_at_quad(mesh, u: np.ndarray) -> np.ndarray:
    """P2 velocity (n_p2, 2) at triangle quadrature points (T, Q, 2)."""
    return np.einsum("qi,tid->tqd", P2_AT_QUAD, u[mesh.p2_dofs])


def p1_at_quad(mesh, w: np.ndarray) -> np.ndarray:
    return np.einsum("qj,tj...->tq...", P1_AT_QUAD, w[mesh.triangles])


def advection_local(mesh, rho_t: np.ndarray, g_q: np.ndarray, G: np.ndarray | None = None) -> np.ndarray:
    """Local matrices of the antisymmetric form 1/2[(rho (g.grad) phi_j, phi_i) - (rho (g.grad) phi_i, phi_j)]."""
    if G is None:
        G = p2_gradients(mesh.grad_lambda)
    wq = TRI_WEIGHTS[None, :] * mesh.areas[:, None] * rho_t[:, None]
    gG = np.einsum("tqd,tqid->tqi", g_q, G)                       # (g . grad phi_i)(q)
    conv = np.einsum("tq,tqj,qi->tij", wq, gG, P2_AT_QUAD)        # (g.grad phi_j, phi_i)
    return 0.5 * (conv - conv.transpose(0, 2, 1))


def antisymmetric_advection(mesh, rho, g: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """Evaluate 1/2[(rho (g.grad)u, v) - (rho (g.grad)v, u)] for P2 fields.

    ``rho`` is a scalar or a per-triangle array; ``g``, ``u`` and ``v`` are P2
    nodal arrays of shape (n_p2, 2).
    """
    rho_t = np.broadcast_to(np.asarray(rho, float), (mesh.n_triangles,))
    N = advection_local(mesh, rho_t, velocity_at_quad(mesh, g))
    dofs = mesh.p2_dofs
    return float(sum(np.einsum("ti,tij,tj->", v[dofs, d], N, u[dofs, d]) for d in (0, 1)))


def _bulk_blocks(mesh, s: FluidSettings, u_old: np.ndarray, w_old: np.ndarray, jac: np.ndarray):
    """Local 12x12 momentum matrices and local right-hand sides."""
    area = mesh.areas
    rho_t = _material(mesh, s.rho)
    eta_t = _material(mesh, s.eta)
    G = p2_gradients(mesh.grad_lambda)                               # (T,Q,6,2)
    wq = TRI_WEIGHTS[None, :] * area[:, None]
    c = (2.0 / s.Re) * eta_t[:, None] * wq
    Gx, Gy = G[..., 0], G[..., 1]
    xx = np.einsum("tq,tqi,tqj->tij", c, Gx, Gx)
    yy = np.einsum("tq,tqi,tqj->tij", c, Gy, Gy)
    xy = np.einsum("tq,tqi,tqj->tij", c, Gy, Gx)                    # row x-test, col y-trial
    mass = (rho_t * area / s.dt)[:, None, None] * P2_MASS_REF[None]
    g_q = velocity_at_quad(mesh, u_old) - p1_at_quad(mesh, w_old)
    adv = advection_local(mesh, rho_t, g_q, G)
    T = mesh.n_triangles
    K = np.zeros((T, 12, 12))
    K[:, :6, :6] = mass + adv + xx + 0.5 * yy
    K[:, 6:, 6:] = mass + adv + yy + 0.5 * xx
    K[:, :6, 6:] = 0.5 * xy
    K[:, 6:, :6] = 0.5 * xy.transpose(0, 2, 1)
    # right-hand side: old momentum with the Jacobian weight, plus gravity
    ul = u_old[mesh.p2_dofs]                                          # (T,6,2)
    fac = rho_t * area * np.sqrt(jac) / s.dt
    rhs = np.einsum("ij,tjd->tid", P2_MASS_REF, ul) * fac[:, None, None]
    if s.gravity != 0.0:
        rhs[:, 3:, 1] += (rho_t * area * s.gravity / 3.0)[:, None]
    rhs = np.concatenate([rhs[..., 0], rhs[..., 1]], axis=1)          # (T,12)
    return K, rhs, G


def _divergence_blocks(mesh, G):
    """Local -(q, div v) for P1 and P0 pressure test functions: (T,3,12) and (T,12)."""
    wq = TRI_WEIGHTS[None, :] * mesh.areas[:, None]
    b1 = -np.einsum("tq,qk,tqid->tkdi", wq, P1_AT_QUAD, G).reshape(mesh.n_triangles, 3, 12)
    b0 = -np.einsum("tq,tqid->tdi", wq, G).reshape(mesh.n_triangles, 12)
    return b1, b0


def _interface_geometry(mesh):
    """Per-interface edge data on the current mesh."""
    out = []
    off = 0
    for i in range(mesh.n_interfaces):
        X = mesh.interface_positions(i)
        J = len(X)
        nodes = mesh.interface_edge_nodes(i)
        d = geo.edge_vectors(X)
        ell = np.linalg.norm(d, axis=1)
        out.append(dict(X=X, J=J, nodes=nodes, ell=ell, tau=d / ell[:, None],
                        normal=geo.element_normals(X), off=off,
                        ends=np.column_stack([np.arange(J), np.roll(np.arange(J), -1)]) + off))
        off += J
    return out, off


def _interface_force(mesh, dofs: FluidDofs, ifaces, n_if: int, gamma: np.ndarray):
    """Sparse F (n_full x n_if) with F[(i,d),k] = <gamma psi_k n_d, phi_i>, and the same without gamma."""
    n2 = mesh.n_p2
    rows, cols, vf, vg = [], [], [], []
    for f in ifaces:
        gq = np.einsum("qa,ja->jq", EDGE_P1, gamma[f["ends"]])                        # (J,Q)
        base = f["ell"][:, None, None, None] * np.einsum("q,qk,qi->qki", EDGE_WEIGHTS, EDGE_P1, EDGE_P2)[None]
        for d in (0, 1):
            nd = f["normal"][:, d][:, None, None, None]
            loc_g = base * nd                                                              # (J,Q,2,3)
            loc_f = loc_g * gq[:, :, None, None]
            r = np.broadcast_to(d * n2 + mesh.p2_master[f["nodes"]][:, None, :], (f["J"], 2, 3))
            c = np.broadcast_to(f["ends"][:, :, None], (f["J"], 2, 3))
            rows.append(r.ravel())
            cols.append(c.ravel())
            vf.append(loc_f.sum(axis=1).ravel())
            vg.append(loc_g.sum(axis=1).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    F = sp.csr_matrix((np.concatenate(vf), (rows, cols)), shape=(dofs.n_full, n_if))
    G = sp.csr_matrix((np.concatenate(vg), (rows, cols)), shape=(dofs.n_full, n_if))
    return F, G


def _marangoni(mesh, ifaces, n2: int, gamma: np.ndarray) -> np.ndarray:
    """Vector of <grad_s gamma, phi_i e_d> over all interfaces (n_full,)."""
    out = np.zeros(2 * n2)
    wts = np.array([1 / 6, 1 / 6, 2 / 3])
    for f in ifaces:
        dg = gamma[f["ends"][:, 1]] - gamma[f["ends"][:, 0]]
        for d in (0, 1):
            vals = (dg * f["tau"][:, d])[:, None] * wts[None]
            np.add.at(out, d * n2 + mesh.p2_master[f["nodes"]], vals)
    return out


def _surface_stiffness(ifaces, n_if: int) -> np.ndarray:
    K = np.zeros((n_if, n_if))
    for f in ifaces:
        a, b = f["ends"][:, 0], f["ends"][:, 1]
        inv = 1.0 / f["ell"]
        np.add.at(K, (a, a), inv)
        np.add.at(K, (b, b), inv)
        np.add.at(K, (a, b), -inv)
        np.add.at(K, (b, a), -inv)
    return K


@dataclass
class CoupledSystem:
    """Per-step assembled blocks; the Picard iterate only supplies the time-weighted normals."""
    mesh: object
    dofs: FluidDofs
    settings: FluidSettings
    A: sp.csr_matrix              # free x free momentum block
    B: sp.csr_matrix              # n_p x free
    mean_row: np.ndarray | None   # pressure mean constraint (enclosed flows)
    F: sp.csr_matrix              # free x n_if, already scaled by 1/We
    G: sp.csr_matrix              # n_if x free (u . n^m against psi)
    g_lift: np.ndarray            # contribution of constrained velocities to G u
    rhs_u: np.ndarray
    rhs_p: np.ndarray             # divergence row data from constrained velocities
    K_surf: np.ndarray
    X_old: np.ndarray             # (n_if, 2)
    ifaces: list
    n_if: int
    _lu: object = field(default=None, repr=False)
    _schur: tuple | None = field(default=None, repr=False)
    _defect: tuple | None = field(default=None, repr=False)

    @property
    def n_saddle(self) -> int:
        return self.dofs.n_free + self.dofs.n_p + (1 if self.mean_row is not None else 0)

    def saddle_matrix(self) -> sp.csc_matrix:
        blocks = [[self.A, self.B.T], [self.B, None]]
        if self.mean_row is not None:
            c = sp.csr_matrix(self.mean_row.reshape(1, -1))
            blocks = [[self.A, self.B.T, None], [self.B, None, c.T], [None, c, None]]
        return sp.bmat(blocks, format="csc")

    def vertex_normals(self, X_new: np.ndarray) -> np.ndarray:
        om = np.zeros((self.n_if, 2))
        for f in self.ifaces:
            sl = slice(f["off"], f["off"] + f["J"])
            om[sl] = geo.lumped_vertex_normals(self.X_old[sl], X_new[sl])
        return om

    def monolithic(self, X_iterate: np.ndarray, normals: np.ndarray | None = None) -> SparseSystem:
        """Full sparse system in (u_free, p[, multiplier], kappa, X_x, X_y) for one Picard iterate.

        ``normals`` overrides the time-weighted vertex normals of ``X_iterate``.
        """
        om = self.vertex_normals(X_iterate) if normals is None else normals
        S = self.saddle_matrix()
        n_s = S.shape[0]
        n_if = self.n_if
        dt = self.settings.dt
        pad = n_s - self.dofs.n_free
        Fp = sp.vstack([self.F, sp.csr_matrix((pad, n_if))])
        Gp = sp.hstack([self.G, sp.csr_matrix((n_if, pad))])
        Wx, Wy = sp.diags(om[:, 0]), sp.diags(om[:, 1])
        K = sp.csr_matrix(self.K_surf)
        M = sp.bmat([
            [S, Fp, None, None],
            [-dt * Gp, None, Wx, Wy],
            [None, Wx, -K, None],
            [None, Wy, None, -K],
        ], format="csr")
        rhs = np.concatenate([
            self.rhs_u, self.rhs_p, np.zeros(pad - self.dofs.n_p),
            om[:, 0] * self.X_old[:, 0] + om[:, 1] * self.X_old[:, 1] + dt * self.g_lift,
            np.zeros(2 * n_if)])
        return SparseSystem(M.shape[0], matrix=M, rhs=rhs)

    def _prepare_schur(self):
        if self._schur is None:
            self._lu = factorize(self.saddle_matrix())
            n_s = self.n_saddle
            base = np.zeros(n_s)
            base[: self.dofs.n_free] = self.rhs_u
            base[self.dofs.n_free:self.dofs.n_free + self.dofs.n_p] = self.rhs_p
            cols = np.zeros((n_s, self.n_if))
            cols[: self.dofs.n_free] = -self.F.toarray()
            sol0 = self._lu.solve(base)
            solk = self._lu.solve(cols) if self.n_if else np.zeros((n_s, 0))
            GU = self.G @ solk[: self.dofs.n_free]
            g0 = self.G @ sol0[: self.dofs.n_free] + self.g_lift
            self._schur = (sol0, solk, GU, g0)
        return self._schur

    def solve_iterate(self, X_iterate: np.ndarray):
        """Solve for one Picard iterate; returns (saddle solution, kappa, X_new)."""
        dt = self.settings.dt
        n_if = self.n_if
        if self.settings.method == "monolithic":
            sys_ = self.monolithic(X_iterate)
            x = solve_direct(sys_)
            n_s = self.n_saddle
            kappa = x[n_s:n_s + n_if]
            X_new = np.column_stack([x[n_s + n_if:n_s + 2 * n_if], x[n_s + 2 * n_if:]])
            return x[:n_s], kappa, X_new
        sol0, solk, GU, g0 = self._prepare_schur()
        om = self.vertex_normals(X_iterate)
        Z = np.zeros((n_if, n_if))
        Wx, Wy = np.diag(om[:, 0]), np.diag(om[:, 1])
        M = np.block([[-dt * GU, Wx, Wy], [Wx, -self.K_surf, Z], [Wy, Z, -self.K_surf]])
        rhs = np.concatenate([om[:, 0] * self.X_old[:, 0] + om[:, 1] * self.X_old[:, 1] + dt * g0,
                              np.zeros(2 * n_if)])
        y = np.linalg.solve(M, rhs)
        kappa = y[:n_if]
        X_new = np.column_stack([y[n_if:2 * n_if], y[2 * n_if:]])
        return sol0 + solk @ kappa, kappa, X_new


    def solve_defect(self, X_start: np.ndarray, tol: float, max_iter: int):
        """Picard iteration as defect correction against one approximate factorisation.

        The monolithic matrix at ``X_start`` is factorised once (regularised,
        unpivoted); each iterate then updates the unknowns with the residual of
        the exact system at the current normals. Returns (saddle solution,
        kappa, X_new, iterations, change) or None if the loop fails to contract.
        """
        n_s, n_if = self.n_saddle, self.n_if
        if self._defect is None:
            static = self.monolithic(self.X_old, np.zeros_like(self.X_old)).csr()
            lu = factorize_regularized(self.monolithic(X_start).csr())
            self._defect = (static, lu)
        static, lu = self._defect
        base = static.shape[0]
        rhs0 = np.zeros(base)
        rhs0[: self.dofs.n_free] = self.rhs_u
        rhs0[self.dofs.n_free:self.dofs.n_free + self.dofs.n_p] = self.rhs_p
        x = np.zeros(base)
        X_it = X_start.copy()
        change, prev = np.inf, np.inf
        ks, kx, ky = slice(n_s, n_s + n_if), slice(n_s + n_if, n_s + 2 * n_if), slice(n_s + 2 * n_if, None)
        for it in range(1, max_iter + 1):
            om = self.vertex_normals(X_it)
            r = rhs0 - static @ x
            r[ks] += om[:, 0] * self.X_old[:, 0] + om[:, 1] * self.X_old[:, 1] + self.settings.dt * self.g_lift
            r[ks] -= om[:, 0] * x[kx] + om[:, 1] * x[ky]
            r[kx] -= om[:, 0] * x[ks]
            r[ky] -= om[:, 1] * x[ks]
            delta = lu.solve(r)
            x = x + delta
            if not np.all(np.isfinite(x)):
                return None
            X_new = np.column_stack([x[kx], x[ky]])
            change = float(np.max(np.abs(X_new - X_it), initial=0.0))
            X_it = X_new
            # the approximate factor leaves the other unknowns lagging behind X
            lag = float(np.max(np.abs(delta[:n_s + n_if]), initial=0.0)) / (1.0 + np.max(np.abs(x[:n_s + n_if])))
            if change < tol and lag < tol:
                return x[:n_s], x[ks], X_new, it, change
            if it > 3 and change > 0.9 * prev:
                return None
            prev = change
        return None


def surface_tension_check(gamma: np.ndarray, clamp: bool) -> np.ndarray:
    if gamma.size and np.min(gamma) <= 0:
        if not clamp:
            raise SurfaceTensionError(f"surface tension became non-positive (min {np.min(gamma):.3e})")
        gamma = np.maximum(gamma, 1e-3)
    return gamma


def assemble_coupled_system(mesh, u_old: np.ndarray, w_old: np.ndarray, jac: np.ndarray,
                            gamma: np.ndarray, settings: FluidSettings,
                            dofs: FluidDofs | None = None) -> CoupledSystem:
    """Assemble every piece of the coupled step that does not depend on the Picard iterate.

    ``u_old`` (n_p2, 2) are the previous velocity coefficients, ``w_old``
    (n_vertices, 2) the mesh velocity, ``jac`` the per-triangle Jacobian and
    ``gamma`` the surface tension at the stacked interface vertices.
    """
    dofs = dofs or FluidDofs(mesh)
    gamma = surface_tension_check(np.asarray(gamma, float), settings.clamp_gamma)
    n2 = mesh.n_p2
    K, rhs_loc, G = _bulk_blocks(mesh, settings, u_old, w_old, jac)
    dof12 = np.hstack([mesh.p2_dofs, mesh.p2_dofs + n2])
    dof12 = dofs.vel_master[dof12]
    T = mesh.n_triangles
    r = np.broadcast_to(dof12[:, :, None], (T, 12, 12)).ravel()
    c = np.broadcast_to(dof12[:, None, :], (T, 12, 12)).ravel()
    A_full = sp.csr_matrix((K.ravel(), (r, c)), shape=(dofs.n_full, dofs.n_full))
    b_full = np.bincount(dof12.ravel(), weights=rhs_loc.ravel(), minlength=dofs.n_full)

    # pressure coupling
    b1, b0 = _divergence_blocks(mesh, G)
    p1 = dofs.p1_index[mesh.triangles]                                 # (T,3)
    rows = [np.broadcast_to(p1[:, :, None], (T, 3, 12)).ravel()]
    cols = [np.broadcast_to(dof12[:, None, :], (T, 3, 12)).ravel()]
    vals = [b1.ravel()]
    keep = dofs.p0_index >= 0
    rows.append(np.broadcast_to(dofs.p0_index[keep][:, None], (keep.sum(), 12)).ravel())
    cols.append(dof12[keep].ravel())
    vals.append(b0[keep].ravel())
    B_full = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(dofs.n_p, dofs.n_full))

    ifaces, n_if = _interface_geometry(mesh)
    F_full, G_full = _interface_force(mesh, dofs, ifaces, n_if, gamma)
    b_full = b_full + _marangoni(mesh, ifaces, n2, gamma) / settings.We

    fr, cs = dofs.free, dofs.constrained
    uc = dofs.constrained_values
    A_csr = A_full[fr]
    A = A_csr[:, fr].tocsr()
    rhs_u = b_full[fr] - A_csr[:, cs] @ uc
    Bf = B_full[:, fr].tocsr()
    # constrained velocities enter the divergence row as data
    rhs_p = -(B_full[:, cs] @ uc)
    mean_row = None
    if dofs.enclosed:
        a = mesh.areas
        mean_row = np.zeros(dofs.n_p)
        np.add.at(mean_row, p1.ravel(), np.repeat(a / 3.0, 3))
        mean_row[dofs.p0_index[keep]] += a[keep]
    Gt = G_full.T.tocsr()
    system = CoupledSystem(
        mesh, dofs, settings, A, Bf, mean_row, (F_full[fr] / settings.We).tocsr(), Gt[:, fr].tocsr(),
        Gt[:, cs] @ uc, rhs_u, rhs_p, _surface_stiffness(ifaces, n_if),
        np.vstack([f["X"] for f in ifaces]) if ifaces else np.zeros((0, 2)), ifaces, n_if)
    return system


def picard_fluid_step(mesh, fluid: FluidState, w_old: np.ndarray, jac: np.ndarray, gamma: np.ndarray,
                      settings: FluidSettings, dofs: FluidDofs | None = None) -> CoupledUnknowns:
    """One coupled fluid/interface step with Picard iteration on the time-weighted normals."""
    system = assemble_coupled_system(mesh, fluid.velocity, w_old, jac, gamma, settings, dofs)
    found = None
    if settings.method == "defect":
        found = system.solve_defect(system.X_old, settings.picard_tol, settings.picard_max_iter)
        if found is None:
            # fall back to the exact-factorisation Schur iteration
            system.settings = replace(settings, method="schur")
    if found is not None:
        sol, kappa, X_it, it, change = found
    else:
        X_it = system.X_old.copy()
        change = np.inf
        for it in range(1, settings.picard_max_iter + 1):
            sol, kappa, X_new = system.solve_iterate(X_it)
            change = float(np.max(np.abs(X_new - X_it), initial=0.0))
            X_it = X_new
            if change < settings.picard_tol:
                break
        else:
            raise PicardError(f"Picard iteration did not converge in {settings.picard_max_iter} "
                              f"iterations (last change {change:.3e})")
    d = system.dofs
    u = d.expand_velocity(sol[: d.n_free])
    p1, p0 = d.expand_pressure(sol[d.n_free:d.n_free + d.n_p])
    Xs = [X_it[f["off"]:f["off"] + f["J"]] for f in system.ifaces]
    ks = [kappa[f["off"]:f["off"] + f["J"]] for f in system.ifaces]
    return CoupledUnknowns(u, p1, p0, Xs, ks, it, change)
