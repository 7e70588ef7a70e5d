"""Elastic extension of the interface displacement into the bulk mesh."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .linalg import factorize
from .mesh import FittedMesh, MeshMotionRecord


def stiffness_weight(mesh: FittedMesh) -> np.ndarray:
    """Per-triangle weight 1 + (max area - min area) / area; stiffens small elements."""
    a = mesh.areas
    return 1.0 + (a.max() - a.min()) / a


def _elastic_matrix(mesh: FittedMesh, lam: np.ndarray) -> sp.csr_matrix:
    """2 (lam D(phi), D(psi)) + (lam div phi, div psi) for P1 vector fields, component-major."""
    g = mesh.grad_lambda                                             # (T,3,2)
    a = mesh.areas * lam
    gx, gy = g[..., 0], g[..., 1]
    outer = lambda p, q: np.einsum("ti,tj->tij", p, q)
    # 2 D:D = 2(dx ux dx vx + dy uy dy vy) + (dy ux + dx uy)(dy vx + dx vy)
    xx = 2 * outer(gx, gx) + outer(gy, gy) + outer(gx, gx)
    yy = 2 * outer(gy, gy) + outer(gx, gx) + outer(gy, gy)
    xy = outer(gy, gx) + outer(gx, gy)                               # row x-test, col y-trial
    T = mesh.n_triangles
    K = np.zeros((T, 6, 6))
    K[:, :3, :3] = xx
    K[:, 3:, 3:] = yy
    K[:, :3, 3:] = xy
    K[:, 3:, :3] = xy.transpose(0, 2, 1)
    K *= a[:, None, None]
    N = mesh.n_vertices
    dofs = np.hstack([mesh.triangles, mesh.triangles + N])
    r = np.broadcast_to(dofs[:, :, None], (T, 6, 6)).ravel()
    c = np.broadcast_to(dofs[:, None, :], (T, 6, 6)).ravel()
    return sp.csr_matrix((K.ravel(), (r, c)), shape=(2 * N, 2 * N))


def boundary_constraints(mesh: FittedMesh) -> dict:
    """Constrained displacement components on the outer boundary (value 0).

    Normal components vanish on every side; corners get both components fixed;
    on periodic sides both components are fixed so the pairing is preserved.
    """
    N = mesh.n_vertices
    fixed = set()
    for side in ("left", "right", "bottom", "top"):
        v = mesh.side_vertices(side)
        normal_comp = 0 if side in ("left", "right") else 1
        comps = (0, 1) if mesh.boundary_kinds.get(side) == "periodic" else (normal_comp,)
        for d in comps:
            fixed.update((d * N + v).tolist())
    return {k: 0.0 for k in fixed}


def solve_elastic_displacement(mesh: FittedMesh, interface_displacement, dt: float) -> MeshMotionRecord:
    """Extend the interface displacement (list of (J_i, 2) arrays) to all vertices.

    Returns the displacement, the mesh velocity displacement/dt and the
    per-triangle Jacobian det(I - grad Phi) of the map back to the old mesh,
    with the gradient taken on the moved mesh.
    """
    N = mesh.n_vertices
    cons = boundary_constraints(mesh)
    for i, disp in enumerate(interface_displacement):
        idx = mesh.interfaces[i]
        disp = np.asarray(disp, float)
        for d in (0, 1):
            cons.update(zip((d * N + idx).tolist(), disp[:, d].tolist()))
    keys = np.array(sorted(cons), dtype=np.int64)
    vals = np.array([cons[k] for k in keys])
    phi = np.zeros(2 * N)
    phi[keys] = vals
    if np.any(vals != 0):
        K = _elastic_matrix(mesh, stiffness_weight(mesh))
        free = np.setdiff1d(np.arange(2 * N), keys)
        Kf = K[free]
        rhs = -(Kf[:, keys] @ vals)
        lu = factorize(Kf[:, free])
        phi[free] = lu.solve(rhs)
    disp = phi.reshape(2, N).T.copy()
    new_vertices = mesh.vertices + disp
    from .fem import triangle_geometry
    new_area, _ = triangle_geometry(new_vertices, mesh.triangles)
    # the step map is affine per triangle: det(I - grad Phi) = old area / new area
    with np.errstate(divide="ignore", invalid="ignore"):
        jac = np.where(new_area > 0, mesh.areas / new_area, -1.0)
    return MeshMotionRecord(disp, disp / dt, jac)
