"""Interface geometry on closed polylines: normals, lumped products, areas, surface gradients.

A polyline is an ``(J, 2)`` array of vertex positions, implicitly closed
(edge j joins vertex j and vertex j+1 mod J). Counter-clockwise orientation
makes the rotated edge vectors point out of the enclosed region.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError


def _rot(v):
    """Rotate by -90 degrees: (x, y) -> (y, -x)."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def edge_vectors(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.roll(X, -1, axis=0) - X


def orientation_vectors(X: np.ndarray) -> np.ndarray:
    """Unnormalised edge normals |sigma_j| n_j of a closed polyline."""
    return _rot(edge_vectors(X))


def edge_lengths(X: np.ndarray) -> np.ndarray:
    return np.linalg.norm(edge_vectors(X), axis=1)


def perimeter(X: np.ndarray) -> float:
    return float(edge_lengths(X).sum())


def element_normal(q0, q1) -> np.ndarray:
    """Unit normal of the edge q0 -> q1, i.e. the edge direction rotated by -90 degrees."""
    d = np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float)
    n = np.hypot(d[0], d[1])
    if n == 0.0:
        raise GeometryError("zero-length edge")
    return _rot(d) / n


def element_normals(X: np.ndarray) -> np.ndarray:
    A = orientation_vectors(X)
    L = np.linalg.norm(A, axis=1)
    if np.any(L == 0.0):
        raise GeometryError("zero-length edge in polyline")
    return A / L[:, None]


def time_weighted_normal(edge_old, edge_new, dt: float = 1.0) -> np.ndarray:
    """Time average of the orientation vector over a linear edge motion, scaled by 1/|A_old|.

    ``edge_old`` and ``edge_new`` are pairs of endpoints. In two dimensions the
    orientation vector is affine in time, so the average is the midpoint value;
    ``dt`` cancels and is accepted only for signature symmetry.
    """
    e0 = np.asarray(edge_old, dtype=float)
    e1 = np.asarray(edge_new, dtype=float)
    A0 = _rot(e0[1] - e0[0])
    A1 = _rot(e1[1] - e1[0])
    n0 = np.hypot(*A0)
    if n0 == 0.0:
        raise GeometryError("zero-length edge at the old time level")
    return (A0 + A1) / (2.0 * n0)


def time_weighted_normals(X_old: np.ndarray, X_new: np.ndarray) -> np.ndarray:
    """Per-edge time-weighted normals for two matching closed polylines."""
    A0 = orientation_vectors(X_old)
    A1 = orientation_vectors(X_new)
    n0 = np.linalg.norm(A0, axis=1)
    if np.any(n0 == 0.0):
        raise GeometryError("zero-length edge at the old time level")
    return (A0 + A1) / (2.0 * n0[:, None])


def lumped_inner_product(u, v, X: np.ndarray, u_edgewise: bool = False,
                         v_edgewise: bool = False):
    """Vertex-quadrature product sum_j |sigma_j|/2 (u v at both endpoints of edge j).

    ``u`` and ``v`` are vertex arrays of shape ``(J,)`` or ``(J, d)`` or scalars.
    With ``*_edgewise`` set, the factor holds per-edge one-sided limits of shape
    ``(J, 2[, d])`` (start and end vertex of each edge), which allows piecewise
    constant integrands such as edge normals. Vector factors multiply
    componentwise; a scalar times a vector gives a vector.
    """
    J = len(X)
    ell = edge_lengths(X)

    def ends(f, edgewise):
        f = np.asarray(f, dtype=float)
        if f.ndim == 0:
            f = np.full(J, float(f))
        if f.shape[0] != J:
            raise GeometryError("nodal values do not match the polyline")
        if edgewise:
            return f[:, 0], f[:, 1]
        return f, np.roll(f, -1, axis=0)

    u0, u1 = ends(u, u_edgewise)
    v0, v1 = ends(v, v_edgewise)
    p = _mul(u0, v0) + _mul(u1, v1)
    w = (0.5 * ell).reshape((-1,) + (1,) * (p.ndim - 1))
    out = (w * p).sum(axis=0)
    return float(out) if np.ndim(out) == 0 else out


def _mul(a, b):
    if a.ndim == 1 and b.ndim == 2:
        return a[:, None] * b
    if a.ndim == 2 and b.ndim == 1:
        return a * b[:, None]
    return a * b


def enclosed_area(X: np.ndarray, check_simple: bool = True) -> float:
    """Signed shoelace area; positive for counter-clockwise polylines."""
    X = np.asarray(X, dtype=float)
    if check_simple and not is_simple(X):
        raise GeometryError("polyline self-intersects")
    Y = np.roll(X, -1, axis=0)
    return 0.5 * float(np.sum(X[:, 0] * Y[:, 1] - Y[:, 0] * X[:, 1]))


def _segments_cross(P0, P1, Q0, Q1):
    """Proper or touching intersection test, vectorised over segment pairs."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    d1 = orient(Q0, Q1, P0)
    d2 = orient(Q0, Q1, P1)
    d3 = orient(P0, P1, Q0)
    d4 = orient(P0, P1, Q1)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def segments_intersect(Xa: np.ndarray, Xb: np.ndarray | None = None) -> bool:
    """True when two closed polylines (or one polyline with itself) intersect."""
    Xa = np.asarray(Xa, dtype=float)
    same = Xb is None
    Xb = Xa if same else np.asarray(Xb, dtype=float)
    P0, P1 = Xa, np.roll(Xa, -1, axis=0)
    Q0, Q1 = Xb, np.roll(Xb, -1, axis=0)
    hit = _segments_cross(P0[:, None], P1[:, None], Q0[None], Q1[None])
    if same:
        J = len(Xa)
        idx = np.arange(J)
        diff = (idx[:, None] - idx[None, :]) % J
        hit &= (diff != 0) & (diff != 1) & (diff != J - 1)
    return bool(hit.any())


def is_simple(X: np.ndarray) -> bool:
    return len(X) >= 3 and not segments_intersect(X)


def surface_gradient(f, X: np.ndarray) -> np.ndarray:
    """Per-edge tangential gradient of a piecewise-linear nodal field on a closed polyline.

    Also accepts a single edge: ``f`` of shape (2,) and ``X`` of shape (2, 2).
    """
    f = np.asarray(f, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape == (2, 2) and f.shape == (2,):
        d = X[1] - X[0]
        L = np.hypot(*d)
        if L == 0.0:
            raise GeometryError("zero-length edge")
        return (f[1] - f[0]) / L * d / L
    d = edge_vectors(X)
    L = np.linalg.norm(d, axis=1)
    if np.any(L == 0.0):
        raise GeometryError("zero-length edge")
    df = np.roll(f, -1) - f
    return (df / L ** 2)[:, None] * d


def lumped_vertex_normals(X_old: np.ndarray, X_new: np.ndarray | None = None) -> np.ndarray:
    """Vertex vectors omega_k with sum_k omega_k . V_k = <V . n^{m+1/2}, 1>^h for nodal V.

    With ``X_new`` omitted this reduces to the lumped vertex normals of ``X_old``.
    """
    A0 = orientation_vectors(X_old)
    A = A0 if X_new is None else 0.5 * (A0 + orientation_vectors(X_new))
    return 0.5 * (A + np.roll(A, 1, axis=0))


def volume_identity_check(X_old: np.ndarray, X_new: np.ndarray, dt: float = 1.0) -> float:
    """Residual of the discrete volume identity for a vertex motion X_old -> X_new."""
    X_old = np.asarray(X_old, dtype=float)
    X_new = np.asarray(X_new, dtype=float)
    nh = time_weighted_normals(X_old, X_new)
    disp = X_new - X_old
    # per-edge endpoint limits of the displacement dotted with the edge's normal
    limits = np.stack([np.sum(disp * nh, axis=1),
                       np.sum(np.roll(disp, -1, axis=0) * nh, axis=1)], axis=1)
    lhs = lumped_inner_product(1.0, limits, X_old, v_edgewise=True)
    darea = enclosed_area(X_new, check_simple=False) - enclosed_area(X_old, check_simple=False)
    return float(lhs - darea)


@dataclass
class InterfaceState:
    """Positions, curvature and surface tension on one closed interface polyline."""
    X: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray

    @property
    def normals(self) -> np.ndarray:
        return element_normals(self.X)

    @property
    def area(self) -> float:
        return enclosed_area(self.X, check_simple=False)

    @property
    def length(self) -> float:
        return perimeter(self.X)


def polygon_centroid(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = np.roll(X, -1, axis=0)
    cr = X[:, 0] * Y[:, 1] - Y[:, 0] * X[:, 1]
    a = 0.5 * cr.sum()
    cx = ((X[:, 0] + Y[:, 0]) * cr).sum() / (6 * a)
    cy = ((X[:, 1] + Y[:, 1]) * cr).sum() / (6 * a)
    return np.array([cx, cy])


def circle_polyline(center, radius: float, n: int) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


def ellipse_polyline(center, axes, n: int) -> np.ndarray:
    """Ellipse sampled at uniform parameter angle, counter-clockwise."""
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + axes[0] * np.cos(th), center[1] + axes[1] * np.sin(th)])


def points_in_polygon(P: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Even-odd rule containment test for points P (N, 2) in closed polyline X."""
    P = np.asarray(P, dtype=float)
    X0 = np.asarray(X, dtype=float)
    X1 = np.roll(X0, -1, axis=0)
    px, py = P[:, None, 0], P[:, None, 1]
    y0, y1 = X0[None, :, 1], X1[None, :, 1]
    x0, x1 = X0[None, :, 0], X1[None, :, 0]
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    crossings = straddle & (px < xint)
    return (crossings.sum(axis=1) % 2) == 1
