"""Reference-element quadrature and Lagrange bases used by the assemblers.

Local P2 node order on a triangle (v0, v1, v2): vertices 0, 1, 2, then edge
midpoints of (0,1), (1,2), (2,0). Barycentric coordinates are the natural
parametrisation; gradients are pushed forward per element.
"""
from __future__ import annotations

import numpy as np

# 7-point rule, exact for degree 5 (Strang-Fix / Dunavant); barycentric points, weights sum to 1
_r15 = np.sqrt(15.0)
_a1, _b1 = (9 - 2 * _r15) / 21, (6 + _r15) / 21
_a2, _b2 = (9 + 2 * _r15) / 21, (6 - _r15) / 21
TRI_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
TRI_WEIGHTS = np.array([9 / 40] + [(155 + _r15) / 1200] * 3 + [(155 - _r15) / 1200] * 3)

# 3-point Gauss-Legendre on [0, 1]
_g = np.sqrt(3.0 / 5.0)
EDGE_POINTS = 0.5 * (1.0 + np.array([-_g, 0.0, _g]))
EDGE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

P2_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


def p2_values(lam: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points lam (Q, 3) -> (Q, 6)."""
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)


def p2_lambda_derivs(lam: np.ndarray) -> np.ndarray:
    """d phi_i / d lambda_j at points (Q, 6, 3)."""
    Q = lam.shape[0]
    d = np.zeros((Q, 6, 3))
    for i in range(3):
        d[:, i, i] = 4 * lam[:, i] - 1
    for k, (i, j) in enumerate(P2_LOCAL_EDGES):
        d[:, 3 + k, i] = 4 * lam[:, j]
        d[:, 3 + k, j] = 4 * lam[:, i]
    return d


def edge_p2_values(s: np.ndarray) -> np.ndarray:
    """1D quadratic trace basis on an edge (start, end, midpoint) at s in [0,1] -> (Q, 3)."""
    return np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)


def edge_p1_values(s: np.ndarray) -> np.ndarray:
    return np.stack([1 - s, s], axis=1)


P2_AT_QUAD = p2_values(TRI_POINTS)               # (7, 6)
P2_DLAM_AT_QUAD = p2_lambda_derivs(TRI_POINTS)   # (7, 6, 3)
P1_AT_QUAD = TRI_POINTS.copy()                    # (7, 3)
EDGE_P2 = edge_p2_values(EDGE_POINTS)            # (3, 3)
EDGE_P1 = edge_p1_values(EDGE_POINTS)            # (3, 2)

P1_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0   # times area
P2_MASS_REF = np.einsum("q,qi,qj->ij", TRI_WEIGHTS, P2_AT_QUAD, P2_AT_QUAD)  # times area


def triangle_geometry(vertices: np.ndarray, triangles: np.ndarray):
    """Signed areas (T,) and barycentric gradients (T, 3, 2)."""
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    # rows of inverse Jacobian give grad lambda_1, grad lambda_2 (non-finite on degenerate triangles)
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    g0 = -g1 - g2
    return area, np.stack([g0, g1, g2], axis=1)


def p2_gradients(grad_lam: np.ndarray) -> np.ndarray:
    """P2 basis gradients at the triangle quadrature points (T, Q, 6, 2)."""
    return np.einsum("qij,tjd->tqid", P2_DLAM_AT_QUAD, grad_lam)


def quad_points(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Physical quadrature points (T, Q, 2)."""
    return np.einsum("qj,tjd->tqd", TRI_POINTS, vertices[triangles])
