"""Quadrature rules used by the assembly and error-norm code.

Segment rules are Gauss-Legendre; the triangle rules are the classical 3-point
degree-2 and 7-point degree-5 symmetric rules.
"""

import numpy as np

from .geometry import cross2

# 3-point rule, exact for quadratics (barycentric points at edge midpoints)
TRI3_BARY = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])
TRI3_W = np.array([1.0, 1.0, 1.0]) / 3.0

# 7-point rule, exact for degree 5
_a1 = 0.0597158717897698
_b1 = 0.4701420641051151
_a2 = 0.7974269853530873
_b2 = 0.1012865073234563
TRI7_BARY = np.array([
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [_a1, _b1, _b1],
    [_b1, _a1, _b1],
    [_b1, _b1, _a1],
    [_a2, _b2, _b2],
    [_b2, _a2, _b2],
    [_b2, _b2, _a2],
])
TRI7_W = np.array([
    0.225,
    0.1323941527885062, 0.1323941527885062, 0.1323941527885062,
    0.1259391805448271, 0.1259391805448271, 0.1259391805448271,
])


def gauss_segment(n):
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_points(starts, ends, n):
    """Gauss points and weights on straight segments.

    starts/ends have shape (m, 2); returns points (m, n, 2) and scalar weights
    (m, n) that already include the segment lengths.
    """
    t, w = gauss_segment(n)
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    pts = starts[:, None, :] + t[None, :, None] * (ends - starts)[:, None, :]
    lengths = np.linalg.norm(ends - starts, axis=1)
    return pts, lengths[:, None] * w[None, :]


def triangle_points(vertices, bary, weights):
    """Quadrature points on triangles given (m, 3, 2) vertex arrays.

    Returns points (m, q, 2) and weights (m, q) including the triangle areas.
    """
    v = np.asarray(vertices, dtype=float)
    pts = np.einsum("qk,mki->mqi", bary, v)
    area = 0.5 * np.abs(cross2(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]))
    return pts, area[:, None] * weights[None, :]
