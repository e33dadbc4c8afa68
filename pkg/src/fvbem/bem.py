"""Galerkin boundary element matrices for the exterior Laplace problem.

Densities live on the polygonal coupling boundary: piecewise constants per edge
for the conormal, nodal piecewise linears for traces.  Entries combine analytic
inner integrals over the source segment (the log and double-layer kernels both
have elementary antiderivatives) with Gauss quadrature on the outer segment;
coincident and vertex-adjacent single-layer pairs use fully closed forms, so no
singular quadrature error enters the assembled matrices.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import cross2, polygon_area, rotate_cw
from .quadrature import gauss_segment

TWO_PI = 2.0 * np.pi


def fundamental_solution(z):
    """-log|z| / 2 pi for z != 0."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(np.atleast_2d(z), axis=-1) if z.ndim > 1 else np.linalg.norm(z)
    if np.any(r == 0.0):
        raise ValueError("fundamental solution evaluated at z = 0")
    return -np.log(r) / TWO_PI


@dataclass(frozen=True)
class BoundaryLoop:
    """Closed counterclockwise polygonal chain; edge k runs from vertex k to k+1."""
    points: np.ndarray

    def __post_init__(self):
        if polygon_area(self.points) <= 0:
            raise ValueError("boundary loop must be counterclockwise")

    @classmethod
    def from_mesh(cls, mesh):
        return cls(np.asarray(mesh.nodes[mesh.boundary_loop], dtype=float))

    def __len__(self):
        return len(self.points)

    @property
    def starts(self):
        return self.points

    @property
    def ends(self):
        return np.roll(self.points, -1, axis=0)

    @property
    def lengths(self):
        return np.linalg.norm(self.ends - self.starts, axis=1)

    @property
    def tangents(self):
        return (self.ends - self.starts) / self.lengths[:, None]

    @property
    def normals(self):
        return rotate_cw(self.tangents)

    @property
    def total_length(self):
        return float(self.lengths.sum())

    def refined(self, k):
        """Split every edge into k equal parts."""
        t = np.arange(k) / k
        pts = (self.starts[:, None, :]
               + t[None, :, None] * (self.ends - self.starts)[:, None, :])
        return BoundaryLoop(pts.reshape(-1, 2))

    def corner_angles(self, tol=1e-9):
        """Interior angle at every loop vertex; pi where the tangent is continuous."""
        t_out = self.tangents
        t_in = np.roll(t_out, 1, axis=0)
        turn = np.arctan2(cross2(t_in, t_out),
                          np.einsum("ki,ki->k", t_in, t_out))
        angles = np.where(np.abs(turn) > tol, np.pi - turn, np.pi)
        return angles


# ---------------------------------------------------------------------------
# analytic inner integrals
# ---------------------------------------------------------------------------

def _sl_antiderivative(tau, h):
    """Antiderivative of log(tau^2 + h^2): even in h, zero at tau = h = 0."""
    r2 = tau * tau + h * h
    safe_r2 = np.where(r2 > 0.0, r2, 1.0)
    out = tau * np.log(safe_r2) - 2.0 * tau
    safe_h = np.where(h != 0.0, h, 1.0)
    out = out + np.where(h != 0.0, 2.0 * h * np.arctan(tau / safe_h), 0.0)
    return np.where(r2 > 0.0, out, 0.0)


def single_layer_inner(x, a, b):
    """Integral of G(x - y) over the segment [a, b]; broadcasts over leading axes.

    Valid for any x, including points on the segment's line (weak singularity).
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    length = np.linalg.norm(d, axis=-1)
    that = d / length[..., None]
    rel = x - a
    t0 = np.einsum("...i,...i->...", rel, that)
    h = cross2(that, rel)
    val = _sl_antiderivative(length - t0, h) - _sl_antiderivative(-t0, h)
    return -val / (2.0 * TWO_PI)


def double_layer_inner_linear(x, a, b, normal):
    """Integral of dG/dn_y times the two linear shape functions on [a, b].

    Returns values for the densities (1 - t/L) and (t/L); identically zero when
    x lies on the segment's line (principal-value convention).
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    length = np.linalg.norm(d, axis=-1)
    that = d / length[..., None]
    rel = x - a
    t0 = np.einsum("...i,...i->...", rel, that)
    h = np.einsum("...i,...i->...", rel, np.asarray(normal, dtype=float))
    nz = h != 0.0
    safe_h = np.where(nz, h, 1.0)
    at = np.where(nz, np.arctan((length - t0) / safe_h)
                  - np.arctan(-t0 / safe_h), 0.0)
    up = (length - t0) ** 2 + h * h
    lo = t0 * t0 + h * h
    safe_lo = np.where(lo > 0.0, lo, 1.0)
    safe_up = np.where(up > 0.0, up, 1.0)
    lg = np.where(nz, 0.5 * h * (np.log(safe_up) - np.log(safe_lo)), 0.0)
    i0 = at / TWO_PI
    i1 = (lg + t0 * at) / TWO_PI
    d1 = i1 / length
    return i0 - d1, d1


# ---------------------------------------------------------------------------
# closed forms for singular single-layer pairs
# ---------------------------------------------------------------------------

def sl_self_entry(length):
    """Galerkin self-interaction of one edge: L^2 (3/2 - log L) / 2 pi."""
    return length ** 2 / TWO_PI * (1.5 - np.log(length))


def _lam(x):
    """Antiderivative of x log x, zero at zero."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0.0, x, 1.0)
    return np.where(x > 0.0, 0.5 * x * x * np.log(safe) - 0.25 * x * x, 0.0)


def sl_adjacent_entry(a_len, b_len, cos_angle):
    """Galerkin entry of two edges sharing one vertex.

    a_len, b_len are the edge lengths, cos_angle the cosine of the angle between
    the two directions pointing away from the shared vertex.
    """
    a, b, c = float(a_len), float(b_len), float(cos_angle)
    sig2 = max(1.0 - c * c, 0.0)
    sig = np.sqrt(sig2)
    if sig < 1e-12:
        if c < 0.0:  # collinear, pointing apart: |x - y| = s + t
            integral = 2.0 * (_lam(a + b) - _lam(a) - _lam(b)) - 2.0 * a * b
            return -integral / (2.0 * TWO_PI)
        raise ValueError("overlapping collinear edges")

    k = b * sig

    def f_log(w):
        return w * np.log(w * w + k * k) - 2.0 * w + 2.0 * k * np.arctan(w / k)

    def f_wlog(w):
        q = w * w + k * k
        return 0.5 * q * np.log(q) - 0.5 * w * w

    t1 = (b * sig2 * (f_log(a - b * c) - f_log(-b * c))
          - c * (f_wlog(a - b * c) - f_wlog(-b * c)))
    q_a = a * a - 2.0 * a * b * c + b * b
    atan_k = np.arctan(c / sig)
    # integral of s^2 / (s^2 - 2 b c s + b^2) over [0, a]
    i2 = (a + b * c * np.log(q_a / (b * b))
          + b * (2.0 * c * c - 1.0) / sig * (np.arctan((a - b * c) / (b * sig)) + atan_k))
    t3 = sig * a * a * np.arctan((b - a * c) / (a * sig)) + b * sig2 * i2
    t4 = c * a * a * (np.log(a) - 0.5)
    t5 = sig * atan_k * a * a
    integral = t1 - 2.0 * a * b + t3 + t4 + t5
    return -integral / (2.0 * TWO_PI)


# ---------------------------------------------------------------------------
# Galerkin assembly
# ---------------------------------------------------------------------------

def _composite_rule(breaks, n_g):
    """Gauss points/weights on [0,1] composed over the given break points."""
    g, w = gauss_segment(n_g)
    ts, ws = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        ts.append(lo + (hi - lo) * g)
        ws.append((hi - lo) * w)
    return np.concatenate(ts), np.concatenate(ws)

_PLAIN = _composite_rule([0.0, 1.0], 8)
_NEAR = _composite_rule([0.0, 0.25, 0.5, 0.75, 1.0], 8)
_GRADED_START = _composite_rule([0.0, 1 / 4096, 1 / 256, 1 / 64, 1 / 16, 1 / 4, 1.0], 8)
_GRADED_END = (1.0 - _GRADED_START[0][::-1], _GRADED_START[1][::-1])


def _segment_distance(a1, b1, a2, b2):
    """Distance between non-crossing segment sets, attained at an endpoint."""
    def pt_seg(p, a, b):
        d = b - a
        denom = np.einsum("ki,ki->k", d, d)
        t = np.clip(np.einsum("ki,ki->k", p - a, d) / denom, 0.0, 1.0)
        proj = a + t[:, None] * d
        return np.linalg.norm(p - proj, axis=1)

    return np.min([pt_seg(a1, a2, b2), pt_seg(b1, a2, b2),
                   pt_seg(a2, a1, b1), pt_seg(b2, a1, b1)], axis=0)


def _pair_groups(loop, upper_only=False):
    """Classify ordered edge pairs: diagonal/adjacent handled separately, the
    rest split into well-separated and near pairs.  With ``upper_only`` only
    pairs e < f are returned (for symmetric kernels)."""
    B = len(loop)
    e, f = np.meshgrid(np.arange(B), np.arange(B), indexing="ij")
    e, f = e.ravel(), f.ravel()
    sep = (f - e) % B
    generic = (sep != 0) & (sep != 1) & (sep != B - 1)
    if upper_only:
        generic &= e < f
    ge, gf = e[generic], f[generic]
    near = np.zeros(len(ge), dtype=bool)
    for lo in range(0, len(ge), _PAIR_BLOCK):
        sl = slice(lo, min(lo + _PAIR_BLOCK, len(ge)))
        dist = _segment_distance(loop.starts[ge[sl]], loop.ends[ge[sl]],
                                 loop.starts[gf[sl]], loop.ends[gf[sl]])
        size = np.maximum(loop.lengths[ge[sl]], loop.lengths[gf[sl]])
        near[sl] = dist < size
    return (ge[~near], gf[~near]), (ge[near], gf[near])


_PAIR_BLOCK = 131072


def _outer_integrate(loop, e_idx, f_idx, rule, inner):
    """Integrate ``inner(x, f)`` over the outer edges e at the given rule,
    processing pair blocks to bound peak memory."""
    t, w = rule
    n = len(e_idx)
    starts = loop.starts
    span = loop.ends - loop.starts
    first = None
    for lo in range(0, n, _PAIR_BLOCK):
        sl = slice(lo, min(lo + _PAIR_BLOCK, n))
        e_blk, f_blk = e_idx[sl], f_idx[sl]
        pts = starts[e_blk][:, None, :] + t[None, :, None] * span[e_blk][:, None, :]
        vals = inner(pts, f_blk)
        if not isinstance(vals, tuple):
            vals = (vals,)
        res = tuple(np.einsum("pg,g->p", v, w) * loop.lengths[e_blk] for v in vals)
        if first is None:
            first = tuple(np.empty(n) for _ in res)
        for acc, r in zip(first, res):
            acc[sl] = r
    if first is None:
        return np.zeros(0)
    return first if len(first) > 1 else first[0]


def assemble_V(loop) -> np.ndarray:
    """Single layer Galerkin matrix on piecewise constants, (edges x edges)."""
    loop = _as_loop(loop)
    B = len(loop)
    if np.any(loop.lengths <= 0):
        raise ValueError("degenerate boundary edge")
    V = np.zeros((B, B))

    (fe, ff), (ne, nf) = _pair_groups(loop, upper_only=True)

    def inner(pts, f_idx):
        return single_layer_inner(pts, loop.starts[f_idx][:, None, :],
                                  loop.ends[f_idx][:, None, :])

    if len(fe):
        V[fe, ff] = _outer_integrate(loop, fe, ff, _PLAIN, inner)
    if len(ne):
        V[ne, nf] = _outer_integrate(loop, ne, nf, _NEAR, inner)
    V = V + V.T

    lengths = loop.lengths
    V[np.arange(B), np.arange(B)] = sl_self_entry(lengths)
    for e in range(B):
        f = (e + 1) % B
        # shared vertex is loop point f; directions away from it
        c = float(np.dot(-loop.tangents[e], loop.tangents[f]))
        val = sl_adjacent_entry(lengths[e], lengths[f], c)
        V[e, f] = val
        V[f, e] = val
    return V


def assemble_K(loop) -> np.ndarray:
    """Double layer Galerkin matrix, (edges x loop vertices), nodal hat columns."""
    loop = _as_loop(loop)
    B = len(loop)
    if np.any(loop.lengths <= 0):
        raise ValueError("degenerate boundary edge")
    K = np.zeros((B, B))

    def inner(pts, f_idx):
        return double_layer_inner_linear(
            pts, loop.starts[f_idx][:, None, :], loop.ends[f_idx][:, None, :],
            loop.normals[f_idx][:, None, :])

    def scatter(e_idx, f_idx, d0, d1):
        np.add.at(K, (e_idx, f_idx), d0)
        np.add.at(K, (e_idx, (f_idx + 1) % B), d1)

    (fe, ff), (ne, nf) = _pair_groups(loop)
    if len(fe):
        d0, d1 = _outer_integrate(loop, fe, ff, _PLAIN, inner)
        scatter(fe, ff, d0, d1)
    if len(ne):
        d0, d1 = _outer_integrate(loop, ne, nf, _NEAR, inner)
        scatter(ne, nf, d0, d1)

    # self pairs vanish (kernel orthogonal to the own segment); adjacent pairs
    # get quadrature graded toward the shared vertex: the end of the outer edge
    # for the successor pair, its start for the predecessor pair
    e_all = np.arange(B)
    succ = (e_all + 1) % B
    d0, d1 = _outer_integrate(loop, e_all, succ, _GRADED_END, inner)
    scatter(e_all, succ, d0, d1)
    pred = (e_all - 1) % B
    d0, d1 = _outer_integrate(loop, e_all, pred, _GRADED_START, inner)
    scatter(e_all, pred, d0, d1)
    return K


def assemble_M(loop) -> np.ndarray:
    """Boundary mass matrix (edges x loop vertices): |E|/2 to each endpoint."""
    loop = _as_loop(loop)
    B = len(loop)
    M = np.zeros((B, B))
    e = np.arange(B)
    M[e, e] = 0.5 * loop.lengths
    M[e, (e + 1) % B] = 0.5 * loop.lengths
    return M


def _as_loop(loop_or_mesh):
    if isinstance(loop_or_mesh, BoundaryLoop):
        return loop_or_mesh
    return BoundaryLoop.from_mesh(loop_or_mesh)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def eval_representation(loop, phi_edges, w_nodes, ainf, points):
    """Exterior field: -(single layer of phi) + (double layer of w) + ainf.

    ``w_nodes`` is the exterior trace at the loop vertices (interior trace minus
    the prescribed trace jump).  Points must lie outside the domain.
    """
    loop = _as_loop(loop)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phi_edges = np.asarray(phi_edges, dtype=float)
    w = np.asarray(w_nodes, dtype=float)
    B = len(loop)

    x = pts[:, None, :]
    a = loop.starts[None, :, :]
    b = loop.ends[None, :, :]
    sl = single_layer_inner(x, a, b)                       # (m, B)
    d0, d1 = double_layer_inner_linear(x, a, b, loop.normals[None, :, :])
    w_start = w
    w_end = np.roll(w, -1)
    vals = (-sl @ phi_edges + d0 @ w_start + d1 @ w_end + float(ainf))
    return vals


def locate_on_loop(loop, points, tol=1e-10):
    """Edge index and parameter of boundary points; raises if a point is off."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = pts[:, None, :] - loop.starts[None, :, :]
    t = np.einsum("mki,ki->mk", rel, loop.tangents) / loop.lengths[None, :]
    t = np.clip(t, 0.0, 1.0)
    proj = loop.starts[None, :, :] + t[..., None] * (loop.ends - loop.starts)[None, :, :]
    dist = np.linalg.norm(pts[:, None, :] - proj, axis=2)
    edge = np.argmin(dist, axis=1)
    m = np.arange(len(pts))
    if np.any(dist[m, edge] > tol * max(loop.total_length, 1.0)):
        raise ValueError("point does not lie on the boundary")
    return edge, t[m, edge]


def eval_trace_with_angle(loop, phi_edges, w_nodes, points):
    """Exterior trace at boundary points: -(V phi) + (K + angle/2pi) w.

    The weight is the interior angle over 2 pi: 1/2 on edge interiors, the
    corner angle fraction at loop vertices.
    """
    loop = _as_loop(loop)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phi_edges = np.asarray(phi_edges, dtype=float)
    w = np.asarray(w_nodes, dtype=float)
    B = len(loop)
    edge, t = locate_on_loop(loop, pts)

    x = pts[:, None, :]
    a = loop.starts[None, :, :]
    b = loop.ends[None, :, :]
    sl = single_layer_inner(x, a, b)
    d0, d1 = double_layer_inner_linear(x, a, b, loop.normals[None, :, :])
    pv = -sl @ phi_edges + d0 @ w + d1 @ np.roll(w, -1)

    angles = loop.corner_angles()
    vertex_tol = 1e-9
    at_start = t <= vertex_tol
    at_end = t >= 1.0 - vertex_tol
    phi_angle = np.where(at_start, angles[edge],
                         np.where(at_end, angles[(edge + 1) % B], np.pi))
    w_here = (1.0 - t) * w[edge] + t * w[(edge + 1) % B]
    return pv + phi_angle / TWO_PI * w_here
