"""Finite volume assembly on the barycentric dual mesh.

Row i of the assembled matrix is the flux balance of box V_i tested with the
box indicator: diffusive/convective flux through the interior box boundary,
reaction over the box, and the convective outflow term on the boundary.
Quadrature: 2-point Gauss per interface segment and boundary sub-edge, 3-point
degree-2 rule on the two halves of each quadrilateral box piece.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .geometry import clip_polygon_to_rect, polygon_area
from .mesh import BoundaryPartition, DualMesh, PrimalMesh
from .model import ProblemSpec, SourceField
from .quadrature import TRI3_BARY, TRI3_W, segment_points, triangle_points

N_GAUSS_SEGMENT = 2


def interp_dual(v, dual: DualMesh):
    """Piecewise-constant dual interpolant: box value = nodal value."""
    v = np.asarray(v, dtype=float)
    if v.shape != (dual.mesh.n_nodes,):
        raise ValueError(
            f"nodal vector of length {v.shape} does not match {dual.mesh.n_nodes} nodes")
    return v.copy()


def phi_full(t):
    """Full upwind weight: 1 for t >= 0, 0 for t < 0."""
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0.0, 1.0, 0.0)


def phi_steered(t):
    """Peclet-steered weight: centered for |t| <= 2, upwinding growing with |t|."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        m = np.minimum(2.0 / np.abs(t), 1.0)
    m = np.where(t == 0.0, 1.0, m)
    return np.where(t < 0.0, 0.5 * m, 1.0 - 0.5 * m)


_PHI = {"full": phi_full, "steered": phi_steered}


@dataclass
class UpwindScheme:
    """Per-interface upwind data on the canonical edge orientation (a, b), a < b.

    ``flux_ab`` is the integral of b.n over the interface with the normal out of
    box a; ``lam_ab`` weights u(a) in the upwinded interface value seen from a.
    """
    variant: str
    flux_ab: np.ndarray       # (E,) integral of b.n_a over tau_ab
    tau_len: np.ndarray       # (E,)
    a_inf_norm: np.ndarray    # (E,) max-row-sum norm of the averaged matrix
    peclet: np.ndarray        # (E,)
    lam_ab: np.ndarray        # (E,)
    lam_ba: np.ndarray        # (E,)


def build_upwind_scheme(mesh: PrimalMesh, dual: DualMesh, spec: ProblemSpec,
                        variant: str) -> UpwindScheme:
    if variant not in _PHI:
        raise ValueError(f"unknown upwind variant {variant!r}")
    pts, w = segment_points(dual.seg_start, dual.seg_end, N_GAUSS_SEGMENT)
    flat = pts.reshape(-1, 2)
    bvals = spec.b.evaluate(flat).reshape(pts.shape)
    bn = np.einsum("sgi,si->sg", bvals, dual.seg_normal)
    # orient every segment like the canonical edge (a, b) with a < b
    canon_sign = np.where(dual.seg_i == mesh.edges[dual.seg_edge, 0], 1.0, -1.0)
    seg_flux = np.sum(bn * w, axis=1) * canon_sign

    n_edges = len(mesh.edges)
    flux_ab = np.bincount(dual.seg_edge, weights=seg_flux, minlength=n_edges)
    tau_len = np.bincount(dual.seg_edge, weights=dual.seg_length, minlength=n_edges)

    centers = np.repeat(mesh.barycenters()[dual.seg_tri], N_GAUSS_SEGMENT, axis=0)
    amats = spec.A.evaluate(flat, cell_centers=centers).reshape(pts.shape[0],
                                                                N_GAUSS_SEGMENT, 2, 2)
    seg_amean = np.einsum("sgij,sg->sij", amats, w)
    a_sum = np.zeros((n_edges, 2, 2))
    np.add.at(a_sum, dual.seg_edge, seg_amean)
    a_mean = a_sum / tau_len[:, None, None]
    a_inf = np.abs(a_mean).sum(axis=2).max(axis=1)

    peclet = flux_ab / a_inf
    phi = _PHI[variant]
    return UpwindScheme(variant=variant, flux_ab=flux_ab, tau_len=tau_len,
                        a_inf_norm=a_inf, peclet=peclet,
                        lam_ab=phi(peclet), lam_ba=phi(-peclet))


# ---------------------------------------------------------------------------
# matrix assembly
# ---------------------------------------------------------------------------

def _interface_terms(mesh, dual, spec, include_convection):
    """COO data of the interface flux integrals (diffusion, optionally b u)."""
    pts, w = segment_points(dual.seg_start, dual.seg_end, N_GAUSS_SEGMENT)
    S = len(dual.seg_i)
    flat = pts.reshape(-1, 2)
    centers = np.repeat(mesh.barycenters()[dual.seg_tri], N_GAUSS_SEGMENT, axis=0)
    amats = spec.A.evaluate(flat, cell_centers=centers).reshape(S, N_GAUSS_SEGMENT, 2, 2)
    grads = mesh.gradients()[dual.seg_tri]              # (S, 3, 2)
    # -(A grad phi_k) . n, constant gradient per triangle
    a_grad = np.einsum("sgij,skj->sgki", amats, grads)
    diff = -np.einsum("sgki,si->sgk", a_grad, dual.seg_normal)
    vals = np.einsum("sgk,sg->sk", diff, w)

    if include_convection:
        bvals = spec.b.evaluate(flat).reshape(S, N_GAUSS_SEGMENT, 2)
        bn = np.einsum("sgi,si->sg", bvals, dual.seg_normal)
        tri_nodes = mesh.triangles[dual.seg_tri]        # (S, 3)
        vtx = mesh.nodes[tri_nodes]                     # (S, 3, 2)
        # hat value phi_k(x) = 1 + g_k . (x - v_k)
        rel = pts[:, :, None, :] - vtx[:, None, :, :]
        hat = 1.0 + np.einsum("sgki,ski->sgk", rel, grads)
        vals += np.einsum("sg,sgk,sg->sk", bn, hat, w)

    cols = mesh.triangles[dual.seg_tri]
    rows_i = np.repeat(dual.seg_i, 3)
    rows_j = np.repeat(dual.seg_j, 3)
    data = vals.ravel()
    return (np.concatenate([rows_i, rows_j]),
            np.concatenate([cols.ravel(), cols.ravel()]),
            np.concatenate([data, -data]))


def _reaction_terms(mesh, dual, spec):
    quads = dual.piece_quad
    subtris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    sub_node = np.concatenate([dual.piece_node, dual.piece_node])
    sub_tri = np.concatenate([dual.piece_tri, dual.piece_tri])
    pts, w = triangle_points(subtris, TRI3_BARY, TRI3_W)
    flat = pts.reshape(-1, 2)
    rvals = spec.r.evaluate(flat).reshape(pts.shape[:2])

    grads = mesh.gradients()[sub_tri]
    tri_nodes = mesh.triangles[sub_tri]
    vtx = mesh.nodes[tri_nodes]
    rel = pts[:, :, None, :] - vtx[:, None, :, :]
    hat = 1.0 + np.einsum("pqki,pki->pqk", rel, grads)
    vals = np.einsum("pq,pqk,pq->pk", rvals, hat, w)
    rows = np.repeat(sub_node, 3)
    return rows, tri_nodes.ravel(), vals.ravel()


def _outflow_terms(mesh, dual, spec, partition):
    mask = partition.sub_is_outflow
    if not np.any(mask):
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0))
    starts = dual.bsub_start[mask]
    ends = dual.bsub_end[mask]
    normals = dual.bsub_normal[mask]
    rows_node = dual.bsub_node[mask]
    edges = mesh.boundary_edges[dual.bsub_edge[mask]]   # (m, 2) endpoint nodes

    pts, w = segment_points(starts, ends, N_GAUSS_SEGMENT)
    flat = pts.reshape(-1, 2)
    bvals = spec.b.evaluate(flat).reshape(pts.shape)
    bn = np.einsum("mgi,mi->mg", bvals, normals)

    p = mesh.nodes[edges[:, 0]]
    q = mesh.nodes[edges[:, 1]]
    elen = np.linalg.norm(q - p, axis=1)
    t = np.einsum("mgi,mi->mg", pts - p[:, None, :], (q - p) / elen[:, None] ** 2)
    vals_p = np.einsum("mg,mg,mg->m", bn, 1.0 - t, w)
    vals_q = np.einsum("mg,mg,mg->m", bn, t, w)
    rows = np.concatenate([rows_node, rows_node])
    cols = np.concatenate([edges[:, 0], edges[:, 1]])
    return rows, cols, np.concatenate([vals_p, vals_q])


def _finish(rows, cols, data, n):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite coefficient sample during assembly")
    return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def assemble_fvm(mesh: PrimalMesh, dual: DualMesh, spec: ProblemSpec,
                 partition: BoundaryPartition) -> sparse.csr_matrix:
    """Flux-balance matrix: diffusion + convection through interfaces, reaction,
    and the outflow boundary term."""
    parts = [_interface_terms(mesh, dual, spec, include_convection=True),
             _reaction_terms(mesh, dual, spec),
             _outflow_terms(mesh, dual, spec, partition)]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    data = np.concatenate([p[2] for p in parts])
    return _finish(rows, cols, data, mesh.n_nodes)


def assemble_fvm_upwind(mesh: PrimalMesh, dual: DualMesh, spec: ProblemSpec,
                        partition: BoundaryPartition,
                        scheme: UpwindScheme) -> sparse.csr_matrix:
    """Upwind variant: interface convection replaced by interface-upwinded values."""
    parts = [_interface_terms(mesh, dual, spec, include_convection=False),
             _reaction_terms(mesh, dual, spec),
             _outflow_terms(mesh, dual, spec, partition)]

    a = mesh.edges[:, 0]
    b = mesh.edges[:, 1]
    flux = scheme.flux_ab
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, b, a])
    data = np.concatenate([flux * scheme.lam_ab, flux * (1.0 - scheme.lam_ab),
                           -flux * scheme.lam_ba, -flux * (1.0 - scheme.lam_ba)])
    parts.append((rows, cols, data))

    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    data = np.concatenate([p[2] for p in parts])
    return _finish(rows, cols, data, mesh.n_nodes)


# ---------------------------------------------------------------------------
# right-hand side and trace coupling
# ---------------------------------------------------------------------------

def _source_rect_exact(dual, f: SourceField):
    """Exact integral of a rectangle-indicator source over every box."""
    x0, x1, y0, y1 = f.rect
    out = np.zeros(dual.mesh.n_nodes)
    quads = dual.piece_quad
    qx, qy = quads[..., 0], quads[..., 1]
    inside = ((qx >= x0) & (qx <= x1) & (qy >= y0) & (qy <= y1)).all(axis=1)
    disjoint = ((qx.max(axis=1) <= x0) | (qx.min(axis=1) >= x1)
                | (qy.max(axis=1) <= y0) | (qy.min(axis=1) >= y1))
    areas = np.abs(0.5 * np.sum(qx * np.roll(qy, -1, axis=1)
                                - np.roll(qx, -1, axis=1) * qy, axis=1))
    np.add.at(out, dual.piece_node[inside], f.rect_value * areas[inside])
    for p in np.where(~inside & ~disjoint)[0]:
        clipped = clip_polygon_to_rect(quads[p], x0, x1, y0, y1)
        if len(clipped):
            out[dual.piece_node[p]] += f.rect_value * abs(polygon_area(clipped))
    return out


def assemble_rhs_interior(mesh: PrimalMesh, dual: DualMesh,
                          spec: ProblemSpec) -> np.ndarray:
    """Component i: integral of f over box V_i plus integral of t0 over dV_i on
    the coupling boundary."""
    if isinstance(spec.f, SourceField) and spec.f.rect is not None:
        rhs = _source_rect_exact(dual, spec.f)
    else:
        quads = dual.piece_quad
        subtris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
        sub_node = np.concatenate([dual.piece_node, dual.piece_node])
        pts, w = triangle_points(subtris, TRI3_BARY, TRI3_W)
        fvals = spec.f.evaluate(pts.reshape(-1, 2)).reshape(pts.shape[:2])
        rhs = np.bincount(sub_node, weights=np.sum(fvals * w, axis=1),
                          minlength=mesh.n_nodes)

    pts, w = segment_points(dual.bsub_start, dual.bsub_end, N_GAUSS_SEGMENT)
    normals = np.repeat(dual.bsub_normal, N_GAUSS_SEGMENT, axis=0)
    tvals = spec.jumps.eval_t0(pts.reshape(-1, 2), normals).reshape(pts.shape[:2])
    rhs += np.bincount(dual.bsub_node, weights=np.sum(tvals * w, axis=1),
                       minlength=mesh.n_nodes)
    return rhs


def assemble_trace_coupling(mesh: PrimalMesh, dual: DualMesh) -> sparse.csr_matrix:
    """(nodes x boundary edges) matrix of |dV_i on E_e|: each boundary edge
    contributes half its length to each endpoint box."""
    lengths = mesh.boundary_edge_lengths()
    e = np.arange(mesh.n_boundary_edges)
    rows = np.concatenate([mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]])
    cols = np.concatenate([e, e])
    data = np.concatenate([0.5 * lengths, 0.5 * lengths])
    return sparse.coo_matrix((data, (rows, cols)),
                             shape=(mesh.n_nodes, mesh.n_boundary_edges)).tocsr()
