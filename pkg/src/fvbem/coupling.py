"""Coupled block system: finite volume flux balances + Galerkin integral equation.

Unknown ordering is (nodal values, edge conormal densities, optional far-field
constant).  The optional rank-one stabilization of the bilinear form is folded
into the matrix before factorization; by the equivalence of the stabilized and
plain formulations both variants produce the same discrete solution, which the
post-solve identity check exercises.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from . import bem, fvm
from .mesh import BoundaryPartition, DualMesh, PrimalMesh, classify_boundary
from .model import ProblemSpec
from .quadrature import segment_points


class SolverError(RuntimeError):
    pass


@dataclass
class CoupledSystem:
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    n_nodes: int
    n_edges: int
    beta: int
    has_ainf: bool
    p_row: np.ndarray              # P functional coefficients over all unknowns
    g_u0: float                    # <1, (1/2 - K) u0>
    mesh: PrimalMesh
    dual: DualMesh
    spec: ProblemSpec
    partition: BoundaryPartition
    scheme: fvm.UpwindScheme = None
    loop: bem.BoundaryLoop = None
    bnodes: np.ndarray = None      # global node ids of the loop vertices
    V: np.ndarray = None
    K: np.ndarray = None
    M: np.ndarray = None
    A_V: sparse.csr_matrix = None
    trace: sparse.csr_matrix = None

    @property
    def n_unknowns(self):
        return self.n_nodes + self.n_edges + (1 if self.has_ainf else 0)


@dataclass
class SolveDiagnostics:
    residual_norm: float
    rhs_norm: float
    condition_estimate: float


@dataclass
class DiscreteSolution:
    u: np.ndarray
    phi: np.ndarray
    ainf: float
    diagnostics: SolveDiagnostics


def assemble_P_row(system_or_mesh, V=None, K=None, M=None, with_ainf=False,
                   total_length=None):
    """Coefficients of the functional <1, (1/2 - K) v + V psi> on the discrete
    space: column sums of (M/2 - K) for the nodal part, column sums of V for the
    edge part, the boundary length for the far-field column."""
    if isinstance(system_or_mesh, CoupledSystem):
        s = system_or_mesh
        V, K, M = s.V, s.K, s.M
        with_ainf = s.has_ainf
        total_length = s.loop.total_length
    node_part = (0.5 * M - K).sum(axis=0)
    edge_part = V.sum(axis=0)
    if with_ainf:
        return np.concatenate([node_part, edge_part, [total_length]])
    return np.concatenate([node_part, edge_part])


def assemble_coupled(mesh: PrimalMesh, dual: DualMesh, spec: ProblemSpec,
                     beta: int, upwind: str = None) -> CoupledSystem:
    """Assemble the block system; when beta = 1 the rank-one stabilization and
    its right-hand side shift are applied."""
    if beta not in (0, 1):
        raise ValueError("beta must be 0 or 1")
    upwind = spec.upwind if upwind is None else upwind
    partition = classify_boundary(mesh, spec.b)

    scheme = None
    if upwind == "none":
        A_V = fvm.assemble_fvm(mesh, dual, spec, partition)
    else:
        scheme = fvm.build_upwind_scheme(mesh, dual, spec, upwind)
        A_V = fvm.assemble_fvm_upwind(mesh, dual, spec, partition, scheme)
    trace = fvm.assemble_trace_coupling(mesh, dual)

    loop = bem.BoundaryLoop.from_mesh(mesh)
    bnodes = mesh.boundary_loop
    V = bem.assemble_V(loop)
    K = bem.assemble_K(loop)
    M = bem.assemble_M(loop)
    C = 0.5 * M - K

    n, B = mesh.n_nodes, len(loop)
    has_ainf = spec.radiation_variant == "ainf"
    dim = n + B + (1 if has_ainf else 0)

    rows, cols, data = [], [], []

    def add(r, c, d):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        data.append(np.asarray(d, dtype=float).ravel())

    av = A_V.tocoo()
    add(av.row, av.col, av.data)
    tr = trace.tocoo()
    add(tr.row, n + tr.col, -tr.data)
    eb, ib = np.meshgrid(np.arange(B), np.arange(B), indexing="ij")
    add(n + eb, bnodes[ib], C)
    add(n + eb, n + ib, V)
    if has_ainf:
        lengths = loop.lengths
        add(n + np.arange(B), np.full(B, n + B), lengths)   # <psi_e, ainf>
        add(np.full(B, n + B), n + np.arange(B), lengths)   # <1, phi_h> = 0

    rhs = np.zeros(dim)
    rhs[:n] = fvm.assemble_rhs_interior(mesh, dual, spec)
    u0_loop = spec.jumps.eval_u0(loop.points)
    rhs_bem = C @ u0_loop
    rhs[n:n + B] = rhs_bem
    g_u0 = float(rhs_bem.sum())

    p_local = assemble_P_row(None, V=V, K=K, M=M, with_ainf=has_ainf,
                             total_length=loop.total_length)
    p_row = np.zeros(dim)
    p_row[bnodes] = p_local[:B]
    p_row[n:n + B] = p_local[B:2 * B]
    if has_ainf:
        p_row[n + B] = p_local[2 * B]

    if beta == 1:
        nz = np.nonzero(p_row)[0]
        pr, pc = np.meshgrid(nz, nz, indexing="ij")
        add(pr, pc, np.outer(p_row[nz], p_row[nz]))
        rhs += g_u0 * p_row

    matrix = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim)).tocsr()
    if not np.all(np.isfinite(matrix.data)) or not np.all(np.isfinite(rhs)):
        raise SolverError("non-finite entries in the assembled system")

    return CoupledSystem(
        matrix=matrix, rhs=rhs, n_nodes=n, n_edges=B, beta=beta,
        has_ainf=has_ainf, p_row=p_row, g_u0=g_u0, mesh=mesh, dual=dual,
        spec=spec, partition=partition, scheme=scheme, loop=loop,
        bnodes=bnodes, V=V, K=K, M=M, A_V=A_V, trace=trace)


def assemble_ainf_variant(mesh: PrimalMesh, dual: DualMesh, spec: ProblemSpec,
                          upwind: str = None, beta: int = 0) -> CoupledSystem:
    """Constant-at-infinity radiation: one extra unknown and the zero-mean
    constraint row on the conormal density."""
    if spec.radiation_variant != "ainf":
        raise ValueError("problem does not use the constant-at-infinity variant")
    return assemble_coupled(mesh, dual, spec, beta, upwind)


def solve(system: CoupledSystem, residual_tol=1e-11) -> DiscreteSolution:
    """Direct sparse factorization with one step of iterative refinement."""
    A = system.matrix.tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    x = lu.solve(system.rhs)
    resid = system.rhs - A @ x
    rhs_norm = float(np.linalg.norm(system.rhs))
    if rhs_norm > 0 and np.linalg.norm(resid) > residual_tol * rhs_norm:
        x = x + lu.solve(resid)
        resid = system.rhs - A @ x

    cond = _condition_estimate(A, lu)
    res_norm = float(np.linalg.norm(resid))
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite solution (condition estimate {cond:.3e})")
    if rhs_norm > 0 and res_norm > residual_tol * rhs_norm:
        raise SolverError(
            f"residual {res_norm:.3e} exceeds {residual_tol:.1e} * ||rhs|| "
            f"(condition estimate {cond:.3e})")

    n, B = system.n_nodes, system.n_edges
    ainf = float(x[n + B]) if system.has_ainf else None
    return DiscreteSolution(
        u=x[:n], phi=x[n:n + B], ainf=ainf,
        diagnostics=SolveDiagnostics(residual_norm=res_norm, rhs_norm=rhs_norm,
                                     condition_estimate=cond))


def _condition_estimate(A, lu):
    n = A.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve,
                              rmatvec=lambda v: lu.solve(v, trans="T"))
    try:
        inv_norm = spla.onenormest(inv)
    except Exception:
        return float("nan")
    return float(spla.norm(A, 1) * inv_norm)


def solution_vector(system: CoupledSystem, solution: DiscreteSolution):
    x = np.concatenate([solution.u, solution.phi])
    if system.has_ainf:
        x = np.append(x, solution.ainf)
    return x


def check_P_identity(solution: DiscreteSolution, system: CoupledSystem):
    """Defect of P(u_h) = <1, (1/2 - K) u0>, which every solution of the plain
    system satisfies and the stabilized one reproduces."""
    x = solution_vector(system, solution)
    return float(abs(system.p_row @ x - system.g_u0))


def box_balance_residual(solution: DiscreteSolution, system: CoupledSystem,
                         rows=None):
    """Re-quadrature of the box flux balances from the solution fields.

    Recomputes every integral of the balance equation directly from u_h and
    phi_h (not from matrix entries) and returns the per-box defect against the
    assembled right-hand side, restricted to ``rows`` when given.
    """
    mesh, dual, spec = system.mesh, system.dual, system.spec
    u = solution.u
    out = np.zeros(mesh.n_nodes)

    grads = mesh.gradients()
    grad_u = np.einsum("tki,tk->ti", grads, u[mesh.triangles])

    pts, w = segment_points(dual.seg_start, dual.seg_end, fvm.N_GAUSS_SEGMENT)
    S = len(dual.seg_i)
    flat = pts.reshape(-1, 2)
    centers = np.repeat(mesh.barycenters()[dual.seg_tri], fvm.N_GAUSS_SEGMENT, axis=0)
    amats = spec.A.evaluate(flat, cell_centers=centers).reshape(
        S, fvm.N_GAUSS_SEGMENT, 2, 2)
    a_grad = np.einsum("sgij,sj->sgi", amats, grad_u[dual.seg_tri])
    integrand = -np.einsum("sgi,si->sg", a_grad, dual.seg_normal)
    upwinded = system.scheme is not None
    if not upwinded:
        bvals = spec.b.evaluate(flat).reshape(S, fvm.N_GAUSS_SEGMENT, 2)
        bn = np.einsum("sgi,si->sg", bvals, dual.seg_normal)
        tri_nodes = mesh.triangles[dual.seg_tri]
        vtx = mesh.nodes[tri_nodes]
        rel = pts[:, :, None, :] - vtx[:, None, :, :]
        hat = 1.0 + np.einsum("sgki,ski->sgk", rel, grads[dual.seg_tri])
        uh = np.einsum("sgk,sk->sg", hat, u[tri_nodes])
        integrand = integrand + bn * uh
    seg_vals = np.sum(integrand * w, axis=1)
    np.add.at(out, dual.seg_i, seg_vals)
    np.add.at(out, dual.seg_j, -seg_vals)

    if upwinded:
        sch = system.scheme
        a, b = mesh.edges[:, 0], mesh.edges[:, 1]
        conv_a = sch.flux_ab * (sch.lam_ab * u[a] + (1 - sch.lam_ab) * u[b])
        conv_b = -sch.flux_ab * (sch.lam_ba * u[b] + (1 - sch.lam_ba) * u[a])
        np.add.at(out, a, conv_a)
        np.add.at(out, b, conv_b)

    # reaction over box pieces
    from .quadrature import TRI3_BARY, TRI3_W, triangle_points
    quads = dual.piece_quad
    subtris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    sub_node = np.concatenate([dual.piece_node, dual.piece_node])
    sub_tri = np.concatenate([dual.piece_tri, dual.piece_tri])
    tpts, tw = triangle_points(subtris, TRI3_BARY, TRI3_W)
    rvals = spec.r.evaluate(tpts.reshape(-1, 2)).reshape(tpts.shape[:2])
    tri_nodes = mesh.triangles[sub_tri]
    rel = tpts[:, :, None, :] - mesh.nodes[tri_nodes][:, None, :, :]
    hat = 1.0 + np.einsum("pqki,pki->pqk", rel, grads[sub_tri])
    uh = np.einsum("pqk,pk->pq", hat, u[tri_nodes])
    out += np.bincount(sub_node, weights=np.sum(rvals * uh * tw, axis=1),
                       minlength=mesh.n_nodes)

    # convective outflow on the boundary
    mask = system.partition.sub_is_outflow
    if np.any(mask):
        spts, sw = segment_points(dual.bsub_start[mask], dual.bsub_end[mask],
                                  fvm.N_GAUSS_SEGMENT)
        normals = dual.bsub_normal[mask]
        bvals = spec.b.evaluate(spts.reshape(-1, 2)).reshape(spts.shape)
        bn = np.einsum("mgi,mi->mg", bvals, normals)
        edges = mesh.boundary_edges[dual.bsub_edge[mask]]
        p = mesh.nodes[edges[:, 0]]
        q = mesh.nodes[edges[:, 1]]
        elen = np.linalg.norm(q - p, axis=1)
        t = np.einsum("mgi,mi->mg", spts - p[:, None, :],
                      (q - p) / elen[:, None] ** 2)
        uh = (1 - t) * u[edges[:, 0]][:, None] + t * u[edges[:, 1]][:, None]
        np.add.at(out, dual.bsub_node[mask], np.sum(bn * uh * sw, axis=1))

    # conormal trace term
    sub_len = np.linalg.norm(dual.bsub_end - dual.bsub_start, axis=1)
    np.add.at(out, dual.bsub_node, -solution.phi[dual.bsub_edge] * sub_len)

    if system.beta == 1:
        # stabilized rows carry the rank-one term on the left-hand side
        x = solution_vector(system, solution)
        out += (system.p_row @ x) * system.p_row[:mesh.n_nodes]
    defect = out - system.rhs[:mesh.n_nodes]
    if rows is not None:
        return defect[np.asarray(rows)]
    return defect
