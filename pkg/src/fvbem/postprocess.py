"""Error norms, convergence tables, and exterior field evaluation.

The conormal error is measured in the energy norm induced by the single layer
operator, with the exact density replaced by its L2 projection onto a 4x finer
boundary partition; that reference is held fixed across levels so the observed
orders are meaningful.
"""

from dataclasses import dataclass, field

import numpy as np

from . import bem
from .geometry import points_in_polygon
from .quadrature import TRI7_BARY, TRI7_W, gauss_segment, triangle_points

VNORM_REFINE = 4


def error_h1_semi(u, exact, mesh):
    """Elementwise degree-5 quadrature of |grad u - grad u_h|^2, square-rooted."""
    if exact is None:
        raise ValueError("no exact solution available")
    grads = mesh.gradients()
    grad_uh = np.einsum("tki,tk->ti", grads, np.asarray(u)[mesh.triangles])
    pts, w = triangle_points(mesh.tri_coords, TRI7_BARY, TRI7_W)
    ge = exact.eval_grad_u(pts.reshape(-1, 2)).reshape(pts.shape[0], pts.shape[1], 2)
    diff = ge - grad_uh[:, None, :]
    return float(np.sqrt(np.sum(np.sum(diff ** 2, axis=2) * w)))


def error_l2(u, exact, mesh):
    if exact is None:
        raise ValueError("no exact solution available")
    u = np.asarray(u)
    grads = mesh.gradients()
    pts, w = triangle_points(mesh.tri_coords, TRI7_BARY, TRI7_W)
    tri_nodes = mesh.triangles
    rel = pts[:, :, None, :] - mesh.nodes[tri_nodes][:, None, :, :]
    hat = 1.0 + np.einsum("tqki,tki->tqk", rel, grads)
    uh = np.einsum("tqk,tk->tq", hat, u[tri_nodes])
    ue = exact.eval_u(pts.reshape(-1, 2)).reshape(pts.shape[:2])
    return float(np.sqrt(np.sum((ue - uh) ** 2 * w)))


def project_p0(loop, func_of_points_normals, n_gauss=8):
    """Integral means of a boundary function on the edges of a loop."""
    g, w = gauss_segment(n_gauss)
    pts = loop.starts[:, None, :] + g[None, :, None] * (loop.ends - loop.starts)[:, None, :]
    normals = np.repeat(loop.normals, n_gauss, axis=0)
    vals = func_of_points_normals(pts.reshape(-1, 2), normals).reshape(pts.shape[:2])
    return vals @ w


def error_vnorm(phi, exact_phi, mesh_or_loop, refine=VNORM_REFINE):
    """Energy norm of the conormal defect against the projected exact density.

    exact_phi is called as (points, normals); phi is the edgewise discrete
    density on the coarse loop.
    """
    if exact_phi is None:
        raise ValueError("no exact conormal available")
    loop = bem._as_loop(mesh_or_loop)
    fine = loop.refined(refine)
    proj = project_p0(fine, exact_phi)
    eps = proj - np.repeat(np.asarray(phi, dtype=float), refine)
    V = bem.assemble_V(fine)
    val = float(eps @ V @ eps)
    return float(np.sqrt(max(val, 0.0)))


def eoc(errors, counts):
    """Slopes log(e_k/e_{k+1}) / log(N_{k+1}/N_k); nan where undefined."""
    errors = np.asarray(errors, dtype=float)
    counts = np.asarray(counts, dtype=float)
    out = np.full(len(errors), np.nan)
    for k in range(1, len(errors)):
        e0, e1 = errors[k - 1], errors[k]
        if e0 > 0 and e1 > 0 and np.isfinite(e0) and np.isfinite(e1):
            out[k] = np.log(e0 / e1) / np.log(counts[k] / counts[k - 1])
    return out


@dataclass
class LevelRecord:
    N: int
    h: float
    e_h1: float = np.nan
    e_l2: float = np.nan
    e_v: float = np.nan
    max_u: float = np.nan
    ainf: float = np.nan


@dataclass
class ErrorReport:
    problem: str
    levels: list = field(default_factory=list)
    has_ainf: bool = False

    def add(self, record: LevelRecord):
        self.levels.append(record)

    @property
    def counts(self):
        return np.array([r.N for r in self.levels], dtype=float)

    def errors(self, key):
        return np.array([getattr(r, key) for r in self.levels], dtype=float)

    def slopes(self, key):
        return eoc(self.errors(key), self.counts)

    def rows(self):
        """Table rows in the CSV column order."""
        eoc_h1 = self.slopes("e_h1")
        eoc_l2 = self.slopes("e_l2")
        eoc_v = self.slopes("e_v")
        out = []
        for k, r in enumerate(self.levels):
            row = [r.N, r.h, r.e_h1, r.e_l2, r.e_v, eoc_h1[k], eoc_l2[k], eoc_v[k]]
            if self.has_ainf:
                row.append(r.ainf)
            out.append(row)
        return out


CSV_COLUMNS = ["N", "h", "e_H1semi", "e_L2", "e_Vnorm", "eoc_H1", "eoc_L2", "eoc_V"]


def write_report_csv(report: ErrorReport, target):
    close = False
    if isinstance(target, (str, bytes)):
        target = open(target, "w")
        close = True
    try:
        cols = CSV_COLUMNS + (["ainf"] if report.has_ainf else [])
        target.write(",".join(cols) + "\n")
        for row in report.rows():
            cells = [f"{int(row[0])}"] + [_fmt(v) for v in row[1:]]
            target.write(",".join(cells) + "\n")
    finally:
        if close:
            target.close()


def _fmt(v):
    return "nan" if not np.isfinite(v) else f"{v:.12e}"


# ---------------------------------------------------------------------------
# exterior field sampling
# ---------------------------------------------------------------------------

@dataclass
class FieldSamples:
    points: np.ndarray          # (m, 2)
    values: np.ndarray          # (m,), nan on interior points
    inside: np.ndarray          # (m,) bool
    on_boundary: np.ndarray     # (m,) bool
    shape: tuple = None         # grid shape when sampled on a grid


def exterior_trace_nodes(solution, system):
    """Exterior trace at the boundary loop vertices: u_h - u0."""
    u0 = system.spec.jumps.eval_u0(system.loop.points)
    return solution.u[system.bnodes] - u0


def eval_exterior_points(solution, system, points, boundary_tol=1e-12):
    """Representation-formula samples; interior points are masked with nan and
    points on the boundary use the corner-angle trace formula."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = system.loop.points
    inside, on_bnd = points_in_polygon(pts, poly, tol=boundary_tol)
    w = exterior_trace_nodes(solution, system)
    ainf = solution.ainf if solution.ainf is not None else 0.0
    values = np.full(len(pts), np.nan)
    outside = ~inside & ~on_bnd
    if np.any(outside):
        values[outside] = bem.eval_representation(
            system.loop, solution.phi, w, ainf, pts[outside])
    if np.any(on_bnd):
        values[on_bnd] = bem.eval_trace_with_angle(
            system.loop, solution.phi, w, pts[on_bnd]) + ainf
    return FieldSamples(points=pts, values=values, inside=inside,
                        on_boundary=on_bnd)


def eval_exterior_grid(solution, system, grid=(80, 80), bbox=None):
    """Sample the exterior field on an nx-by-ny grid (interior masked)."""
    nx, ny = grid
    if bbox is None:
        x0, x1, y0, y1 = system.spec.domain.bounding_box
        dx, dy = x1 - x0, y1 - y0
        bbox = (x0 - dx, x1 + dx, y0 - dy, y1 + dy)
    xs = np.linspace(bbox[0], bbox[1], nx)
    ys = np.linspace(bbox[2], bbox[3], ny)
    X, Y = np.meshgrid(xs, ys)
    samples = eval_exterior_points(solution, system,
                                   np.column_stack([X.ravel(), Y.ravel()]))
    samples.shape = X.shape
    return samples


def write_field_csv(samples: FieldSamples, target):
    """x,y,value rows; masked interior points carry value nan."""
    close = False
    if isinstance(target, (str, bytes)):
        target = open(target, "w")
        close = True
    try:
        target.write("x,y,value\n")
        for (x, y), v in zip(samples.points, samples.values):
            target.write(f"{x:.12e},{y:.12e},{_fmt(v)}\n")
    finally:
        if close:
            target.close()


def oscillation_nodes(u, mesh, rel_threshold=0.1):
    """Nodes that are strict local extrema exceeding their neighbors by more
    than rel_threshold of the solution range (spurious-oscillation indicator)."""
    u = np.asarray(u, dtype=float)
    scale = u.max() - u.min()
    if scale == 0.0:
        return np.array([], dtype=int)
    hi = np.full(mesh.n_nodes, -np.inf)
    lo = np.full(mesh.n_nodes, np.inf)
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    np.maximum.at(hi, a, u[b])
    np.maximum.at(hi, b, u[a])
    np.minimum.at(lo, a, u[b])
    np.minimum.at(lo, b, u[a])
    margin = rel_threshold * scale
    flagged = (u - hi > margin) | (lo - u > margin)
    return np.where(flagged)[0]


def max_abs(u):
    return float(np.max(np.abs(u)))
