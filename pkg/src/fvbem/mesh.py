"""Conforming triangulations, uniform refinement, and the barycentric dual mesh.

The primal mesh carries the piecewise-linear unknowns; the dual (box) mesh built
from barycenters and edge midpoints carries the flux balances.  Conventions used
throughout the package: triangles counterclockwise, boundary loop counterclockwise,
outward normals obtained by rotating edge tangents 90 degrees clockwise.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import cross2, polygon_area, rotate_cw, triangle_areas


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class DomainDescriptor:
    """Polygonal domain assembled from equal square cells.

    ``cells`` is a tuple of (x0, y0, size) lower-left corners; ``polygon`` is the
    counterclockwise boundary loop of the union.
    """
    kind: str
    cells: tuple
    polygon: np.ndarray

    @property
    def diameter(self):
        p = self.polygon
        d = p[:, None, :] - p[None, :, :]
        return float(np.sqrt((d ** 2).sum(axis=2)).max())

    @property
    def bounding_box(self):
        p = self.polygon
        return (p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max())


def square_domain(center=(0.0, 0.0), halfwidth=0.25):
    cx, cy = center
    h = float(halfwidth)
    x0, y0 = cx - h, cy - h
    cells = tuple((x0 + i * h, y0 + j * h, h) for j in range(2) for i in range(2))
    poly = np.array([[x0, y0], [x0 + 2 * h, y0], [x0 + 2 * h, y0 + 2 * h], [x0, y0 + 2 * h]])
    return DomainDescriptor("square", cells, poly)


def rectangle_domain(x0, y0, x1, y1, nx=2, ny=2):
    if x1 <= x0 or y1 <= y0:
        raise MeshError("degenerate rectangle")
    sx, sy = (x1 - x0) / nx, (y1 - y0) / ny
    if not np.isclose(sx, sy):
        raise MeshError("rectangle cells must be square; choose nx, ny accordingly")
    cells = tuple((x0 + i * sx, y0 + j * sy, sx) for j in range(ny) for i in range(nx))
    poly = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    return DomainDescriptor("rectangle", cells, poly)


def lshape_domain():
    """The L-shape (-1/4,1/4)^2 minus the closed quadrant [0,1/4]x[-1/4,0]."""
    h = 0.25
    cells = ((-h, -h, h), (-h, 0.0, h), (0.0, 0.0, h))
    poly = np.array([
        [-h, -h], [0.0, -h], [0.0, 0.0], [h, 0.0], [h, h], [-h, h],
    ])
    return DomainDescriptor("lshape", cells, poly)


class PrimalMesh:
    """Conforming triangulation of a polygonal domain.

    nodes          : (N, 2) float array
    triangles      : (T, 3) int array, counterclockwise
    boundary_edges : (B, 2) int array, directed, tracing the boundary loop
                     counterclockwise (domain on the left)
    """

    def __init__(self, nodes, triangles, domain=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.domain = domain
        self._build_edges()
        self._validate()
        for arr in (self.nodes, self.triangles, self.edges, self.edge_tris,
                    self.boundary_edges, self.tri_edges):
            arr.flags.writeable = False

    # -- construction helpers -------------------------------------------------

    def _build_edges(self):
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(raw, axis=1)
        self.edges, inverse = np.unique(key, axis=0, return_inverse=True)
        self.tri_edges = inverse.reshape(3, -1).T  # (T, 3): edge index opposite local order

        counts = np.bincount(inverse, minlength=len(self.edges))
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: edge shared by more than two triangles")
        self.edge_tris = -np.ones((len(self.edges), 2), dtype=np.int64)
        tri_of_raw = np.tile(np.arange(len(t)), 3)
        for e, tri in zip(inverse, tri_of_raw):
            if self.edge_tris[e, 0] < 0:
                self.edge_tris[e, 0] = tri
            else:
                self.edge_tris[e, 1] = tri

        # directed boundary edges, oriented as they appear in their (ccw) triangle
        bnd = np.where(counts == 1)[0]
        directed = {}
        for e in bnd:
            tri = self.edge_tris[e, 0]
            a, b = self.edges[e]
            tv = t[tri]
            for k in range(3):
                p, q = tv[k], tv[(k + 1) % 3]
                if {p, q} == {a, b}:
                    directed[p] = (q, e)
                    break
        if len(directed) != len(bnd):
            raise MeshError("boundary is not a simple loop")
        start = min(directed)
        loop, edge_ids = [start], []
        cur = start
        while True:
            nxt, e = directed[cur]
            edge_ids.append(e)
            if nxt == start:
                break
            loop.append(nxt)
            cur = nxt
            if len(loop) > len(bnd):
                raise MeshError("boundary loop does not close")
        if len(edge_ids) != len(bnd):
            raise MeshError("boundary is not connected")
        self.boundary_loop = np.array(loop, dtype=np.int64)
        self.boundary_edges = np.column_stack(
            [self.boundary_loop, np.roll(self.boundary_loop, -1)])
        self._undirected_boundary = np.array(edge_ids, dtype=np.int64)

    def _validate(self):
        areas = triangle_areas(self.nodes, self.triangles)
        if np.any(areas <= 0):
            raise MeshError("triangle with non-positive signed area (orientation?)")
        if polygon_area(self.nodes[self.boundary_loop]) <= 0:
            raise MeshError("boundary loop is not counterclockwise")

    # -- derived geometry ------------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_boundary_edges(self):
        return len(self.boundary_edges)

    @property
    def tri_coords(self):
        return self.nodes[self.triangles]

    @property
    def h_max(self):
        v = self.tri_coords
        l0 = np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        l1 = np.linalg.norm(v[:, 2] - v[:, 1], axis=1)
        l2 = np.linalg.norm(v[:, 0] - v[:, 2], axis=1)
        return float(np.max([l0, l1, l2]))

    def shape_regularity(self):
        """Minimum inradius/diameter ratio over all triangles."""
        v = self.tri_coords
        l0 = np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        l1 = np.linalg.norm(v[:, 2] - v[:, 1], axis=1)
        l2 = np.linalg.norm(v[:, 0] - v[:, 2], axis=1)
        area = triangle_areas(self.nodes, self.triangles)
        inradius = 2.0 * area / (l0 + l1 + l2)
        diam = np.max([l0, l1, l2], axis=0)
        return float(np.min(inradius / diam))

    @property
    def boundary_nodes(self):
        return self.boundary_loop

    def boundary_edge_lengths(self):
        a = self.nodes[self.boundary_edges[:, 0]]
        b = self.nodes[self.boundary_edges[:, 1]]
        return np.linalg.norm(b - a, axis=1)

    def boundary_outward_normals(self):
        a = self.nodes[self.boundary_edges[:, 0]]
        b = self.nodes[self.boundary_edges[:, 1]]
        t = b - a
        n = rotate_cw(t)
        return n / np.linalg.norm(n, axis=1)[:, None]

    def area(self):
        return float(np.sum(triangle_areas(self.nodes, self.triangles)))

    def barycenters(self):
        return self.tri_coords.mean(axis=1)

    def gradients(self):
        """Gradients of the three nodal hat functions per triangle, (T, 3, 2)."""
        v = self.tri_coords
        area2 = cross2(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])  # 2*area
        g = np.empty((len(v), 3, 2))
        for k in range(3):
            opp = v[:, (k + 2) % 3] - v[:, (k + 1) % 3]
            g[:, k, 0] = -opp[:, 1]
            g[:, k, 1] = opp[:, 0]
        g /= area2[:, None, None]
        return g


def build_structured_mesh(domain: DomainDescriptor) -> PrimalMesh:
    """Initial mesh: each square cell is split into 4 congruent triangles by its center.

    A 2x2-cell square yields 16 triangles / 13 nodes and the 3-cell L-shape yields
    12 triangles, the coarse meshes the convergence studies start from.
    """
    if not isinstance(domain, DomainDescriptor) or domain.kind not in (
            "square", "rectangle", "lshape"):
        raise MeshError(f"unsupported domain descriptor: {domain!r}")
    corner_ids = {}
    nodes = []

    def node_at(x, y):
        key = (round(x, 12), round(y, 12))
        if key not in corner_ids:
            corner_ids[key] = len(nodes)
            nodes.append((x, y))
        return corner_ids[key]

    # all cell corners first (deterministic order), centers afterwards
    for (x0, y0, s) in domain.cells:
        for dx, dy in ((0, 0), (s, 0), (s, s), (0, s)):
            node_at(x0 + dx, y0 + dy)
    triangles = []
    for (x0, y0, s) in domain.cells:
        bl = node_at(x0, y0)
        br = node_at(x0 + s, y0)
        tr = node_at(x0 + s, y0 + s)
        tl = node_at(x0, y0 + s)
        c = node_at(x0 + s / 2, y0 + s / 2)
        triangles += [(bl, br, c), (br, tr, c), (tr, tl, c), (tl, bl, c)]
    return PrimalMesh(np.array(nodes), np.array(triangles), domain=domain)


def refine_uniform(mesh: PrimalMesh) -> PrimalMesh:
    """Split every triangle into four by its edge midpoints.

    Parent nodes keep their indices (the parent numbering is a prefix of the
    child numbering), so nodal vectors prolong by index.
    """
    mid_start = mesh.n_nodes
    midpoints = 0.5 * (mesh.nodes[mesh.edges[:, 0]] + mesh.nodes[mesh.edges[:, 1]])
    nodes = np.vstack([mesh.nodes, midpoints])

    t = mesh.triangles
    m01 = mid_start + _edge_index(mesh, t[:, 0], t[:, 1])
    m12 = mid_start + _edge_index(mesh, t[:, 1], t[:, 2])
    m20 = mid_start + _edge_index(mesh, t[:, 2], t[:, 0])
    children = np.empty((4 * len(t), 3), dtype=np.int64)
    children[0::4] = np.column_stack([t[:, 0], m01, m20])
    children[1::4] = np.column_stack([t[:, 1], m12, m01])
    children[2::4] = np.column_stack([t[:, 2], m20, m12])
    children[3::4] = np.column_stack([m01, m12, m20])
    return PrimalMesh(nodes, children, domain=mesh.domain)


def _edge_index(mesh, a, b):
    key = np.sort(np.column_stack([a, b]), axis=1)
    # edges are lexicographically sorted by np.unique, so search directly
    idx = np.searchsorted(mesh.edges[:, 0] * mesh.n_nodes + mesh.edges[:, 1],
                          key[:, 0] * mesh.n_nodes + key[:, 1])
    return idx


def mesh_hierarchy(domain, levels):
    """The initial mesh and ``levels - 1`` uniform refinements."""
    meshes = [build_structured_mesh(domain)]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


@dataclass
class DualMesh:
    """Barycentric dual (box) mesh.

    Interfaces between adjacent boxes are stored segment-wise: one segment per
    (primal edge, incident triangle) running from the edge midpoint to the
    triangle barycenter.  ``seg_normal`` points out of box ``seg_i``.
    """
    mesh: PrimalMesh
    box_areas: np.ndarray          # (N,)
    seg_start: np.ndarray          # (S, 2) edge midpoints
    seg_end: np.ndarray            # (S, 2) barycenters
    seg_normal: np.ndarray         # (S, 2) unit, outward w.r.t. box seg_i
    seg_length: np.ndarray         # (S,)
    seg_i: np.ndarray              # (S,)
    seg_j: np.ndarray              # (S,)
    seg_tri: np.ndarray            # (S,)
    seg_edge: np.ndarray           # (S,) primal edge = interface id
    piece_node: np.ndarray         # (3T,)
    piece_tri: np.ndarray          # (3T,)
    piece_quad: np.ndarray         # (3T, 4, 2) quad (node, midpoint, barycenter, midpoint)
    bsub_start: np.ndarray         # (2B, 2)
    bsub_end: np.ndarray           # (2B, 2)
    bsub_node: np.ndarray          # (2B,)
    bsub_edge: np.ndarray          # (2B,) boundary edge index
    bsub_normal: np.ndarray        # (2B, 2)
    _polygons: list = field(default=None, repr=False)

    def interface_segments(self, edge):
        return np.where(self.seg_edge == edge)[0]

    @property
    def box_polygons(self):
        """Closed box polygon per node (built on first use)."""
        if self._polygons is None:
            mesh = self.mesh
            mid = 0.5 * (mesh.nodes[mesh.edges[:, 0]] + mesh.nodes[mesh.edges[:, 1]])
            self._polygons = _box_polygons(mesh, mesh.barycenters(), mid)
        return self._polygons


def build_dual_mesh(mesh: PrimalMesh) -> DualMesh:
    nodes, tris = mesh.nodes, mesh.triangles
    bary = mesh.barycenters()
    mid = 0.5 * (nodes[mesh.edges[:, 0]] + nodes[mesh.edges[:, 1]])

    # interface segments: midpoint -> barycenter, one per (triangle, local edge)
    T = len(tris)
    loc = [(0, 1), (1, 2), (2, 0)]
    seg_i = np.empty(3 * T, dtype=np.int64)
    seg_j = np.empty(3 * T, dtype=np.int64)
    seg_tri = np.repeat(np.arange(T), 3)
    seg_edge = np.empty(3 * T, dtype=np.int64)
    for k, (p, q) in enumerate(loc):
        seg_i[k::3] = tris[:, p]
        seg_j[k::3] = tris[:, q]
        seg_edge[k::3] = mesh.tri_edges[:, k]
    seg_start = mid[seg_edge]
    seg_end = bary[seg_tri]
    tangent = seg_end - seg_start
    seg_length = np.linalg.norm(tangent, axis=1)
    normal = rotate_cw(tangent / seg_length[:, None])
    # orient out of box i: positive component toward node j
    towards_j = nodes[seg_j] - nodes[seg_i]
    flip = np.einsum("si,si->s", normal, towards_j) < 0
    normal[flip] *= -1.0

    # quadrilateral box pieces (a, m1, c, m2), counterclockwise
    piece_node = np.empty(3 * T, dtype=np.int64)
    piece_quad = np.empty((3 * T, 4, 2))
    piece_tri = np.repeat(np.arange(T), 3)
    for k in range(3):
        a = tris[:, k]
        e_next = mesh.tri_edges[:, k]            # edge (k, k+1)
        e_prev = mesh.tri_edges[:, (k + 2) % 3]  # edge (k+2, k)
        piece_node[k::3] = a
        piece_quad[k::3, 0] = nodes[a]
        piece_quad[k::3, 1] = mid[e_next]
        piece_quad[k::3, 2] = bary
        piece_quad[k::3, 3] = mid[e_prev]

    quad_areas = np.abs(
        0.5 * np.sum(piece_quad[:, :, 0] * np.roll(piece_quad[:, :, 1], -1, axis=1)
                     - np.roll(piece_quad[:, :, 0], -1, axis=1) * piece_quad[:, :, 1],
                     axis=1))
    box_areas = np.bincount(piece_node, weights=quad_areas, minlength=mesh.n_nodes)

    # boundary dual sub-edges: each boundary edge split at its midpoint
    be = mesh.boundary_edges
    bm = 0.5 * (nodes[be[:, 0]] + nodes[be[:, 1]])
    bn = mesh.boundary_outward_normals()
    B = len(be)
    bsub_start = np.empty((2 * B, 2))
    bsub_end = np.empty((2 * B, 2))
    bsub_node = np.empty(2 * B, dtype=np.int64)
    bsub_edge = np.repeat(np.arange(B), 2)
    bsub_start[0::2] = nodes[be[:, 0]]
    bsub_end[0::2] = bm
    bsub_node[0::2] = be[:, 0]
    bsub_start[1::2] = bm
    bsub_end[1::2] = nodes[be[:, 1]]
    bsub_node[1::2] = be[:, 1]
    bsub_normal = np.repeat(bn, 2, axis=0)

    return DualMesh(
        mesh=mesh, box_areas=box_areas,
        seg_start=seg_start, seg_end=seg_end, seg_normal=normal,
        seg_length=seg_length, seg_i=seg_i, seg_j=seg_j, seg_tri=seg_tri,
        seg_edge=seg_edge, piece_node=piece_node, piece_tri=piece_tri,
        piece_quad=piece_quad, bsub_start=bsub_start, bsub_end=bsub_end,
        bsub_node=bsub_node, bsub_edge=bsub_edge, bsub_normal=bsub_normal)


def _box_polygons(mesh, bary, mid):
    """Closed box polygon around each node, walking incident triangles ccw."""
    tris = mesh.triangles
    n_nodes = mesh.n_nodes
    # per node: neighbor-before -> (triangle, neighbor-after); the ccw triangle
    # (a_i, n1, n2) sweeps the wedge around a_i from n1 to n2
    succ = [dict() for _ in range(n_nodes)]
    for t, tv in enumerate(tris):
        for k in range(3):
            i, n1, n2 = tv[k], tv[(k + 1) % 3], tv[(k + 2) % 3]
            succ[i][n1] = (t, n2)

    edge_of = {}
    for e, (a, b) in enumerate(mesh.edges):
        edge_of[(a, b)] = e
        edge_of[(b, a)] = e

    on_boundary = np.zeros(n_nodes, dtype=bool)
    next_on_loop = {}
    loop = mesh.boundary_loop
    for k, i in enumerate(loop):
        on_boundary[i] = True
        next_on_loop[i] = loop[(k + 1) % len(loop)]

    polygons = []
    for i in range(n_nodes):
        walk = succ[i]
        start = next_on_loop[i] if on_boundary[i] else next(iter(walk))
        pts = []
        if on_boundary[i]:
            pts.append(mesh.nodes[i])
        cur = start
        for _ in range(len(walk)):
            t, n2 = walk[cur]
            pts.append(mid[edge_of[(i, cur)]])
            pts.append(bary[t])
            cur = n2
        if on_boundary[i]:
            pts.append(mid[edge_of[(i, cur)]])
        polygons.append(np.array(pts))
    return polygons


@dataclass(frozen=True)
class BoundaryPartition:
    """Inflow/outflow tags for boundary edges and their dual sub-edges."""
    is_outflow: np.ndarray        # (B,) bool, per boundary edge
    bn_values: np.ndarray         # (B,) b.n at the evaluation points
    sub_is_outflow: np.ndarray = field(default=None)

    @property
    def inflow_edges(self):
        return np.where(~self.is_outflow)[0]

    @property
    def outflow_edges(self):
        return np.where(self.is_outflow)[0]


def classify_boundary(mesh: PrimalMesh, b) -> BoundaryPartition:
    """Tag each boundary edge inflow (b.n < 0) or outflow (b.n >= 0) at its midpoint."""
    be = mesh.boundary_edges
    midpts = 0.5 * (mesh.nodes[be[:, 0]] + mesh.nodes[be[:, 1]])
    normals = mesh.boundary_outward_normals()
    vel = b.evaluate(midpts) if hasattr(b, "evaluate") else np.asarray(b(midpts))
    bn = np.einsum("ei,ei->e", vel, normals)
    is_out = bn >= 0.0
    sub = np.repeat(is_out, 2)
    return BoundaryPartition(is_outflow=is_out, bn_values=bn, sub_is_outflow=sub)


def write_mesh_listing(mesh: PrimalMesh, target):
    """Plain-text dump: one record per line, 0-based indices.

    Records: ``node i x y``, ``tri i a b c``, ``bedge i a b``.
    """
    close = False
    if isinstance(target, (str, bytes)):
        target = open(target, "w")
        close = True
    try:
        for i, (x, y) in enumerate(mesh.nodes):
            target.write(f"node {i} {x:.17g} {y:.17g}\n")
        for i, (a, b, c) in enumerate(mesh.triangles):
            target.write(f"tri {i} {a} {b} {c}\n")
        for i, (a, b) in enumerate(mesh.boundary_edges):
            target.write(f"bedge {i} {a} {b}\n")
    finally:
        if close:
            target.close()
