"""Small planar-geometry helpers shared by the mesh, model and postprocess code."""

import numpy as np


def cross2(a, b):
    """z-component of the cross product of 2-D vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def polygon_area(poly):
    """Signed area of a closed polygon given as an (n, 2) vertex array (shoelace)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def triangle_areas(nodes, triangles):
    """Signed areas of all triangles, positive for counterclockwise orientation."""
    a = nodes[triangles[:, 0]]
    b = nodes[triangles[:, 1]]
    c = nodes[triangles[:, 2]]
    return 0.5 * cross2(b - a, c - a)


def rotate_cw(v):
    """Rotate 2-D vectors by 90 degrees clockwise: (x, y) -> (y, -x).

    Applied to the tangent of a counterclockwise boundary loop this yields the
    outward normal.
    """
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = v[..., 1]
    out[..., 1] = -v[..., 0]
    return out


def clip_polygon_to_rect(poly, x0, x1, y0, y1):
    """Intersect a convex polygon with the axis-aligned rectangle [x0,x1]x[y0,y1].

    Sutherland-Hodgman against the four half planes; exact up to roundoff, which
    keeps integrals of rectangle-indicator sources exact on every mesh.
    """
    def clip_half(pts, inside, intersect):
        if len(pts) == 0:
            return pts
        out = []
        n = len(pts)
        for k in range(n):
            cur, nxt = pts[k], pts[(k + 1) % n]
            cin, nin = inside(cur), inside(nxt)
            if cin:
                out.append(cur)
                if not nin:
                    out.append(intersect(cur, nxt))
            elif nin:
                out.append(intersect(cur, nxt))
        return out

    def cut(p, q, axis, c):
        t = (c - p[axis]) / (q[axis] - p[axis])
        r = p + t * (q - p)
        r[axis] = c
        return r

    pts = [np.asarray(p, dtype=float) for p in poly]
    pts = clip_half(pts, lambda p: p[0] >= x0, lambda p, q: cut(p, q, 0, x0))
    pts = clip_half(pts, lambda p: p[0] <= x1, lambda p, q: cut(p, q, 0, x1))
    pts = clip_half(pts, lambda p: p[1] >= y0, lambda p, q: cut(p, q, 1, y0))
    pts = clip_half(pts, lambda p: p[1] <= y1, lambda p, q: cut(p, q, 1, y1))
    if len(pts) < 3:
        return np.zeros((0, 2))
    return np.array(pts)


def points_in_polygon(points, poly, tol=1e-12):
    """Classify points against a closed polygon boundary loop.

    Returns (inside, on_boundary) boolean arrays; points within ``tol`` of the
    boundary are reported in ``on_boundary`` (and not in ``inside``).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(poly, dtype=float)
    a = p
    b = np.roll(p, -1, axis=0)

    # distance of every point to every boundary segment
    ab = b - a                                        # (m,2)
    ap = pts[:, None, :] - a[None, :, :]              # (n,m,2)
    denom = np.einsum("mi,mi->m", ab, ab)
    t = np.clip(np.einsum("nmi,mi->nm", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    dist = np.linalg.norm(pts[:, None, :] - closest, axis=2).min(axis=1)
    on_boundary = dist <= tol

    # crossing-number test for the rest
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    ax, ay = a[:, 0][None, :], a[:, 1][None, :]
    bx, by = b[:, 0][None, :], b[:, 1][None, :]
    cond = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = np.sum(cond & (x < xint), axis=1)
    inside = (crossings % 2 == 1) & ~on_boundary
    return inside, on_boundary
