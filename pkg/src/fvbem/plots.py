"""Matplotlib figures rendered next to the delimited outputs.

Kept separate from the postprocess data path: postprocess emits numbers, this
module turns a report or field sample set into a picture file.
"""

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import matplotlib.tri as mtri

_SERIES = (
    ("e_h1", "H1-seminorm error", "o"),
    ("e_l2", "L2 error", "s"),
    ("e_v", "conormal energy-norm error", "^"),
)


def save_convergence_figure(report, path):
    """Log-log error curves vs element count with order guide lines."""
    fig, ax = plt.subplots(figsize=(6.8, 4.8))
    N = report.counts
    plotted = False
    for key, label, marker in _SERIES:
        e = report.errors(key)
        ok = np.isfinite(e) & (e > 0)
        if not ok.any():
            continue
        ax.loglog(N[ok], e[ok], marker=marker, ms=4, label=label)
        plotted = True
    if plotted:
        for p, style in ((0.5, ":"), (0.75, "-."), (1.0, "--")):
            ref = N ** (-p)
            anchor = None
            for key, _, _ in _SERIES:
                e = report.errors(key)
                if np.isfinite(e[-1]) and e[-1] > 0:
                    anchor = max(anchor or 0, e[-1])
            if anchor:
                ax.loglog(N, 2.0 * anchor * ref / ref[-1], style, color="0.6",
                          lw=0.8, label=f"order {p} in N")
        ax.legend(fontsize=8)
    ax.set_xlabel("number of elements")
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.set_title(report.problem)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_field_figure(samples, mesh, u, path, title=""):
    """Interior nodal field on its triangulation plus the exterior grid samples,
    drawn on a common color scale with contour lines."""
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    ext = np.ma.masked_invalid(samples.values.reshape(samples.shape))
    lo = min(np.nanmin(samples.values) if np.isfinite(samples.values).any() else 0.0,
             float(np.min(u)))
    hi = max(np.nanmax(samples.values) if np.isfinite(samples.values).any() else 0.0,
             float(np.max(u)))
    X = samples.points[:, 0].reshape(samples.shape)
    Y = samples.points[:, 1].reshape(samples.shape)
    pc = ax.pcolormesh(X, Y, ext, vmin=lo, vmax=hi, shading="gouraud")
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    ax.tripcolor(tri, u, vmin=lo, vmax=hi, shading="gouraud")
    levels = np.linspace(lo, hi, 21)[1:-1]
    if hi > lo:
        ax.contour(X, Y, ext, levels=levels, colors="k", linewidths=0.4)
        ax.tricontour(tri, u, levels=levels, colors="k", linewidths=0.4)
    ax.plot(np.append(mesh.nodes[mesh.boundary_loop, 0],
                      mesh.nodes[mesh.boundary_loop[0], 0]),
            np.append(mesh.nodes[mesh.boundary_loop, 1],
                      mesh.nodes[mesh.boundary_loop[0], 1]),
            "k-", lw=1.0)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.colorbar(pc, ax=ax, shrink=0.85)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
