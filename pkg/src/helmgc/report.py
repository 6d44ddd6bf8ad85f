"""Figures and summary numbers for a reconstructed coefficient."""

from __future__ import annotations

import numpy as np

from .core import ValidationError

ISO_FRACTION = 0.5


def argmax_node(values):
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(values)), np.shape(values)))


def central_slices(grid, values, node=None):
    """The three axis-aligned slices through ``node`` (default: the maximum).

    Returns a dict ``name -> (axis_a, axis_b, array, (label_a, label_b))``.
    """
    values = np.asarray(values, float)
    i, j, l = argmax_node(values) if node is None else node
    x, y, z = grid.axes()
    return {
        "xy": (x, y, values[:, :, l], ("x", "y")),
        "xz": (x, z, values[:, j, :], ("x", "z")),
        "yz": (y, z, values[i, :, :], ("y", "z")),
    }


def isosurface(grid, values, fraction=ISO_FRACTION):
    """Triangle mesh of ``{c = fraction * max c}`` in physical coordinates.

    A constant field has no level crossing and gives an empty mesh.
    """
    from skimage.measure import marching_cubes

    values = np.asarray(values, float)
    level = fraction * values.max()
    if not values.min() < level < values.max():
        return np.zeros((0, 3)), np.zeros((0, 3), int)
    verts, faces, _, _ = marching_cubes(values, level=level, spacing=grid.spacing)
    return verts + np.asarray(grid.origin), faces


def level_set_centroid(grid, values, fraction=ISO_FRACTION):
    """Centroid of the nodes with ``c >= fraction * max c``."""
    values = np.asarray(values, float)
    mask = values >= fraction * values.max()
    X, Y, Z = grid.mesh()
    return np.array([X[mask].mean(), Y[mask].mean(), Z[mask].mean()])


def boxes_overlap(a, b):
    """Whether two ``(lower, upper)`` boxes intersect (touching counts)."""
    (alo, ahi), (blo, bhi) = a, b
    return bool(np.all(np.asarray(alo) <= np.asarray(bhi)) and np.all(np.asarray(blo) <= np.asarray(ahi)))


def mesh_bounds(verts):
    if len(verts) == 0:
        raise ValidationError("empty mesh has no bounds")
    return verts.min(axis=0), verts.max(axis=0)


def truth_support_bounds(grid, values, tol=1e-12):
    """Bounding box of ``c != 1`` on a truth volume, widened by half a cell."""
    nz = np.argwhere(np.abs(np.asarray(values) - 1) > tol)
    if nz.size == 0:
        return None
    ax = grid.axes()
    half = np.asarray(grid.spacing) / 2
    lo = np.array([ax[a][nz[:, a].min()] for a in range(3)]) - half
    hi = np.array([ax[a][nz[:, a].max()] for a in range(3)]) + half
    return lo, hi


def truth_metrics(computed_grid, computed, truth_grid, truth):
    """Relative error of the maximum and geometry checks against a truth volume."""
    c_true = float(np.max(truth))
    c_comp = float(np.max(computed))
    out = {"measured_c": c_true, "computed_c": c_comp,
           "relative_error": abs(c_comp - c_true) / c_true}
    support = truth_support_bounds(truth_grid, truth)
    if support is None:
        return out
    centre = (support[0] + support[1]) / 2
    verts, _ = isosurface(computed_grid, computed)
    out["truth_center"] = centre.tolist()
    if np.max(computed) > np.min(computed):
        cen = level_set_centroid(computed_grid, computed)
        out["iso_centroid"] = cen.tolist()
        out["centroid_distance"] = float(np.linalg.norm(cen - centre))
    if len(verts):
        box = mesh_bounds(verts)
        out["iso_bounds"] = [box[0].tolist(), box[1].tolist()]
        out["iso_overlaps_truth"] = boxes_overlap(box, support)
    return out


def save_slice_png(path, slices, title=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(slices), figsize=(4 * len(slices), 3.6))
    vmax = max(float(np.max(s[2])) for s in slices.values())
    for ax, (name, (a, b, vals, labels)) in zip(np.atleast_1d(axes), slices.items()):
        im = ax.imshow(vals.T, origin="lower", extent=(a[0], a[-1], b[0], b[-1]),
                       vmin=1.0, vmax=max(vmax, 1.0 + 1e-9), aspect="auto", cmap="viridis")
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        ax.set_title(name)
    fig.colorbar(im, ax=axes, shrink=0.85, label="c")
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def save_curve_png(path, x, y, xlabel, ylabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(x, y, "-o", ms=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)
