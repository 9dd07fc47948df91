"""Figures for run and sweep outputs (PNG files beside the CSVs)."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

from .lesion import _EDGES  # noqa: E402
from .params import LESION_ISOTHERM, Region  # noqa: E402
from .vtkio import read_vtk  # noqa: E402


def read_csv(path) -> dict:
    """Columns of a CSV written by the pipeline; numeric where possible."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    cols = {}
    for key in (rows[0].keys() if rows else []):
        vals = [r[key] for r in rows]
        try:
            cols[key] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            cols[key] = vals
    return cols


def plot_timeseries(csv_path, out_png) -> Path:
    s = read_csv(csv_path)
    fig, axes = plt.subplots(3, 1, figsize=(6, 8), sharex=True)
    axes[0].plot(s["t"], s["Tmax_tissue"], label="tissue")
    axes[0].plot(s["t"], s["Tmax_blood"], label="blood")
    axes[0].axhline(100.0, color="k", lw=0.6, ls="--")
    axes[0].set_ylabel("max T (degC)")
    axes[0].legend()
    axes[1].plot(s["t"], s["V0"])
    axes[1].set_ylabel("V0 (V)")
    axes[2].plot(s["t"], s["P_total"], label="total")
    axes[2].plot(s["t"], s["P_tissue"], label="tissue")
    axes[2].set_ylabel("power (W)")
    axes[2].set_xlabel("t (s)")
    axes[2].legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plane_section(mesh, values, y0: float, cells=None):
    """Points ``(x, z)`` and interpolated nodal values on the plane ``y = y0``."""
    cv = mesh.cells if cells is None else mesh.cells[cells]
    X = mesh.nodes[cv]
    V = values[cv]
    dy = X[:, :, 1] - y0
    sel = (dy.min(axis=1) <= 0) & (dy.max(axis=1) >= 0)
    X, V, dy = X[sel], V[sel], dy[sel]
    pts, vals = [], []
    for a, b in _EDGES:
        da, db = dy[:, a], dy[:, b]
        cross = (da <= 0) != (db <= 0)
        t = da[cross] / (da[cross] - db[cross])
        pts.append(X[cross, a] + t[:, None] * (X[cross, b] - X[cross, a]))
        vals.append(V[cross, a] + t * (V[cross, b] - V[cross, a]))
    P = np.concatenate(pts)
    return P[:, [0, 2]], np.concatenate(vals)


def plot_section(vtk_path, out_png, half_width: float = 8e-3, depth: float = 8e-3) -> Path:
    """Temperature on the vertical plane through the catheter axis, with the
    50 degC isotherm."""
    mesh, pd, _, fd = read_vtk(vtk_path)
    T = pd["T"]
    zs = float(fd.get("z_surface", [mesh.nodes[:, 2].max()])[0])
    L = mesh.nodes[:, 0].max() + mesh.nodes[:, 0].min()
    xc = yc = 0.5 * L
    near = np.abs(mesh.centroids[:, 0] - xc) < 1.5 * half_width
    near &= (mesh.centroids[:, 2] > zs - 1.5 * depth) & (mesh.centroids[:, 2] < zs + depth)
    tissue = near & mesh.region_mask(Region.TISSUE)
    P, v = plane_section(mesh, T, yc, near)
    fig, ax = plt.subplots(figsize=(6, 5))
    if len(P) >= 3:
        P, idx = np.unique(np.round(P, 12), axis=0, return_index=True)
        tri = mtri.Triangulation((P[:, 0] - xc) * 1e3, (P[:, 1] - zs) * 1e3)
        if "z_top" in fd and "R" in fd:
            # hide the catheter lumen above the electrode, which is not meshed
            cx = tri.x[tri.triangles].mean(axis=1) * 1e-3
            cz = tri.y[tri.triangles].mean(axis=1) * 1e-3 + zs
            tri.set_mask((np.abs(cx) < fd["R"][0]) & (cz > fd["z_top"][0]))
        cf = ax.tricontourf(tri, v[idx], levels=np.linspace(37, max(100, v.max()), 27), cmap="inferno")
        fig.colorbar(cf, ax=ax, label="T (degC)")
        Pt, vt = plane_section(mesh, T, yc, tissue)
        if len(Pt) >= 3 and vt.max() >= LESION_ISOTHERM:
            Pt, it = np.unique(np.round(Pt, 12), axis=0, return_index=True)
            tt = mtri.Triangulation((Pt[:, 0] - xc) * 1e3, (Pt[:, 1] - zs) * 1e3)
            ax.tricontour(tt, vt[it], levels=[LESION_ISOTHERM], colors="c", linewidths=1.2)
    ax.axhline(0.0, color="w", lw=0.6, ls=":")
    ax.set_xlim(-half_width * 1e3, half_width * 1e3)
    ax.set_ylim(-depth * 1e3, depth * 1e3)
    ax.set_aspect("equal")
    ax.set_xlabel("x - x_axis (mm), flow direction")
    ax.set_ylabel("z - z_surface (mm)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_sweep(csv_path, out_png) -> Path:
    """Lesion depth, volume and pop time against force for each mode."""
    s = read_csv(csv_path)
    modes = sorted(set(s["mode"]))
    protocols = sorted(set(s["protocol"]))
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for mode in modes:
        for prot in protocols:
            sel = np.array([(m == mode and p == prot) for m, p in zip(s["mode"], s["protocol"])])
            if not sel.any():
                continue
            F = s["force"][sel]
            o = np.argsort(F)
            lab = f"{mode} {prot}"
            axes[0].plot(F[o], s["D"][sel][o], "o-", label=lab)
            axes[1].plot(F[o], s["V"][sel][o], "o-", label=lab)
            axes[2].plot(F[o], s["pop_time"][sel][o], "o-", label=lab)
    for ax, name in zip(axes, ("D (mm)", "V (mm^3)", "pop time (s)")):
        ax.set_xlabel("force (gf)")
        ax.set_ylabel(name)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def render_run_report(out_dir) -> list:
    """All figures for one run directory; missing inputs are skipped."""
    out_dir = Path(out_dir)
    made = []
    if (out_dir / "timeseries.csv").is_file():
        made.append(plot_timeseries(out_dir / "timeseries.csv", out_dir / "timeseries.png"))
    if (out_dir / "field_final.vtk").is_file():
        made.append(plot_section(out_dir / "field_final.vtk", out_dir / "section.png"))
    if (out_dir / "sweep.csv").is_file():
        made.append(plot_sweep(out_dir / "sweep.csv", out_dir / "sweep.png"))
    return made
