"""Lesion extraction at the 50 degC isotherm and the table metrics.

The temperature is piecewise linear, so the region ``T >= 50`` inside each
tissue tetrahedron is a convex polytope cut by a plane.  Volumes, surface
areas and cross-sections are computed exactly for that interpolant.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .mesh import FACET_TAGS, all_faces
from .params import LESION_ISOTHERM, Region

# edges of a tetrahedron
_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


@dataclass
class Lesion:
    """Isosurface triangles plus per-cell enclosed volume fractions."""

    vertices: np.ndarray          # (nv, 3)
    triangles: np.ndarray         # (nt, 3), oriented away from the hot side
    cell_fraction: np.ndarray     # (n_cells,), zero outside the tissue
    phi: np.ndarray               # nodal T - iso
    cells: np.ndarray             # tissue cell mask
    iso: float

    @property
    def empty(self) -> bool:
        return not np.any(self.cell_fraction > 0)

    def volume(self, mesh) -> float:
        return float(np.dot(self.cell_fraction, mesh.volumes))

    def surface_volume(self, mesh, boundary_facets=None) -> float:
        """Enclosed volume from the divergence theorem over the isosurface and
        the hot part of the tissue boundary."""
        p = self.vertices[self.triangles]
        vol = np.einsum("td,td->t", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0
        if boundary_facets is None:
            boundary_facets = tissue_boundary(mesh, self.cells)
        pts, phis = mesh.nodes[boundary_facets], self.phi[boundary_facets]
        tris = clip_triangles(pts, phis)
        if len(tris):
            vol += np.einsum("td,td->t", tris[:, 0], np.cross(tris[:, 1], tris[:, 2])).sum() / 6.0
        return float(vol)


def tissue_boundary(mesh, cell_mask) -> np.ndarray:
    """Boundary triangles of the selected cells, oriented outward."""
    sub = mesh.cells[cell_mask]
    faces, counts, owner, _ = all_faces(sub)
    bf = faces[counts == 1]
    own = sub[owner[counts == 1]]
    # orient away from the opposite vertex of the owning cell
    opp = np.array([[v for v in c if v not in f][0] for c, f in zip(own, bf)]) if len(bf) else np.zeros(0, int)
    p = mesh.nodes[bf]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("fd,fd->f", n, mesh.nodes[opp] - p[:, 0]) > 0
    bf[flip] = bf[flip][:, [0, 2, 1]]
    return bf


def clip_triangles(points: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Parts of triangles where the linear ``phi >= 0``, as triangles.

    ``points``: (m, 3, 3); ``phi``: (m, 3).  Orientation is preserved.
    """
    out = []
    above = phi >= 0
    n_up = above.sum(axis=1)
    full = n_up == 3
    out.append(points[full])
    for m, pts, ph in zip(n_up, points, phi):
        if m == 0 or m == 3:
            continue
        poly = []
        for a in range(3):
            b = (a + 1) % 3
            if ph[a] >= 0:
                poly.append(pts[a])
            if (ph[a] >= 0) != (ph[b] >= 0):
                t = ph[a] / (ph[a] - ph[b])
                poly.append(pts[a] + t * (pts[b] - pts[a]))
        for k in range(1, len(poly) - 1):
            out.append(np.array([[poly[0], poly[k], poly[k + 1]]]))
    return np.concatenate(out) if out else np.zeros((0, 3, 3))


def triangle_area(tris) -> float:
    if len(tris) == 0:
        return 0.0
    return float(0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1).sum())


def _volume_fractions(phi_c):
    """Exact fraction of each tetrahedron where the linear ``phi >= 0``."""
    n = len(phi_c)
    frac = np.zeros(n)
    up = phi_c >= 0
    k = up.sum(axis=1)
    frac[k == 4] = 1.0

    def corner(ph, apex):
        # sub-tetrahedron at the apex vertex cut by the zero plane
        out = np.ones(len(ph))
        pa = ph[np.arange(len(ph)), apex]
        for j in range(4):
            pj = ph[:, j]
            t = np.where(j == apex, 1.0, pa / np.where(j == apex, 1.0, pa - pj))
            out *= t
        return out

    one = k == 1
    if one.any():
        frac[one] = corner(phi_c[one], np.argmax(up[one], axis=1))
    three = k == 3
    if three.any():
        frac[three] = 1.0 - corner(phi_c[three], np.argmin(up[three], axis=1))
    two = k == 2
    if two.any():
        ph = phi_c[two]
        u2 = up[two]
        order = np.argsort(~u2, axis=1, kind="stable")     # the two hot vertices first
        i, j, kk, ll = order.T
        r = np.arange(len(ph))
        E = np.eye(3)
        ref = np.vstack([np.zeros(3), E])                   # reference tetrahedron
        X = ref[order]                                      # (m, 4, 3)

        def cut(a, b):
            pa, pb = ph[r, a], ph[r, b]
            t = (pa / (pa - pb))[:, None]
            return ref[a] + t * (ref[b] - ref[a])

        vi, vj = X[:, 0], X[:, 1]
        a_, b_ = cut(i, kk), cut(i, ll)
        c_, d_ = cut(j, kk), cut(j, ll)

        def vol(p0, p1, p2, p3):
            return np.abs(np.einsum("md,md->m", p1 - p0, np.cross(p2 - p0, p3 - p0)))

        frac[two] = vol(vi, a_, b_, d_) + vol(vi, a_, c_, d_) + vol(vi, vj, c_, d_)
    return np.clip(frac, 0.0, 1.0)


def extract_lesion(T, mesh, iso: float = LESION_ISOTHERM, region=Region.TISSUE) -> Lesion:
    """Marching-tetrahedra isosurface of ``T = iso`` restricted to a region,
    with the exact enclosed volume fraction of every cell."""
    T = np.asarray(T, dtype=float)
    phi = T - iso
    cells = mesh.region_mask(region)
    frac = np.zeros(mesh.n_cells)
    idx = np.nonzero(cells)[0]
    pc = phi[mesh.cells[idx]]
    frac[idx] = _volume_fractions(pc)

    # isosurface triangles
    up = pc >= 0
    k = up.sum(axis=1)
    cut_cells = idx[(k > 0) & (k < 4)]
    verts, tris = [], []
    if len(cut_cells):
        cv = mesh.cells[cut_cells]
        ph = phi[cv]
        X = mesh.nodes[cv]
        grad = np.einsum("ci,cid->cd", ph, mesh.grad_basis[cut_cells])
        for c in range(len(cut_cells)):
            pts = []
            for a, b in _EDGES:
                if (ph[c, a] >= 0) != (ph[c, b] >= 0):
                    t = ph[c, a] / (ph[c, a] - ph[c, b])
                    pts.append(X[c, a] + t * (X[c, b] - X[c, a]))
            if len(pts) == 3:
                polys = [pts]
            else:
                # the four crossings of a 2-2 split; order them around the quad
                P = np.array(pts)
                cen = P.mean(axis=0)
                g = grad[c] / np.linalg.norm(grad[c])
                e1 = P[0] - cen
                e1 -= g * np.dot(e1, g)
                e1 /= np.linalg.norm(e1)
                e2 = np.cross(g, e1)
                ang = np.arctan2((P - cen) @ e2, (P - cen) @ e1)
                P = P[np.argsort(ang)]
                polys = [[P[0], P[1], P[2]], [P[0], P[2], P[3]]]
            for tri in polys:
                tri = np.array(tri)
                n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
                if np.dot(n, grad[c]) > 0:          # normal must point to colder side
                    tri = tri[[0, 2, 1]]
                base = len(verts)
                verts.extend(tri)
                tris.append([base, base + 1, base + 2])
    V = np.array(verts) if verts else np.zeros((0, 3))
    F = np.array(tris, dtype=np.int64) if tris else np.zeros((0, 3), np.int64)
    return Lesion(V, F, frac, phi, cells, iso)


@dataclass
class LesionMetrics:
    D: float = 0.0        # mm
    Wx: float = 0.0
    Wy: float = 0.0
    DWx: float = 0.0
    DWy: float = 0.0
    V: float = 0.0        # mm^3
    S: float = 0.0        # mm^2
    Tmax: float = 37.0    # degC
    pop_time: float | None = None

    def as_row(self) -> dict:
        return asdict(self)

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]


class _Slicer:
    """x/y extents of ``{phi >= 0}`` on horizontal planes through a cell set."""

    def __init__(self, mesh, cells, phi):
        cv = mesh.cells[cells]
        self.X = mesh.nodes[cv]
        self.ph = phi[cv]
        self.zmin = self.X[:, :, 2].min(axis=1)
        self.zmax = self.X[:, :, 2].max(axis=1)
        self._cache = {}

    def extents(self, z):
        """``(xmin, xmax, ymin, ymax)`` or ``None`` when the plane misses."""
        if z in self._cache:
            return self._cache[z]
        sel = (self.zmin <= z) & (self.zmax >= z)
        out = None
        if sel.any():
            out = self._section(self.X[sel], self.ph[sel], z)
        self._cache[z] = out
        return out

    @staticmethod
    def _section(X, ph, z):
        dz = X[:, :, 2] - z
        pts, vals = [], []
        for a, b in _EDGES:
            da, db = dz[:, a], dz[:, b]
            cross = (da <= 0) != (db <= 0)
            ok = cross | (da == 0)
            t = np.where(cross, da / np.where(cross, da - db, 1.0), 0.0)
            pts.append(X[:, a] + t[:, None] * (X[:, b] - X[:, a]))
            vals.append(np.where(ok, ph[:, a] + t * (ph[:, b] - ph[:, a]), np.nan))
        P = np.stack(pts, axis=1)          # (m, 6, 3) section vertices, nan value if absent
        F = np.stack(vals, axis=1)
        # the hot part of a convex section polygon is the hull of its hot
        # vertices and the zero crossings between hot and cold vertices
        cand = [P[F >= 0]]
        for a in range(6):
            for b in range(6):
                s = (F[:, a] >= 0) & (F[:, b] < 0)
                if s.any():
                    t = (F[s, a] / (F[s, a] - F[s, b]))[:, None]
                    cand.append(P[s, a] + t * (P[s, b] - P[s, a]))
        C = np.concatenate(cand)
        if len(C) == 0:
            return None
        return C[:, 0].min(), C[:, 0].max(), C[:, 1].min(), C[:, 1].max()


def _golden_max(f, lo, hi, iters=40):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


# facets whose heated part counts towards S: the whole tissue surface, or
# only the part facing the blood
TISSUE_SURFACE_TAGS = ("tissue_blood_interface", "electrode_tissue", "hole_inlets")
INTERFACE_SURFACE_TAGS = ("tissue_blood_interface",)


def lesion_metrics(lesion: Lesion, mesh, z_ref: float | None = None, pop_time=None,
                   surface_tags=TISSUE_SURFACE_TAGS,
                   n_levels: int = 100) -> LesionMetrics:
    """Depth, widths, depth of maximal width, volume and surface area (mm).

    ``z_ref`` defaults to the undeformed tissue plane stored in the mesh.
    ``surface_tags`` selects the tissue-surface facets that count towards S;
    by default the whole tissue top surface, including the catheter contact
    spot.  Pass ``("tissue_blood_interface",)`` for the blood-facing part.
    """
    tissue_nodes = mesh.region_nodes(Region.TISSUE)
    T = lesion.phi + lesion.iso
    Tmax = float(T[tissue_nodes].max()) if len(tissue_nodes) else float("nan")
    if lesion.empty:
        return LesionMetrics(Tmax=Tmax, pop_time=pop_time)
    if z_ref is None:
        z_ref = float(mesh.meta.get("z_surface", mesh.nodes[:, 2].max()))
    hot_nodes = tissue_nodes[lesion.phi[tissue_nodes] >= 0]
    pts = np.concatenate([mesh.nodes[hot_nodes], lesion.vertices])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mm = 1e3
    D = (z_ref - lo[2]) * mm
    Wx, Wy = (hi[0] - lo[0]) * mm, (hi[1] - lo[1]) * mm

    cells = np.nonzero(lesion.cells & (lesion.cell_fraction > 0))[0]
    slicer = _Slicer(mesh, cells, lesion.phi)

    def width(z, axis):
        e = slicer.extents(float(z))
        if e is None:
            return 0.0
        return e[1] - e[0] if axis == 0 else e[3] - e[2]

    levels = np.linspace(lo[2], hi[2], n_levels + 1)
    dws = []
    for axis in (0, 1):
        w = np.array([width(z, axis) for z in levels])
        # shallowest level of maximal width, then refined locally
        k = int(np.flatnonzero(w >= w.max() * (1 - 1e-12))[-1])
        a, b = levels[max(k - 1, 0)], levels[min(k + 1, n_levels)]
        z_best, w_best = _golden_max(lambda z: width(z, axis), a, b, iters=30)
        if w[k] >= w_best:
            z_best = levels[k]
        dws.append((z_ref - z_best) * mm)

    V = lesion.volume(mesh) * mm ** 3
    S = 0.0
    tags = [FACET_TAGS[t] for t in surface_tags]
    facets = mesh.facets[np.isin(mesh.facet_tag, tags)]
    if len(facets):
        tri = clip_triangles(mesh.nodes[facets], lesion.phi[facets])
        S = triangle_area(tri) * mm ** 2
    return LesionMetrics(D=float(D), Wx=float(Wx), Wy=float(Wy), DWx=float(dws[0]), DWy=float(dws[1]),
                         V=float(V), S=float(S), Tmax=Tmax, pop_time=pop_time)
