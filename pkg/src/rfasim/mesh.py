"""Tetrahedral mesh of the ablation set-up.

The box is ``[0, 0.08]^3`` (metres): board ``z < 0.02``, tissue up to the
(undeformed) plane ``z = 0.04``, blood above.  The catheter axis is vertical
through the box centre.  The electrode (hemispherical tip plus cylinder) is
pushed ``omega_max`` below the undeformed plane; the catheter body above the
electrode is not meshed.

Construction is an extruded layered mesh.  A planar Delaunay triangulation
(concentric rings near the axis, a graded lattice further out) is lifted
through per-node "special surfaces" (board top, tissue surface, electrode
tip sphere, hole band, electrode top) with graded sub-layers in between.
Every prism is split into three tetrahedra with the global-index rule, which
makes neighbouring prisms conforming.  Because each tetrahedron has exactly
one vertical edge, positive volume follows from columns being strictly
increasing in ``z``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import Delaunay

from .contact import ContactSolution, solve_contact, surface_profile
from .params import DEFAULT_MATERIALS, MaterialTable, Region, grams_force_to_newtons
from .powersplit import DEFAULT_CATHETER, CatheterSpec

log = logging.getLogger(__name__)

FACET_TAGS = {
    "inflow": 1,
    "outflow": 2,
    "bottom": 3,
    "walls": 4,
    "electrode_top": 5,
    "hole_inlets": 6,
    "catheter_insulated": 7,
    "tissue_blood_interface": 8,
    "electrode_blood": 9,
    "electrode_tissue": 10,
}
BOUNDARY_TAGS = ("inflow", "outflow", "bottom", "walls", "electrode_top", "catheter_insulated")

# the three tetrahedra of a prism, vertices 0..2 bottom, 3..5 top, sorted by global index
_PRISM_SPLIT = np.array([[0, 1, 2, 5], [0, 1, 4, 5], [0, 3, 4, 5]])
_TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


class MeshError(ValueError):
    pass


class Mesh:
    """Tetrahedral mesh with region and facet tags.

    Parameters
    ----------
    nodes : (n, 3) float array, metres
    cells : (m, 4) int array, positively oriented
    cell_region : (m,) int array of :class:`Region` values
    facets : (k, 3) int array of tagged triangles
    facet_tag : (k,) int array, values from ``FACET_TAGS``
    meta : dict of JSON-serialisable geometry data
    """

    def __init__(self, nodes, cells, cell_region, facets=None, facet_tag=None, meta=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.cell_region = np.ascontiguousarray(cell_region, dtype=np.int8)
        self.facets = np.zeros((0, 3), np.int64) if facets is None else np.asarray(facets, np.int64)
        self.facet_tag = np.zeros(0, np.int8) if facet_tag is None else np.asarray(facet_tag, np.int8)
        self.meta = dict(meta or {})
        if self.cells.ndim != 2 or self.cells.shape[1] != 4:
            raise MeshError("cells must be an (m, 4) array")
        if self.cell_region.shape != (self.n_cells,):
            raise MeshError("one region tag per cell required")
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= self.n_nodes):
            raise MeshError("cell references a missing node")
        if np.any(self.volumes <= 0):
            raise MeshError(f"degenerate or inverted cell (min volume {self.volumes.min():.3e} m^3)")

    # sizes -----------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    # geometry ----------------------------------------------------------------
    @cached_property
    def _jacobian(self):
        x = self.nodes[self.cells]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.linalg.det(self._jacobian) / 6.0

    @cached_property
    def grad_basis(self) -> np.ndarray:
        """Gradients of the four barycentric functions, shape ``(m, 4, 3)``."""
        inv = np.linalg.inv(self._jacobian)       # rows: gradients of l1..l3
        g = np.empty((self.n_cells, 4, 3))
        g[:, 1:] = inv
        g[:, 0] = -inv.sum(axis=1)
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)

    @cached_property
    def csr_pattern(self):
        """``(indptr, indices, inverse)`` mapping cell-local 4x4 entries to CSR slots."""
        n = self.n_nodes
        rows = np.repeat(self.cells, 4, axis=1).reshape(-1)
        cols = np.tile(self.cells, (1, 4)).reshape(-1)
        keys, inverse = np.unique(rows * n + cols, return_inverse=True)
        indices = keys % n
        indptr = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(keys // n, minlength=n), out=indptr[1:])
        return indptr, indices, inverse.reshape(-1)

    # tags --------------------------------------------------------------------
    def region_mask(self, region) -> np.ndarray:
        if isinstance(region, (list, tuple, set, frozenset)):
            mask = np.zeros(self.n_cells, bool)
            for r in region:
                mask |= self.cell_region == int(Region.parse(r))
            return mask
        return self.cell_region == int(Region.parse(region))

    def region_nodes(self, region) -> np.ndarray:
        return np.unique(self.cells[self.region_mask(region)])

    def facets_with_tag(self, name: str) -> np.ndarray:
        if name not in FACET_TAGS:
            raise KeyError(f"unknown facet tag {name!r}")
        return self.facets[self.facet_tag == FACET_TAGS[name]]

    def tag_nodes(self, *names: str) -> np.ndarray:
        parts = [self.facets_with_tag(n).reshape(-1) for n in names]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, np.int64)

    def facet_areas(self, facets) -> np.ndarray:
        p = self.nodes[facets]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def facet_normals(self, facets) -> np.ndarray:
        p = self.nodes[facets]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def region_volume(self, region) -> float:
        return float(self.volumes[self.region_mask(region)].sum())

    # persistence ---------------------------------------------------------------
    def save(self, path) -> None:
        np.savez_compressed(path, nodes=self.nodes, cells=self.cells, cell_region=self.cell_region,
                            facets=self.facets, facet_tag=self.facet_tag,
                            meta=np.array(json.dumps(self.meta)))

    @classmethod
    def load(cls, path) -> "Mesh":
        with np.load(path, allow_pickle=False) as d:
            return cls(d["nodes"], d["cells"], d["cell_region"], d["facets"], d["facet_tag"],
                       json.loads(str(d["meta"])))

    def __repr__(self):
        return f"Mesh(n_nodes={self.n_nodes}, n_cells={self.n_cells})"


def all_faces(cells: np.ndarray):
    """Unique sorted faces, how many cells share each, and the owning cells.

    Returns ``(faces, counts, owner, other)`` where ``other`` is -1 for faces
    with a single cell.
    """
    f = np.sort(cells[:, _TET_FACES].reshape(-1, 3), axis=1)
    owner_all = np.repeat(np.arange(cells.shape[0]), 4)
    faces, idx, inverse, counts = np.unique(f, axis=0, return_index=True, return_inverse=True,
                                            return_counts=True)
    inverse = inverse.reshape(-1)
    owner = owner_all[idx]
    other = np.full(faces.shape[0], -1, np.int64)
    mask = owner_all != owner[inverse]
    other[inverse[mask]] = owner_all[mask]
    return faces, counts, owner, other


# ---------------------------------------------------------------------------
# geometry configuration
# ---------------------------------------------------------------------------

RESOLUTIONS = {
    # h_min: in-plane spacing near the electrode; growth: ring-to-ring ratio;
    # h_max: far-field spacing; dz: first vertical layer; gz: vertical growth
    "coarse": dict(h_min=0.35e-3, growth=1.45, h_max=10e-3, dz=0.3e-3, gz=1.45),
    "desk": dict(h_min=0.2e-3, growth=1.3, h_max=6e-3, dz=0.2e-3, gz=1.28),
    "fine": dict(h_min=0.12e-3, growth=1.2, h_max=4e-3, dz=0.12e-3, gz=1.18),
}


@dataclass(frozen=True)
class GeometryConfig:
    mode: str = "elastic"
    force: float = 10.0              # gram-force
    resolution: str = "desk"
    h_min: float | None = None       # overrides the preset when given
    h_max: float | None = None
    box: float = 0.08
    board_thickness: float = 0.02
    tissue_thickness: float = 0.02
    profile_cutoff: float = 20.0     # displacement set to zero beyond this many a

    def __post_init__(self):
        if self.mode not in ("elastic", "sharp"):
            raise MeshError(f"mode must be 'elastic' or 'sharp', got {self.mode!r}")
        if self.resolution not in RESOLUTIONS:
            raise MeshError(f"unknown resolution {self.resolution!r}")
        if self.force < 0:
            raise MeshError("force must be non-negative")
        if self.h_min is not None and self.h_max is not None and self.h_min > self.h_max:
            raise MeshError("h_min must not exceed h_max")
        if self.board_thickness + self.tissue_thickness >= self.box:
            raise MeshError("board and tissue leave no room for blood")

    @property
    def blood_thickness(self) -> float:
        return self.box - self.board_thickness - self.tissue_thickness

    def sizes(self) -> dict:
        s = dict(RESOLUTIONS[self.resolution])
        if self.h_min is not None:
            s["dz"] *= self.h_min / s["h_min"]
            s["h_min"] = self.h_min
        if self.h_max is not None:
            s["h_max"] = self.h_max
        return s


# ---------------------------------------------------------------------------
# planar triangulation
# ---------------------------------------------------------------------------

def _graded_offsets(h0, growth, h_max, start, stop):
    """Positions ``start < p1 < ... <= stop`` with spacing growing from ``h0``."""
    out, p, h = [], start, h0
    while True:
        h = min(h * growth, h_max)
        p += h
        if p >= stop - 0.5 * h:
            out.append(stop)
            return out
        out.append(p)


def _ring_radii(sizes, mandatory, extent):
    h_min, growth, h_max = sizes["h_min"], sizes["growth"], sizes["h_max"]
    mandatory = sorted(m for m in mandatory if m > 0)
    r_uniform = max(mandatory) + 2 * h_min
    radii = list(np.arange(h_min, r_uniform, h_min))
    radii = [r for r in radii if all(abs(r - m) > 0.45 * h_min for m in mandatory)]
    radii = sorted(radii + mandatory)
    # merge mandatory radii closer than 1e-9 m
    merged = [radii[0]]
    for r in radii[1:]:
        if r - merged[-1] > 1e-9:
            merged.append(r)
    radii = merged
    spacing = [h_min] * len(radii)
    grown = _graded_offsets(h_min, growth, h_max, radii[-1], extent)
    h = h_min
    for r in grown:
        h = min(h * growth, h_max)
        radii.append(r)
        spacing.append(h)
    return np.array(radii), np.array(spacing)


def _zipper(ia, ta, ib, tb):
    """Triangulate the annulus between two closed rings given their node
    indices and increasing angles."""
    na, nb = len(ia), len(ib)
    ta = np.concatenate([ta, ta[:1] + 2 * math.pi])
    j0 = int(np.argmin(np.abs(np.angle(np.exp(1j * (tb - ta[0]))))))
    tb = np.roll(tb, -j0)
    ib = np.roll(ib, -j0)
    tb = np.unwrap(tb)
    tb = tb + 2 * math.pi * np.round((ta[0] - tb[0]) / (2 * math.pi))
    tb = np.concatenate([tb, tb[:1] + 2 * math.pi])
    out, i, j = [], 0, 0
    while i < na or j < nb:
        if j >= nb or (i < na and ta[i + 1] <= tb[j + 1]):
            out.append((ia[i % na], ib[j % nb], ia[(i + 1) % na]))
            i += 1
        else:
            out.append((ia[i % na], ib[j % nb], ib[(j + 1) % nb]))
            j += 1
    return out


def _planar_mesh(sizes, mandatory, half, phase_zero):
    """Concentric rings around the origin, joined ring by ring, then a
    uniform lattice out to the square ``[-half, half]^2``."""
    radii, spacing = _ring_radii(sizes, mandatory, 0.8 * half)
    pts = [np.zeros((1, 2))]
    tris = []
    prev_idx, prev_t = np.array([0]), None
    count = 1
    for k, (r, h) in enumerate(zip(radii, spacing)):
        n = 6 * max(1, int(round(2 * math.pi * r / (6 * h))))
        phase = 0.0 if any(abs(r - z) < 1e-12 for z in phase_zero) else (k % 2) * math.pi / n
        t = phase + 2 * math.pi * np.arange(n) / n
        idx = count + np.arange(n)
        pts.append(np.column_stack([r * np.cos(t), r * np.sin(t)]))
        if prev_t is None:
            tris += [(0, idx[i], idx[(i + 1) % n]) for i in range(n)]
        else:
            tris += _zipper(prev_idx, prev_t, idx, t)
        prev_idx, prev_t = idx, t
        count += n
    ring_pts = pts[-1]
    r_last, h_last = radii[-1], spacing[-1]
    m = int(math.ceil(2 * half / sizes["h_max"]))
    g = np.linspace(-half, half, m + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    lat = np.column_stack([X.ravel(), Y.ravel()])
    lat = lat[np.hypot(lat[:, 0], lat[:, 1]) > r_last + 0.7 * h_last]
    outer_pts = np.concatenate([ring_pts, lat])
    dl = Delaunay(outer_pts, qhull_options="Qbb Qc Qz Q12").simplices
    n_ring = len(ring_pts)
    dl = dl[~(dl < n_ring).all(axis=1)]
    # every edge of the last ring must be present
    edges = {tuple(sorted(e)) for t in dl for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2]))}
    missing = [i for i in range(n_ring) if tuple(sorted((i, (i + 1) % n_ring))) not in edges]
    if missing:
        raise MeshError("outer triangulation does not conform to the last ring")
    glob = np.concatenate([prev_idx, count + np.arange(len(lat))])
    xy = np.concatenate(pts + [lat])
    tri = np.concatenate([np.array(tris, np.int64), glob[dl]])
    return xy, _orient(xy, tri), radii


def _orient(xy, tri):
    p = xy[tri]
    area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(np.abs(area2) <= 1e-12 * np.abs(area2).max()):
        raise MeshError("planar triangulation produced degenerate triangles")
    return np.where((area2 < 0)[:, None], tri[:, [0, 2, 1]], tri)


def _check_rings(xy, tri, guard_radii):
    r = np.hypot(xy[:, 0], xy[:, 1])
    rt = r[tri]
    for g in guard_radii:
        crosses = (rt < g - 1e-9).any(axis=1) & (rt > g + 1e-9).any(axis=1)
        if crosses.any():
            raise MeshError(f"planar triangulation crosses the ring r={g:.6g} m")


# ---------------------------------------------------------------------------
# vertical structure
# ---------------------------------------------------------------------------

def _fractions(thickness, first, growth, from_top=False, n_min=1):
    """Cumulative fractions (0..1) of a geometrically graded band."""
    if thickness <= first:
        n = n_min
    else:
        n = max(n_min, int(math.ceil(math.log(1 + thickness * (growth - 1) / first) / math.log(growth))))
    h = first * growth ** np.arange(n)
    f = np.concatenate([[0.0], np.cumsum(h) / h.sum()])
    if from_top:
        f = 1.0 - f[::-1]
    f[0], f[-1] = 0.0, 1.0
    return f


def build_mesh(config: GeometryConfig = GeometryConfig(), spec: CatheterSpec = DEFAULT_CATHETER,
               materials: MaterialTable = DEFAULT_MATERIALS, contact: ContactSolution | None = None) -> Mesh:
    """Mesh the box with the catheter inserted for the given force and mode."""
    sizes = config.sizes()
    L = config.box
    half = 0.5 * L
    xc = yc = half
    z_board = config.board_thickness
    z_s = config.board_thickness + config.tissue_thickness
    tissue = materials.tissue
    if contact is None:
        contact = solve_contact(grams_force_to_newtons(config.force), spec.R, tissue.young, tissue.poisson)
    R, R_h = spec.R, spec.R_h
    w_max = contact.omega_max
    z_tip = z_s - w_max
    z_c = z_tip + R
    z_top = z_tip + spec.h_e
    if z_top >= L - 2 * sizes["dz"]:
        raise MeshError("electrode reaches the top of the box")
    if z_tip <= z_board + 2 * sizes["dz"]:
        raise MeshError("electrode tip reaches the board")
    R_th = 0.5 * spec.thermistor_diameter
    gmin = 0.1 * sizes["dz"]

    mandatory = [R_th, R]
    contact_ring = None
    if config.mode == "elastic" and contact.a > 0:
        contact_ring = contact.a
    elif config.mode == "sharp" and 0 < w_max < R:
        contact_ring = math.sqrt(R * R - (R - w_max) ** 2)
    if contact_ring is not None:
        mandatory.append(contact_ring)
    xy, tri, _ = _planar_mesh(sizes, mandatory, half, phase_zero=[R])
    _check_rings(xy, tri, mandatory)
    e1, e2 = xy[tri[:, 1]] - xy[tri[:, 0]], xy[tri[:, 2]] - xy[tri[:, 0]]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]).sum()
    if abs(area - L * L) > 1e-9 * L * L:
        raise MeshError("planar triangulation does not cover the box")
    r = np.hypot(xy[:, 0], xy[:, 1])
    eps_r = 1e-9
    inner = r <= R + eps_r

    # tissue surface and tip sphere per column -------------------------------
    if config.mode == "elastic":
        T = z_s - surface_profile(contact, r, cutoff=config.profile_cutoff)
        T_R = z_s - float(surface_profile(contact, np.array([R]), cutoff=config.profile_cutoff)[0])
    else:
        T = np.full_like(r, z_s)
        T_R = z_s
    B = np.where(inner, z_c - np.sqrt(np.maximum(R * R - np.minimum(r, R) ** 2, 0.0)), z_c)
    deep = z_c < T_R                       # equator of the tip below the tissue surface
    if deep and T_R - z_c < 2 * gmin:
        raise MeshError("tip equator too close to the tissue surface for the layer structure")

    S2 = np.empty_like(r)
    S3 = np.empty_like(r)
    S2[inner] = np.minimum(T[inner], B[inner])
    S3[inner] = np.maximum(np.maximum(T[inner], B[inner]), S2[inner] + gmin)
    outer = ~inner
    w = np.exp(-(r[outer] - R) / 2e-3)
    gap_blood = np.maximum(z_top - T[outer], 0.0)
    if deep:
        S2[outer] = T[outer] - np.maximum(gmin, (T_R - z_c) * w + 2 * sizes["dz"] * (1 - w))
        S3[outer] = T[outer]
    else:
        S2[outer] = T[outer]
        S3_R = max(z_c, T_R + gmin)
        S3[outer] = T[outer] + np.maximum(gmin, (S3_R - T_R) * w + 0.15 * gap_blood * (1 - w))
    S_hole = np.empty_like(r)
    S_hole[inner] = np.maximum(z_c + 2 * R_h, S3[inner] + gmin)
    Sh_R = max(z_c + 2 * R_h, (T_R if deep else max(z_c, T_R + gmin)) + gmin)
    S3_Rv = T_R if deep else max(z_c, T_R + gmin)
    dh = (Sh_R - S3_Rv) * w + 0.4 * np.maximum(z_top - S3[outer], 0.0) * (1 - w)
    dh = np.minimum(np.maximum(dh, gmin), 0.6 * (z_top - S3[outer]))
    S_hole[outer] = S3[outer] + dh
    surf = np.column_stack([np.zeros_like(r), np.full_like(r, z_board), S2, S3, S_hole,
                            np.full_like(r, z_top), np.full_like(r, L)])
    if np.any(np.diff(surf, axis=1) <= 0.5 * gmin):
        raise MeshError("special surfaces are not strictly increasing")

    dz, gz = sizes["dz"], sizes["gz"]
    fr = [
        _fractions(z_board, 4 * dz * gz ** 6, 1.6, from_top=True, n_min=3),          # board
        _fractions(config.tissue_thickness, dz, gz, from_top=True, n_min=6),          # tissue
        np.linspace(0, 1, 4),                                                          # wedge
        np.linspace(0, 1, max(3, int(math.ceil(2 * R_h / dz))) + 1),                 # hole band
        np.linspace(0, 1, max(3, int(math.ceil((z_top - z_c - 2 * R_h) / (1.5 * dz)))) + 1),
        _fractions(L - z_top, 1.5 * dz, gz, n_min=4),                                  # blood above
    ]
    levels = []
    band_of_layer = []
    for b, f in enumerate(fr):
        lo, hi = surf[:, b], surf[:, b + 1]
        start = 0 if b == 0 else 1
        for k in range(start, len(f)):
            levels.append(lo + f[k] * (hi - lo))
        band_of_layer += [b] * (len(f) - 1)
    Z = np.column_stack(levels)                 # (n_pts, n_levels)
    band_of_layer = np.array(band_of_layer)
    n_pts, n_lev = Z.shape
    n_lay = n_lev - 1
    if np.any(np.diff(Z, axis=1) <= 0):
        raise MeshError("non-monotone column")

    node_id = lambda p, k: k * n_pts + p      # noqa: E731
    nodes = np.column_stack([np.repeat(xy[None, :, 0] + xc, n_lev, 0).ravel(),
                             np.repeat(xy[None, :, 1] + yc, n_lev, 0).ravel(),
                             Z.T.ravel()])

    # classification per (triangle, layer) ------------------------------------
    tri_sorted = np.sort(tri, axis=1)
    n_tri = len(tri)
    tri_inner = inner[tri_sorted].all(axis=1)
    tri_therm = (r[tri_sorted] <= R_th + eps_r).all(axis=1)
    # inside the cylinder the wedge is electrode where the tip sits on or below the tissue
    elec_node = B <= T + 1e-9
    wedge_is_elec = elec_node[tri_sorted].all(axis=1)
    # outside the cylinder the wedge is tissue when it lies under the surface
    wedge_outside = Region.TISSUE if deep else Region.BLOOD

    region = np.empty((n_tri, n_lay), np.int16)
    for k in range(n_lay):
        b = band_of_layer[k]
        if b == 0:
            region[:, k] = Region.BOARD
        elif b == 1:
            region[:, k] = Region.TISSUE
        elif b == 2:
            region[:, k] = np.where(tri_inner, np.where(wedge_is_elec, Region.ELECTRODE, Region.BLOOD),
                                    wedge_outside)
        elif b in (3, 4):
            region[:, k] = np.where(tri_inner, Region.ELECTRODE, Region.BLOOD)
        else:
            region[:, k] = np.where(tri_inner, -1, Region.BLOOD)
    # thermistor: staircase cylinder inside the electrode, top 3 mm of its length
    zmid = 0.5 * (Z[:, :-1] + Z[:, 1:])[tri_sorted].mean(axis=1)       # (n_tri, n_lay)
    z_therm = z_top - spec.thermistor_length
    therm = tri_therm[:, None] & (region == Region.ELECTRODE) & (zmid > z_therm)
    region[therm] = Region.THERMISTOR

    keep = region >= 0
    t_idx, k_idx = np.nonzero(keep)
    v = tri_sorted[t_idx]
    prism = np.column_stack([node_id(v, k_idx[:, None]), node_id(v, k_idx[:, None] + 1)])
    cells = prism[:, _PRISM_SPLIT].reshape(-1, 4)
    cell_region = np.repeat(region[t_idx, k_idx], 3)
    # orientation
    x = nodes[cells]
    det = np.einsum("ij,ij->i", np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), x[:, 3] - x[:, 0])
    flip = det < 0
    cells[flip] = cells[flip][:, [1, 0, 2, 3]]
    # drop unused nodes
    used = np.unique(cells)
    remap = np.full(len(nodes), -1, np.int64)
    remap[used] = np.arange(len(used))
    nodes = nodes[used]
    cells = remap[cells]

    meta = dict(
        mode=config.mode, force_gf=config.force, resolution=config.resolution,
        box=L, z_board=z_board, z_surface=z_s, z_tip=z_tip, z_center=z_c, z_top=z_top,
        axis=[xc, yc], R=R, R_h=R_h, h_e=spec.h_e, n_holes=spec.n_holes,
        thermistor_radius=R_th, a=contact.a, omega_max=w_max,
        contact_ring=contact_ring, deep=bool(deep), sizes=sizes,
    )
    x = nodes[cells]
    vol = np.einsum("ij,ij->i", np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), x[:, 3] - x[:, 0]) / 6
    if vol.min() < 1e-18:
        raise MeshError(f"degenerate cell of volume {vol.min():.3e} m^3")
    facets, tags = _tag_facets(nodes, cells, cell_region, meta)
    mesh = Mesh(nodes, cells, cell_region, facets, tags, meta)
    log.info("built %s mesh: %d nodes, %d cells", config.mode, mesh.n_nodes, mesh.n_cells)
    return mesh


def _in_hole(points, meta) -> np.ndarray:
    """Whether points on the electrode wall fall inside an irrigation hole disk.

    Hole ``k`` is centred at azimuth ``2 pi k / n_holes`` (the first one facing
    the flow direction +x) and height ``R + R_h`` above the tip.
    """
    xc, yc = meta["axis"]
    R, R_h = meta["R"], meta["R_h"]
    phi = np.arctan2(points[:, 1] - yc, points[:, 0] - xc)
    centres = 2 * np.pi * np.arange(meta["n_holes"]) / meta["n_holes"]
    d_phi = np.angle(np.exp(1j * (phi[:, None] - centres[None, :])))
    dz = points[:, 2] - (meta["z_tip"] + R + R_h)
    return ((R * d_phi) ** 2 + dz[:, None] ** 2 <= R_h ** 2).any(axis=1)


def _tag_facets(nodes, cells, cell_region, meta):
    faces, counts, owner, other = all_faces(cells)
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: a face is shared by more than two cells")
    L = meta["box"]
    cen = nodes[faces].mean(axis=1)
    tol = 1e-9
    tag = np.zeros(len(faces), np.int8)
    bnd = counts == 1
    on = lambda axis, val: bnd & (np.abs(nodes[faces][:, :, axis] - val) < tol).all(axis=1)  # noqa: E731
    tag[on(2, 0.0)] = FACET_TAGS["bottom"]
    tag[on(0, 0.0)] = FACET_TAGS["inflow"]
    tag[on(0, L)] = FACET_TAGS["outflow"]
    tag[on(1, 0.0) | on(1, L) | on(2, L)] = FACET_TAGS["walls"]
    rest = bnd & (tag == 0)
    reg = cell_region[owner]
    top = rest & (np.abs(cen[:, 2] - meta["z_top"]) < tol) & (reg == Region.ELECTRODE)
    tag[top] = FACET_TAGS["electrode_top"]
    tag[rest & ~top] = FACET_TAGS["catheter_insulated"]

    inner = ~bnd
    r1 = cell_region[owner]
    r2 = np.where(other >= 0, cell_region[np.maximum(other, 0)], -1)
    pair = lambda a, b: inner & (((r1 == a) & (r2 == b)) | ((r1 == b) & (r2 == a)))  # noqa: E731
    tag[pair(Region.TISSUE, Region.BLOOD)] = FACET_TAGS["tissue_blood_interface"]
    eb = pair(Region.ELECTRODE, Region.BLOOD)
    et = pair(Region.ELECTRODE, Region.TISSUE)
    tag[eb] = FACET_TAGS["electrode_blood"]
    tag[et] = FACET_TAGS["electrode_tissue"]
    # holes: wall facets (near-vertical) of the electrode facing blood or tissue
    wall = (eb | et)
    p = nodes[faces[wall]]
    nz = np.abs(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]))
    nrm = nz / np.linalg.norm(nz, axis=1)[:, None]
    vertical = nrm[:, 2] < 1e-6
    idx = np.nonzero(wall)[0][vertical]
    hole = idx[_in_hole(cen[idx], meta)]
    tag[hole] = FACET_TAGS["hole_inlets"]

    keep = tag > 0
    return faces[keep], tag[keep]


@dataclass
class MeshDiagnostics:
    n_nodes: int
    n_cells: int
    min_volume: float
    max_volume: float
    min_dihedral_deg: float
    region_volumes: dict
    tag_areas: dict
    untagged_boundary: int
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def as_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def min_dihedral_angles(mesh: Mesh) -> np.ndarray:
    """Smallest dihedral angle of each cell, in degrees."""
    g = mesh.grad_basis
    n = g / np.linalg.norm(g, axis=2)[:, :, None]
    best = np.full(mesh.n_cells, np.pi)
    for i in range(4):
        for j in range(i + 1, 4):
            cos = -np.einsum("cd,cd->c", n[:, i], n[:, j])
            best = np.minimum(best, np.arccos(np.clip(cos, -1, 1)))
    return np.degrees(best)


def validate_mesh(mesh: Mesh) -> MeshDiagnostics:
    """Quality report; ``ok`` is false on untagged boundary facets, inverted
    cells or non-manifold faces."""
    problems = []
    faces, counts, owner, _ = all_faces(mesh.cells)
    if np.any(counts > 2):
        problems.append(f"{int((counts > 2).sum())} faces shared by more than two cells")
    bnd = faces[counts == 1]
    tagged = {tuple(f) for f in np.sort(mesh.facets, axis=1)[np.isin(mesh.facet_tag,
                                                                     [FACET_TAGS[t] for t in BOUNDARY_TAGS])]}
    untagged = sum(1 for f in map(tuple, bnd) if f not in tagged)
    if untagged:
        problems.append(f"{untagged} boundary facets without a tag")
    if np.any(mesh.volumes <= 0):
        problems.append("inverted or degenerate cells")
    # boundary facets off the box must lie on the catheter body
    m = mesh.meta
    if "box" in m:
        cen = mesh.nodes[bnd].mean(axis=1)
        L = m["box"]
        on_box = ((np.abs(cen) < 1e-9) | (np.abs(cen - L) < 1e-9)).any(axis=1)
        rc = np.hypot(cen[:, 0] - m["axis"][0], cen[:, 1] - m["axis"][1])
        on_body = (rc <= m["R"] + 1e-9) & (cen[:, 2] >= m["z_top"] - 1e-9)
        stray = ~(on_box | on_body)
        if stray.any():
            problems.append(f"{int(stray.sum())} boundary facets inside the domain")
    region_volumes = {Region(r).name.lower(): mesh.region_volume(r) for r in Region}
    tag_areas = {name: float(mesh.facet_areas(mesh.facets_with_tag(name)).sum()) for name in FACET_TAGS}
    return MeshDiagnostics(
        n_nodes=mesh.n_nodes, n_cells=mesh.n_cells,
        min_volume=float(mesh.volumes.min()), max_volume=float(mesh.volumes.max()),
        min_dihedral_deg=float(min_dihedral_angles(mesh).min()),
        region_volumes=region_volumes, tag_areas=tag_areas,
        untagged_boundary=untagged, problems=problems)


def box_mesh(n=(4, 4, 4), lengths=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), region=Region.TISSUE) -> Mesh:
    """Structured box split into tetrahedra (Kuhn subdivision), for tests and verification.

    ``region`` is a region name/id or a callable mapping cell centroids to ids.
    """
    nx, ny, nz = n
    xs = [np.linspace(o, o + l, k + 1) for o, l, k in zip(origin, lengths, n)]
    X, Y, Zg = np.meshgrid(*xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Zg.ravel()])
    idx = np.arange(len(nodes)).reshape(nx + 1, ny + 1, nz + 1)
    c = np.stack([idx[i:i + nx, j:j + ny, k:k + nz] for i in (0, 1) for j in (0, 1) for k in (0, 1)],
                 axis=-1).reshape(-1, 8)
    # corner numbering v = 4i + 2j + k; six tets along the main diagonal 0-7
    kuhn = np.array([[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7], [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]])
    cells = c[:, kuhn].reshape(-1, 4)
    x = nodes[cells]
    det = np.einsum("ij,ij->i", np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), x[:, 3] - x[:, 0])
    cells[det < 0] = cells[det < 0][:, [1, 0, 2, 3]]
    if callable(region):
        cen_c = nodes[cells].mean(axis=1)
        regions = np.asarray(region(cen_c), dtype=np.int8)
    else:
        regions = np.full(len(cells), int(Region.parse(region)), np.int8)
    faces, counts, _, _ = all_faces(cells)
    bf = faces[counts == 1]
    cen = nodes[bf].mean(axis=1)
    hi = np.array(origin) + np.array(lengths)
    tag = np.full(len(bf), FACET_TAGS["walls"], np.int8)
    tag[np.abs(cen[:, 0] - origin[0]) < 1e-12] = FACET_TAGS["inflow"]
    tag[np.abs(cen[:, 0] - hi[0]) < 1e-12] = FACET_TAGS["outflow"]
    tag[np.abs(cen[:, 2] - origin[2]) < 1e-12] = FACET_TAGS["bottom"]
    tag[np.abs(cen[:, 2] - hi[2]) < 1e-12] = FACET_TAGS["electrode_top"]
    return with_interface_tags(Mesh(nodes, cells, regions, bf, tag, {"box_mesh": True}))


_INTERFACES = (
    (Region.TISSUE, Region.BLOOD, "tissue_blood_interface"),
    (Region.ELECTRODE, Region.BLOOD, "electrode_blood"),
    (Region.ELECTRODE, Region.TISSUE, "electrode_tissue"),
)


def with_interface_tags(mesh: Mesh) -> Mesh:
    """Copy of ``mesh`` with interior region-interface facets added (existing
    interface tags are replaced)."""
    faces, counts, owner, other = all_faces(mesh.cells)
    inner = counts == 2
    r1 = mesh.cell_region[owner]
    r2 = np.where(other >= 0, mesh.cell_region[np.maximum(other, 0)], -1)
    names = [t for _, _, t in _INTERFACES]
    keep = ~np.isin(mesh.facet_tag, [FACET_TAGS[t] for t in names])
    facets, tags = [mesh.facets[keep]], [mesh.facet_tag[keep]]
    for a, b, name in _INTERFACES:
        sel = inner & (((r1 == a) & (r2 == b)) | ((r1 == b) & (r2 == a)))
        facets.append(faces[sel])
        tags.append(np.full(int(sel.sum()), FACET_TAGS[name], np.int8))
    return Mesh(mesh.nodes, mesh.cells, mesh.cell_region, np.concatenate(facets),
                np.concatenate(tags), dict(mesh.meta))


def indentation_volume(contact: ContactSolution, cutoff: float = 20.0, n: int = 4000) -> float:
    """``int_0^{cutoff a} 2 pi r omega(r) dr`` by the trapezoid rule on a graded grid."""
    if contact.a == 0:
        return 0.0
    s = np.linspace(0.0, 1.0, n + 1) ** 2 * cutoff * contact.a
    w = surface_profile(contact, s, cutoff=cutoff)
    return float(trapezoid(2 * np.pi * s * w, s))
