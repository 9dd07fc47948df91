"""Blood and saline velocity in the blood region.

Two routes are provided:

* :func:`prescribed_flow` builds a kinematic field (uniform cross-flow,
  zero on walls, radial jets next to the irrigation holes).  The bioheat
  equation only needs the velocity, so this is the fast default.
* :class:`NavierStokesSolver` solves incompressible Navier-Stokes with
  equal-order P1 elements, SUPG/PSPG/LSIC stabilisation, Crank-Nicolson in
  time and Picard iteration for the convection term.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .femcore import assemble_cells, element_size, supg_tau
from .mesh import Mesh
from .params import Region

log = logging.getLogger(__name__)

ML_PER_MIN = 1e-6 / 60.0
PROTOCOL_SPEEDS = {"HF": 0.5, "LF": 0.1}
NO_SLIP_TAGS = ("walls", "catheter_insulated", "tissue_blood_interface", "electrode_blood")


class FlowError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def nominal_hole_speed(Q_ml_min: float, R_h: float, n_holes: int) -> float:
    """Mean jet speed when the saline rate is shared by ``n_holes`` round holes."""
    if Q_ml_min < 0:
        raise ValueError("saline rate must be non-negative")
    return Q_ml_min * ML_PER_MIN / (n_holes * math.pi * R_h ** 2)


def _axis(mesh):
    return np.array(mesh.meta.get("axis", [0.0, 0.0]), dtype=float)


def radial_unit(mesh, nodes) -> np.ndarray:
    d = np.zeros((len(nodes), 3))
    d[:, :2] = mesh.nodes[nodes, :2] - _axis(mesh)[None, :]
    n = np.linalg.norm(d, axis=1)
    d[n > 0] /= n[n > 0, None]
    return d


def facet_flux(mesh, u, facets, direction=None) -> float:
    """``int u.n dA`` over triangles; ``n`` is the triangle normal oriented
    along ``direction`` (per-facet vectors or one vector) when given."""
    if len(facets) == 0:
        return 0.0
    n = mesh.facet_normals(facets)
    if direction is not None:
        direction = np.broadcast_to(np.asarray(direction, float), n.shape)
        n = n * np.sign(np.einsum("fd,fd->f", n, direction))[:, None]
    um = np.asarray(u)[facets].mean(axis=1)
    return float(np.sum(mesh.facet_areas(facets) * np.einsum("fd,fd->f", um, n)))


def blood_hole_facets(mesh) -> np.ndarray:
    """Hole facets that open into blood (submerged holes are excluded)."""
    holes = mesh.facets_with_tag("hole_inlets")
    blood_nodes = np.zeros(mesh.n_nodes, bool)
    blood_nodes[mesh.region_nodes(Region.BLOOD)] = True
    return holes[blood_nodes[holes].all(axis=1)]


def hole_speed(mesh, Q_ml_min: float) -> float:
    """Jet speed giving exactly ``Q`` through all tagged hole facets.

    The staircase hole outlines differ from true disks, so the nominal
    ``Q / (n pi R_h^2)`` is rescaled by the tagged area projected on the
    radial direction.
    """
    holes = mesh.facets_with_tag("hole_inlets")
    if len(holes) == 0:
        return 0.0
    cen = mesh.nodes[holes].mean(axis=1)
    er = np.zeros_like(cen)
    er[:, :2] = cen[:, :2] - _axis(mesh)
    er /= np.linalg.norm(er, axis=1)[:, None]
    n = mesh.facet_normals(holes)
    proj = np.abs(np.einsum("fd,fd->f", n, er)) * mesh.facet_areas(holes)
    return Q_ml_min * ML_PER_MIN / proj.sum()


def _adjacency(mesh):
    indptr, indices, _ = mesh.csr_pattern
    return sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(mesh.n_nodes,) * 2)


def prescribed_flow(mesh, u_b: float, u_s: float | None = None, Q_saline: float = 17.0,
                    jet_layers: int = 2) -> np.ndarray:
    """Kinematic velocity field on the blood nodes.

    Uniform ``(u_b, 0, 0)`` in the blood, zero on no-slip surfaces (which
    tapers it over the first element layer), and a radial jet of speed
    ``u_s`` on the hole nodes and ``jet_layers`` graph layers around them.
    ``u_s`` defaults to the speed that carries ``Q_saline`` mL/min through
    the tagged holes.
    """
    if u_b < 0 or (u_s is not None and u_s < 0):
        raise ValueError("speeds must be non-negative")
    u = np.zeros((mesh.n_nodes, 3))
    blood = np.zeros(mesh.n_nodes, bool)
    blood[mesh.region_nodes(Region.BLOOD)] = True
    u[blood, 0] = u_b
    wall = np.zeros(mesh.n_nodes, bool)
    wall[mesh.tag_nodes(*NO_SLIP_TAGS)] = True
    # nodes shared with a non-blood cell are on the blood boundary as well
    nonblood = np.zeros(mesh.n_nodes, bool)
    nonblood[np.unique(mesh.cells[~mesh.region_mask(Region.BLOOD)])] = True
    u[wall | nonblood] = 0.0
    if u_s is None:
        u_s = hole_speed(mesh, Q_saline)
    holes = blood_hole_facets(mesh)
    if u_s > 0 and len(holes):
        hole_nodes = np.unique(holes)
        reach = np.zeros(mesh.n_nodes, bool)
        reach[hole_nodes] = True
        adj = _adjacency(mesh)
        for _ in range(jet_layers):
            reach |= (adj @ reach.astype(float)) > 0
        jet = reach & blood & ~(wall | nonblood)
        jet[hole_nodes] = True
        idx = np.nonzero(jet)[0]
        u[idx] = u_s * radial_unit(mesh, idx)
    return u


# ---------------------------------------------------------------------------
# Navier-Stokes
# ---------------------------------------------------------------------------

@dataclass
class FlowState:
    u: np.ndarray                 # (n, 3) on all mesh nodes
    p: np.ndarray                 # (n,) kinematic pressure, zero off the fluid
    time: float = 0.0
    dt_inner: float = 0.0
    picard_history: list = field(default_factory=list)


@dataclass
class VelocityBC:
    """Dirichlet data: node indices, component (0..2) and values."""

    nodes: np.ndarray
    component: int
    values: np.ndarray


def _submesh(mesh, cell_mask):
    cells = mesh.cells[cell_mask]
    used = np.unique(cells)
    remap = np.full(mesh.n_nodes, -1, np.int64)
    remap[used] = np.arange(len(used))
    sub = Mesh(mesh.nodes[used], remap[cells], mesh.cell_region[cell_mask], meta=mesh.meta)
    return sub, used, remap


class NavierStokesSolver:
    """Stabilised P1-P1 Navier-Stokes on the cells selected by ``cells``.

    Parameters
    ----------
    mesh : Mesh
    nu : kinematic viscosity (m^2/s)
    bcs : list of :class:`VelocityBC` in full-mesh node numbering; later
        entries override earlier ones at shared nodes
    cells : boolean cell mask of the fluid (default: blood cells)
    cfl : inner time-step factor, ``dt = cfl * h_min / max|u|``
    """

    def __init__(self, mesh, nu: float, bcs, cells=None, cfl: float = 0.5,
                 picard_tol: float = 1e-6, max_picard: int = 50, method: str = "auto"):
        if nu <= 0:
            raise ValueError("viscosity must be positive")
        self.full = mesh
        self.nu = nu
        self.cfl = cfl
        self.picard_tol = picard_tol
        self.max_picard = max_picard
        mask = mesh.region_mask(Region.BLOOD) if cells is None else np.asarray(cells, bool)
        self.mesh, self.used, self.remap = _submesh(mesh, mask)
        n = self.mesh.n_nodes
        self.method = method if method != "auto" else ("direct" if 4 * n <= 150_000 else "gmres")
        values = np.full((n, 3), np.nan)
        for bc in bcs:
            loc = self.remap[np.asarray(bc.nodes, np.int64)]
            ok = loc >= 0
            values[loc[ok], bc.component] = np.broadcast_to(bc.values, loc.shape)[ok]
        dofs, vals = [], []
        for d in range(3):
            nodes = np.nonzero(~np.isnan(values[:, d]))[0]
            dofs.append(d * n + nodes)
            vals.append(values[nodes, d])
        self.bc_dofs = np.concatenate(dofs)
        self.bc_vals = np.concatenate(vals)
        free = np.ones(4 * n, bool)
        free[self.bc_dofs] = False
        self.free = np.nonzero(free)[0]
        self.h_min = float(element_size(self.mesh).min())

    # assembly -----------------------------------------------------------------
    def _system(self, w_cell, u_old, dt):
        """Matrix and right-hand side of one Crank-Nicolson step with the
        advecting velocity frozen at ``w_cell`` (per cell)."""
        m = self.mesh
        n = m.n_nodes
        V = m.volumes
        g = m.grad_basis                                   # (c, 4, 3)
        speed = np.linalg.norm(w_cell, axis=1)
        h = element_size(m, w_cell)
        tau = np.minimum(supg_tau(h, speed, self.nu), 0.5 * dt)
        re = speed * h / (2 * self.nu)
        tau_c = 0.5 * speed * h * np.minimum(1.0, re / 3.0)
        a = np.einsum("cd,cid->ci", w_cell, g)            # w . grad(phi_i)
        mass = V[:, None, None] * (np.ones((4, 4)) + np.eye(4)) / 20.0
        conv = (V / 4.0)[:, None, None] * np.ones((1, 4, 1)) * a[:, None, :]
        visc = self.nu * V[:, None, None] * np.einsum("cid,cjd->cij", g, g)
        supg = (tau * V)[:, None, None] * a[:, :, None] * a[:, None, :]
        supg_m = (tau * V / 4.0)[:, None, None] * a[:, :, None] * np.ones((1, 1, 4))
        lhs_s = mass / dt + 0.5 * (conv + visc) + supg_m / dt + 0.5 * supg
        rhs_s = mass / dt - 0.5 * (conv + visc) + supg_m / dt - 0.5 * supg
        L = assemble_cells(m, lhs_s)
        Rm = assemble_cells(m, rhs_s)
        blocks = [[None] * 4 for _ in range(4)]
        rhs = np.zeros(4 * n)
        pspg_pp = assemble_cells(m, (tau * V)[:, None, None] * np.einsum("cid,cjd->cij", g, g))
        for d in range(3):
            gd = g[:, :, d]
            # -(p, d_d v) plus SUPG on the pressure gradient
            B = assemble_cells(m, -(V / 4.0)[:, None, None] * gd[:, :, None] * np.ones((1, 1, 4))
                               + (tau * V)[:, None, None] * a[:, :, None] * gd[:, None, :])
            # (q, div u) plus PSPG on time derivative and convection
            D = assemble_cells(m, (V / 4.0)[:, None, None] * np.ones((1, 4, 1)) * gd[:, None, :]
                               + (tau * V / 4.0 / dt)[:, None, None] * gd[:, :, None] * np.ones((1, 1, 4))
                               + 0.5 * (tau * V)[:, None, None] * gd[:, :, None] * a[:, None, :])
            Dr = assemble_cells(m, (tau * V / 4.0 / dt)[:, None, None] * gd[:, :, None] * np.ones((1, 1, 4))
                                - 0.5 * (tau * V)[:, None, None] * gd[:, :, None] * a[:, None, :])
            for e in range(3):
                ge = g[:, :, e]
                lsic = assemble_cells(m, (tau_c * V)[:, None, None] * gd[:, :, None] * ge[:, None, :])
                blocks[d][e] = (L + lsic) if d == e else lsic
            blocks[d][3] = B
            blocks[3][d] = D
            rhs[d * n:(d + 1) * n] = Rm @ u_old[:, d]
            rhs[3 * n:] += Dr @ u_old[:, d]
        blocks[3][3] = pspg_pp
        A = sp.bmat(blocks, format="csr")
        return A, rhs

    def _solve(self, A, rhs, guess):
        x = np.zeros(A.shape[0])
        x[self.bc_dofs] = self.bc_vals
        rhs = rhs - A @ x
        f = self.free
        A_ff = A[f][:, f]
        if self.method == "direct":
            x[f] = spla.spsolve(A_ff.tocsc(), rhs[f])
        else:
            ilu = spla.spilu(A_ff.tocsc(), drop_tol=1e-5, fill_factor=10)
            M = spla.LinearOperator(A_ff.shape, matvec=ilu.solve, dtype=float)
            sol, info = spla.gmres(A_ff, rhs[f], x0=guess[f], rtol=1e-10, atol=0.0, restart=100,
                                   maxiter=50, M=M)
            if info != 0:
                raise FlowError("GMRES failed in the Navier-Stokes solve")
            x[f] = sol
        if not np.all(np.isfinite(x)):
            raise FlowError("non-finite Navier-Stokes solution")
        return x

    def initial_state(self) -> FlowState:
        n = self.full.n_nodes
        return FlowState(np.zeros((n, 3)), np.zeros(n))

    def step(self, state: FlowState, t_start: float, t_end: float) -> FlowState:
        """Advance from ``t_start`` to ``t_end`` with CFL-limited inner steps."""
        if not t_end > t_start:
            raise ValueError("need t_end > t_start")
        m = self.mesh
        n = m.n_nodes
        u = state.u[self.used].copy()
        p = state.p[self.used].copy()
        bc_max = float(np.max(np.abs(self.bc_vals))) if len(self.bc_vals) else 0.0
        t = t_start
        history = []
        dt_used = 0.0
        while t < t_end - 1e-12 * max(1.0, abs(t_end)):
            umax = max(float(np.abs(u).max()), bc_max)
            dt = t_end - t if umax == 0 else min(t_end - t, self.cfl * self.h_min / umax)
            x_old = np.concatenate([u.T.reshape(-1), p])
            x = x_old.copy()
            res_hist = []
            for k in range(self.max_picard):
                u_k = x[:3 * n].reshape(3, n).T
                w_cell = (0.5 * (u_k + u))[m.cells].mean(axis=1)
                A, rhs = self._system(w_cell, u, dt)
                x_new = self._solve(A, rhs, x)
                du = np.linalg.norm(x_new[:3 * n] - x[:3 * n])
                scale = max(np.linalg.norm(x_new[:3 * n]), 1e-300)
                res_hist.append(du / scale)
                x = x_new
                if du <= self.picard_tol * scale:
                    break
                if k >= 3 and res_hist[-1] > 10 * res_hist[0]:
                    raise FlowError("Picard iteration diverged", res_hist)
            else:
                raise FlowError(f"Picard iteration did not converge in {self.max_picard} iterations",
                                res_hist)
            history.append(res_hist)
            u = x[:3 * n].reshape(3, n).T.copy()
            p = x[3 * n:].copy()
            t += dt
            dt_used = dt
        u_full = np.zeros((self.full.n_nodes, 3))
        p_full = np.zeros(self.full.n_nodes)
        u_full[self.used] = u
        p_full[self.used] = p
        return FlowState(u_full, p_full, t_end, dt_used, history)

    def divergence_ratio(self, u_full) -> float:
        """``||div u||_L2 / ||grad u||_L2`` on the fluid cells."""
        m = self.mesh
        u = u_full[self.used]
        G = np.einsum("cid,cie->cde", u[m.cells], m.grad_basis)   # G[c, d, e] = d u_d / d x_e
        div = np.trace(G, axis1=1, axis2=2)
        num = np.sqrt(np.sum(div ** 2 * m.volumes))
        den = np.sqrt(np.sum(np.einsum("cde,cde->c", G, G) * m.volumes))
        return float(num / den) if den > 0 else 0.0


def step_flow(solver: NavierStokesSolver, state: FlowState, t_start: float, t_end: float) -> FlowState:
    return solver.step(state, t_start, t_end)


def ablation_flow_bcs(mesh, u_b: float, Q_saline: float = 17.0, u_s: float | None = None):
    """Velocity boundary data of the ablation set-up: cross-flow at the
    inflow face, no-slip on walls, catheter, electrode and tissue, radial
    jets on the hole facets that open into blood.  The outflow face is left
    stress-free."""
    inflow = mesh.tag_nodes("inflow")
    wall = mesh.tag_nodes(*NO_SLIP_TAGS)
    bcs = [VelocityBC(inflow, 0, np.full(len(inflow), u_b)),
           VelocityBC(inflow, 1, np.zeros(len(inflow))),
           VelocityBC(inflow, 2, np.zeros(len(inflow)))]
    bcs += [VelocityBC(wall, d, np.zeros(len(wall))) for d in range(3)]
    holes = blood_hole_facets(mesh)
    if len(holes):
        speed = hole_speed(mesh, Q_saline) if u_s is None else u_s
        hn = np.unique(holes)
        er = speed * radial_unit(mesh, hn)
        bcs += [VelocityBC(hn, d, er[:, d]) for d in range(3)]
    return bcs
