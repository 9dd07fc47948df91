"""Bioheat equation: backward Euler, SUPG advection, Joule heating.

The coefficients ``rho c(T)`` and ``k(T)`` are frozen at the previous time
level in each step.  The time term uses a lumped mass matrix, which keeps
the global energy balance exact and avoids the over/undershoots of the
consistent mass at small time steps.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .femcore import (SolverError, assemble_advection_supg, assemble_load, assemble_mass,
                      assemble_stiffness)
from .params import (BODY_TEMPERATURE, COAGULUM_TEMPERATURE, POP_TEMPERATURE, MaterialTable, Region,
                     cell_coefficients)

log = logging.getLogger(__name__)

OUTER_TAGS = ("inflow", "outflow", "bottom", "walls")


class BioheatError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class PopEvent:
    time: float
    node: int
    location: tuple
    temperature: float


@dataclass(frozen=True)
class ThermalState:
    T: np.ndarray
    time: float = 0.0
    pop: PopEvent | None = None
    max_tissue_T: float = BODY_TEMPERATURE
    max_blood_T: float = BODY_TEMPERATURE

    @property
    def pop_flag(self) -> bool:
        return self.pop is not None

    @property
    def pop_time(self):
        return None if self.pop is None else self.pop.time

    @property
    def coagulum_risk(self) -> bool:
        return self.max_blood_T >= COAGULUM_TEMPERATURE


def initial_state(mesh, T0: float = BODY_TEMPERATURE) -> ThermalState:
    return ThermalState(np.full(mesh.n_nodes, float(T0)), 0.0)


class BioheatSolver:
    """Backward-Euler stepper bound to one mesh and material table.

    Parameters
    ----------
    mesh : Mesh
    materials : MaterialTable
    velocity : (n, 3) nodal velocity, used on blood cells only
    T_body : Dirichlet value on the outer box faces
    T_saline : Dirichlet value on the irrigation-hole nodes (``None`` disables it)
    dirichlet_tags : facet tags held at ``T_body``
    lumped : lumped (default) or consistent mass
    """

    def __init__(self, mesh, materials: MaterialTable, velocity=None, T_body: float = BODY_TEMPERATURE,
                 T_saline: float | None = BODY_TEMPERATURE, dirichlet_tags=OUTER_TAGS,
                 lumped: bool = True, tol: float = 1e-10):
        self.mesh = mesh
        self.materials = materials
        self.lumped = lumped
        self.tol = tol
        nodes = [mesh.tag_nodes(*dirichlet_tags)] if dirichlet_tags else []
        values = [np.full(len(nodes[0]), T_body)] if nodes else []
        if T_saline is not None and len(mesh.facets_with_tag("hole_inlets")):
            h = np.setdiff1d(mesh.tag_nodes("hole_inlets"), nodes[0] if nodes else [])
            nodes.append(h)
            values.append(np.full(len(h), T_saline))
        self.fixed = np.concatenate(nodes).astype(np.int64) if nodes else np.zeros(0, np.int64)
        self.fixed_values = np.concatenate(values) if values else np.zeros(0)
        mask = np.ones(mesh.n_nodes, bool)
        mask[self.fixed] = False
        self.free = np.nonzero(mask)[0]
        self.tissue_nodes = mesh.region_nodes(Region.TISSUE)
        self.blood_nodes = mesh.region_nodes(Region.BLOOD)
        self.blood_cells = mesh.region_mask(Region.BLOOD)
        self._supg = None
        self._pre = None
        self._pre_age = 0
        self.set_velocity(velocity)

    def set_velocity(self, velocity):
        """Cache the SUPG operators; blood coefficients are constant, so they
        only change with the velocity."""
        mesh = self.mesh
        if velocity is None or not np.any(velocity):
            self._supg = None
            return
        blood = self.materials.blood
        cap = np.where(self.blood_cells, blood.rho * blood.c0, 1.0)
        k = np.where(self.blood_cells, blood.k0, 1.0)
        self._supg = assemble_advection_supg(mesh, velocity, k, cap, cells=self.blood_cells)
        self._pre = None

    def _krylov(self, A_f, rhs, M, atol):
        x, info = spla.bicgstab(A_f, rhs, rtol=self.tol, atol=atol, maxiter=2000, M=M)
        res = np.linalg.norm(rhs - A_f @ x)
        bound = 10 * max(self.tol * np.linalg.norm(rhs), atol)
        return x, bool(np.isfinite(res) and res <= bound), res / max(np.linalg.norm(rhs), 1e-300), info

    def _solve(self, A, b, Tn):
        """Solve for the increment ``T - Tn``.

        The relative tolerance applies to the increment residual, floored at
        ``tol * |b|`` so that near-stationary steps are not chasing rounding.
        """
        f = self.free
        delta = np.zeros(self.mesh.n_nodes)
        delta[self.fixed] = self.fixed_values - Tn[self.fixed]
        r = b - A @ (Tn + delta)
        A_f = A[f][:, f].tocsr()
        rhs = r[f]
        atol = self.tol * np.linalg.norm(b[f])
        if np.linalg.norm(rhs) <= atol:
            return Tn + delta
        ok = False
        if self._pre is not None and self._pre_age < 100:
            x, ok, res, info = self._krylov(A_f, rhs, self._pre, atol)
            self._pre_age += 1
        if not ok:
            try:
                # refreshed incomplete LU; cheap to apply, reused over many steps
                ilu = spla.spilu(A_f.tocsc(), drop_tol=1e-3, fill_factor=8)
                self._pre = spla.LinearOperator(A_f.shape, matvec=ilu.solve, dtype=float)
                self._pre_age = 0
                x, ok, res, info = self._krylov(A_f, rhs, self._pre, atol)
            except RuntimeError:
                self._pre = None
        if not ok:
            d = 1.0 / A_f.diagonal()
            jac = spla.LinearOperator(A_f.shape, matvec=lambda v: d * v, dtype=float)
            x, ok, res, info = self._krylov(A_f, rhs, jac, atol)
            if not ok:
                raise SolverError(f"bioheat solve did not converge (residual {res:.3e})", res, info)
        delta[f] = x
        return Tn + delta

    def step(self, state: ThermalState, source_cell, dt: float) -> ThermalState:
        """Advance by ``dt`` with a per-cell heat source (W/m^3)."""
        if not dt > 0:
            raise ValueError("time step must be positive")
        mesh = self.mesh
        Tn = state.T
        T_cell = Tn[mesh.cells].mean(axis=1)
        rho, c, k, _ = cell_coefficients(self.materials, mesh.cell_region, T_cell)
        M = assemble_mass(mesh, rho * c, lumped=self.lumped)
        K = assemble_stiffness(mesh, k)
        q = np.asarray(source_cell, dtype=float)
        if not np.all(np.isfinite(q)):
            raise BioheatError(f"non-finite heat source at t={state.time:.4f} s", state)
        b = M @ Tn / dt + assemble_load(mesh, np.repeat((q * mesh.volumes / 4.0)[:, None], 4, axis=1))
        A = M / dt + K
        if self._supg is not None:
            A = A + self._supg.operator + self._supg.mass / dt
            b = b + self._supg.mass @ Tn / dt + self._supg.load(q)
        T = self._solve(sp.csr_matrix(A), b, Tn)
        t = state.time + dt
        if not np.all(np.isfinite(T)):
            raise BioheatError(f"non-finite temperature at t={t:.4f} s", state)
        return self.diagnose(T, t, state.pop)

    def diagnose(self, T, t, previous_pop=None) -> ThermalState:
        tn = self.tissue_nodes
        i = tn[np.argmax(T[tn])] if len(tn) else 0
        Tmax_t = float(T[i]) if len(tn) else BODY_TEMPERATURE
        Tmax_b = float(T[self.blood_nodes].max()) if len(self.blood_nodes) else BODY_TEMPERATURE
        if T.min() < 20.0 or T.max() > 120.0:
            log.warning("temperature outside the [20, 120] degC sanity band at t=%.3f s", t)
        state = ThermalState(T, t, previous_pop, Tmax_t, Tmax_b)
        if previous_pop is None:
            ev = detect_pop(state, self.mesh, tn)
            if ev is not None:
                state = replace(state, pop=ev)
        return state


def detect_pop(state: ThermalState, mesh, tissue_nodes=None) -> PopEvent | None:
    """First tissue node at or above 100 degC, if any."""
    tn = mesh.region_nodes(Region.TISSUE) if tissue_nodes is None else tissue_nodes
    if len(tn) == 0:
        return None
    i = tn[np.argmax(state.T[tn])]
    if state.T[i] >= POP_TEMPERATURE:
        return PopEvent(state.time, int(i), tuple(float(v) for v in mesh.nodes[i]), float(state.T[i]))
    return None


def step_bioheat(state: ThermalState, mesh, materials: MaterialTable, velocity, Phi, sigma_field,
                 dt: float, **kwargs) -> ThermalState:
    """One-off step; for time loops keep a :class:`BioheatSolver`."""
    from .potential import joule_source
    solver = BioheatSolver(mesh, materials, velocity, **kwargs)
    return solver.step(state, joule_source(mesh, sigma_field, Phi), dt)
