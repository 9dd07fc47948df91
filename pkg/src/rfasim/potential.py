"""Quasi-static electric potential, board calibration and constant-power control."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .femcore import SolverError, assemble_stiffness, element_gradient, solve_linear
from .params import MaterialTable, Region, cell_coefficients

log = logging.getLogger(__name__)

POWER_TOLERANCE = 0.01  # W


class CalibrationError(RuntimeError):
    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve or []


class DegenerateFieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class PotentialState:
    Phi: np.ndarray
    V0: float
    P0: float
    sigma_b: float | None = None
    P1: float | None = None          # power before the last rescale
    lam: float = 1.0                 # last rescaling factor


class PotentialSolver:
    """Reusable potential solver for one mesh.

    Holds the Dirichlet node sets and an algebraic-multigrid preconditioner
    that is rebuilt only when the conductivity field has drifted.
    """

    def __init__(self, mesh, tol: float = 1e-10, top_tag: str = "electrode_top",
                 ground_tag: str = "bottom"):
        self.mesh = mesh
        self.tol = tol
        self.top = mesh.tag_nodes(top_tag)
        self.ground = mesh.tag_nodes(ground_tag)
        if len(self.top) == 0 or len(self.ground) == 0:
            raise ValueError("potential needs non-empty electrode-top and ground facet sets")
        if np.intersect1d(self.top, self.ground).size:
            raise ValueError("electrode top and ground share nodes")
        self.fixed = np.concatenate([self.top, self.ground])
        self._free = np.setdiff1d(np.arange(mesh.n_nodes), self.fixed)
        self._pre = None
        self._pre_sigma = None
        self._last = None

    def _preconditioner(self, A_ff, sigma):
        if self._pre is not None and np.max(np.abs(np.log(sigma / self._pre_sigma))) < 0.5:
            return self._pre
        try:
            import pyamg
        except ImportError:  # pragma: no cover - pyamg is optional
            return None
        # pyamg seeds its spectral-radius estimate from the global legacy RNG;
        # fix it for bit-identical reruns and leave the caller's state untouched
        rng_state = np.random.get_state()
        try:
            np.random.seed(0)
            ml = pyamg.smoothed_aggregation_solver(A_ff, symmetry="symmetric", max_coarse=500)
        finally:
            np.random.set_state(rng_state)
        self._pre = ml.aspreconditioner(cycle="V")
        self._pre_sigma = sigma.copy()
        return self._pre

    def solve(self, sigma, V0: float, guess=None) -> np.ndarray:
        """Potential for electrode-top voltage ``V0`` and ground 0."""
        mesh = self.mesh
        sigma = np.asarray(sigma, dtype=float)
        if V0 == 0:
            return np.zeros(mesh.n_nodes)
        K = assemble_stiffness(mesh, sigma)
        phi = np.zeros(mesh.n_nodes)
        phi[self.top] = V0
        # reduce to the free nodes; the reduced matrix is symmetric positive definite
        f = self._free
        K_f = K[f]
        A = K_f[:, f].tocsr()
        b = -(K_f @ phi)
        x0 = None
        if guess is not None:
            x0 = np.asarray(guess, dtype=float)[f]
        elif self._last is not None:
            x0 = self._last[f] * (V0 / self._last_V0)
        M = self._preconditioner(A, sigma)
        if M is None:
            x = solve_linear(A, b, guess=x0, tol=self.tol, symmetric=True)
        else:
            x, info = spla.cg(A, b, x0=x0, rtol=self.tol, atol=0.0, maxiter=500, M=M)
            res = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300)
            if info != 0 or res > 10 * self.tol:
                # stale hierarchy: rebuild once before giving up
                self._pre = None
                M = self._preconditioner(A, sigma)
                x, info = spla.cg(A, b, x0=x, rtol=self.tol, atol=0.0, maxiter=1000, M=M)
                res = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300)
                if info != 0 or res > 10 * self.tol:
                    raise SolverError(f"potential solve did not converge (residual {res:.3e})", res, info)
        phi[f] = x
        self._last, self._last_V0 = phi.copy(), V0
        return phi


def solve_potential(mesh, sigma_field, V0: float, tol: float = 1e-10) -> np.ndarray:
    """``div(sigma grad Phi) = 0`` with ``Phi = V0`` on the electrode top,
    ``Phi = 0`` at the bottom and zero current flux elsewhere."""
    solver = PotentialSolver(mesh, tol)
    return solver.solve(sigma_field, V0)


def dissipated_power(mesh, sigma_field, Phi, region=None) -> float:
    """Joule power ``int sigma |grad Phi|^2`` over the mesh or one region."""
    g = element_gradient(mesh, Phi)
    q = np.asarray(sigma_field, dtype=float) * np.einsum("cd,cd->c", g, g)
    w = mesh.volumes
    if region is not None:
        mask = mesh.region_mask(region)
        q, w = q[mask], w[mask]
    return float(np.dot(q, w))


def joule_source(mesh, sigma_field, Phi) -> np.ndarray:
    """Per-cell heat source ``sigma |grad Phi|^2`` (W/m^3)."""
    g = element_gradient(mesh, Phi)
    return np.asarray(sigma_field, dtype=float) * np.einsum("cd,cd->c", g, g)


def generator_voltage(P: float, R0: float) -> float:
    if P < 0 or R0 <= 0:
        raise ValueError("need P >= 0 and R0 > 0")
    return math.sqrt(P * R0)


@dataclass
class CalibrationResult:
    sigma_b: float
    V0: float
    P_tissue: float
    target: float
    iterations: int
    Phi: np.ndarray = field(repr=False)
    curve: list = field(default_factory=list, repr=False)


def calibrate_board(mesh, materials: MaterialTable, P: float, R0: float, P_tissue_target: float,
                    bracket=(1e-4, 10.0), tol: float = POWER_TOLERANCE, max_iter: int = 80,
                    solver: PotentialSolver | None = None, T0: float = 37.0) -> CalibrationResult:
    """Board conductivity giving the target tissue power at ``V0 = sqrt(P R0)``.

    Bisection on ``log(sigma_b)``.  The bracket is expanded by decades (up to
    ``[1e-8, 1e3]``) if the target is not enclosed; the sampled
    ``(sigma_b, P_tissue)`` curve is attached to any failure.
    """
    if P <= 0 or R0 <= 0:
        raise ValueError("P and R0 must be positive")
    V0 = generator_voltage(P, R0)
    solver = solver or PotentialSolver(mesh)
    region = mesh.cell_region
    curve = []

    def tissue_power(sb):
        mat = materials.with_board_sigma(sb)
        _, _, _, sigma = cell_coefficients(mat, region, T0)
        phi = solver.solve(sigma, V0)
        p = dissipated_power(mesh, sigma, phi, Region.TISSUE)
        curve.append((sb, p))
        log.debug("calibration sigma_b=%.6g -> P_tissue=%.6f W", sb, p)
        return p - P_tissue_target, phi

    lo, hi = bracket
    f_lo, _ = tissue_power(lo)
    f_hi, _ = tissue_power(hi)
    while f_lo * f_hi > 0:
        # both on one side: move the bound that is closer in the wrong direction
        if f_lo > 0 and lo > 1e-8:
            hi, f_hi = lo, f_lo
            lo = lo / 10
            f_lo, _ = tissue_power(lo)
        elif f_hi < 0 and hi < 1e3:
            lo, f_lo = hi, f_hi
            hi = hi * 10
            f_hi, _ = tissue_power(hi)
        else:
            raise CalibrationError(f"tissue power target {P_tissue_target:.4f} W not bracketed "
                                   f"by sigma_b in [{lo:g}, {hi:g}] S/m", curve)
    if f_lo > f_hi:
        raise CalibrationError("tissue power is not increasing with board conductivity", curve)
    phi = None
    for it in range(1, max_iter + 1):
        mid = math.sqrt(lo * hi)
        f_mid, phi = tissue_power(mid)
        if abs(f_mid) <= tol:
            return CalibrationResult(mid, V0, P_tissue_target + f_mid, P_tissue_target, it, phi, curve)
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("board calibration did not reach the power tolerance", curve)


def rescale_voltage(state: PotentialState, sigma_field, mesh=None, solver: PotentialSolver | None = None,
                    keep_tolerance: float = 0.0) -> PotentialState:
    """Re-solve with the previous voltage and rescale to the reference power.

    With ``keep_tolerance > 0`` the unscaled field is kept whenever
    ``|P1 - P0| < keep_tolerance`` (the 0.01 W rule).  The default of zero
    always rescales, so the total power equals ``P0`` to rounding.
    """
    if solver is None:
        if mesh is None:
            raise ValueError("need a mesh or a solver")
        solver = PotentialSolver(mesh)
    mesh = solver.mesh
    phi1 = solver.solve(sigma_field, state.V0, guess=state.Phi)
    P1 = dissipated_power(mesh, sigma_field, phi1)
    if not P1 > 0:
        raise DegenerateFieldError("dissipated power vanished; cannot rescale")
    if abs(P1 - state.P0) < keep_tolerance:
        return replace(state, Phi=phi1, P1=P1, lam=1.0)
    lam = math.sqrt(state.P0 / P1)
    return replace(state, Phi=lam * phi1, V0=lam * state.V0, P1=P1, lam=lam)


def sigma_field(mesh, materials: MaterialTable, T_cell) -> np.ndarray:
    """Per-cell conductivity at the given cell temperatures."""
    return cell_coefficients(materials, mesh.cell_region, T_cell)[3]


__all__ = [
    "CalibrationError", "CalibrationResult", "DegenerateFieldError", "PotentialSolver", "PotentialState",
    "calibrate_board", "dissipated_power", "generator_voltage", "joule_source", "rescale_voltage",
    "sigma_field", "solve_potential",
]
