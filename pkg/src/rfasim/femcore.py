"""P1 tetrahedral finite elements: assembly, boundary conditions, solvers.

Element matrices are formed in batches with numpy and summed into a CSR
pattern computed once per mesh (``Mesh.csr_pattern``).  The reduction uses
``np.bincount`` in a fixed order, so assembly is bit-reproducible.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

# exact P1 mass integrals: int(l_i l_j) = V (1 + delta_ij) / 20
_MASS_REF = (np.ones((4, 4)) + np.eye(4)) / 20.0


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class ScalarField:
    mesh: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("scalar field needs one value per node")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass
class VectorField:
    mesh: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes, 3):
            raise ValueError("vector field needs a 3-vector per node")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


def _values(field):
    return field.values if isinstance(field, (ScalarField, VectorField)) else np.asarray(field, dtype=float)


def _cell_array(mesh, coeff, name="coefficient"):
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_cells,))
    return coeff


def assemble_cells(mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-cell 4x4 matrices ``local`` (shape ``(n_cells, 4, 4)``) into CSR."""
    indptr, indices, inverse = mesh.csr_pattern
    data = np.bincount(inverse, weights=local.reshape(-1), minlength=indices.size)
    return sp.csr_matrix((data, indices, indptr), shape=(mesh.n_nodes, mesh.n_nodes))


def assemble_load(mesh, local: np.ndarray) -> np.ndarray:
    """Sum per-cell 4-vectors into a global vector."""
    return np.bincount(mesh.cells.reshape(-1), weights=local.reshape(-1), minlength=mesh.n_nodes)


def assemble_stiffness(mesh, coeff) -> sp.csr_matrix:
    """``int coeff grad(u).grad(v)`` with a piecewise-constant coefficient."""
    coeff = _cell_array(mesh, coeff)
    if np.any(~(coeff > 0)):
        raise AssemblyError("stiffness coefficient must be positive on every cell")
    g = mesh.grad_basis
    local = np.einsum("cid,cjd->cij", g, g) * (coeff * mesh.volumes)[:, None, None]
    return assemble_cells(mesh, local)


def assemble_mass(mesh, coeff=1.0, lumped: bool = False) -> sp.csr_matrix:
    """``int coeff u v``; the lumped variant puts the row sums on the diagonal."""
    coeff = _cell_array(mesh, coeff)
    if np.any(~(coeff > 0)):
        raise AssemblyError("mass coefficient must be positive on every cell")
    w = coeff * mesh.volumes
    if lumped:
        diag = assemble_load(mesh, np.repeat(w[:, None] / 4.0, 4, axis=1))
        return sp.diags(diag, format="csr")
    return assemble_cells(mesh, w[:, None, None] * _MASS_REF[None])


def element_size(mesh, velocity_cell=None) -> np.ndarray:
    """Streamline element length where the velocity is non-zero, else the
    edge of the regular tetrahedron of equal volume."""
    h_iso = np.cbrt(6.0 * np.sqrt(2.0) * mesh.volumes)
    if velocity_cell is None:
        return h_iso
    speed = np.linalg.norm(velocity_cell, axis=1)
    proj = np.abs(np.einsum("cd,cid->ci", velocity_cell, mesh.grad_basis)).sum(axis=1)
    h = h_iso.copy()
    ok = (speed > 0) & (proj > 0)
    h[ok] = 2.0 * speed[ok] / proj[ok]
    return h


def supg_tau(h, speed, kappa):
    """``h/(2|u|) * min(1, Pe/3)`` with ``Pe = |u| h / (2 kappa)``.

    Written as ``min(h/(2|u|), h^2/(12 kappa))`` so that it stays finite in
    both the no-flow and the no-diffusion limits.
    """
    h = np.asarray(h, dtype=float)
    speed = np.asarray(speed, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    with np.errstate(divide="ignore"):
        adv = np.where(speed > 0, h / (2.0 * np.where(speed > 0, speed, 1.0)), np.inf)
        dif = np.where(kappa > 0, h * h / (12.0 * np.where(kappa > 0, kappa, 1.0)), np.inf)
    tau = np.minimum(adv, dif)
    return np.where(np.isfinite(tau), tau, 0.0)


@dataclass
class SUPGTerms:
    """Pieces of a SUPG-stabilised advection discretisation.

    ``operator``: Galerkin advection plus streamline diffusion.
    ``mass``: SUPG weighting of the time derivative.
    ``tau``, ``mean_velocity``: per-cell values for load terms.
    """

    operator: sp.csr_matrix
    mass: sp.csr_matrix
    tau: np.ndarray
    mean_velocity: np.ndarray
    _coef: np.ndarray
    _mesh: object

    def load(self, source_cell) -> np.ndarray:
        """SUPG weighting of a piecewise-constant source, ``int tau (u.grad w) q``."""
        q = _cell_array(self._mesh, source_cell)
        a = np.einsum("cd,cid->ci", self.mean_velocity, self._mesh.grad_basis)
        local = (self.tau * q * self._mesh.volumes)[:, None] * a
        return assemble_load(self._mesh, local)


def assemble_advection_supg(mesh, velocity, conductivity, capacity=1.0, cells=None) -> SUPGTerms:
    """Advection ``int c w u.grad(T)`` with SUPG stabilisation.

    ``velocity`` is nodal (P1) and integrated exactly; ``capacity`` ``c`` and
    ``conductivity`` ``k`` are per cell and give the diffusivity ``k/c`` used in
    the cell Peclet number.  ``cells`` restricts the terms to a cell mask.
    """
    u = _values(velocity)
    cap = _cell_array(mesh, capacity)
    k = _cell_array(mesh, conductivity)
    nc = mesh.n_cells
    active = np.ones(nc, bool) if cells is None else np.asarray(cells, bool)
    uc = u[mesh.cells]                                   # (nc, 4, 3)
    u_mean = uc.mean(axis=1)
    speed = np.linalg.norm(u_mean, axis=1)
    h = element_size(mesh, u_mean)
    tau = supg_tau(h, speed, k / cap)
    tau = np.where(active, tau, 0.0)
    coef = np.where(active, cap, 0.0)
    a = np.einsum("ckd,cjd->ckj", uc, mesh.grad_basis)  # a[k, j] = u_k . g_j
    M = mesh.volumes[:, None, None] * _MASS_REF[None]
    galerkin = np.einsum("cik,ckj->cij", M, a)
    Ma = galerkin  # reuse: M a
    stream = np.einsum("cki,ckj->cij", a, Ma)
    supg_mass = np.einsum("cki,ckj->cij", a, M)
    op = assemble_cells(mesh, coef[:, None, None] * galerkin + (tau * coef)[:, None, None] * stream)
    mass = assemble_cells(mesh, (tau * coef)[:, None, None] * supg_mass)
    return SUPGTerms(op, mass, tau, np.where(active[:, None], u_mean, 0.0), coef, mesh)


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs, values):
    """Row replacement with symmetric column elimination.

    Returns new ``(A, b)``; symmetric input stays symmetric.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    g = np.zeros(n)
    g[dofs] = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    fixed = np.zeros(n, bool)
    fixed[dofs] = True
    b = np.asarray(b, dtype=float) - A @ g
    keep = sp.diags((~fixed).astype(float))
    A = (keep @ A @ keep + sp.diags(fixed.astype(float))).tocsr()
    b[fixed] = g[fixed]
    return A, b


def is_symmetric(A: sp.spmatrix, rtol: float = 1e-14) -> bool:
    d = abs(A - A.T)
    scale = abs(A).max()
    return d.nnz == 0 or d.max() <= rtol * scale


def solve_linear(A: sp.spmatrix, b: np.ndarray, guess=None, tol: float = 1e-10,
                 symmetric=None, maxiter=None, method: str = "auto") -> np.ndarray:
    """Solve ``A x = b`` to relative residual ``tol``.

    ``method="auto"`` uses Jacobi-preconditioned conjugate gradients for
    symmetric systems and BiCGSTAB otherwise; ``"direct"`` uses a sparse LU.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b)
        res = np.linalg.norm(b - A @ x) / bnorm
        if not np.all(np.isfinite(x)) or res > max(tol, 1e-8):
            raise SolverError(f"direct solve failed (relative residual {res:.3e})", res)
        return x
    if symmetric is None:
        symmetric = is_symmetric(A)
    diag = A.diagonal()
    if np.any(diag <= 0) and symmetric:
        raise SolverError("non-positive diagonal in a symmetric system")
    inv = 1.0 / np.where(diag != 0, diag, 1.0)
    M = spla.LinearOperator(A.shape, matvec=lambda v: inv * v, dtype=float)
    maxiter = maxiter or max(1000, 10 * int(np.sqrt(A.shape[0])) * 10)
    x0 = None if guess is None else np.asarray(guess, dtype=float)
    solver = spla.cg if symmetric else spla.bicgstab
    x, info = solver(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 or not np.isfinite(res) or res > 10 * tol:
        raise SolverError(f"{'CG' if symmetric else 'BiCGSTAB'} did not converge "
                          f"(relative residual {res:.3e}, info={info})", res, info)
    return x


def element_gradient(mesh, field) -> np.ndarray:
    """Per-cell gradient of the P1 interpolant, shape ``(n_cells, 3)``."""
    v = _values(field)
    return np.einsum("ci,cid->cd", v[mesh.cells], mesh.grad_basis)


def integrate(mesh, cell_values, region=None) -> float:
    """Exact integral of piecewise-constant data, optionally over one region
    (or a sequence of regions)."""
    vals = _cell_array(mesh, cell_values)
    w = mesh.volumes
    if region is not None:
        mask = mesh.region_mask(region)
        if not mask.any():
            log.warning("integration over empty region %s", region)
            return 0.0
        vals, w = vals[mask], w[mask]
    return float(np.dot(vals, w))


def nodal_to_cell(mesh, field) -> np.ndarray:
    return _values(field)[mesh.cells].mean(axis=1)
