"""Axisymmetric rigid spherical punch on an elastic half-space.

Given a contact force, :func:`solve_contact` finds the contact radius by
bisection on the closed-form force law; the surface displacement is the
indenter profile inside the contact circle and an integral over the
contact-pressure kernel outside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import adaptive_clenshaw_curtis

A_OVER_R_MAX = 0.999
BISECTION_RTOL = 1e-12


class ContactError(ValueError):
    """Force outside the range where the elastic punch model is valid."""


def _log_ratio(a, R):
    # log((R+a)/(R-a)) without cancellation
    return 2.0 * np.arctanh(np.asarray(a, dtype=float) / R)


def _force_shape(x: float) -> float:
    """(1+x^2) * 2 atanh(x) - 2x, series below x=0.1 to avoid cancellation."""
    if x < 0.1:
        # 2 sum_{k>=1} x^(2k+1) 4k/(4k^2-1)
        total, term, k = 0.0, x ** 3, 1
        while True:
            add = 2.0 * term * 4.0 * k / (4.0 * k * k - 1.0)
            total += add
            if add < 1e-18 * total:
                return total
            term *= x * x
            k += 1
    return (1.0 + x * x) * 2.0 * math.atanh(x) - 2.0 * x


def force_from_radius(a: float, R: float, G: float, nu: float) -> float:
    """Total punch force for contact radius ``a`` (strictly increasing in ``a``)."""
    if not 0.0 < a < R:
        raise ContactError(f"contact radius must satisfy 0 < a < R (a={a}, R={R})")
    return G / (1.0 - nu) * R * R * _force_shape(a / R)


def max_depth(a: float, R: float) -> float:
    """Indentation depth at the punch axis."""
    return float(a * math.atanh(a / R)) if a > 0 else 0.0


@dataclass(frozen=True)
class ContactSolution:
    a: float
    omega_max: float
    R: float
    G: float
    nu: float
    F: float

    def __post_init__(self):
        if not (0.0 <= self.a < self.R):
            raise ContactError("invalid contact solution: need 0 <= a < R")

    def chi(self, t):
        t = np.asarray(t, dtype=float)
        return 2.0 * self.omega_max / np.pi - self.a * t / np.pi * _log_ratio(self.a * t, self.R)


def solve_contact(F: float, R: float, E: float, nu: float) -> ContactSolution:
    """Contact radius and depth of a sphere of radius ``R`` pressed with force ``F``.

    Bisection on ``a`` in ``(0, R(1-1e-9))`` until the force residual is
    below ``1e-12 F``.  Forces needing ``a/R > 0.999`` are rejected.
    """
    if not (E > 0 and 0.0 < nu < 0.5 and R > 0):
        raise ValueError("need E > 0, 0 < nu < 0.5 and R > 0")
    G = E / (2.0 * (1.0 + nu))
    if F == 0:
        return ContactSolution(a=0.0, omega_max=0.0, R=R, G=G, nu=nu, F=0.0)
    if not F > 0:
        raise ValueError("force must be positive")
    if F > force_from_radius(A_OVER_R_MAX * R, R, G, nu):
        raise ContactError("force out of elastic-model range (a/R would exceed 0.999)")

    lo, hi = 0.0, R * (1.0 - 1e-9)
    f_lo, f_hi = -F, force_from_radius(hi, R, G, nu) - F
    a = 0.5 * (lo + hi)
    for _ in range(400):
        a = 0.5 * (lo + hi)
        res = force_from_radius(a, R, G, nu) - F
        if abs(res) <= BISECTION_RTOL * F:
            break
        if res < 0:
            lo, f_lo = a, res
        else:
            hi, f_hi = a, res
        assert f_lo < 0 < f_hi, "bisection lost its bracket"
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    else:  # pragma: no cover - 400 halvings always reach machine precision
        raise ContactError("contact bisection did not converge")
    return ContactSolution(a=a, omega_max=max_depth(a, R), R=R, G=G, nu=nu, F=F)


def _outside(sol: ContactSolution, r: float, n_nodes: int) -> float:
    rho = r / sol.a
    # t = rho sin(theta) removes the 1/sqrt(rho^2 - t^2) endpoint singularity
    top = math.asin(min(1.0, 1.0 / rho))
    value, _ = adaptive_clenshaw_curtis(lambda th: sol.chi(rho * np.sin(th)), 0.0, top,
                                        atol=1e-10 * sol.omega_max, n_nodes=n_nodes)
    return max(value, 0.0)


def displacement(sol: ContactSolution, r, n_nodes: int = 129):
    """Downward surface displacement at radial distance ``r`` (scalar or array)."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("radius must be non-negative")
    if sol.a == 0.0:
        out = np.zeros_like(r_arr)
    else:
        out = np.empty_like(r_arr)
        flat, res = r_arr.ravel(), out.ravel()
        for i, ri in enumerate(flat):
            if ri <= sol.a:
                res[i] = sol.omega_max - (sol.R - math.sqrt(sol.R ** 2 - ri ** 2))
            else:
                res[i] = _outside(sol, ri, n_nodes)
        out = res.reshape(r_arr.shape)
    return float(out) if out.ndim == 0 else out


def contact_depth(sol: ContactSolution) -> float:
    """Vertical extent of the electrode wetted by tissue, ``omega_max - omega(a)``."""
    return sol.R - math.sqrt(sol.R ** 2 - sol.a ** 2)


def surface_profile(sol: ContactSolution, r, cutoff: float = 20.0):
    """Displacement used for meshing: zero beyond ``cutoff * a``."""
    r = np.asarray(r, dtype=float)
    if sol.a == 0.0:
        return np.zeros_like(r)
    inside = r <= cutoff * sol.a
    out = np.zeros_like(r)
    if np.any(inside):
        # many columns share a radius; evaluate on the unique set
        ru, inv = np.unique(np.round(r[inside], 15), return_inverse=True)
        out[inside] = np.asarray(displacement(sol, ru))[inv]
    return out
