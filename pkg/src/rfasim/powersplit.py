"""Electrode wetted areas and the share of generator power reaching tissue."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .contact import contact_depth, solve_contact
from .params import DEFAULT_MATERIALS, MaterialTable, grams_force_to_newtons


class PowerSplitError(ValueError):
    pass


@dataclass(frozen=True)
class CatheterSpec:
    """Geometry of the 6-hole open-irrigated tip (all lengths in metres)."""

    R: float = 1.165e-3               # tip radius, 2.33 mm diameter
    h_e: float = 3.5e-3               # electrode length, tip included
    R_h: float = 0.25e-3              # irrigation hole radius
    n_holes: int = 6
    thermistor_diameter: float = 1.54e-3
    thermistor_length: float = 3.0e-3
    channel_diameter: float = 0.73e-3

    def __post_init__(self):
        if not self.R_h < self.R:
            raise ValueError("hole radius must be smaller than the tip radius")
        if not self.h_e > 2 * self.R_h + self.R:
            raise ValueError("electrode too short to hold the irrigation holes")

    @property
    def wetted_area(self) -> float:
        R, R_h = self.R, self.R_h
        return 2 * math.pi * R ** 2 + 2 * math.pi * R * (self.h_e - R) - self.n_holes * math.pi * R_h ** 2

    @property
    def hole_center_height(self) -> float:
        """Height of the hole centres above the tip."""
        return self.R + self.R_h


DEFAULT_CATHETER = CatheterSpec()


def _acos(x):
    return math.acos(min(1.0, max(-1.0, x)))


def tissue_contact_area(h: float, spec: CatheterSpec = DEFAULT_CATHETER) -> float:
    """Electrode area below contact depth ``h`` (holes excluded)."""
    if h < 0:
        raise ValueError("contact depth must be non-negative")
    R, R_h, n = spec.R, spec.R_h, spec.n_holes
    if h <= R:
        return 2 * math.pi * R * h
    base = 2 * math.pi * R ** 2 + 2 * math.pi * R * (h - R)
    if h <= R + R_h:
        return base - n * R_h ** 2 * _acos(1 + (R - h) / R_h)
    if h <= R + 2 * R_h:
        return base - n * R_h ** 2 * (math.pi / 2 + _acos(2 + (R - h) / R_h))
    return base - n * math.pi * R_h ** 2


def blood_contact_area(A_tissue: float, spec: CatheterSpec = DEFAULT_CATHETER) -> float:
    A = spec.wetted_area - A_tissue
    if A < -1e-12 * spec.wetted_area:
        raise PowerSplitError("tissue area exceeds the wetted electrode area")
    return max(A, 0.0)


@dataclass(frozen=True)
class PowerSplit:
    A_tissue: float
    A_blood: float
    alpha: float
    P_tissue: float


def power_fraction(A_tissue: float, A_blood: float, sigma_tissue: float,
                   sigma_blood: float, P: float) -> PowerSplit:
    """Conductance-weighted share ``alpha`` of ``P`` dissipated in tissue."""
    if A_tissue < 0 or A_blood < 0:
        raise ValueError("areas must be non-negative")
    if sigma_tissue <= 0 or sigma_blood <= 0:
        raise ValueError("conductivities must be positive")
    den = A_blood * sigma_blood + A_tissue * sigma_tissue
    if den == 0:
        raise PowerSplitError("degenerate contact: both areas are zero")
    alpha = A_tissue * sigma_tissue / den
    return PowerSplit(A_tissue, A_blood, alpha, alpha * P)


def insertion_depth(force_gf: float, mode: str, spec: CatheterSpec = DEFAULT_CATHETER,
                    materials: MaterialTable = DEFAULT_MATERIALS):
    """Contact solution and wetted depth for an elastic or sharp insertion.

    Sharp insertion places the tip at the elastic ``omega_max`` in a flat
    tissue, so the whole cap down to that depth is wetted by tissue.
    """
    tissue = materials.tissue
    sol = solve_contact(grams_force_to_newtons(force_gf), spec.R, tissue.young, tissue.poisson)
    if mode == "elastic":
        h = contact_depth(sol)
    elif mode == "sharp":
        h = sol.omega_max
    else:
        raise ValueError(f"mode must be 'elastic' or 'sharp', got {mode!r}")
    return sol, h


def split_for_force(force_gf: float, mode: str, P: float,
                    spec: CatheterSpec = DEFAULT_CATHETER,
                    materials: MaterialTable = DEFAULT_MATERIALS) -> PowerSplit:
    _, h = insertion_depth(force_gf, mode, spec, materials)
    A_t = tissue_contact_area(min(h, spec.h_e), spec)
    return power_fraction(A_t, blood_contact_area(A_t, spec),
                          materials.tissue.sigma0, materials.blood.sigma0, P)


def monte_carlo_area(h: float, spec: CatheterSpec = DEFAULT_CATHETER,
                     n_samples: int = 10 ** 6, seed: int = 0) -> float:
    """Independent area estimate by uniform sampling of the electrode surface.

    Samples the hemispherical cap and the cylindrical band, keeps points at
    height <= h above the tip, and rejects points inside the hole disks
    (hole centres at ``R + R_h`` above the tip, equally spaced in azimuth).
    """
    rng = np.random.default_rng(seed)
    R, R_h = spec.R, spec.R_h
    A_cap = 2 * math.pi * R ** 2
    A_cyl = 2 * math.pi * R * (spec.h_e - R)
    total = A_cap + A_cyl
    centres = 2 * math.pi * np.arange(spec.n_holes) / spec.n_holes
    hit, left = 0, n_samples
    while left > 0:
        m = min(left, 10 ** 6)
        left -= m
        n_cap = rng.binomial(m, A_cap / total)
        # hemisphere: height above tip is uniform on [0, R] (Archimedes)
        z_cap = rng.uniform(0.0, R, n_cap)
        hit += np.count_nonzero(z_cap <= h)
        z = rng.uniform(R, spec.h_e, m - n_cap)
        phi = rng.uniform(0.0, 2 * math.pi, m - n_cap)
        d_phi = np.angle(np.exp(1j * (phi[:, None] - centres[None, :])))
        in_hole = ((R * d_phi) ** 2 + (z[:, None] - spec.hole_center_height) ** 2
                   <= R_h ** 2).any(axis=1)
        hit += np.count_nonzero((z <= h) & ~in_hole)
    return total * hit / n_samples
