"""Physical constants, temperature laws and unit conversions.

Every solver in the package reads its material data from a
:class:`MaterialTable`.  The defaults reproduce the porcine-myocardium
set-up (blood chamber, tissue slab, external-factors board, platinum
electrode and thermistor).  The board conductivity is not a constant: it
is produced by :func:`rfasim.potential.calibrate_board` and injected with
:meth:`MaterialTable.with_board_sigma`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

import numpy as np

STANDARD_GRAVITY = 9.80665  # m/s^2
BODY_TEMPERATURE = 37.0  # degC
LESION_ISOTHERM = 50.0  # degC
POP_TEMPERATURE = 100.0  # degC
COAGULUM_TEMPERATURE = 80.0  # degC


class ConfigurationError(ValueError):
    """Invalid or incomplete physical configuration."""


class Region(IntEnum):
    BLOOD = 0
    TISSUE = 1
    BOARD = 2
    ELECTRODE = 3
    THERMISTOR = 4

    @classmethod
    def parse(cls, value) -> "Region":
        if isinstance(value, Region):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ConfigurationError(f"unknown region {value!r}") from None
        try:
            return cls(int(value))
        except (ValueError, TypeError):
            raise ConfigurationError(f"unknown region {value!r}") from None


@dataclass(frozen=True)
class RegionParams:
    rho: float                     # kg/m^3
    c0: float                      # J/(kg K) at 37 degC
    k0: float                      # W/(m K) at 37 degC
    sigma0: Optional[float]        # S/m at 37 degC; None until calibrated
    kinematic_viscosity: Optional[float] = None  # m^2/s, blood only
    poisson: Optional[float] = None              # tissue only
    young: Optional[float] = None                # Pa, tissue only

    def __post_init__(self):
        for name in ("rho", "c0", "k0", "sigma0", "kinematic_viscosity", "young"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive, got {v}")
        if self.poisson is not None and not 0.0 < self.poisson < 0.5:
            raise ConfigurationError(f"poisson ratio must lie in (0, 0.5), got {self.poisson}")


@dataclass(frozen=True)
class CoefficientLaws:
    """Linear temperature laws, applied in the tissue only."""

    c_slope: float = -0.0042     # 1/K
    k_slope: float = -0.0005     # 1/K
    sigma_slope: float = 0.015   # 1/K
    T_ref: float = BODY_TEMPERATURE
    floor: float = 0.01          # fraction of the 37 degC value

    def factor(self, slope: float, T):
        f = 1.0 + slope * (np.asarray(T, dtype=float) - self.T_ref)
        return np.maximum(f, self.floor)


def _default_regions():
    tissue = RegionParams(rho=1076.0, c0=3017.0, k0=0.518, sigma0=0.54,
                          poisson=0.499, young=75e3)
    return {
        Region.BLOOD: RegionParams(rho=1050.0, c0=3617.0, k0=0.52, sigma0=0.748,
                                   kinematic_viscosity=2.52e-6),
        Region.TISSUE: tissue,
        # same thermal state as fresh tissue, conductivity filled by calibration
        Region.BOARD: RegionParams(rho=tissue.rho, c0=tissue.c0, k0=tissue.k0, sigma0=None),
        Region.ELECTRODE: RegionParams(rho=21500.0, c0=132.0, k0=71.0, sigma0=4.6e6),
        Region.THERMISTOR: RegionParams(rho=32.0, c0=835.0, k0=0.038, sigma0=1e-5),
    }


@dataclass(frozen=True)
class MaterialTable:
    regions: dict = field(default_factory=_default_regions)
    laws: CoefficientLaws = field(default_factory=CoefficientLaws)

    def __getitem__(self, region) -> RegionParams:
        region = Region.parse(region)
        try:
            return self.regions[region]
        except KeyError:
            raise ConfigurationError(f"region {region.name} missing from table") from None

    @property
    def tissue(self) -> RegionParams:
        return self[Region.TISSUE]

    @property
    def blood(self) -> RegionParams:
        return self[Region.BLOOD]

    @property
    def sigma_board(self) -> Optional[float]:
        return self[Region.BOARD].sigma0

    def with_board_sigma(self, sigma_b: float) -> "MaterialTable":
        regions = dict(self.regions)
        regions[Region.BOARD] = replace(regions[Region.BOARD], sigma0=float(sigma_b))
        return replace(self, regions=regions)

    def with_region(self, region, **changes) -> "MaterialTable":
        region = Region.parse(region)
        regions = dict(self.regions)
        regions[region] = replace(regions[region], **changes)
        return replace(self, regions=regions)

    def shear_modulus(self) -> float:
        t = self.tissue
        return t.young / (2.0 * (1.0 + t.poisson))


DEFAULT_MATERIALS = MaterialTable()


def eval_coefficients(region, T, table: MaterialTable = DEFAULT_MATERIALS):
    """Return ``(c, k, sigma)`` of a region at temperature ``T`` (degC).

    Tissue follows the linear laws around 37 degC; every other region is
    temperature independent.  ``T`` may be a scalar or an array.
    """
    region = Region.parse(region)
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise ValueError("temperature must be finite")
    p = table[region]
    if p.sigma0 is None:
        raise ConfigurationError(f"{region.name} conductivity is not calibrated")
    if region is Region.TISSUE:
        laws = table.laws
        c = p.c0 * laws.factor(laws.c_slope, T)
        k = p.k0 * laws.factor(laws.k_slope, T)
        sigma = p.sigma0 * laws.factor(laws.sigma_slope, T)
    else:
        c = np.full_like(T, p.c0)
        k = np.full_like(T, p.k0)
        sigma = np.full_like(T, p.sigma0)
    if c.ndim == 0:
        return float(c), float(k), float(sigma)
    return c, k, sigma


def cell_coefficients(table: MaterialTable, cell_region, T_cell):
    """Vectorised per-cell ``(rho, c, k, sigma)`` for a region-tagged mesh."""
    cell_region = np.asarray(cell_region)
    T_cell = np.broadcast_to(np.asarray(T_cell, dtype=float), cell_region.shape)
    rho = np.empty(cell_region.shape)
    c = np.empty(cell_region.shape)
    k = np.empty(cell_region.shape)
    sigma = np.empty(cell_region.shape)
    for region in np.unique(cell_region):
        sel = cell_region == region
        rho[sel] = table[int(region)].rho
        c[sel], k[sel], sigma[sel] = eval_coefficients(int(region), T_cell[sel], table)
    return rho, c, k, sigma


def grams_force_to_newtons(F):
    """Convert a force in gram-force to newtons using standard gravity."""
    F = np.asarray(F, dtype=float)
    if np.any(F < 0) or not np.all(np.isfinite(F)):
        raise ValueError("force must be a non-negative finite number")
    out = F * STANDARD_GRAVITY * 1e-3
    return float(out) if out.ndim == 0 else out
