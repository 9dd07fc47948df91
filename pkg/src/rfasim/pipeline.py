"""End-to-end ablation runs: configuration, the coupled time loop, outputs and sweeps.

Per outer step ``t_n -> t_n+1`` the loop advances the flow, re-solves the
potential with ``sigma(T_n)`` and rescales it to the reference power, then
advances the bioheat equation with the new velocity and Joule source.  The
run stops at the first steam pop and the lesion is assessed at that instant.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bioheat import BioheatSolver, ThermalState, initial_state
from .contact import solve_contact
from .flow import PROTOCOL_SPEEDS, NavierStokesSolver, ablation_flow_bcs, prescribed_flow
from .lesion import INTERFACE_SURFACE_TAGS, TISSUE_SURFACE_TAGS, LesionMetrics, extract_lesion, lesion_metrics
from .mesh import RESOLUTIONS, GeometryConfig, build_mesh
from .params import (BODY_TEMPERATURE, DEFAULT_MATERIALS, ConfigurationError, MaterialTable, Region,
                     grams_force_to_newtons)
from .potential import (PotentialSolver, PotentialState, calibrate_board, dissipated_power, joule_source,
                        rescale_voltage, sigma_field)
from .powersplit import DEFAULT_CATHETER, CatheterSpec, split_for_force
from .vtkio import write_polydata, write_vtk

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("t", "V0", "P_total", "P_tissue", "R", "lam", "Tmax_tissue", "Tmax_blood")
POWER_CONSTRAINT_RTOL = 1e-9


class StageError(RuntimeError):
    """A pipeline stage failed; ``record`` holds whatever was completed."""

    def __init__(self, stage: str, cause: BaseException, record=None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.record = record


@dataclass(frozen=True)
class SimConfig:
    force: float = 10.0                 # gram-force
    power: float = 20.0                 # W
    duration: float = 30.0              # s
    R0: float = 120.0                   # ohm
    mode: str = "elastic"               # elastic | sharp
    protocol: str = "HF"                # HF | LF | custom
    blood_speed: float | None = None    # m/s, required for the custom protocol
    saline_rate: float = 17.0           # mL/min
    flow_solver: str = "prescribed"     # prescribed | ns
    resolution: str = "desk"
    dt: float = 0.01                    # s
    T_body: float = BODY_TEMPERATURE    # degC
    T_saline: float = BODY_TEMPERATURE  # degC
    snapshot_interval: float = 1.0      # s between VTK fields; 0 writes the final field only
    vtk_binary: bool = True
    keep_tolerance: float = 0.0         # W; see potential.rescale_voltage
    lesion_surface: str = "tissue"      # tissue | interface, facets counted in S
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    catheter: CatheterSpec = DEFAULT_CATHETER
    materials: MaterialTable = DEFAULT_MATERIALS
    out_dir: str | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        # P = 0 is accepted as a trivial, source-free run
        if not self.power >= 0:
            raise ConfigurationError("power must be non-negative")
        if not self.R0 > 0:
            raise ConfigurationError("R0 must be positive")
        if self.mode not in ("elastic", "sharp"):
            raise ConfigurationError(f"mode must be elastic or sharp, got {self.mode!r}")
        if self.protocol not in ("HF", "LF", "custom"):
            raise ConfigurationError(f"protocol must be HF, LF or custom, got {self.protocol!r}")
        if self.protocol == "custom" and (self.blood_speed is None or self.blood_speed < 0):
            raise ConfigurationError("the custom protocol needs a non-negative blood_speed")
        if self.flow_solver not in ("prescribed", "ns"):
            raise ConfigurationError(f"flow_solver must be prescribed or ns, got {self.flow_solver!r}")
        if self.resolution not in RESOLUTIONS:
            raise ConfigurationError(f"unknown resolution {self.resolution!r}")
        if self.saline_rate < 0:
            raise ConfigurationError("saline rate must be non-negative")
        if self.lesion_surface not in ("tissue", "interface"):
            raise ConfigurationError("lesion_surface must be tissue or interface")

    @property
    def u_blood(self) -> float:
        return self.blood_speed if self.protocol == "custom" else PROTOCOL_SPEEDS[self.protocol]

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.duration / self.dt)))

    def geometry_config(self) -> GeometryConfig:
        return replace(self.geometry, mode=self.mode, force=self.force, resolution=self.resolution)


# ---------------------------------------------------------------------------
# configuration files (INI)
# ---------------------------------------------------------------------------

_SIM_KEYS = {f.name: f for f in dataclasses.fields(SimConfig)
             if f.name not in ("geometry", "catheter", "materials")}
_REGION_KEYS = {"rho": "rho", "c": "c0", "k": "k0", "sigma": "sigma0",
                "viscosity": "kinematic_viscosity", "poisson": "poisson", "young": "young"}
_LAW_KEYS = ("c_slope", "k_slope", "sigma_slope", "floor")
_GEOM_KEYS = ("box", "board_thickness", "tissue_thickness", "h_min", "h_max", "profile_cutoff")
_CATHETER_KEYS = ("R", "h_e", "R_h", "n_holes", "thermistor_diameter", "thermistor_length",
                  "channel_diameter")


def _convert(value: str, like):
    v = value.strip()
    if v.lower() in ("none", ""):
        return None
    if isinstance(like, bool):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(v)
    if isinstance(like, float) or like is None:
        try:
            return float(v)
        except ValueError:
            return v
    return v


def load_config(path=None, **overrides) -> SimConfig:
    """Read an INI file; keyword overrides win over file values.

    Sections: ``[simulation]`` (SimConfig scalars), ``[geometry]``,
    ``[catheter]``, ``[laws]`` and one section per region (``[blood]``,
    ``[tissue]``, ``[board]``, ``[electrode]``, ``[thermistor]``) with keys
    ``rho c k sigma viscosity poisson young``.  Lengths are in metres.
    Unknown sections or keys are rejected.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if path is not None:
        if not Path(path).is_file():
            raise ConfigurationError(f"config file not found: {path}")
        cp.read(path)
    defaults = {name: f.default for name, f in _SIM_KEYS.items()}
    sim = dict(defaults)
    geom = GeometryConfig()
    cath = DEFAULT_CATHETER
    mats = DEFAULT_MATERIALS
    known = {"simulation", "geometry", "catheter", "laws"} | {r.name.lower() for r in Region}
    for section in cp.sections():
        if section not in known:
            raise ConfigurationError(f"unknown config section [{section}]")
        items = dict(cp.items(section))
        if section == "simulation":
            for k, v in items.items():
                if k not in _SIM_KEYS:
                    raise ConfigurationError(f"unknown key {k!r} in [simulation]")
                sim[k] = _convert(v, defaults[k])
        elif section == "geometry":
            vals = {}
            for k, v in items.items():
                if k not in _GEOM_KEYS:
                    raise ConfigurationError(f"unknown key {k!r} in [geometry]")
                vals[k] = _convert(v, 0.0)
            geom = replace(geom, **vals)
        elif section == "catheter":
            vals = {}
            for k, v in items.items():
                if k not in _CATHETER_KEYS:
                    raise ConfigurationError(f"unknown key {k!r} in [catheter]")
                vals[k] = _convert(v, getattr(cath, k))
            cath = replace(cath, **vals)
        elif section == "laws":
            vals = {}
            for k, v in items.items():
                if k not in _LAW_KEYS:
                    raise ConfigurationError(f"unknown key {k!r} in [laws]")
                vals[k] = float(v)
            mats = replace(mats, laws=replace(mats.laws, **vals))
        else:
            vals = {}
            for k, v in items.items():
                if k not in _REGION_KEYS:
                    raise ConfigurationError(f"unknown key {k!r} in [{section}]")
                vals[_REGION_KEYS[k]] = _convert(v, 0.0)
            mats = mats.with_region(section, **vals)
    sim.update({k: v for k, v in overrides.items() if k in _SIM_KEYS})
    for k in ("geometry", "catheter", "materials"):
        if k in overrides:
            sim[k] = overrides[k]
    sim.setdefault("geometry", geom)
    sim.setdefault("catheter", cath)
    sim.setdefault("materials", mats)
    return SimConfig(**sim)


def config_to_ini(config: SimConfig) -> str:
    """Serialise every key of a configuration (round-trips through load_config)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["simulation"] = {k: str(getattr(config, k)) for k in _SIM_KEYS}
    cp["geometry"] = {k: str(getattr(config.geometry, k)) for k in _GEOM_KEYS}
    cp["catheter"] = {k: str(getattr(config.catheter, k)) for k in _CATHETER_KEYS}
    cp["laws"] = {k: repr(getattr(config.materials.laws, k)) for k in _LAW_KEYS}
    for region in Region:
        p = config.materials.regions.get(region)
        if p is not None:
            cp[region.name.lower()] = {k: str(getattr(p, attr)) for k, attr in _REGION_KEYS.items()}
    from io import StringIO
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config: SimConfig
    alpha: float = math.nan
    P_tissue_target: float = math.nan
    P_tissue: float = math.nan          # calibrated tissue power at t = 0
    sigma_b: float = math.nan
    V0_initial: float = math.nan
    P0: float = math.nan
    calibration_iterations: int = 0
    series: dict = field(default_factory=lambda: {k: [] for k in SERIES_COLUMNS})
    metrics: LesionMetrics = field(default_factory=LesionMetrics)
    termination: str = "incomplete"     # completed | pop | incomplete
    pop: object = None
    max_power_violation: float = 0.0    # max |P - P0| / P0 over the steps
    mesh_info: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None
    wall_time: float = 0.0
    final_state: ThermalState | None = field(default=None, repr=False)
    final_potential: PotentialState | None = field(default=None, repr=False)
    final_sigma: np.ndarray | None = field(default=None, repr=False)   # sigma behind final_potential
    mesh: object = field(default=None, repr=False)
    outputs: dict = field(default_factory=dict)

    @property
    def pop_time(self):
        return None if self.pop is None else self.pop.time

    def metrics_row(self) -> dict:
        c = self.config
        row = {"mode": c.mode, "force": c.force, "protocol": c.protocol, "power": c.power,
               "alpha": self.alpha, "P_tissue": self.P_tissue_target, "sigma_b": self.sigma_b,
               "V0": self.V0_initial, "P0": self.P0}
        row.update(self.metrics.as_row())
        row["termination"] = self.termination
        return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: SimConfig | None, outputs: dict, status: str,
                   extra: dict | None = None) -> Path:
    """Machine-readable record of a CLI/pipeline invocation."""
    import scipy
    from . import __version__
    out_dir = Path(out_dir)
    files = {}
    for name, p in outputs.items():
        p = Path(p)
        if p.is_file():
            files[name] = {"path": os.path.relpath(p, out_dir), "sha256": _sha256(p)}
    doc = {
        "command": command,
        "status": status,
        "package": "rfasim", "version": __version__,
        "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": None if config is None else config_to_ini(config),
        "outputs": files,
    }
    doc.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, default=str))
    return path


# ---------------------------------------------------------------------------
# the coupled run
# ---------------------------------------------------------------------------

def _append(series, **row):
    for k in SERIES_COLUMNS:
        series[k].append(float(row[k]))


def run_simulation(config: SimConfig, out_dir=None, progress_every: float = 1.0) -> RunRecord:
    """Contact, mesh, power split, calibration, coupled time loop, lesion.

    Any stage failure raises :class:`StageError` carrying the partial record.
    When ``out_dir`` (or ``config.out_dir``) is set, time series, metrics,
    VTK fields and a manifest are written there.
    """
    t_wall = time.perf_counter()
    out = out_dir or config.out_dir
    out = Path(out) if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rec = RunRecord(config)
    mats = config.materials
    stage = "contact"
    try:
        tissue = mats.tissue
        contact = solve_contact(grams_force_to_newtons(config.force), config.catheter.R,
                                tissue.young, tissue.poisson)

        stage = "mesh"
        mesh = build_mesh(config.geometry_config(), config.catheter, mats, contact)
        rec.mesh = mesh
        rec.mesh_info = {"n_nodes": mesh.n_nodes, "n_cells": mesh.n_cells,
                         "a": contact.a, "omega_max": contact.omega_max, "deep": mesh.meta.get("deep")}

        stage = "powersplit"
        split = split_for_force(config.force, config.mode, config.power, config.catheter, mats)
        rec.alpha, rec.P_tissue_target = split.alpha, split.P_tissue

        stage = "calibration"
        psolver = PotentialSolver(mesh)
        if config.power > 0:
            cal = calibrate_board(mesh, mats, config.power, config.R0, split.P_tissue, solver=psolver)
            mats = mats.with_board_sigma(cal.sigma_b)
            sig0 = sigma_field(mesh, mats, config.T_body)
            P0 = dissipated_power(mesh, sig0, cal.Phi)
            pot = PotentialState(cal.Phi, cal.V0, P0, cal.sigma_b)
            rec.sigma_b, rec.V0_initial, rec.P0 = cal.sigma_b, cal.V0, P0
            rec.P_tissue, rec.calibration_iterations = cal.P_tissue, cal.iterations
        else:
            # no source: the board conductivity is irrelevant, tissue's is a placeholder
            mats = mats.with_board_sigma(tissue.sigma0)
            pot = None
            rec.sigma_b, rec.V0_initial, rec.P0, rec.P_tissue = math.nan, 0.0, 0.0, 0.0

        stage = "flow"
        u_b = config.u_blood
        ns = ns_state = None
        if config.flow_solver == "prescribed":
            velocity = prescribed_flow(mesh, u_b, Q_saline=config.saline_rate)
        else:
            ns = NavierStokesSolver(mesh, mats.blood.kinematic_viscosity,
                                    ablation_flow_bcs(mesh, u_b, config.saline_rate))
            ns_state = ns.initial_state()
            velocity = None

        stage = "bioheat"
        heat = BioheatSolver(mesh, mats, velocity, T_body=config.T_body, T_saline=config.T_saline)
        th = initial_state(mesh, config.T_body)
        cells = mesh.cells
        _append(rec.series, t=0.0, V0=rec.V0_initial, P_total=rec.P0, P_tissue=rec.P_tissue,
                R=config.R0 if pot is None else pot.V0 ** 2 / pot.P0, lam=1.0,
                Tmax_tissue=th.max_tissue_T, Tmax_blood=th.max_blood_T)

        stage = "time loop"
        snap_every = (int(round(config.snapshot_interval / config.dt))
                      if config.snapshot_interval > 0 else 0)
        report_every = max(1, int(round(progress_every / config.dt)))
        n_steps = config.n_steps
        for n in range(n_steps):
            t0, t1 = n * config.dt, (n + 1) * config.dt
            # (1) flow
            if ns is not None:
                ns_state = ns.step(ns_state, t0, t1)
                heat.set_velocity(ns_state.u)
            # (2) potential with sigma(T^n), rescaled to P0
            if pot is not None:
                sig = sigma_field(mesh, mats, th.T[cells].mean(axis=1))
                pot = rescale_voltage(pot, sig, solver=psolver, keep_tolerance=config.keep_tolerance)
                P_tot = dissipated_power(mesh, sig, pot.Phi)
                P_tis = dissipated_power(mesh, sig, pot.Phi, Region.TISSUE)
                rec.max_power_violation = max(rec.max_power_violation, abs(P_tot - pot.P0) / pot.P0)
                q = joule_source(mesh, sig, pot.Phi)
                rec.final_sigma = sig
                V0, lam, R = pot.V0, pot.lam, pot.V0 ** 2 / pot.P0
            else:
                P_tot = P_tis = 0.0
                q = np.zeros(mesh.n_cells)
                V0, lam, R = 0.0, 1.0, config.R0
            # (3) bioheat with the new velocity and source
            th = heat.step(th, q, config.dt)
            th = replace(th, time=t1)
            _append(rec.series, t=t1, V0=V0, P_total=P_tot, P_tissue=P_tis, R=R, lam=lam,
                    Tmax_tissue=th.max_tissue_T, Tmax_blood=th.max_blood_T)
            if (n + 1) % report_every == 0:
                log.info("t=%.2f s  Tmax tissue %.2f  blood %.2f  V0 %.3f", t1, th.max_tissue_T,
                         th.max_blood_T, V0)
            if out and snap_every and (n + 1) % snap_every == 0:
                _snapshot(out / f"field_{n + 1:06d}.vtk", mesh, th, q, config)
            if th.pop is not None:
                log.info("steam pop at t=%.2f s", th.pop.time)
                break
        rec.final_state = th
        rec.final_potential = pot
        rec.pop = th.pop
        rec.termination = "pop" if th.pop is not None else "completed"

        stage = "lesion"
        les = extract_lesion(th.T, mesh)
        tags = TISSUE_SURFACE_TAGS if config.lesion_surface == "tissue" else INTERFACE_SURFACE_TAGS
        rec.metrics = lesion_metrics(les, mesh, pop_time=rec.pop_time, surface_tags=tags)
        rec.wall_time = time.perf_counter() - t_wall

        if out:
            stage = "output"
            rec.outputs = write_outputs(rec, out, les, q)
    except StageError:
        raise
    except Exception as exc:
        rec.failed_stage, rec.error = stage, f"{type(exc).__name__}: {exc}"
        rec.wall_time = time.perf_counter() - t_wall
        if out:
            try:
                write_csv(out / "timeseries.csv", _series_rows(rec), SERIES_COLUMNS)
                write_manifest(out, "run", config, {"timeseries": out / "timeseries.csv"}, "failed",
                               {"failed_stage": stage, "error": rec.error})
            except Exception:  # pragma: no cover - best effort on the failure path
                log.exception("could not write the partial record")
        raise StageError(stage, exc, rec) from exc
    return rec


def _series_rows(rec):
    s = rec.series
    return [{k: s[k][i] for k in SERIES_COLUMNS} for i in range(len(s["t"]))]


def _snapshot(path, mesh, th, q, config):
    write_vtk(path, mesh, point_data={"T": th.T}, cell_data={"joule": q},
              field_data={"time": th.time, "z_surface": mesh.meta.get("z_surface", 0.0),
                          "z_top": mesh.meta.get("z_top", 0.0), "R": mesh.meta.get("R", 0.0)},
              binary=config.vtk_binary)


def write_outputs(rec: RunRecord, out: Path, lesion=None, q=None) -> dict:
    """Time series, metrics, final field, isosurface and manifest."""
    out = Path(out)
    files = {"timeseries": out / "timeseries.csv", "metrics": out / "metrics.csv",
             "field": out / "field_final.vtk", "isosurface": out / "lesion_isosurface.vtk",
             "config": out / "config.ini"}
    write_csv(files["timeseries"], _series_rows(rec), SERIES_COLUMNS)
    row = rec.metrics_row()
    write_csv(files["metrics"], [row], list(row))
    th = rec.final_state
    _snapshot(files["field"], rec.mesh, th, np.zeros(rec.mesh.n_cells) if q is None else q, rec.config)
    if lesion is not None:
        write_polydata(files["isosurface"], lesion.vertices, lesion.triangles)
    files["config"].write_text(config_to_ini(rec.config))
    write_manifest(out, "run", rec.config, files, rec.termination, {
        "alpha": rec.alpha, "P_tissue": rec.P_tissue, "sigma_b": rec.sigma_b, "V0": rec.V0_initial,
        "P0": rec.P0, "calibration_iterations": rec.calibration_iterations,
        "max_power_violation": rec.max_power_violation, "mesh": rec.mesh_info,
        "pop": None if rec.pop is None else dataclasses.asdict(rec.pop),
        "wall_time_s": rec.wall_time})
    return {k: str(v) for k, v in files.items()}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("mode", "force", "protocol", "power", "alpha", "P_tissue", "sigma_b", "V0", "P0",
                 "D", "Wx", "Wy", "DWx", "DWy", "V", "S", "Tmax", "pop_time", "termination", "error")


def _sweep_one(args):
    cfg, sub = args
    try:
        rec = run_simulation(cfg, sub)
        row = rec.metrics_row()
        row["error"] = ""
    except StageError as exc:
        rec = exc.record
        row = rec.metrics_row() if rec is not None else {}
        row.update(mode=cfg.mode, force=cfg.force, protocol=cfg.protocol, power=cfg.power,
                   termination="failed", error=f"{exc.stage}: {exc.cause}")
    return row


def compare_insertions(base: SimConfig, forces, modes=("elastic", "sharp"), protocols=None,
                       out_dir=None, workers: int = 1) -> list:
    """Run every (mode, force, protocol) combination and return Table 5/6-style rows.

    Individual failures are recorded in the ``error`` column; the table is
    always produced (and written to ``sweep.csv`` when ``out_dir`` is set).
    """
    forces = list(forces)
    if not forces:
        raise ValueError("need at least one force")
    protocols = list(protocols or [base.protocol])
    jobs = []
    for protocol in protocols:
        for mode in modes:
            for F in forces:
                cfg = replace(base, mode=mode, force=float(F), protocol=protocol, out_dir=None)
                sub = None
                if out_dir:
                    sub = Path(out_dir) / f"{mode}_{F:g}gf_{protocol}"
                jobs.append((cfg, sub))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "sweep.csv", rows, SWEEP_COLUMNS)
    return rows


__all__ = ["SimConfig", "RunRecord", "StageError", "load_config", "config_to_ini", "run_simulation",
           "compare_insertions", "write_csv", "write_manifest", "write_outputs", "SERIES_COLUMNS",
           "SWEEP_COLUMNS"]
