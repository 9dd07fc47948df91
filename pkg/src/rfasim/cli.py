"""Command line entry point ``rfa``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

log = logging.getLogger("rfasim")


def _common(p):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out-dir", default=None, help="output directory (default: current directory)")
    p.add_argument("--mode", choices=["elastic", "sharp"], help="insertion mode")
    p.add_argument("--protocol", choices=["HF", "LF", "custom"], help="blood flow protocol")
    p.add_argument("--force", type=float, help="contact force (gf)")
    p.add_argument("--power", type=float, help="generator power (W)")
    p.add_argument("--R0", type=float, help="initial impedance (ohm)")
    p.add_argument("--duration", type=float, help="ablation time (s)")
    p.add_argument("--dt", type=float, help="time step (s)")
    p.add_argument("--resolution", choices=["coarse", "desk", "fine"], help="mesh preset")
    p.add_argument("--flow-solver", choices=["prescribed", "ns"], help="blood flow model")
    p.add_argument("-v", "--verbose", action="store_true")


def _config(args):
    from .pipeline import load_config
    over = {k: v for k, v in {
        "mode": args.mode, "protocol": args.protocol, "force": args.force, "power": args.power,
        "R0": args.R0, "duration": args.duration, "dt": args.dt, "resolution": args.resolution,
        "flow_solver": args.flow_solver}.items() if v is not None}
    return load_config(args.config, **over)


def _out(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _forces(text, default):
    return [float(f) for f in text.split(",")] if text else default


def cmd_contact(args):
    from .contact import contact_depth, solve_contact
    from .params import grams_force_to_newtons
    from .pipeline import write_csv, write_manifest
    cfg = _config(args)
    out = _out(args)
    t = cfg.materials.tissue
    rows = []
    for F in _forces(args.forces, [cfg.force]):
        sol = solve_contact(grams_force_to_newtons(F), cfg.catheter.R, t.young, t.poisson)
        rows.append({"force_gf": F, "a_mm": sol.a * 1e3, "omega_max_mm": sol.omega_max * 1e3,
                     "h_mm": contact_depth(sol) * 1e3})
        print(f"F={F:g} gf  a={sol.a * 1e3:.5f} mm  omega_max={sol.omega_max * 1e3:.5f} mm  "
              f"h={contact_depth(sol) * 1e3:.5f} mm")
    cols = ["force_gf", "a_mm", "omega_max_mm", "h_mm"]
    write_csv(out / "contact.csv", rows, cols)
    write_manifest(out, "contact", cfg, {"contact": out / "contact.csv"}, "ok")


def cmd_powersplit(args):
    from .pipeline import write_csv, write_manifest
    from .powersplit import split_for_force
    cfg = _config(args)
    out = _out(args)
    modes = [args.mode] if args.mode else ["elastic", "sharp"]
    rows = []
    for mode in modes:
        for F in _forces(args.forces, [10.0, 20.0, 40.0]):
            s = split_for_force(F, mode, cfg.power, cfg.catheter, cfg.materials)
            rows.append({"mode": mode, "force_gf": F, "A_tissue_mm2": s.A_tissue * 1e6,
                         "A_blood_mm2": s.A_blood * 1e6, "alpha_percent": 100 * s.alpha,
                         "P_tissue_W": s.P_tissue})
            print(f"{mode:7s} {F:5g} gf  alpha={100 * s.alpha:6.2f} %  P_tissue={s.P_tissue:.4f} W")
    cols = ["mode", "force_gf", "A_tissue_mm2", "A_blood_mm2", "alpha_percent", "P_tissue_W"]
    write_csv(out / "powersplit.csv", rows, cols)
    write_manifest(out, "powersplit", cfg, {"powersplit": out / "powersplit.csv"}, "ok")


def cmd_mesh(args):
    from .mesh import build_mesh, validate_mesh
    from .pipeline import write_manifest
    from .vtkio import write_vtk
    cfg = _config(args)
    out = _out(args)
    mesh = build_mesh(cfg.geometry_config(), cfg.catheter, cfg.materials)
    diag = validate_mesh(mesh)
    files = {"mesh": out / "mesh.npz", "vtk": out / "mesh.vtk", "diagnostics": out / "mesh_diagnostics.json"}
    mesh.save(files["mesh"])
    write_vtk(files["vtk"], mesh, field_data={"z_surface": mesh.meta["z_surface"]})
    files["diagnostics"].write_text(json.dumps(diag.as_dict(), indent=2, default=float))
    print(f"{mesh}  ok={diag.ok}")
    for p in diag.problems:
        print("problem:", p)
    write_manifest(out, "mesh", cfg, files, "ok" if diag.ok else "invalid")
    if not diag.ok:
        return 1


def cmd_calibrate(args):
    from .contact import solve_contact
    from .mesh import build_mesh
    from .params import grams_force_to_newtons
    from .pipeline import write_csv, write_manifest
    from .potential import calibrate_board, dissipated_power, sigma_field
    from .powersplit import split_for_force
    cfg = _config(args)
    out = _out(args)
    t = cfg.materials.tissue
    contact = solve_contact(grams_force_to_newtons(cfg.force), cfg.catheter.R, t.young, t.poisson)
    mesh = build_mesh(cfg.geometry_config(), cfg.catheter, cfg.materials, contact)
    split = split_for_force(cfg.force, cfg.mode, cfg.power, cfg.catheter, cfg.materials)
    cal = calibrate_board(mesh, cfg.materials, cfg.power, cfg.R0, split.P_tissue)
    P0 = dissipated_power(mesh, sigma_field(mesh, cfg.materials.with_board_sigma(cal.sigma_b), cfg.T_body),
                          cal.Phi)
    res = {"alpha": split.alpha, "P_tissue_target": split.P_tissue, "P_tissue": cal.P_tissue,
           "sigma_b": cal.sigma_b, "V0": cal.V0, "P0": P0, "iterations": cal.iterations}
    files = {"calibration": out / "calibration.json", "curve": out / "calibration_curve.csv"}
    files["calibration"].write_text(json.dumps(res, indent=2))
    write_csv(files["curve"], [{"sigma_b": s, "P_tissue": p} for s, p in cal.curve], ["sigma_b", "P_tissue"])
    print(json.dumps(res, indent=2))
    write_manifest(out, "calibrate", cfg, files, "ok")


def cmd_run(args):
    from .pipeline import run_simulation
    from .report import render_run_report
    cfg = _config(args)
    out = _out(args)
    rec = run_simulation(cfg, out)
    if not args.no_figures:
        render_run_report(out)
    m = rec.metrics
    print(f"{rec.termination}: alpha={100 * rec.alpha:.2f} %  sigma_b={rec.sigma_b:.5g} S/m  "
          f"P0={rec.P0:.4f} W  Tmax={m.Tmax:.2f} degC  D={m.D:.2f} mm  V={m.V:.2f} mm^3"
          + ("" if rec.pop is None else f"  pop at {rec.pop.time:.2f} s"))


def cmd_lesion(args):
    from .lesion import INTERFACE_SURFACE_TAGS, TISSUE_SURFACE_TAGS, extract_lesion, lesion_metrics
    from .pipeline import write_csv, write_manifest
    from .vtkio import read_vtk, write_polydata
    if not args.field:
        raise SystemExit("rfa lesion: --field is required")
    out_csv = Path(args.out or Path(args.out_dir or ".") / "lesion.csv")
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    mesh, pd, _, fd = read_vtk(args.field)
    if "T" not in pd:
        raise ValueError(f"{args.field} has no nodal temperature 'T'")
    les = extract_lesion(pd["T"], mesh)
    tags = INTERFACE_SURFACE_TAGS if args.interface_only else TISSUE_SURFACE_TAGS
    met = lesion_metrics(les, mesh, surface_tags=tags)
    row = asdict(met)
    write_csv(out_csv, [row], list(row))
    files = {"metrics": out_csv}
    if args.isosurface:
        write_polydata(args.isosurface, les.vertices, les.triangles)
        files["isosurface"] = Path(args.isosurface)
    print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    write_manifest(out_csv.parent, "lesion", None, files, "ok", {"field": str(args.field)})


def cmd_sweep(args):
    from .pipeline import compare_insertions
    from .report import plot_sweep
    cfg = _config(args)
    out = _out(args)
    modes = [args.mode] if args.mode else ["elastic", "sharp"]
    protocols = args.protocols.split(",") if args.protocols else [cfg.protocol]
    rows = compare_insertions(cfg, _forces(args.forces, [10.0, 20.0, 40.0]), modes, protocols, out,
                              workers=args.workers)
    from .pipeline import write_manifest
    if not args.no_figures:
        plot_sweep(out / "sweep.csv", out / "sweep.png")
    failed = [r for r in rows if r.get("error")]
    for r in rows:
        print(f"{r['mode']:7s} {r['force']:5g} gf {r['protocol']}: D={r.get('D', np.nan):.2f} mm "
              f"V={r.get('V', np.nan):.2f} mm^3 pop={r.get('pop_time')} {r.get('error') or ''}")
    write_manifest(out, "sweep", cfg, {"sweep": out / "sweep.csv"}, "failed" if failed else "ok",
                   {"failed_runs": len(failed)})
    if failed:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfa", description="RF catheter ablation simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("contact", help="contact radius and depth for given forces")
    _common(p)
    p.add_argument("--forces", help="comma separated forces (gf)")
    p.set_defaults(func=cmd_contact)
    p = sub.add_parser("powersplit", help="tissue power fraction table")
    _common(p)
    p.add_argument("--forces", help="comma separated forces (gf), default 10,20,40")
    p.set_defaults(func=cmd_powersplit)
    p = sub.add_parser("mesh", help="build and validate a mesh")
    _common(p)
    p.set_defaults(func=cmd_mesh)
    p = sub.add_parser("calibrate", help="board conductivity calibration")
    _common(p)
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("run", help="full coupled simulation")
    _common(p)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("lesion", help="lesion metrics from a VTK temperature field")
    _common(p)
    p.add_argument("--field", help="VTK file written by 'rfa run'")
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--isosurface", help="write the 50 degC isosurface as VTK polydata")
    p.add_argument("--interface-only", action="store_true",
                   help="count only the blood-facing tissue surface in S")
    p.set_defaults(func=cmd_lesion)
    p = sub.add_parser("sweep", help="elastic vs sharp comparison over forces")
    _common(p)
    p.add_argument("--forces", help="comma separated forces (gf), default 10,20,40")
    p.add_argument("--protocols", help="comma separated protocols, e.g. HF,LF")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except Exception as exc:
        stage = getattr(exc, "stage", None)
        print(f"rfa {args.command}: error{f' in {stage}' if stage else ''}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 2
    return int(code or 0)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
