"""Command-line interface: individual pipeline stages and the full
image -> height -> solid -> overhang fix -> G-code chain.

Exit codes: 0 on success, 2 on input errors (missing files, malformed
data, invalid meshes), 3 on numerical non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .field import (
    FieldError, Grid2D, Grid3D, ScalarField2D, ScalarField3D,
    read_pgm, write_pgm,
)
from .levelset import LevelSetState
from .mesh import MeshError, TriangleMesh, heightfield_to_solid, stl_read, stl_write, validate
from .overhang import PrintConfig, detect_overhangs, extract_zero_surface, repair_overhangs
from .photostereo import PSProblem
from .photostereo import solve as ps_solve
from .photostereo import solve_three
from .reflectance import LightSetup, Model, ReflectanceParams
from .sdf import sample_sdf
from .sfs import SfSProblem, render, solve_fixed_point, solve_vertical
from .slicer import (
    SlicerConfig, emit_gcode, infill_eikonal, infill_square, metrics,
    parse_gcode, plan_toolpath, slice_mesh,
)

log = logging.getLogger("shade2print")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3


class InputError(ValueError):
    """User-facing input problem (maps to exit code 2)."""


class ConvergenceError(RuntimeError):
    """Numerical non-convergence (maps to exit code 3)."""


# ---------------------------------------------------------------------------
# Small value parsers and height-field CSV I/O
# ---------------------------------------------------------------------------

def _parse_vec3(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise InputError(f"expected three comma-separated numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _parse_dims3(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise InputError(f"expected three comma-separated integers, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if any(n < 2 for n in dims):
        raise InputError("grid dims must be >= 2 per axis")
    return dims


def write_height_csv(field: ScalarField2D, path) -> None:
    """Height field as CSV, one row per x index, with the grid geometry
    in a comment header so the file round-trips."""
    g = field.grid
    header = (
        f"origin {g.origin[0]!r} {g.origin[1]!r} "
        f"spacing {g.spacing[0]!r} {g.spacing[1]!r} "
        f"dims {g.dims[0]} {g.dims[1]}"
    )
    np.savetxt(path, field.values, delimiter=",", header=header)


def read_height_csv(path) -> ScalarField2D:
    """Inverse of :func:`write_height_csv`."""
    try:
        with open(path) as f:
            first = f.readline()
    except OSError as exc:
        raise InputError(str(exc)) from exc
    tokens = first.lstrip("#").split()
    if len(tokens) != 9 or tokens[0] != "origin":
        raise InputError(f"{path}: not a height CSV (missing grid header)")
    origin = (float(tokens[1]), float(tokens[2]))
    spacing = (float(tokens[4]), float(tokens[5]))
    dims = (int(tokens[7]), int(tokens[8]))
    vals = np.loadtxt(path, delimiter=",")
    if vals.shape != dims:
        raise InputError(f"{path}: data shape {vals.shape} != header dims {dims}")
    return ScalarField2D(Grid2D(origin, spacing, dims), vals)


def _load_image(path) -> ScalarField2D:
    try:
        return read_pgm(path)
    except OSError as exc:
        raise InputError(str(exc)) from exc


def _load_mesh(path) -> TriangleMesh:
    try:
        return stl_read(path)
    except OSError as exc:
        raise InputError(str(exc)) from exc


def _save_npz_field(field: ScalarField3D, path) -> None:
    g = field.grid
    np.savez(path, origin=np.array(g.origin), spacing=np.array(g.spacing),
             values=field.values)


def _load_npz_field(path) -> ScalarField3D:
    try:
        data = np.load(path)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    vals = data["values"]
    grid = Grid3D(tuple(data["origin"]), tuple(data["spacing"]), vals.shape)
    return ScalarField3D(grid, vals)


# ---------------------------------------------------------------------------
# Stage implementations (shared by subcommands and the pipeline)
# ---------------------------------------------------------------------------

def run_sfs(image: ScalarField2D, light, mu: float, solver: str,
            model: str, g: float, sigma: float = 0.0) -> ScalarField2D:
    mdl = Model(model)
    params = ReflectanceParams(model=mdl, sigma=sigma)
    problem = SfSProblem(image=image, light=LightSetup(light), params=params,
                         boundary_g=g, mu=mu)
    if solver == "vertical":
        sol = solve_vertical(problem)
    else:
        sol = solve_fixed_point(problem, model=mdl)
        if not sol.converged:
            raise ConvergenceError(
                f"fixed-point solver hit the iteration cap "
                f"(residual {sol.residual:.3e})")
    return sol.u


def run_slice(mesh: TriangleMesh, layer_height: float, infill: str,
              spacing: float, config: SlicerConfig):
    layers = slice_mesh(mesh, layer_height)
    fill_of = infill_eikonal if infill == "eikonal" else infill_square
    fills = [fill_of(layer, spacing) for layer in layers]
    path = plan_toolpath(layers, fills, config)
    prog = emit_gcode(path, config=config)
    report = metrics(path)
    report["layer_count"] = len(layers)
    report["total_e"] = prog.total_e
    return prog, report


def _mesh_report_dict(report) -> dict:
    out = dataclasses.asdict(report)
    return {k: (v if not isinstance(v, np.ndarray) else v.tolist())
            for k, v in out.items()}


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_sfs(args) -> int:
    image = _load_image(args.image)
    u = run_sfs(image, _parse_vec3(args.light), args.mu, args.solver,
                args.model, args.g)
    write_height_csv(u, args.out)
    if args.pgm_out:
        top = float(u.values.max())
        scale = top if top > 0 else 1.0
        write_pgm(ScalarField2D(u.grid, u.values / scale, u.mask), args.pgm_out)
    log.info("height written to %s (max %.6g)", args.out, u.values.max())
    return EXIT_OK


def cmd_ps(args) -> int:
    images = [_load_image(p) for p in args.images]
    lights = [np.array(_parse_vec3(t)) for t in args.lights]
    if len(images) != len(lights):
        raise InputError("need one light per image")
    if len(images) == 2:
        sol = ps_solve(PSProblem(images[0], images[1], lights[0], lights[1],
                                 g=args.g))
    elif len(images) == 3:
        sol = solve_three(images, lights, g=args.g)
    else:
        raise InputError("photometric stereo takes two or three images")
    write_height_csv(sol.u, args.out)
    log.info("height written to %s (residual %.3e)", args.out, sol.residual)
    return EXIT_OK


def cmd_mesh(args) -> int:
    if args.mesh_cmd == "from-height":
        u = read_height_csv(args.height)
        mesh = heightfield_to_solid(u, args.base_z, name=args.name)
        stl_write(mesh, args.out, fmt=args.format)
        log.info("%d facets written to %s", len(mesh.tris), args.out)
        return EXIT_OK
    if args.mesh_cmd == "validate":
        mesh = _load_mesh(args.stl)
        report = validate(mesh)
        text = json.dumps(_mesh_report_dict(report), indent=2)
        if args.json:
            with open(args.json, "w") as f:
                f.write(text + "\n")
        print(text)
        return EXIT_OK if report.ok else EXIT_INPUT
    if args.mesh_cmd == "convert":
        mesh = _load_mesh(args.stl)
        stl_write(mesh, args.out, fmt=args.format)
        return EXIT_OK
    raise InputError(f"unknown mesh subcommand {args.mesh_cmd!r}")


def _padded_grid(mesh: TriangleMesh, dims, pad: float) -> Grid3D:
    lo, hi = mesh.bounds
    lo = lo - pad
    hi = hi + pad
    spacing = tuple((hi[k] - lo[k]) / (dims[k] - 1) for k in range(3))
    return Grid3D(tuple(lo), spacing, dims)


def cmd_sdf(args) -> int:
    mesh = _load_mesh(args.stl)
    grid = _padded_grid(mesh, _parse_dims3(args.dims), args.pad)
    field = sample_sdf(mesh, grid)
    _save_npz_field(field, args.out)
    log.info("signed distance sampled on %s nodes -> %s", grid.dims, args.out)
    return EXIT_OK


def _interior_z_min(field: ScalarField3D) -> float:
    """Build-plate height: the lowest grid plane inside the solid."""
    inside = field.values <= 0.0
    if not inside.any():
        raise InputError("signed distance field contains no interior node")
    zs = field.grid.coords()[2]
    return float(zs[np.where(inside.any(axis=(0, 1)))[0][0]])


def _print_config(args, field) -> PrintConfig:
    return PrintConfig(alpha=math.radians(args.alpha),
                       z_min=_interior_z_min(field), t_f=args.t_f)


def cmd_overhang(args) -> int:
    field = _load_npz_field(args.sdf)
    config = _print_config(args, field)
    if args.overhang_cmd == "detect":
        report, _T1, _T2 = detect_overhangs(field, config)
        out = {
            "fraction_printable": report.fraction_printable,
            "surface_samples": len(report.points),
            "overhang_nodes": int(report.overhang_mask.sum()),
        }
        text = json.dumps(out, indent=2)
        if args.report:
            with open(args.report, "w") as f:
                f.write(text + "\n")
        print(text)
        return EXIT_OK
    if args.overhang_cmd == "fix":
        result = repair_overhangs(LevelSetState(field), config)
        if not result.printable:
            raise ConvergenceError(
                f"repair did not reach full printability by t_f = {config.t_f}"
                f" (fraction {result.trace[-1][1]:.4f})")
        fixed = extract_zero_surface(result.state.field, name="repaired")
        stl_write(fixed, args.out, fmt="binary")
        log.info("repaired solid written to %s after %d steps",
                 args.out, result.steps)
        return EXIT_OK
    raise InputError(f"unknown overhang subcommand {args.overhang_cmd!r}")


def cmd_slice(args) -> int:
    mesh = _load_mesh(args.stl)
    config = SlicerConfig(layer_height=args.layer_height)
    prog, report = run_slice(mesh, args.layer_height, args.infill,
                             args.spacing, config)
    with open(args.out, "w") as f:
        f.write(prog.text)
    if args.report:
        with open(args.report, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    log.info("%d G-code lines -> %s", len(prog.lines), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

PIPELINE_DEFAULTS = {
    "sfs": {
        "solver": "vertical",
        "model": "lambertian",
        "light": "0,0,1",
        "mu": "1.0",
        "g": "0.0",
    },
    "mesh": {
        "base_z": "-0.1",
    },
    "overhang": {
        "enabled": "true",
        "alpha_deg": "45.0",
        "t_f": "10.0",
        "dims": "33,33,25",
        "pad": "0.1",
        "coarse_nodes": "33",
    },
    # PGM images carry no physical scale, so the pipeline works in pixel
    # units; the defaults suit parts around 100 pixels across.
    "slice": {
        "layer_height": "1.0",
        "infill": "eikonal",
        "spacing": "4.0",
    },
}


def load_pipeline_config(path=None) -> dict:
    """Stage-block key = value config, merged over the defaults."""
    cfg = {stage: dict(vals) for stage, vals in PIPELINE_DEFAULTS.items()}
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"{path}: {exc}") from exc
    for stage in parser.sections():
        if stage not in cfg:
            raise InputError(f"{path}: unknown stage block [{stage}]")
        for key, value in parser.items(stage):
            if key not in cfg[stage]:
                raise InputError(f"{path}: unknown key {key!r} in [{stage}]")
            cfg[stage][key] = value
    return cfg


def _coarsen(u: ScalarField2D, max_nodes: int) -> ScalarField2D:
    """Stride-subsample a height field so no axis exceeds ``max_nodes``
    (keeps the overhang stage affordable at desk resolution)."""
    stride = max(1, (max(u.grid.dims) - 1) // (max_nodes - 1))
    if stride == 1:
        return u
    g = u.grid
    vals = u.values[::stride, ::stride]
    mask = None if u.mask is None else u.mask[::stride, ::stride]
    grid = Grid2D(g.origin, (g.spacing[0] * stride, g.spacing[1] * stride),
                  vals.shape)
    return ScalarField2D(grid, vals, mask)


def cmd_pipeline(args) -> int:
    import pathlib
    import time

    cfg = load_pipeline_config(args.config)
    outdir = pathlib.Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    artifacts = {}

    # 1. shape from shading
    s = cfg["sfs"]
    image = _load_image(args.image)
    u = run_sfs(image, _parse_vec3(s["light"]), float(s["mu"]), s["solver"],
                s["model"], float(s["g"]))
    write_height_csv(u, outdir / "height.csv")
    top = float(u.values.max())
    write_pgm(ScalarField2D(u.grid, u.values / (top if top > 0 else 1.0),
                            u.mask), outdir / "height.pgm")
    artifacts["height_csv"] = str(outdir / "height.csv")
    artifacts["height_pgm"] = str(outdir / "height.pgm")
    log.info("sfs done (%.2fs)", time.perf_counter() - t0)

    # 2. solid mesh, translated into the positive octant as STL requires
    base_z = float(cfg["mesh"]["base_z"])
    mesh = heightfield_to_solid(u, base_z, name="reconstruction")
    lo, _hi = mesh.bounds
    margin = 0.1
    mesh = TriangleMesh(mesh.tris - lo + margin, name=mesh.name)
    stl_write(mesh, outdir / "model.stl", fmt="binary")
    report = validate(mesh)
    if not report.ok:
        raise InputError(
            f"reconstructed mesh fails validation: {report.summary()}")
    artifacts["model_stl"] = str(outdir / "model.stl")
    log.info("mesh done: %d facets (%.2fs)", len(mesh.tris),
             time.perf_counter() - t0)

    # 3. overhang detection / repair on a coarse replica
    o = cfg["overhang"]
    fixed_mesh = mesh
    overhang_info = {"enabled": o["enabled"].lower() == "true"}
    if overhang_info["enabled"]:
        coarse = _coarsen(u, int(o["coarse_nodes"]))
        coarse_mesh = heightfield_to_solid(coarse, base_z, name="coarse")
        pad = float(o["pad"])
        dims = _parse_dims3(o["dims"])
        lo, hi = coarse_mesh.bounds
        # pad sideways and above only: the z origin sits exactly on the
        # solid's bottom so the build plate coincides with a grid plane
        grid = Grid3D(
            (lo[0] - pad, lo[1] - pad, lo[2]),
            tuple((hi[k] + pad - (lo[k] - (pad if k < 2 else 0.0)))
                  / (dims[k] - 1) for k in range(3)),
            dims)
        field = sample_sdf(coarse_mesh, grid)
        config = PrintConfig(alpha=math.radians(float(o["alpha_deg"])),
                             z_min=float(lo[2]),
                             t_f=float(o["t_f"]))
        det, _T1, _T2 = detect_overhangs(field, config)
        overhang_info["fraction_printable"] = det.fraction_printable
        if det.fraction_printable < 1.0:
            result = repair_overhangs(LevelSetState(field), config)
            if not result.printable:
                raise ConvergenceError(
                    "overhang repair did not reach full printability "
                    f"by t_f = {config.t_f}")
            fixed_mesh = extract_zero_surface(result.state.field,
                                              name="repaired")
            flo, _fhi = fixed_mesh.bounds
            fixed_mesh = TriangleMesh(fixed_mesh.tris - flo + margin,
                                      name=fixed_mesh.name)
            overhang_info["repair_steps"] = result.steps
    stl_write(fixed_mesh, outdir / "fixed.stl", fmt="binary")
    artifacts["fixed_stl"] = str(outdir / "fixed.stl")
    log.info("overhang done (%.2fs)", time.perf_counter() - t0)

    # 4. slice + G-code
    sl = cfg["slice"]
    slicer_cfg = SlicerConfig(layer_height=float(sl["layer_height"]))
    prog, slice_report = run_slice(fixed_mesh, float(sl["layer_height"]),
                                   sl["infill"], float(sl["spacing"]),
                                   slicer_cfg)
    with open(outdir / "out.gcode", "w") as f:
        f.write(prog.text)
    artifacts["gcode"] = str(outdir / "out.gcode")
    log.info("slice done: %d layers (%.2fs)", slice_report["layer_count"],
             time.perf_counter() - t0)

    # 5. metrics with full configuration for provenance
    out = {
        "artifacts": artifacts,
        "config": cfg,
        "slicer": slice_report,
        "slicer_defaults": dataclasses.asdict(slicer_cfg),
        "overhang": overhang_info,
        "mesh": {"facets": len(mesh.tris), "watertight": report.ok},
        "elapsed_s": time.perf_counter() - t0,
    }
    with open(outdir / "metrics.json", "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")
    artifacts["metrics"] = str(outdir / "metrics.json")
    log.info("pipeline done in %.2fs", out["elapsed_s"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="shade2print",
        description="Image to printable object: shape-from-shading, solid "
                    "meshing, overhang repair and eikonal-infill slicing.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true",
                   help="log stage progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("sfs", help="reconstruct a height field from one image")
    q.add_argument("--image", required=True, help="input PGM image")
    q.add_argument("--out", required=True, help="output height CSV")
    q.add_argument("--pgm-out", help="optional normalized height PGM")
    q.add_argument("--light", default="0,0,1", help="light direction x,y,z")
    q.add_argument("--mu", type=float, default=1.0)
    q.add_argument("--g", type=float, default=0.0, help="silhouette height")
    q.add_argument("--solver", choices=("vertical", "fixed-point"),
                   default="vertical")
    q.add_argument("--model",
                   choices=tuple(m.value for m in Model), default="lambertian")
    q.set_defaults(func=cmd_sfs)

    q = sub.add_parser("ps", help="photometric stereo from two or three images")
    q.add_argument("--images", nargs="+", required=True)
    q.add_argument("--lights", nargs="+", required=True,
                   help="one x,y,z light per image")
    q.add_argument("--g", type=float, default=0.0)
    q.add_argument("--out", required=True, help="output height CSV")
    q.set_defaults(func=cmd_ps)

    q = sub.add_parser("mesh", help="mesh construction, validation, conversion")
    msub = q.add_subparsers(dest="mesh_cmd", required=True)
    m = msub.add_parser("from-height")
    m.add_argument("--height", required=True, help="height CSV")
    m.add_argument("--base-z", type=float, required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--format", choices=("ascii", "binary"), default="binary")
    m.add_argument("--name", default="heightfield")
    m = msub.add_parser("validate")
    m.add_argument("--stl", required=True)
    m.add_argument("--json", help="also write the report as JSON")
    m = msub.add_parser("convert")
    m.add_argument("--stl", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--format", choices=("ascii", "binary"), required=True)
    q.set_defaults(func=cmd_mesh)

    q = sub.add_parser("sdf", help="sample a signed distance field")
    q.add_argument("--stl", required=True)
    q.add_argument("--dims", required=True, help="grid nodes nx,ny,nz")
    q.add_argument("--pad", type=float, default=0.1,
                   help="padding around the mesh bounds")
    q.add_argument("--out", required=True, help="output NPZ")
    q.set_defaults(func=cmd_sdf)

    q = sub.add_parser("overhang", help="overhang detection and repair")
    osub = q.add_subparsers(dest="overhang_cmd", required=True)
    for name in ("detect", "fix"):
        m = osub.add_parser(name)
        m.add_argument("--sdf", required=True, help="signed distance NPZ")
        m.add_argument("--alpha", type=float, default=45.0,
                       help="limit overhang angle in degrees")
        m.add_argument("--t-f", type=float, default=10.0,
                       help="evolution time cap for repair")
        if name == "detect":
            m.add_argument("--report", help="write the JSON report here")
        else:
            m.add_argument("--out", required=True, help="repaired STL")
    q.set_defaults(func=cmd_overhang)

    q = sub.add_parser("slice", help="slice an STL into G-code")
    q.add_argument("--stl", required=True)
    q.add_argument("--layer-height", type=float, default=0.2)
    q.add_argument("--infill", choices=("eikonal", "square"),
                   default="eikonal")
    q.add_argument("--spacing", type=float, default=2.0)
    q.add_argument("--out", required=True, help="output G-code")
    q.add_argument("--report", help="write slicing metrics JSON here")
    q.set_defaults(func=cmd_slice)

    q = sub.add_parser("pipeline", help="full image-to-G-code chain")
    q.add_argument("--image", required=True, help="input PGM image")
    q.add_argument("--outdir", required=True)
    q.add_argument("--config", help="stage-block key = value config file")
    q.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FieldError, MeshError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
