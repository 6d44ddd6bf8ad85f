"""Command line front end: simulate, preprocess, invert, report, verify-theorem.

Exit status: 0 success, 2 invalid input, 3 numerical non-convergence (also
when the outer stopping rule never fires; the outputs are still written),
4 no stable frequency interval.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import ConvergenceError, Grid2D, NoStableIntervalError, PlaneData, ValidationError
from .phantom import PRESETS, Phantom, preset
from .pipeline import Preprocessed, RunConfig, _step, invert, preprocess, simulate
from .preprocess import StableInterval, TargetFootprint
from .propagation import theorem_check
from .report import central_slices, isosurface, save_curve_png, save_slice_png, truth_metrics

log = logging.getLogger("helmgc")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_NO_INTERVAL = 4

TARGET_FILE = "target.plane"
REFERENCE_FILE = "reference.plane"
TRUTH_FILE = "truth.vtk"
PHANTOM_FILE = "phantom.json"
CONFIG_FILE = "config.ini"
FACE_FILE = "face_data.plane"
BUNDLE_FILE = "preprocess.json"
FOOTPRINT_FILE = "footprint.csv"
FREQ_CURVE = "frequency_curve.csv"
Z_CURVE = "z_curve.csv"
COEF_FILE = "coefficient.vtk"
DIAG_FILE = "diagnostics.jsonl"
SUMMARY_JSON = "summary.json"
SUMMARY_CSV = "summary.csv"


# --- configuration ------------------------------------------------------------

def _flag(name):
    return "--" + name.replace("_", "-")


def add_config_flags(parser):
    group = parser.add_argument_group("run configuration (overrides --config)")
    group.add_argument("--config", type=Path, help="configuration file with a [run] section")
    for f in dataclasses.fields(RunConfig):
        group.add_argument(_flag(f.name), dest="cfg_" + f.name, default=None, metavar="VALUE",
                           help=f"default: {f.default}")


def resolve_config(args, base=None):
    """Defaults, then ``base`` (a saved run configuration), then ``--config``, then flags."""
    values = {} if base is None else dict(base)
    if getattr(args, "config", None) is not None:
        values.update(io.read_config_values(args.config))
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, "cfg_" + f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig.from_dict(values)


def _out_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path):
    if not Path(path).exists():
        raise ValidationError(f"missing input file {path}")
    return Path(path)


# --- bundles ------------------------------------------------------------------

def write_bundle(out, pre, cfg):
    out = _out_dir(out)
    io.write_plane_data(out / FACE_FILE, pre.face_data)
    g = pre.footprint.grid
    io.write_json(out / BUNDLE_FILE, {
        "interval": pre.interval.as_dict(),
        "z_star": pre.z_star,
        "footprint_grid": {"origin": list(g.origin), "spacing": list(g.spacing),
                           "counts": list(g.counts), "z_level": g.z_level},
        "footprint_nodes": int(pre.footprint.mask.sum()),
        "footprint_centroid": list(pre.footprint.centroid()),
    })
    np.savetxt(out / FOOTPRINT_FILE, pre.footprint.mask.astype(int), fmt="%d", delimiter=",")
    io.write_curve_csv(out / FREQ_CURVE, ["frequency_ghz", "max_modulus"],
                       zip(pre.frequencies.tolist(), pre.peaks.tolist()))
    io.write_curve_csv(out / Z_CURVE, ["z", "max_modulus"],
                       zip(pre.z_values.tolist(), pre.z_curve.tolist()))
    io.write_config(out / CONFIG_FILE, cfg)


def read_bundle(path):
    path = Path(path)
    meta = io.read_json(_require(path / BUNDLE_FILE))
    face = io.read_plane_data(_require(path / FACE_FILE))
    iv = meta["interval"]
    interval = StableInterval(int(iv["start"]), int(iv["stop"]), int(iv["optimal"]),
                              tuple(float(f) for f in iv["frequencies_ghz"]))
    fg = meta["footprint_grid"]
    grid = Grid2D(fg["origin"], fg["spacing"], fg["counts"], fg["z_level"])
    mask = np.loadtxt(_require(path / FOOTPRINT_FILE), delimiter=",", dtype=int, ndmin=2) != 0
    if mask.shape != tuple(grid.counts):
        raise ValidationError("footprint file does not match its grid")
    _, fc = io.read_curve_csv(_require(path / FREQ_CURVE))
    _, zc = io.read_curve_csv(_require(path / Z_CURVE))
    footprint = TargetFootprint(grid, mask, float(meta["z_star"]))
    return Preprocessed(interval, float(meta["z_star"]), footprint, face, fc[:, 1], zc[:, 0],
                        zc[:, 1], fc[:, 0])


def _copy_optional(src_dir, dst_dir, names):
    for name in names:
        src = Path(src_dir) / name
        if src.exists():
            shutil.copyfile(src, Path(dst_dir) / name)


# --- commands -------------------------------------------------------------------

def cmd_simulate(args):
    cfg = resolve_config(args)
    if args.phantom_file is not None:
        phantom = Phantom.from_dict(io.read_json(args.phantom_file))
    else:
        phantom = preset(args.phantom, 0.05)
    if args.noise is not None:
        phantom = dataclasses.replace(phantom, noise=float(args.noise))
    out = _out_dir(args.out)
    log.info("simulating %s at %d frequencies", phantom.name, len(cfg.frequencies))
    ds = simulate(phantom, cfg)
    io.write_plane_data(out / TARGET_FILE, ds.target)
    io.write_plane_data(out / REFERENCE_FILE, ds.reference)
    if args.csv:
        io.write_plane_csv(out / "target.csv", ds.target)
        io.write_plane_csv(out / "reference.csv", ds.reference)
    if ds.truth is not None:
        io.write_vtk(out / TRUTH_FILE, ds.truth.grid, ds.truth.values)
    elif (out / TRUTH_FILE).exists():
        (out / TRUTH_FILE).unlink()
    io.write_json(out / PHANTOM_FILE, phantom.to_dict())
    io.write_config(out / CONFIG_FILE, cfg)
    return EXIT_OK


def cmd_preprocess(args):
    src = Path(args.dataset)
    base = io.read_config_values(src / CONFIG_FILE) if (src / CONFIG_FILE).exists() else None
    cfg = resolve_config(args, base)
    target = _step("reading target data", io.read_plane_data, _require(src / TARGET_FILE))
    reference = _step("reading reference data", io.read_plane_data, _require(src / REFERENCE_FILE))
    pre = preprocess(target, reference, cfg)
    out = _out_dir(args.out)
    write_bundle(out, pre, cfg)
    _copy_optional(src, out, [TRUTH_FILE, PHANTOM_FILE])
    iv = pre.interval
    log.info("stable interval %.4f-%.4f GHz (%d frequencies), optimal %.4f GHz, z* = %.2f",
             iv.frequencies[0], iv.frequencies[-1], iv.count, iv.optimal_frequency, pre.z_star)
    return EXIT_OK


def _summary(result, pre, partition, truth):
    row = {
        "computed_c": result.max_c,
        "converged": result.converged,
        "outer_iterations": result.sweeps,
        "window": list(result.window),
        "z_star": pre.z_star,
        "optimal_frequency_ghz": pre.interval.optimal_frequency,
        "k_low": partition.k_min, "k_high": partition.k_max, "partition_steps": partition.count,
    }
    if truth is not None:
        m = truth_metrics(result.coefficient.grid, result.coefficient.values, *truth)
        row.update({k: m[k] for k in ("measured_c", "relative_error", "truth_center",
                                      "iso_centroid", "centroid_distance") if k in m})
    return row


def _write_summary(out, row, name):
    io.write_json(out / SUMMARY_JSON, row)
    cols = ["target", "measured_c", "computed_c", "relative_error", "converged", "outer_iterations"]
    vals = [name] + [row.get(c, "") for c in cols[1:]]
    io.write_curve_csv(out / SUMMARY_CSV, cols, [vals])


def cmd_invert(args):
    src = Path(args.bundle)
    base = io.read_config_values(src / CONFIG_FILE) if (src / CONFIG_FILE).exists() else None
    cfg = resolve_config(args, base)
    pre = read_bundle(src)
    truth_path = args.truth if args.truth is not None else src / TRUTH_FILE
    truth = io.read_vtk(truth_path) if Path(truth_path).exists() and not args.no_truth else None
    name = io.read_json(src / PHANTOM_FILE).get("name", "target") if (src / PHANTOM_FILE).exists() else "target"
    out = _out_dir(args.out)
    io.write_config(out / CONFIG_FILE, cfg)
    _copy_optional(src, out, [FREQ_CURVE, Z_CURVE, PHANTOM_FILE])
    if truth is not None:
        io.write_vtk(out / TRUTH_FILE, *truth)
    try:
        result, omega, partition = invert(pre, cfg)
    except ConvergenceError as err:
        io.write_jsonl(out / DIAG_FILE, err.context.get("records", []))
        raise
    io.write_vtk(out / COEF_FILE, omega, result.coefficient.values)
    io.write_jsonl(out / DIAG_FILE, result.records)
    row = _summary(result, pre, partition, truth)
    _write_summary(out, row, name)
    log.info("computed c = %.4f (converged: %s)", result.max_c, result.converged)
    if not result.converged:
        log.error("outer stopping rule not met within the iteration cap")
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_report(args):
    src = Path(args.result)
    grid, c = io.read_vtk(_require(src / COEF_FILE))
    out = _out_dir(args.out if args.out is not None else src / "report")
    slices = central_slices(grid, c)
    for name, (a, b, vals, labels) in slices.items():
        io.write_slice_csv(out / f"slice_{name}.csv", a, b, vals, labels)
    save_slice_png(out / "slices.png", slices, f"max c = {c.max():.3f}")
    verts, faces = isosurface(grid, c)
    io.write_mesh_vtk(out / "isosurface.vtk", verts, faces)
    for fname, xlabel in ((FREQ_CURVE, "frequency (GHz)"), (Z_CURVE, "propagation plane z")):
        if (src / fname).exists():
            cols, data = io.read_curve_csv(src / fname)
            io.write_curve_csv(out / fname, cols, data.tolist())
            save_curve_png(out / fname.replace(".csv", ".png"), data[:, 0], data[:, 1], xlabel,
                           "max modulus")
    truth_path = args.truth if args.truth is not None else src / TRUTH_FILE
    info = {"max_c": float(c.max()), "isosurface_level": 0.5 * float(c.max()),
            "isosurface_triangles": int(len(faces))}
    if Path(truth_path).exists():
        info.update(truth_metrics(grid, c, *io.read_vtk(truth_path)))
    io.write_json(out / "report.json", info)
    return EXIT_OK


def cmd_verify_theorem(args):
    """Compare the double-layer oracle with the spectral formula on a Gaussian bump."""
    results = []
    for n in (args.counts, 2 * args.counts):
        h = args.spacing
        lo = -h * (n // 2)
        g = Grid2D((lo, lo), (h, h), (n, n), 0.0)
        X, Y = g.mesh()
        phi = PlaneData(g, args.k, np.exp(-(X ** 2 + Y ** 2) / (2 * args.width ** 2)))
        results.append({"counts": n, "spacing": h, "error": theorem_check(phi, args.x3)})
    ok = results[0]["error"] <= args.tolerance and results[1]["error"] < results[0]["error"]
    report = {"k": args.k, "x3": args.x3, "width": args.width, "tolerance": args.tolerance,
              "runs": results, "passed": bool(ok)}
    print(json.dumps(report, sort_keys=True, indent=2))
    if args.out is not None:
        io.write_json(args.out, report)
    return EXIT_OK if ok else EXIT_CONVERGENCE


# --- entry point ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="helmgc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize target and reference plane data")
    s.add_argument("--phantom", default="object6", choices=sorted(PRESETS))
    s.add_argument("--phantom-file", type=Path, help="JSON phantom description (overrides --phantom)")
    s.add_argument("--noise", type=float, help="relative noise level (default 0.05)")
    s.add_argument("--csv", action="store_true", help="also write CSV copies of the plane data")
    s.add_argument("--out", type=Path, required=True)
    add_config_flags(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("preprocess", help="propagate, select frequencies, locate and complete")
    s.add_argument("dataset", type=Path)
    s.add_argument("--out", type=Path, required=True)
    add_config_flags(s)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("invert", help="reconstruct the dielectric constant")
    s.add_argument("bundle", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--truth", type=Path, help="truth volume (VTK) for error metrics")
    s.add_argument("--no-truth", action="store_true", help="ignore any truth volume in the bundle")
    add_config_flags(s)
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("report", help="slices, isosurface and curves of a result")
    s.add_argument("result", type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--truth", type=Path)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("verify-theorem", help="numerical check of the half-space propagation identity")
    s.add_argument("--counts", type=int, default=128)
    s.add_argument("--spacing", type=float, default=0.1)
    s.add_argument("--k", type=float, default=3.0)
    s.add_argument("--x3", type=float, default=-1.0)
    s.add_argument("--width", type=float, default=1.0, help="Gaussian bump standard deviation")
    s.add_argument("--tolerance", type=float, default=0.05)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_verify_theorem)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoStableIntervalError as err:
        log.error("no stable interval: %s", err)
        return EXIT_NO_INTERVAL
    except ConvergenceError as err:
        log.error("did not converge: %s", err)
        return EXIT_CONVERGENCE
    except (ValidationError, OSError, KeyError) as err:
        log.error("invalid input: %s", err)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
