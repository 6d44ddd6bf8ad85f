"""File formats: plane data, volumes, configuration, diagnostics and curves.

Plane-data files hold a fixed 8-byte magic, a little-endian ``uint32``
format version, a ``uint32`` header length, a UTF-8 JSON header with sorted
keys, and then little-endian ``float64`` pairs ``(re, im)``: frequency-major,
each plane flattened with x fastest.  Volumes use the legacy VTK
``STRUCTURED_POINTS`` ASCII format with x fastest.  Every writer is
deterministic, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .core import Grid2D, Grid3D, ValidationError
from .preprocess import MultiFrequencyData

PLANE_MAGIC = b"HGCPLANE"
PLANE_VERSION = 1
CONFIG_SECTION = "run"


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(_dumps(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: malformed JSON ({err})") from None


# --- plane data ---------------------------------------------------------------

def plane_header(data):
    g = data.grid
    return {
        "counts": list(g.counts), "origin": list(g.origin), "spacing": list(g.spacing),
        "z_level": g.z_level, "frequencies_ghz": [float(f) for f in data.frequencies],
        "layout": "frequency-major, x fastest, interleaved re/im little-endian float64",
    }


def encode_plane_data(data):
    header = _dumps(plane_header(data)).encode("utf-8")
    vals = np.stack([np.asarray(v).ravel(order="F") for v in data.values])
    body = np.empty(vals.size * 2, dtype="<f8")
    body[0::2] = vals.real.ravel()
    body[1::2] = vals.imag.ravel()
    return PLANE_MAGIC + struct.pack("<II", PLANE_VERSION, len(header)) + header + body.tobytes()


def decode_plane_data(raw):
    if raw[:8] != PLANE_MAGIC:
        raise ValidationError("not a plane-data file (bad magic)")
    if len(raw) < 16:
        raise ValidationError("truncated plane-data file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != PLANE_VERSION:
        raise ValidationError(f"unsupported plane-data version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ValidationError("corrupt plane-data header") from None
    grid = Grid2D(header["origin"], header["spacing"], header["counts"], header["z_level"])
    freqs = np.asarray(header["frequencies_ghz"], float)
    body = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    n = int(np.prod(grid.counts))
    if body.size != 2 * n * freqs.size:
        raise ValidationError("plane-data payload size does not match its header")
    vals = (body[0::2] + 1j * body[1::2]).reshape(freqs.size, n)
    planes = np.stack([v.reshape(grid.counts, order="F") for v in vals])
    return MultiFrequencyData(grid, freqs, planes)


def write_plane_data(path, data):
    Path(path).write_bytes(encode_plane_data(data))


def read_plane_data(path):
    return decode_plane_data(Path(path).read_bytes())


def write_plane_csv(path, data):
    """One row per (frequency, node): frequency, x, y, real, imaginary."""
    X, Y = data.grid.mesh()
    x, y = X.ravel(order="F"), Y.ravel(order="F")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frequency_ghz", "x", "y", "re", "im"])
        for f, plane in zip(data.frequencies, data.values):
            v = plane.ravel(order="F")
            for row in zip(x, y, v.real, v.imag):
                w.writerow([repr(float(f))] + [repr(float(a)) for a in row])


# --- volumes ------------------------------------------------------------------

def write_vtk(path, grid, values, name="c"):
    """Legacy VTK structured points, scalars in x-fastest order, 17 significant digits."""
    values = np.asarray(values, float)
    if values.shape != tuple(grid.counts):
        raise ValidationError("volume shape does not match its grid")
    buf = _io.StringIO()
    buf.write("# vtk DataFile Version 3.0\n")
    buf.write(f"{name}\nASCII\nDATASET STRUCTURED_POINTS\n")
    buf.write("DIMENSIONS %d %d %d\n" % tuple(grid.counts))
    buf.write("ORIGIN %.17g %.17g %.17g\n" % tuple(grid.origin))
    buf.write("SPACING %.17g %.17g %.17g\n" % tuple(grid.spacing))
    buf.write(f"POINT_DATA {grid.size}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
    np.savetxt(buf, values.ravel(order="F"), fmt="%.17g")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_vtk(path):
    """Returns ``(grid, values)`` from a file written by :func:`write_vtk`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    meta = {}
    start = None
    for j, line in enumerate(lines):
        parts = line.split()
        if parts and parts[0] in ("DIMENSIONS", "ORIGIN", "SPACING"):
            meta[parts[0]] = parts[1:]
        if line.startswith("LOOKUP_TABLE"):
            start = j + 1
            break
    if start is None or set(meta) != {"DIMENSIONS", "ORIGIN", "SPACING"}:
        raise ValidationError(f"{path}: not a structured-points VTK file")
    counts = [int(a) for a in meta["DIMENSIONS"]]
    grid = Grid3D([float(a) for a in meta["ORIGIN"]], [float(a) for a in meta["SPACING"]], counts)
    vals = np.array([float(a) for a in lines[start:start + grid.size]])
    if vals.size != grid.size:
        raise ValidationError(f"{path}: expected {grid.size} values, found {vals.size}")
    return grid, vals.reshape(counts, order="F")


def write_mesh_vtk(path, verts, faces, name="isosurface"):
    """Triangle mesh as legacy VTK polydata."""
    buf = _io.StringIO()
    buf.write(f"# vtk DataFile Version 3.0\n{name}\nASCII\nDATASET POLYDATA\n")
    buf.write(f"POINTS {len(verts)} double\n")
    if len(verts):
        np.savetxt(buf, np.asarray(verts, float), fmt="%.17g")
    buf.write(f"POLYGONS {len(faces)} {4 * len(faces)}\n")
    if len(faces):
        np.savetxt(buf, np.column_stack([np.full(len(faces), 3), faces]), fmt="%d")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_slice_csv(path, a_axis, b_axis, values, names=("a", "b")):
    """Matrix CSV: first row holds the ``b`` coordinates, first column the ``a`` ones."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{names[0]}\\{names[1]}"] + [repr(float(b)) for b in b_axis])
        for a, row in zip(a_axis, values):
            w.writerow([repr(float(a))] + [repr(float(v)) for v in row])


def write_curve_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_curve_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty CSV")
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], float).reshape(-1, len(rows[0]))


# --- configuration and diagnostics ------------------------------------------------

def write_config(path, cfg):
    parser = configparser.ConfigParser(interpolation=None)
    parser[CONFIG_SECTION] = {k: repr(v) if isinstance(v, float) else str(v)
                              for k, v in sorted(dataclasses.asdict(cfg).items())}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def read_config_values(path):
    """Raw ``key -> text`` pairs of a configuration file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ValidationError(f"cannot read configuration file {path}")
    except configparser.Error as err:
        raise ValidationError(f"{path}: {err}") from None
    if not parser.has_section(CONFIG_SECTION):
        raise ValidationError(f"{path}: missing [{CONFIG_SECTION}] section")
    return dict(parser[CONFIG_SECTION])


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, allow_nan=False) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
