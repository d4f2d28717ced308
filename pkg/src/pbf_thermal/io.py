"""File formats: temperature-field CSV/binary and model parameter files."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .fd import Grid, TemperatureField

FIELD_MAGIC = b"PBFT"
FIELD_VERSION = 1
MODEL_MAGIC = b"PBFM"
MODEL_VERSION = 1


class FormatError(ValueError):
    pass


def write_field_csv(field_: TemperatureField, path) -> None:
    pts = field_.grid.points()
    vals = field_.flat()
    t = repr(float(field_.time))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z", "T"])
        for (x, y, z), T in zip(pts, vals):
            w.writerow([t, repr(float(x)), repr(float(y)), repr(float(z)), repr(float(T))])


def read_field_csv(path, grid: Grid) -> TemperatureField:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.size:
        raise FormatError(f"{path}: expected {grid.size} rows, found {data.shape[0]}")
    return TemperatureField(grid, float(data[0, 0]), data[:, 4])


def write_field_binary(field_: TemperatureField, path) -> None:
    """Layout (little endian): magic 'PBFT', u32 version, then f64 nx, ny, nz,
    dx, dy, dz, x0, y0, z0, time, followed by nx*ny*nz f64 values, x fastest."""
    g = field_.grid
    header = struct.pack("<4sI", FIELD_MAGIC, FIELD_VERSION)
    meta = np.array([g.nx, g.ny, g.nz, g.dx, g.dy, g.dz, *g.origin, field_.time], dtype="<f8")
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(meta.tobytes())
        fh.write(field_.flat().astype("<f8").tobytes())


def read_field_binary(path) -> TemperatureField:
    raw = Path(path).read_bytes()
    magic, version = struct.unpack_from("<4sI", raw, 0)
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FIELD_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    meta = np.frombuffer(raw, dtype="<f8", count=10, offset=8)
    nx, ny, nz = (int(v) for v in meta[:3])
    grid = Grid(nx, ny, nz, *meta[3:6], origin=tuple(meta[6:9]))
    values = np.frombuffer(raw, dtype="<f8", offset=8 + 80)
    if values.size != grid.size:
        raise FormatError(f"{path}: truncated field payload")
    return TemperatureField(grid, float(meta[9]), values.copy())


def write_model_binary(path, architecture: dict, flat: np.ndarray, metadata: dict | None = None) -> None:
    """'PBFM' + u32 version + u32 header length + JSON architecture header + f64 params.

    A JSON sidecar ``<path>.json`` carries architecture plus training metadata.
    """
    head = json.dumps(architecture, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", MODEL_MAGIC, MODEL_VERSION, len(head)))
        fh.write(head)
        fh.write(np.asarray(flat, dtype="<f8").tobytes())
    sidecar = {"architecture": architecture, "n_params": int(np.size(flat)), "metadata": metadata or {}}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=_json_default))


def read_model_binary(path, expect_architecture: dict | None = None) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, version, n = struct.unpack_from("<4sII", raw, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    arch = json.loads(raw[12:12 + n].decode())
    flat = np.frombuffer(raw, dtype="<f8", offset=12 + n).copy()
    if expect_architecture is not None and arch != json.loads(json.dumps(expect_architecture, sort_keys=True)):
        raise FormatError(f"{path}: architecture mismatch: file {arch} vs expected {expect_architecture}")
    return arch, flat


def read_model_metadata(path) -> dict:
    p = Path(path)
    return json.loads(p.with_suffix(p.suffix + ".json").read_text())["metadata"]


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")
