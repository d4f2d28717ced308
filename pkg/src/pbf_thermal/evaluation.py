"""Comparison of surrogates against finite-difference references."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fd import FdRun, Grid, TemperatureField

MELT_THRESHOLD = 1600.0
QUANTILES = (0.5, 0.9, 0.99, 1.0)


class GridMismatch(ValueError):
    pass


def _same_grid(a: Grid, b: Grid) -> bool:
    return a.shape == b.shape and np.allclose(a.spacing, b.spacing, rtol=1e-12) \
        and np.allclose(a.origin, b.origin, rtol=0, atol=1e-15)


def mape(predicted: TemperatureField, reference: TemperatureField) -> float:
    """Mean of |T_pred - T_ref| / T_ref over all nodes (a fraction, not percent)."""
    if not _same_grid(predicted.grid, reference.grid):
        raise GridMismatch("fields live on different grids")
    if not np.isclose(predicted.time, reference.time, rtol=1e-9, atol=1e-15):
        raise GridMismatch(f"field times differ: {predicted.time} vs {reference.time}")
    return float(np.mean(np.abs(predicted.values - reference.values) / reference.values))


@dataclass(frozen=True)
class MeltPoolDims:
    length: float
    width: float
    depth: float
    threshold: float = MELT_THRESHOLD

    def as_tuple(self) -> tuple[float, float, float]:
        return self.length, self.width, self.depth


def _extent(T: np.ndarray, coords: np.ndarray, axis: int, threshold: float) -> float:
    hot = T > threshold
    if not hot.any():
        return 0.0
    T = np.moveaxis(T, axis, 0)
    hot = np.moveaxis(hot, axis, 0)
    n = T.shape[0]
    c = coords.reshape((n,) + (1,) * (T.ndim - 1))
    lows, highs = [], []
    # edge nodes: the region reaches the boundary node itself
    lows.append(np.where(hot, np.broadcast_to(c, T.shape), np.inf).min())
    highs.append(np.where(hot, np.broadcast_to(c, T.shape), -np.inf).max())
    # entering crossings (node i-1 cold, node i hot) and leaving ones
    a, b = T[:-1], T[1:]
    ca, cb = np.broadcast_to(c[:-1], a.shape), np.broadcast_to(c[1:], a.shape)
    for mask, bucket, pick in (((~hot[:-1]) & hot[1:], lows, np.min), (hot[:-1] & (~hot[1:]), highs, np.max)):
        if mask.any():
            fa, fb = a[mask], b[mask]
            bucket.append(pick(ca[mask] + (threshold - fa) / (fb - fa) * (cb[mask] - ca[mask])))
    return float(max(highs) - min(lows))


def meltpool_dims(field_: TemperatureField, threshold: float = MELT_THRESHOLD) -> MeltPoolDims:
    """Extents of the region above ``threshold`` along x (length), y (width), z (depth).

    Each edge of the region is placed at the linearly interpolated threshold
    crossing between the last hot node and its cold neighbour, or at the node
    itself where the region touches the domain boundary.
    """
    ax = field_.grid.axes()
    dims = [_extent(field_.values, ax[i], i, threshold) for i in range(3)]
    return MeltPoolDims(*dims, threshold=threshold)


def relative_dim_errors(pred: MeltPoolDims, ref: MeltPoolDims) -> list[float | None]:
    """|pred - ref| / ref per axis; 0 when both vanish, None when only ref vanishes."""
    out = []
    for p, r in zip(pred.as_tuple(), ref.as_tuple()):
        if r == 0.0:
            out.append(0.0 if p == 0.0 else None)
        else:
            out.append(abs(p - r) / r)
    return out


# Reference as a queryable surrogate -------------------------------------------

@dataclass
class FdSurrogate:
    """FD snapshots queried with linear interpolation in time and trilinear in space."""

    run: FdRun

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.run.times[0]), float(self.run.times[-1])

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 4)
        times = self.run.times
        t = X[:, 0]
        tol = 1e-12 * max(1.0, abs(times[-1]))
        if np.any(t < times[0] - tol) or np.any(t > times[-1] + tol):
            raise ValueError(f"query time outside stored snapshots [{times[0]:g}, {times[-1]:g}]")
        axes = self.run.grid.axes()
        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])
        if np.any(X[:, 1:] < lo - 1e-15) or np.any(X[:, 1:] > hi + 1e-15):
            raise ValueError("query point outside the grid")
        P = np.clip(X[:, 1:], lo, hi)
        vals = [RegularGridInterpolator(axes, s.values, method="linear")(P) for s in self.run.snapshots]
        vals = np.stack(vals)  # (n_snap, N)
        if len(times) == 1:
            return vals[0]
        j = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
        w = np.clip((t - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0)
        cols = np.arange(len(X))
        return (1 - w) * vals[j, cols] + w * vals[j + 1, cols]


def temperature_history(surrogate, probe, times) -> np.ndarray:
    """Surrogate (or FD run) temperatures at one spatial probe over ``times``."""
    if isinstance(surrogate, FdRun):
        surrogate = FdSurrogate(surrogate)
    times = np.asarray(times, dtype=float).ravel()
    lo, hi = getattr(surrogate, "interval", (-np.inf, np.inf))
    if np.any(times < lo - 1e-12 * max(1, abs(hi))) or np.any(times > hi * (1 + 1e-12)):
        raise ValueError(f"history times outside surrogate validity [{lo:g}, {hi:g}]")
    X = np.column_stack([times, np.tile(np.asarray(probe, dtype=float), (len(times), 1))])
    return surrogate.predict(X)


def surrogate_field(surrogate, grid: Grid, t: float) -> TemperatureField:
    pts = grid.points()
    X = np.column_stack([np.full(len(pts), float(t)), pts])
    return TemperatureField(grid, float(t), surrogate.predict(X).reshape(grid.shape, order="F"))


# Reports --------------------------------------------------------------------------

@dataclass
class SnapshotReport:
    time: float
    mape: float
    rel_error_quantiles: dict
    dims_surrogate: list
    dims_reference: list
    dim_rel_errors: list


@dataclass
class EvalReport:
    mape: float
    threshold: float
    snapshots: list = field(default_factory=list)
    histories: list = field(default_factory=list)
    label: str = ""
    training_seconds: float | None = None

    @property
    def max_dim_error(self) -> float | None:
        errs = [e for s in self.snapshots for e in s.dim_rel_errors if e is not None]
        if any(e is None for s in self.snapshots for e in s.dim_rel_errors):
            return None
        return max(errs) if errs else 0.0

    @property
    def mean_dim_error(self) -> float | None:
        errs = [e for s in self.snapshots for e, r in zip(s.dim_rel_errors, s.dims_reference) if r > 0]
        if any(e is None for e in errs):
            return None
        return float(np.mean(errs)) if errs else 0.0

    def to_dict(self) -> dict:
        return {"label": self.label, "mape": self.mape, "threshold": self.threshold,
                "training_seconds": self.training_seconds,
                "snapshots": [asdict(s) for s in self.snapshots], "histories": self.histories}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["mape"], d["threshold"], [SnapshotReport(**s) for s in d["snapshots"]], d["histories"],
                   d.get("label", ""), d.get("training_seconds"))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path) -> None:
        """Summary rows: training time, MAPE, average relative melt-pool error; then per snapshot."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "value"])
            w.writerow(["label", self.label])
            w.writerow(["training time [s]", "" if self.training_seconds is None else repr(self.training_seconds)])
            w.writerow(["MAPE in temperature [%]", repr(100 * self.mape)])
            mde = self.mean_dim_error
            w.writerow(["average relative melt-pool error [%]", "" if mde is None else repr(100 * mde)])
            w.writerow([])
            w.writerow(["time", "mape", "length_sur", "width_sur", "depth_sur",
                        "length_ref", "width_ref", "depth_ref", "err_length", "err_width", "err_depth",
                        "length_axis"])
            for s in self.snapshots:
                w.writerow([repr(s.time), repr(s.mape), *map(repr, s.dims_surrogate), *map(repr, s.dims_reference),
                            *("" if e is None else repr(e) for e in s.dim_rel_errors), "x"])

    def history_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe_x", "probe_y", "probe_z", "t", "T_surrogate", "T_reference", "rel_error"])
            for h in self.histories:
                for t, a, b in zip(h["times"], h["surrogate"], h["reference"]):
                    w.writerow([*map(repr, h["probe"]), repr(t), repr(a), repr(b), repr(abs(a - b) / b)])


def compare(surrogate, fd_run: FdRun, threshold: float = MELT_THRESHOLD, probes=(), history_times=(),
            label: str = "") -> EvalReport:
    """Evaluate ``surrogate`` on the FD grid at every stored snapshot."""
    grid = fd_run.grid
    snaps = []
    errs_all = []
    for ref in fd_run.snapshots:
        pred = surrogate_field(surrogate, grid, ref.time)
        rel = np.abs(pred.values - ref.values) / ref.values
        errs_all.append(rel.ravel())
        dp, dr = meltpool_dims(pred, threshold), meltpool_dims(ref, threshold)
        snaps.append(SnapshotReport(
            time=float(ref.time), mape=float(rel.mean()),
            rel_error_quantiles={str(q): float(np.quantile(rel, q)) for q in QUANTILES},
            dims_surrogate=list(dp.as_tuple()), dims_reference=list(dr.as_tuple()),
            dim_rel_errors=relative_dim_errors(dp, dr)))
    hist = []
    if len(probes) and len(history_times):
        times = np.asarray(history_times, dtype=float)
        ref_s = FdSurrogate(fd_run)
        for p in np.atleast_2d(probes):
            a = temperature_history(surrogate, p, times)
            b = temperature_history(ref_s, p, times)
            hist.append({"probe": [float(v) for v in p], "times": times.tolist(), "surrogate": a.tolist(),
                         "reference": b.tolist(), "max_rel_error": float(np.max(np.abs(a - b) / b))})
    return EvalReport(float(np.mean(np.concatenate(errs_all))), float(threshold), snaps, hist, label,
                      getattr(surrogate, "training_seconds", None))
