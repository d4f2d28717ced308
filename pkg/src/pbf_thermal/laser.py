"""Tool-path geometry, laser kinematics and the moving volumetric heat source."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_TRACKS = 6


class PathError(ValueError):
    """Invalid track, scenario or path-sampling request."""


@dataclass(frozen=True)
class LaserParams:
    """Laser settings. ``effective_power`` is the absorbed power eta*P.

    ``penetration_depth`` defaults to the beam radius, for which the
    hemispherical source deposits exactly ``effective_power`` into the
    half-space below the surface.
    """

    effective_power: float = 150.0
    radius: float = 450e-6
    scan_speed: float = 0.1
    penetration_depth: float | None = None

    def __post_init__(self):
        if self.penetration_depth is None:
            object.__setattr__(self, "penetration_depth", self.radius)
        for name in ("effective_power", "radius", "scan_speed", "penetration_depth"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise PathError(f"laser.{name} must be positive, got {value}")

    @property
    def peak_intensity(self) -> float:
        return 6.0 * math.sqrt(3.0) * self.effective_power / (self.radius**3 * math.pi * math.sqrt(math.pi))

    @property
    def deposited_power(self) -> float:
        """Closed-form integral of the source over the half-space z <= 0."""
        return self.effective_power * self.penetration_depth / self.radius


@dataclass(frozen=True)
class Workpiece:
    """Rectangular plate; top surface at z = 0, material in z in [-depth, 0]."""

    length: float = 1.0e-3
    width: float = 1.5e-3
    depth: float = 0.3e-3

    def __post_init__(self):
        for name in ("length", "width", "depth"):
            if not getattr(self, name) > 0:
                raise PathError(f"workpiece.{name} must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.depth])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.length, self.width, 0.0])


@dataclass(frozen=True)
class Track:
    id: int
    start: tuple[float, float]
    end: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))
        if self.start == self.end:
            raise PathError(f"track {self.id}: start equals end")

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


def parallel_tracks(workpiece: Workpiece, n: int = 3, track_length: float = 1.0e-3,
                    hatch: float = 0.5e-3) -> list[Track]:
    """``n`` tracks along +x, centred on the plate, spaced ``hatch`` apart in y."""
    x0 = 0.5 * (workpiece.length - track_length)
    y_mid = 0.5 * workpiece.width
    ys = y_mid + hatch * (np.arange(n) - 0.5 * (n - 1))
    return [Track(i + 1, (x0, y), (x0 + track_length, y)) for i, y in enumerate(ys)]


@dataclass(frozen=True)
class Scenario:
    """An ordered sequence of tracks scanned back to back at constant speed.

    The laser jumps instantaneously from the end of one track to the start of
    the next.
    """

    tracks: tuple[Track, ...]
    scan_speed: float

    def __post_init__(self):
        tracks = tuple(self.tracks)
        object.__setattr__(self, "tracks", tracks)
        if not tracks:
            raise PathError("scenario needs at least one track")
        ids = [t.id for t in tracks]
        if len(set(ids)) != len(ids):
            raise PathError(f"track ids must be distinct, got {ids}")
        lengths = np.array([t.length for t in tracks])
        if not np.allclose(lengths, lengths[0], rtol=1e-9, atol=0.0):
            raise PathError("all tracks of a scenario must have equal length")
        if not self.scan_speed > 0:
            raise PathError("scan speed must be positive")

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.tracks)

    @property
    def label(self) -> str:
        return "-".join(str(i) for i in self.ids)

    @property
    def per_track_duration(self) -> float:
        return self.tracks[0].length / self.scan_speed

    @property
    def duration(self) -> float:
        return len(self.tracks) * self.per_track_duration

    def prefix(self, k: int) -> "Scenario":
        return Scenario(self.tracks[:k], self.scan_speed)


def laser_position(scenario: Scenario, t):
    """Laser (x, y) at time(s) ``t``; returns arrays shaped like ``t``."""
    t = np.asarray(t, dtype=float)
    total = scenario.duration
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > total * (1 + 1e-12)):
        raise PathError(f"time outside [0, {total:.6g}] s")
    d = scenario.per_track_duration
    n = len(scenario.tracks)
    k = np.clip(np.floor(t / d).astype(int), 0, n - 1)
    frac = np.clip((t - k * d) / d, 0.0, 1.0)
    starts = np.array([tr.start for tr in scenario.tracks])
    ends = np.array([tr.end for tr in scenario.tracks])
    pos = starts[k] + frac[..., None] * (ends[k] - starts[k])
    return pos[..., 0], pos[..., 1]


def heat_source(x, y, z, t, scenario: Scenario, laser: LaserParams):
    """Hemispherical Gaussian power density [W/m^3] (broadcast over inputs).

    The laser is switched off for t beyond the scenario duration.
    """
    x, y, z, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z, t)))
    on = t <= scenario.duration * (1 + 1e-12)
    xl, yl = laser_position(scenario, np.where(on, t, 0.0))
    r2 = laser.radius**2
    q = laser.peak_intensity * np.exp(-3.0 * ((x - xl) ** 2 + (y - yl) ** 2) / r2) \
        * np.exp(-3.0 * z**2 / laser.penetration_depth**2)
    return np.where(on, q, 0.0)


@dataclass(frozen=True)
class PathEncoding:
    times: np.ndarray
    samples: np.ndarray  # (m, 2)

    @property
    def m(self) -> int:
        return len(self.times)

    @property
    def vector(self) -> np.ndarray:
        return self.samples.reshape(-1)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "x", "y"])
            for k, (t, (x, y)) in enumerate(zip(self.times, self.samples), start=1):
                w.writerow([k, repr(float(t)), repr(float(x)), repr(float(y))])


def encode_path(scenario: Scenario, m: int) -> PathEncoding:
    """Laser positions at t_k = k * duration / m for k = 1..m."""
    if int(m) != m or m < 2:
        raise PathError(f"path sample count must be an integer >= 2, got {m}")
    times = np.arange(1, m + 1) * (scenario.duration / m)
    xs, ys = laser_position(scenario, times)
    return PathEncoding(times, np.stack([xs, ys], axis=1))


def enumerate_scenarios(tracks: Sequence[Track], scan_speed: float) -> list[Scenario]:
    """All n! orderings of ``tracks`` in lexicographic order of track ids."""
    tracks = sorted(tracks, key=lambda tr: tr.id)
    n = len(tracks)
    if n < 1:
        raise PathError("need at least one track")
    if n > MAX_TRACKS:
        raise PathError(f"refusing to enumerate {n}! scenarios (limit n <= {MAX_TRACKS})")
    return [Scenario(p, scan_speed) for p in itertools.permutations(tracks)]
