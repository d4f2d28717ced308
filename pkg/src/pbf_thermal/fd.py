"""Explicit finite-difference reference solver for the nonlinear heat equation.

Node-centred grid that includes the boundary nodes. Interior nodes are
advanced with forward Euler using second central differences for the
Laplacian and products of central first differences for grad(kappa).grad(T);
boundary nodes are then reset from the face conditions.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .laser import LaserParams, Scenario, Workpiece, heat_source
from .material import MaterialParams, max_diffusivity

log = logging.getLogger(__name__)

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


class FdError(RuntimeError):
    pass


class BlowUpError(FdError):
    """Non-finite or non-positive temperature produced by a time step."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 3:
            raise ValueError("grid needs at least 3 nodes per axis")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError("grid spacings must be positive")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def for_workpiece(cls, workpiece: Workpiece, spacing: float | Sequence[float]) -> "Grid":
        """Uniform grid whose outer nodes sit on the workpiece faces."""
        sp = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
        lo, hi = workpiece.lower, workpiece.upper
        counts = [max(3, int(round((h - l) / s)) + 1) for l, h, s in zip(lo, hi, sp)]
        steps = [(h - l) / (c - 1) for l, h, c in zip(lo, hi, counts)]
        return cls(*counts, *steps, origin=tuple(lo))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(o + d * np.arange(n) for o, d, n in zip(self.origin, self.spacing, self.shape))

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, 3), x fastest."""
        X, Y, Z = self.mesh()
        return np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)


@dataclass
class TemperatureField:
    """Nodal temperatures. ``values`` has shape (nx, ny, nz)."""

    grid: Grid
    time: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            if self.values.size == self.grid.size:
                self.values = self.values.reshape(self.grid.shape, order="F")
            else:
                raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def flat(self) -> np.ndarray:
        """Row-major values with x varying fastest."""
        return self.values.ravel(order="F")

    def copy(self) -> "TemperatureField":
        return TemperatureField(self.grid, self.time, self.values.copy())


# Face conditions ---------------------------------------------------------

@dataclass(frozen=True)
class Dirichlet:
    value: float = 300.0
    kind: str = field(default="dirichlet", init=False)


@dataclass(frozen=True)
class Insulated:
    kind: str = field(default="insulated", init=False)


@dataclass(frozen=True)
class Neumann:
    """Prescribed outward normal derivative dT/dn [K/m]."""

    gradient: float = 0.0
    kind: str = field(default="neumann", init=False)


@dataclass(frozen=True)
class Convective:
    """-kappa dT/dn = h (T - T_inf) on the face."""

    h: float = 10.0
    ambient: float = 300.0
    kind: str = field(default="convective", init=False)


FaceCondition = Dirichlet | Insulated | Neumann | Convective


def face_from_dict(d: dict) -> FaceCondition:
    d = dict(d)
    kind = d.pop("kind")
    cls = {"dirichlet": Dirichlet, "insulated": Insulated, "neumann": Neumann, "convective": Convective}.get(kind)
    if cls is None:
        raise ValueError(f"unknown boundary kind {kind!r}")
    return cls(**d)


def face_to_dict(c: FaceCondition) -> dict:
    out = {"kind": c.kind}
    for name in ("value", "gradient", "h", "ambient"):
        if hasattr(c, name):
            out[name] = getattr(c, name)
    return out


@dataclass(frozen=True)
class BoundarySpec:
    faces: dict

    def __post_init__(self):
        missing = set(FACES) - set(self.faces)
        extra = set(self.faces) - set(FACES)
        if missing or extra:
            raise ValueError(f"boundary spec needs exactly the faces {FACES}")

    @classmethod
    def default(cls, T_ambient: float = 300.0, h: float = 10.0) -> "BoundarySpec":
        faces = {f: Insulated() for f in FACES}
        faces["z-"] = Dirichlet(T_ambient)
        faces["z+"] = Convective(h, T_ambient)
        return cls(faces)

    @classmethod
    def uniform(cls, condition: FaceCondition) -> "BoundarySpec":
        return cls({f: condition for f in FACES})

    def __getitem__(self, face: str) -> FaceCondition:
        return self.faces[face]

    def to_dict(self) -> dict:
        return {f: face_to_dict(self.faces[f]) for f in FACES}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundarySpec":
        base = cls.default().faces
        unknown = set(d) - set(FACES)
        if unknown:
            raise ValueError(f"unknown boundary faces: {sorted(unknown)}")
        base.update({f: face_from_dict(v) for f, v in d.items()})
        return cls(base)


def _face_slices(face: str):
    """(face index, adjacent index, axis, spacing attr) for a face name."""
    axis = "xyz".index(face[0])
    if face[1] == "-":
        return 0, 1, axis
    return -1, -2, axis


def apply_boundary(field_: TemperatureField, bc: BoundarySpec, material: MaterialParams | None = None,
                   ) -> TemperatureField:
    """Reset boundary nodes from the face conditions (in place; returns the field).

    Faces are applied in the order x-, x+, y-, y+, z-, z+, so edges and
    corners take the value of the last face touching them.
    """
    T = field_.values
    spacing = field_.grid.spacing
    for face in FACES:
        cond = bc[face]
        i_face, i_adj, axis = _face_slices(face)
        idx_f = [slice(None)] * 3
        idx_a = [slice(None)] * 3
        idx_f[axis] = i_face
        idx_a[axis] = i_adj
        idx_f, idx_a = tuple(idx_f), tuple(idx_a)
        d = spacing[axis]
        if isinstance(cond, Dirichlet):
            T[idx_f] = cond.value
        elif isinstance(cond, Insulated):
            T[idx_f] = T[idx_a]
        elif isinstance(cond, Neumann):
            T[idx_f] = T[idx_a] + cond.gradient * d
        elif isinstance(cond, Convective):
            if material is None:
                raise FdError("convective face needs the material conductivity")
            k = material.conductivity(T[idx_a])
            # one-sided: -k (T_f - T_a)/d = h (T_f - T_inf)
            T[idx_f] = (k * T[idx_a] + cond.h * d * cond.ambient) / (k + cond.h * d)
        else:  # pragma: no cover
            raise FdError(f"unsupported boundary condition {cond!r}")
    return field_


# Stepping ----------------------------------------------------------------

def stable_dt(grid: Grid, material: MaterialParams, safety: float = 0.9) -> float:
    """Largest forward-Euler step for the explicit 7-point stencil, times ``safety``."""
    if not 0 < safety <= 1:
        raise ValueError("safety factor must lie in (0, 1]")
    alpha = max_diffusivity(material)
    inv = 1.0 / grid.dx**2 + 1.0 / grid.dy**2 + 1.0 / grid.dz**2
    return safety / (2.0 * alpha * inv)


class FdSolver:
    """Stateless stepping kernel with cached node coordinates."""

    def __init__(self, grid: Grid, material: MaterialParams, bc: BoundarySpec,
                 laser: LaserParams | None = None, scenario: Scenario | None = None):
        self.grid = grid
        self.material = material
        self.bc = bc
        self.laser = laser
        self.scenario = scenario
        X, Y, Z = grid.mesh()
        self._xyz = (X[1:-1, 1:-1, 1:-1], Y[1:-1, 1:-1, 1:-1], Z[1:-1, 1:-1, 1:-1])
        if laser is not None and scenario is not None:
            per_radius = laser.radius / max(grid.dx, grid.dy)
            if per_radius < 4:
                warnings.warn(f"grid resolves the laser radius with only {per_radius:.1f} nodes (< 4)")

    def source(self, t: float) -> np.ndarray | float:
        if self.laser is None or self.scenario is None:
            return 0.0
        if t > self.scenario.duration * (1 + 1e-12):
            return 0.0
        X, Y, Z = self._xyz
        return heat_source(X, Y, Z, t, self.scenario, self.laser)

    def step(self, field_: TemperatureField, dt: float, step_index: int | None = None) -> TemperatureField:
        T = field_.values
        g = self.grid
        K = self.material.conductivity(T)
        c = (slice(1, -1),) * 3
        xp, xm = (slice(2, None), slice(1, -1), slice(1, -1)), (slice(None, -2), slice(1, -1), slice(1, -1))
        yp, ym = (slice(1, -1), slice(2, None), slice(1, -1)), (slice(1, -1), slice(None, -2), slice(1, -1))
        zp, zm = (slice(1, -1), slice(1, -1), slice(2, None)), (slice(1, -1), slice(1, -1), slice(None, -2))
        Tc = T[c]
        lap = ((T[xp] - 2.0 * Tc + T[xm]) / g.dx**2
               + (T[yp] - 2.0 * Tc + T[ym]) / g.dy**2
               + (T[zp] - 2.0 * Tc + T[zm]) / g.dz**2)
        grad = ((K[xp] - K[xm]) * (T[xp] - T[xm]) / (4.0 * g.dx**2)
                + (K[yp] - K[ym]) * (T[yp] - T[ym]) / (4.0 * g.dy**2)
                + (K[zp] - K[zm]) * (T[zp] - T[zm]) / (4.0 * g.dz**2))
        rho_cp = self.material.density * self.material.heat_capacity(Tc)
        new = T.copy()
        new[c] = Tc + dt / rho_cp * (K[c] * lap + grad + self.source(field_.time))
        out = TemperatureField(g, field_.time + dt, new)
        apply_boundary(out, self.bc, self.material)
        bad = ~np.isfinite(out.values) | (out.values <= 0.0)
        if bad.any():
            node = tuple(int(v) for v in np.argwhere(bad)[0])
            where = f" at step {step_index}" if step_index is not None else ""
            raise BlowUpError(f"temperature blow-up at node {node}{where} (t={out.time:.6g} s)")
        return out


def step(field_: TemperatureField, dt: float, scenario: Scenario | None, laser: LaserParams | None,
         material: MaterialParams, bc: BoundarySpec) -> TemperatureField:
    return FdSolver(field_.grid, material, bc, laser, scenario).step(field_, dt)


# Full runs ---------------------------------------------------------------

@dataclass
class FdConfig:
    workpiece: Workpiece
    spacing: float | tuple[float, float, float]
    scenario: Scenario | None
    laser: LaserParams | None
    material: MaterialParams = field(default_factory=MaterialParams)
    bc: BoundarySpec = field(default_factory=BoundarySpec.default)
    end_time: float | None = None
    snapshot_times: Sequence[float] = ()
    initial_temperature: float = 300.0
    safety: float = 0.9
    dt: float | None = None

    def grid(self) -> Grid:
        return Grid.for_workpiece(self.workpiece, self.spacing)

    def resolved_end_time(self) -> float:
        if self.end_time is not None:
            return float(self.end_time)
        if self.scenario is None:
            raise FdError("end_time required without a scenario")
        return self.scenario.duration


@dataclass
class FdRun:
    snapshots: list[TemperatureField]
    dt: float
    n_steps: int
    scenario: Scenario | None = None

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def at(self, t: float) -> TemperatureField:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.snapshots[i]


def solve(cfg: FdConfig, progress: bool = False) -> FdRun:
    """March from a uniform initial field to ``end_time``; deterministic."""
    grid = cfg.grid()
    end = cfg.resolved_end_time()
    dt_max = stable_dt(grid, cfg.material, cfg.safety)
    dt_req = dt_max if cfg.dt is None else min(float(cfg.dt), dt_max)
    n_steps = max(1, math.ceil(end / dt_req - 1e-9))
    dt = end / n_steps
    snaps = sorted(set(float(s) for s in cfg.snapshot_times)) or [end]
    if snaps[0] < 0 or snaps[-1] > end * (1 + 1e-12):
        raise FdError("snapshot times must lie within [0, end_time]")
    wanted = {}
    for s in snaps:
        wanted.setdefault(int(round(s / dt)), []).append(s)

    solver = FdSolver(grid, cfg.material, cfg.bc, cfg.laser, cfg.scenario)
    fld = TemperatureField(grid, 0.0, np.full(grid.shape, float(cfg.initial_temperature)))
    apply_boundary(fld, cfg.bc, cfg.material)
    out = []
    if 0 in wanted:
        out.append(fld.copy())
    log.info("fd solve: grid %s, dt=%.4g s, %d steps", grid.shape, dt, n_steps)
    for n in range(1, n_steps + 1):
        fld = solver.step(fld, dt, step_index=n)
        fld.time = n * dt
        if n in wanted:
            out.append(fld.copy())
        if progress and n % 1000 == 0:
            log.info("step %d/%d  Tmax=%.1f K", n, n_steps, fld.values.max())
    return FdRun(out, dt, n_steps, cfg.scenario)


def thermal_energy(field_: TemperatureField, density: float, capacity, interior_only: bool = True) -> float:
    """Sum of rho * c * T * dV with a frozen capacity array (or scalar).

    Boundary nodes are reset from the face conditions rather than advanced,
    so by default only the interior control volume is counted.
    """
    g = field_.grid
    e = density * np.broadcast_to(capacity, g.shape) * field_.values
    if interior_only:
        e = e[1:-1, 1:-1, 1:-1]
    return float(np.sum(e) * g.dx * g.dy * g.dz)
