"""Physics-informed loss machinery shared by the PINN and the operator network.

Everything a loss needs about the network is a *field function*: a callable
mapping unit-box inputs (N, 4) in (t, x, y, z) order to the normalised
output ``u`` together with its derivatives along all four inputs and its
diagonal second derivatives along x, y, z. Temperatures are recovered as
``T = T0 + T_scale * u``.

Loss terms are made dimensionless with fixed reference scales so that they
stay comparable when a weight has to be clamped: temperatures by
``T_scale``, normal gradients by the half-extent of the box along the
normal, and PDE residuals by ``rho * c_p(T0) * T_scale / interval``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from scipy.stats import qmc

from .fd import FACES, BoundarySpec, Convective, Dirichlet, Insulated, Neumann
from .laser import LaserParams, Scenario, Workpiece, heat_source, laser_position
from .material import MaterialParams
from .neural import DTYPE

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class ThermalProblem:
    """Geometry, material, laser and boundary conditions of one workpiece."""

    workpiece: Workpiece = field(default_factory=Workpiece)
    material: MaterialParams = field(default_factory=MaterialParams)
    laser: LaserParams = field(default_factory=LaserParams)
    bc: BoundarySpec = field(default_factory=BoundarySpec.default)
    initial_temperature: float = 300.0


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine map of (t, x, y, z) onto [-1, 1]^4 and T -> (T - T0) / T_scale."""

    lower: tuple
    upper: tuple
    T0: float = 300.0
    T_scale: float = 1700.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(hi <= lo):
            raise ValueError("normalisation box must have 4 strictly increasing extents")
        if not self.T_scale > 0:
            raise ValueError("T_scale must be positive")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    @classmethod
    def for_interval(cls, workpiece: Workpiece, t0: float, t1: float, T0: float = 300.0,
                     T_scale: float = 1700.0) -> "NormalizationSpec":
        return cls((t0, *workpiece.lower), (t1, *workpiece.upper), T0, T_scale)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.upper) - np.asarray(self.lower))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.upper) + np.asarray(self.lower))

    def to_unit(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) / self.half

    def from_unit(self, U) -> np.ndarray:
        return np.asarray(U, dtype=float) * self.half + self.center

    def temperature(self, u):
        return self.T0 + self.T_scale * u

    def output(self, T):
        return (np.asarray(T, dtype=float) - self.T0) / self.T_scale

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "T0": self.T0, "T_scale": self.T_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(tuple(d["lower"]), tuple(d["upper"]), d["T0"], d["T_scale"])


# Collocation --------------------------------------------------------------

@dataclass(frozen=True)
class CollocationCounts:
    n_pde: int = 20000
    n_ic: int = 2000
    n_bc: int = 1000  # per face

    def __post_init__(self):
        if min(self.n_pde, self.n_ic, self.n_bc) <= 0:
            raise ValueError("collocation counts must be positive")


@dataclass(frozen=True)
class ClusterConfig:
    """Share of interior points redrawn around the moving laser spot."""

    fraction: float = 0.5
    radius: float | None = None  # defaults to 2 * laser radius

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("cluster fraction must lie in [0, 1]")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("cluster radius must be positive")


@dataclass
class CollocationSet:
    """Physical-coordinate point sets; every array has columns (t, x, y, z)."""

    interior: np.ndarray
    initial: np.ndarray
    boundary: dict
    t_start: float

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.interior), len(self.initial), sum(len(v) for v in self.boundary.values())


def sobol_points(dim: int, n: int, offset: int = 0) -> np.ndarray:
    """Unscrambled Sobol points in (0, 1)^dim, skipping the origin and ``offset`` more."""
    eng = qmc.Sobol(dim, scramble=False)
    eng.fast_forward(1 + int(offset))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # balance warning for non powers of 2
        return eng.random(n)


def _cluster(points: np.ndarray, scenario: Scenario, laser: LaserParams, workpiece: Workpiece,
             radius: float, rng: np.random.Generator) -> np.ndarray:
    t = points[:, 0]
    on = t <= scenario.duration * (1 + 1e-12)
    if not on.any():
        return points
    sel = np.flatnonzero(on)
    xl, yl = laser_position(scenario, t[sel])
    centre = np.stack([xl, yl, np.zeros_like(xl)], axis=1)
    lo, hi = workpiece.lower, workpiece.upper
    out = points.copy()
    pending = np.arange(sel.size)
    new = np.empty((sel.size, 3))
    for _ in range(10000):
        if pending.size == 0:
            break
        draw = centre[pending] + radius * rng.standard_normal((pending.size, 3))
        inside = np.all((draw > lo) & (draw < hi), axis=1)
        new[pending[inside]] = draw[inside]
        pending = pending[~inside]
    if pending.size:
        raise RuntimeError("rejection sampling failed to place clustered points inside the domain")
    out[sel, 1:] = new
    return out


def sample_collocation(workpiece: Workpiece, interval: tuple[float, float], counts: CollocationCounts,
                       scenario: Scenario | None = None, laser: LaserParams | None = None,
                       cluster: ClusterConfig = ClusterConfig(), seed: int = 0,
                       sobol_offset: int = 0) -> CollocationSet:
    """Sobol points over the space-time box, a share of them clustered at the laser.

    The last ``fraction * n_pde`` interior points are the clustered ones, so
    the leading points always form a plain Sobol prefix.
    """
    t0, t1 = map(float, interval)
    lo = np.array([t0, *workpiece.lower])
    hi = np.array([t1, *workpiece.upper])
    if not np.all(hi > lo):
        raise ValueError("degenerate space-time box")
    rng = np.random.default_rng(seed)

    interior = lo + sobol_points(4, counts.n_pde, sobol_offset) * (hi - lo)
    n_c = int(round(cluster.fraction * counts.n_pde))
    if n_c and scenario is not None and laser is not None:
        radius = cluster.radius if cluster.radius is not None else 2.0 * laser.radius
        interior[-n_c:] = _cluster(interior[-n_c:], scenario, laser, workpiece, radius, rng)

    sp = sobol_points(3, counts.n_ic, sobol_offset)
    initial = np.column_stack([np.full(counts.n_ic, t0), lo[1:] + sp * (hi[1:] - lo[1:])])

    boundary = {}
    for face in FACES:
        axis = 1 + "xyz".index(face[0])
        u = sobol_points(3, counts.n_bc, sobol_offset)
        free = [a for a in range(4) if a != axis]
        pts = np.empty((counts.n_bc, 4))
        pts[:, free] = lo[free] + u * (hi[free] - lo[free])
        pts[:, axis] = lo[axis] if face[1] == "-" else hi[axis]
        boundary[face] = pts
    return CollocationSet(interior, initial, boundary, t0)


# Residual -----------------------------------------------------------------

FieldFn = Callable[[torch.Tensor], tuple]
"""unit inputs (N, 4) -> (u (N,), du (4, N), d2u (3, N) for x, y, z)."""


def residual_from_derivatives(T, dT, d2T, q, material: MaterialParams):
    """rho c_p T_t - kappa lap(T) - dkappa/dT |grad T|^2 - q  (torch, physical units).

    ``dT`` holds (T_t, T_x, T_y, T_z) and ``d2T`` holds (T_xx, T_yy, T_zz).
    """
    k = material.conductivity_law.torch(T)
    dk = material.conductivity_law.torch_derivative(T)
    cp = material.capacity_law.torch(T)
    lap = d2T[0] + d2T[1] + d2T[2]
    grad2 = dT[1] ** 2 + dT[2] ** 2 + dT[3] ** 2
    return material.density * cp * dT[0] - k * lap - dk * grad2 - q


def physical_derivatives(u, du, d2u, norm: NormalizationSpec):
    """Convert normalised-output derivatives in unit coordinates to physical ones."""
    half = torch.tensor(norm.half, dtype=DTYPE)
    T = norm.T0 + norm.T_scale * u
    dT = norm.T_scale * du / half[:, None]
    d2T = norm.T_scale * d2u / (half[1:, None] ** 2) if d2u is not None else None
    return T, dT, d2T


def residual_scale(problem: ThermalProblem, norm: NormalizationSpec) -> float:
    """Reference residual: rho c_p(T0) T_scale / interval length."""
    cp0 = float(problem.material.heat_capacity(norm.T0))
    return problem.material.density * cp0 * norm.T_scale / (norm.upper[0] - norm.lower[0])


# Losses -------------------------------------------------------------------

@dataclass
class LossInputs:
    """Tensors fixed for the whole optimisation (points, sources, targets)."""

    interior: torch.Tensor          # unit coords (N, 4)
    source: torch.Tensor            # q_v at interior points (N,)
    initial: torch.Tensor           # unit coords (N_ic, 4)
    initial_target: torch.Tensor    # T at initial points (N_ic,)
    boundary: dict                  # face -> unit coords (N_bc, 4)


def prepare_inputs(colloc: CollocationSet, norm: NormalizationSpec, problem: ThermalProblem,
                   scenario: Scenario | None, initial_values: np.ndarray) -> LossInputs:
    P = colloc.interior
    if scenario is None:
        q = np.zeros(len(P))
    else:
        q = heat_source(P[:, 1], P[:, 2], P[:, 3], P[:, 0], scenario, problem.laser)

    def t(a):
        return torch.tensor(np.ascontiguousarray(a), dtype=DTYPE)

    return LossInputs(
        interior=t(norm.to_unit(P)),
        source=t(q),
        initial=t(norm.to_unit(colloc.initial)),
        initial_target=t(np.broadcast_to(np.asarray(initial_values, dtype=float), (len(colloc.initial),))),
        boundary={f: t(norm.to_unit(p)) for f, p in colloc.boundary.items()},
    )


@dataclass
class LossTerms:
    ic: torch.Tensor
    bc: dict  # face -> tensor
    pde: torch.Tensor

    @property
    def bc_total(self) -> torch.Tensor:
        return sum(self.bc.values())

    def as_floats(self) -> dict:
        out = {"ic": float(self.ic.detach()), "pde": float(self.pde.detach()),
               "bc": float(self.bc_total.detach())}
        out.update({f"bc[{f}]": float(v.detach()) for f, v in self.bc.items()})
        return out


def boundary_loss(face: str, cond, u, du, norm: NormalizationSpec, material: MaterialParams):
    """Mean-square mismatch on one face in dimensionless units."""
    if isinstance(cond, Dirichlet):
        return torch.mean((u - (cond.value - norm.T0) / norm.T_scale) ** 2)
    axis = 1 + "xyz".index(face[0])
    sign = 1.0 if face[1] == "+" else -1.0
    dn = sign * du[axis]  # outward normal derivative of u in unit coordinates
    half = norm.half[axis]
    if isinstance(cond, Insulated):
        target = 0.0
    elif isinstance(cond, Neumann):
        target = cond.gradient * half / norm.T_scale
    elif isinstance(cond, Convective):
        T = norm.T0 + norm.T_scale * u
        k = material.conductivity_law.torch(T)
        target = -cond.h * (T - cond.ambient) * half / (k * norm.T_scale)
    else:  # pragma: no cover
        raise TypeError(f"unsupported boundary condition {cond!r}")
    return torch.mean((dn - target) ** 2)


def compute_losses(field_fn: FieldFn, inputs: LossInputs, norm: NormalizationSpec,
                   problem: ThermalProblem, value_fn=None) -> LossTerms:
    """IC, per-face BC and PDE losses of a field function.

    ``value_fn`` (unit inputs -> (u, du)) is used for the initial and boundary
    points where no second derivatives are needed; it defaults to
    ``field_fn``.
    """
    value_fn = value_fn or (lambda X: field_fn(X)[:2])
    u, du, d2u = field_fn(inputs.interior)
    T, dT, d2T = physical_derivatives(u, du, d2u, norm)
    R = residual_from_derivatives(T, dT, d2T, inputs.source, problem.material)
    pde = torch.mean((R / residual_scale(problem, norm)) ** 2)

    u0, _ = value_fn(inputs.initial)
    ic = torch.mean((u0 - (inputs.initial_target - norm.T0) / norm.T_scale) ** 2)

    bc = {}
    for face in FACES:
        ub, dub = value_fn(inputs.boundary[face])
        bc[face] = boundary_loss(face, problem.bc[face], ub, dub, norm, problem.material)
    return LossTerms(ic, bc, pde)


@dataclass(frozen=True)
class LossWeights:
    ic: float
    bc: float
    pde: float
    clamped: tuple = ()

    def to_dict(self) -> dict:
        return {"ic": self.ic, "bc": self.bc, "pde": self.pde, "clamped": list(self.clamped)}


def capture_weights(l_ic: float, l_bc_sum: float, l_pde: float, eps: float = LAMBDA_FLOOR) -> LossWeights:
    """lambda = 1 / initial loss per group; groups with initial loss < eps get 1."""
    out, clamped = {}, []
    for name, value in (("ic", l_ic), ("bc", l_bc_sum), ("pde", l_pde)):
        if value < eps:
            warnings.warn(f"initial {name} loss {value:.3g} below {eps:g}; clamping its weight to 1",
                          stacklevel=2)
            out[name] = 1.0
            clamped.append(name)
        else:
            out[name] = 1.0 / value
    return LossWeights(out["ic"], out["bc"], out["pde"], tuple(clamped))


def total_loss(terms: LossTerms, w: LossWeights) -> torch.Tensor:
    return w.ic * terms.ic + w.bc * terms.bc_total + w.pde * terms.pde
