"""Single-interval physics-informed network: training, querying, persistence."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import io
from .laser import Scenario
from .lbfgs import LbfgsConfig, lbfgs_minimize
from .neural import DTYPE, MlpModel, TorchMlp, flat_objective
from .physics import (
    ClusterConfig,
    CollocationCounts,
    LossWeights,
    NormalizationSpec,
    ThermalProblem,
    capture_weights,
    compute_losses,
    physical_derivatives,
    prepare_inputs,
    residual_from_derivatives,
    sample_collocation,
    total_loss,
)

log = logging.getLogger(__name__)


# Initial conditions ---------------------------------------------------------

@dataclass(frozen=True)
class UniformInitial:
    temperature: float = 300.0

    def values(self, xyz: np.ndarray) -> np.ndarray:
        return np.full(len(xyz), float(self.temperature))

    def describe(self) -> dict:
        return {"kind": "uniform", "temperature": self.temperature}


@dataclass(frozen=True)
class PredecessorInitial:
    """End state of an already trained surrogate at ``handoff_time``."""

    surrogate: object
    handoff_time: float

    def values(self, xyz: np.ndarray) -> np.ndarray:
        t = np.full((len(xyz), 1), float(self.handoff_time))
        return self.surrogate.predict(np.hstack([t, xyz]))

    def describe(self) -> dict:
        return {"kind": "predecessor", "handoff_time": self.handoff_time,
                "interval": list(getattr(self.surrogate, "interval", ()))}


# Field functions --------------------------------------------------------------

def mlp_field(net: TorchMlp):
    """Unit inputs -> (u, du over t,x,y,z, d2u over x,y,z) for a 4-input, 1-output net."""

    def f(X):
        v, d1, d2 = net.taylor(X, first=(0, 1, 2, 3), second=(1, 2, 3))
        return v[:, 0], d1[..., 0], d2[..., 0]

    return f


def mlp_value(net: TorchMlp):
    def f(X):
        v, d1, _ = net.taylor(X, first=(0, 1, 2, 3))
        return v[:, 0], d1[..., 0]

    return f


# Configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class PinnConfig:
    hidden_layers: int = 5
    width: int = 64
    counts: CollocationCounts = field(default_factory=CollocationCounts)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    T_scale: float = 1700.0
    output_init_scale: float = 0.0
    warmup_steps: int = 0
    warmup_lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1:
            raise ValueError("network needs at least one hidden layer of width >= 1")
        if not self.T_scale > 0:
            raise ValueError("T_scale must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (4,) + (self.width,) * self.hidden_layers + (1,)

    def to_dict(self) -> dict:
        return asdict(self)


# Trained surrogate ------------------------------------------------------------

@dataclass
class TrainedPinn:
    model: MlpModel
    norm: NormalizationSpec
    metadata: dict = field(default_factory=dict)

    @property
    def interval(self) -> tuple[float, float]:
        return self.norm.lower[0], self.norm.upper[0]

    @property
    def degraded(self) -> bool:
        return bool(self.metadata.get("degraded", False))

    def predict(self, X) -> np.ndarray:
        """Temperatures [K] at physical points (N, 4) ordered (t, x, y, z)."""
        X = np.asarray(X, dtype=float).reshape(-1, 4)
        return self.predict_unit(self.norm.to_unit(X))

    def predict_unit(self, U) -> np.ndarray:
        return self.norm.temperature(self.model.forward(np.asarray(U, dtype=float).reshape(-1, 4))[:, 0])

    def architecture(self) -> dict:
        return {**self.model.architecture(), "normalization": self.norm.to_dict()}

    def save(self, path) -> None:
        io.write_model_binary(path, self.architecture(), self.model.pack(), self.metadata)

    @classmethod
    def load(cls, path, layer_sizes=None) -> "TrainedPinn":
        arch, flat = io.read_model_binary(path)
        if arch.get("kind") != "sine-mlp":
            raise io.FormatError(f"{path}: not a PINN model file")
        if layer_sizes is not None and list(layer_sizes) != arch["layer_sizes"]:
            raise io.FormatError(f"{path}: layer sizes {arch['layer_sizes']} differ from expected {list(layer_sizes)}")
        model = MlpModel.unpack(arch["layer_sizes"], flat)
        return cls(model, NormalizationSpec.from_dict(arch["normalization"]), io.read_model_metadata(path))


def pde_residual(surrogate: TrainedPinn, problem: ThermalProblem, scenario: Scenario | None, X) -> np.ndarray:
    """Heat-equation residual [W/m^3] of a trained network at physical points (N, 4)."""
    from .laser import heat_source

    X = np.asarray(X, dtype=float).reshape(-1, 4)
    q = np.zeros(len(X)) if scenario is None else heat_source(X[:, 1], X[:, 2], X[:, 3], X[:, 0], scenario, problem.laser)
    with torch.no_grad():
        U = torch.tensor(surrogate.norm.to_unit(X), dtype=DTYPE)
        u, du, d2u = mlp_field(surrogate.model.torch_view())(U)
        T, dT, d2T = physical_derivatives(u, du, d2u, surrogate.norm)
        R = residual_from_derivatives(T, dT, d2T, torch.tensor(q, dtype=DTYPE), problem.material)
    return R.numpy()


# Training ---------------------------------------------------------------------

def _gradient_warmup(objective, x, steps, lr):
    for _ in range(steps):
        f, g = objective(x)
        x = x - lr * g
    return x


def train_pinn(problem: ThermalProblem, scenario: Scenario | None, interval: tuple[float, float],
               cfg: PinnConfig = PinnConfig(), initial=None, sobol_offset: int = 0,
               callback: Callable[[int, dict], None] | None = None) -> TrainedPinn:
    """Fit one network to the heat equation on ``interval`` of ``scenario``.

    ``scenario=None`` means the laser is off. ``initial`` defaults to the
    problem's uniform initial temperature. The returned surrogate carries the
    per-iteration loss trace, the weights and the optimiser status in its
    metadata; a failed line search marks it ``degraded`` instead of raising.
    """
    t0, t1 = map(float, interval)
    if not t1 > t0:
        raise ValueError("interval must have positive length")
    initial = initial if initial is not None else UniformInitial(problem.initial_temperature)
    norm = NormalizationSpec.for_interval(problem.workpiece, t0, t1, problem.initial_temperature, cfg.T_scale)
    colloc = sample_collocation(problem.workpiece, (t0, t1), cfg.counts, scenario, problem.laser,
                                cfg.cluster, seed=cfg.seed, sobol_offset=sobol_offset)
    ic_values = initial.values(colloc.initial[:, 1:])
    inputs = prepare_inputs(colloc, norm, problem, scenario, ic_values)

    sizes = cfg.layer_sizes
    model0 = MlpModel.init(sizes, cfg.seed, output_scale=cfg.output_init_scale)
    layout = model0.layout

    def terms_of(views):
        net = TorchMlp(sizes, views)
        return compute_losses(mlp_field(net), inputs, norm, problem, value_fn=mlp_value(net))

    with torch.no_grad():
        t_init = terms_of(layout.views(torch.tensor(model0.pack(), dtype=DTYPE)))
    weights = capture_weights(float(t_init.ic), float(t_init.bc_total), float(t_init.pde))

    seen: dict[float, dict] = {}

    def loss_fn(views):
        terms = terms_of(views)
        total = total_loss(terms, weights)
        seen[float(total.detach())] = terms.as_floats()
        return total

    objective = flat_objective(layout, loss_fn)
    x0 = model0.pack()
    initial_total = objective(x0)[0]
    trace = [{"iteration": 0, **seen[initial_total], "total": initial_total}]
    x0 = _gradient_warmup(objective, x0, cfg.warmup_steps, cfg.warmup_lr)

    def on_iter(it, f, g):
        row = {"iteration": it, **seen.get(float(f), {}), "total": float(f)}
        trace.append(row)
        seen.clear()
        if callback is not None:
            callback(it, row)
        if it % 100 == 0:
            log.info("pinn [%g, %g] it %d loss %.4g", t0, t1, it, f)

    start = time.perf_counter()
    res = lbfgs_minimize(objective, x0, cfg.lbfgs, callback=on_iter)
    elapsed = time.perf_counter() - start
    degraded = (not res.ok) or not np.isfinite(res.loss)
    if degraded:
        warnings.warn(f"PINN training on [{t0:g}, {t1:g}] ended with status {res.status}; result is DEGRADED",
                      stacklevel=2)
    model = MlpModel.unpack(sizes, res.x)
    meta = {
        "seed": cfg.seed,
        "interval": [t0, t1],
        "scenario": None if scenario is None else scenario.label,
        "initial_condition": initial.describe(),
        "weights": weights.to_dict(),
        "initial_total_loss": initial_total,
        "final_loss": res.loss,
        "status": res.status,
        "iterations": res.iterations,
        "evaluations": res.evaluations,
        "degraded": degraded,
        "config": cfg.to_dict(),
        "collocation_counts": list(colloc.counts),
        "trace": trace,
    }
    out = TrainedPinn(model, norm, meta)
    out.training_seconds = elapsed  # wall clock kept off the persisted metadata (not reproducible)
    return out


def write_trace_csv(trace: list[dict], path) -> None:
    import csv

    keys = ["iteration", "ic", "bc", "pde", "total"]
    extra = sorted({k for row in trace for k in row} - set(keys))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + extra)
        for row in trace:
            w.writerow([repr(float(row[k])) if k in row and k != "iteration" else row.get(k, "")
                        for k in keys + extra])


# Estimator wrapper --------------------------------------------------------------

class PinnRegressor(RegressorMixin, BaseEstimator):
    """Estimator facade: ``fit`` trains on physics only, ``predict`` maps (t,x,y,z) -> T.

    ``X`` and ``y`` passed to ``fit`` are ignored (there is no labelled data);
    they exist so the object slots into estimator tooling such as ``score``.
    """

    def __init__(self, problem: ThermalProblem | None = None, scenario: Scenario | None = None,
                 interval=(0.0, 0.01), hidden_layers: int = 5, width: int = 64, n_pde: int = 20000,
                 n_ic: int = 2000, n_bc: int = 1000, cluster_fraction: float = 0.5,
                 cluster_radius: float | None = None, max_iterations: int = 2000, history_size: int = 50,
                 T_scale: float = 1700.0, seed: int = 0, initial=None):
        self.problem = problem
        self.scenario = scenario
        self.interval = interval
        self.hidden_layers = hidden_layers
        self.width = width
        self.n_pde = n_pde
        self.n_ic = n_ic
        self.n_bc = n_bc
        self.cluster_fraction = cluster_fraction
        self.cluster_radius = cluster_radius
        self.max_iterations = max_iterations
        self.history_size = history_size
        self.T_scale = T_scale
        self.seed = seed
        self.initial = initial

    def _config(self) -> PinnConfig:
        return PinnConfig(
            hidden_layers=self.hidden_layers, width=self.width,
            counts=CollocationCounts(self.n_pde, self.n_ic, self.n_bc),
            cluster=ClusterConfig(self.cluster_fraction, self.cluster_radius),
            lbfgs=replace(LbfgsConfig(), max_iterations=self.max_iterations, history_size=self.history_size),
            T_scale=self.T_scale, seed=self.seed)

    def fit(self, X=None, y=None):
        problem = self.problem if self.problem is not None else ThermalProblem()
        self.surrogate_ = train_pinn(problem, self.scenario, self.interval, self._config(), self.initial)
        self.n_iter_ = self.surrogate_.metadata["iterations"]
        self.degraded_ = self.surrogate_.degraded
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "surrogate_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 columns (t, x, y, z), got {X.shape[1]}")
        return self.surrogate_.predict(X)
