"""Path-conditioned operator surrogates: DeepONet and the enriched root-net variant.

The branch net reads a scan-path encoding, the trunk net reads (t, x, y, z),
and a bias-free linear root combines their p outputs:

    u = sum_k  w_mul[k] * B_k * T_k  +  w_add[k] * (B_k + T_k)  +  w_sub[k] * (B_k - T_k)

With ``w_add = w_sub = 0`` this is the plain DeepONet dot product scaled by
``w_mul``. Temperatures are ``T0 + T_scale * u``.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import io
from .laser import PathEncoding, Scenario, Workpiece, encode_path
from .lbfgs import LbfgsConfig, lbfgs_minimize
from .neural import DTYPE, MlpModel, ParamLayout, ShapeError, TorchMlp, flat_objective, mlp_layout
from .physics import (
    ClusterConfig,
    CollocationCounts,
    LossTerms,
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
from .pinn import UniformInitial

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathNormalization:
    """Maps encoded (x, y) samples onto [-1, 1] using the workpiece footprint."""

    lower: tuple
    upper: tuple

    @classmethod
    def for_workpiece(cls, workpiece: Workpiece) -> "PathNormalization":
        return cls(tuple(workpiece.lower[:2]), tuple(workpiece.upper[:2]))

    def apply(self, vector) -> np.ndarray:
        v = np.asarray(vector, dtype=float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        m = v.shape[-1] // 2
        lo_t, hi_t = np.tile(lo, m), np.tile(hi, m)
        return 2.0 * (v - lo_t) / (hi_t - lo_t) - 1.0

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass
class EnDeepOnetModel:
    branch: MlpModel
    trunk: MlpModel
    w_mul: np.ndarray
    w_add: np.ndarray
    w_sub: np.ndarray
    norm: NormalizationSpec
    path_norm: PathNormalization

    def __post_init__(self):
        p = self.p
        if self.trunk.layer_sizes[-1] != p:
            raise ShapeError("branch and trunk output widths differ")
        if self.trunk.layer_sizes[0] != 4:
            raise ShapeError("trunk must take (t, x, y, z)")
        if self.branch.layer_sizes[0] % 2:
            raise ShapeError("branch input must hold (x, y) pairs")
        for w in (self.w_mul, self.w_add, self.w_sub):
            if np.shape(w) != (p,):
                raise ShapeError("root weights must have length p")

    @property
    def p(self) -> int:
        return self.branch.layer_sizes[-1]

    @property
    def m(self) -> int:
        return self.branch.layer_sizes[0] // 2

    @property
    def interval(self) -> tuple[float, float]:
        return self.norm.lower[0], self.norm.upper[0]

    @classmethod
    def init(cls, norm: NormalizationSpec, path_norm: PathNormalization, m: int = 30, p: int = 64,
             branch_hidden=(64, 64), trunk_hidden=(64,) * 5, seed: int = 0,
             trunk_output_scale: float = 0.0) -> "EnDeepOnetModel":
        rng = np.random.default_rng(seed)
        branch = MlpModel.init((2 * m, *branch_hidden, p), rng)
        trunk = MlpModel.init((4, *trunk_hidden, p), rng, output_scale=trunk_output_scale)
        return cls(branch, trunk, np.full(p, 1.0 / p), np.zeros(p), np.zeros(p), norm, path_norm)

    # flat parameters: branch, trunk, then w_mul, w_add, w_sub
    def layout(self) -> ParamLayout:
        b = mlp_layout(self.branch.layer_sizes, "branch.")
        t = mlp_layout(self.trunk.layer_sizes, "trunk.")
        p = self.p
        return ParamLayout(b.entries + t.entries + [("w_mul", (p,)), ("w_add", (p,)), ("w_sub", (p,))])

    def pack(self) -> np.ndarray:
        return np.concatenate([self.branch.pack(), self.trunk.pack(), self.w_mul, self.w_add, self.w_sub])

    def with_params(self, flat: np.ndarray) -> "EnDeepOnetModel":
        nb, nt, p = self.branch.n_params, self.trunk.n_params, self.p
        flat = np.asarray(flat, dtype=float)
        if flat.size != nb + nt + 3 * p:
            raise ShapeError("parameter vector has the wrong length")
        return EnDeepOnetModel(
            MlpModel.unpack(self.branch.layer_sizes, flat[:nb]),
            MlpModel.unpack(self.trunk.layer_sizes, flat[nb:nb + nt]),
            flat[nb + nt:nb + nt + p].copy(), flat[nb + nt + p:nb + nt + 2 * p].copy(),
            flat[nb + nt + 2 * p:].copy(), self.norm, self.path_norm)

    def architecture(self) -> dict:
        return {
            "kind": "en-deeponet",
            "branch": list(self.branch.layer_sizes),
            "trunk": list(self.trunk.layer_sizes),
            "root": "bias-free linear (mul, add, sub)",
            "beta": "per-hidden-layer",
            "normalization": self.norm.to_dict(),
            "path_normalization": self.path_norm.to_dict(),
        }

    # numpy-facing evaluation ---------------------------------------------------

    def _encoding_matrix(self, encoding, n: int) -> np.ndarray:
        E = encoding.vector if isinstance(encoding, PathEncoding) else np.asarray(encoding, dtype=float)
        E = np.atleast_2d(E)
        if E.shape[1] != 2 * self.m:
            raise ShapeError(f"encoding must have {2 * self.m} entries, got {E.shape[1]}")
        if E.shape[0] == 1:
            E = np.repeat(E, n, axis=0)
        if E.shape[0] != n:
            raise ShapeError("one encoding per query (or a single shared one) required")
        return self.path_norm.apply(E)

    def latent(self, encoding, X) -> tuple[np.ndarray, np.ndarray]:
        """Branch and trunk outputs (N, p) for physical queries X (N, 4)."""
        X = np.asarray(X, dtype=float).reshape(-1, 4)
        B = self.branch.forward(self._encoding_matrix(encoding, len(X)))
        T = self.trunk.forward(self.norm.to_unit(X))
        return B, T

    def normalized(self, encoding, X, enriched: bool = True) -> np.ndarray:
        B, T = self.latent(encoding, X)
        return root_combine(B, T, self.w_mul, self.w_add, self.w_sub, enriched)

    def predict(self, X, encoding) -> np.ndarray:
        return self.norm.temperature(self.normalized(encoding, X))

    def bind(self, scenario: Scenario) -> "BoundOperator":
        return BoundOperator(self, scenario, encode_path(scenario, self.m))

    def save(self, path, metadata: dict | None = None) -> None:
        io.write_model_binary(path, self.architecture(), self.pack(), metadata)

    @classmethod
    def load(cls, path) -> "EnDeepOnetModel":
        arch, flat = io.read_model_binary(path)
        if arch.get("kind") != "en-deeponet":
            raise io.FormatError(f"{path}: not an operator model file")
        pn = arch["path_normalization"]
        skeleton = cls(
            MlpModel.init(arch["branch"], 0), MlpModel.init(arch["trunk"], 0),
            np.zeros(arch["branch"][-1]), np.zeros(arch["branch"][-1]), np.zeros(arch["branch"][-1]),
            NormalizationSpec.from_dict(arch["normalization"]),
            PathNormalization(tuple(pn["lower"]), tuple(pn["upper"])))
        return skeleton.with_params(flat)


def root_combine(B, T, w_mul, w_add, w_sub, enriched: bool = True):
    """Root net on latent outputs; works for numpy arrays and torch tensors."""
    if not enriched:
        return (B * T).sum(-1)
    return (w_mul * B * T + w_add * (B + T) + w_sub * (B - T)).sum(-1)


def deeponet_forward(model: EnDeepOnetModel, encoding, X) -> np.ndarray:
    """Plain dot product sum_k B_k T_k, in Kelvin."""
    B, T = model.latent(encoding, X)
    return model.norm.temperature(root_combine(B, T, None, None, None, enriched=False))


def endeeponet_forward(model: EnDeepOnetModel, encoding, X) -> np.ndarray:
    return model.predict(X, encoding)


@dataclass
class BoundOperator:
    """An operator model fixed to one scenario; behaves like any other surrogate."""

    model: EnDeepOnetModel
    scenario: Scenario
    encoding: PathEncoding

    @property
    def interval(self):
        return self.model.interval

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X, self.encoding)


# Torch side -------------------------------------------------------------------

class _TorchOperator:
    def __init__(self, model: EnDeepOnetModel, views: dict):
        self.branch = TorchMlp(model.branch.layer_sizes, views, "branch.")
        self.trunk = TorchMlp(model.trunk.layer_sizes, views, "trunk.")
        self.w_mul, self.w_add, self.w_sub = views["w_mul"], views["w_add"], views["w_sub"]

    def field_fns(self, branch_input: torch.Tensor):
        """(field_fn, value_fn) for one scenario.

        The branch output is constant over queries, so the output is affine in
        the trunk outputs: u = sum_k a_k T_k + c with a = w_mul*B + w_add - w_sub
        and c = sum_k (w_add + w_sub) B_k.
        """
        B = self.branch(branch_input[None, :])[0]
        a = self.w_mul * B + self.w_add - self.w_sub
        c = ((self.w_add + self.w_sub) * B).sum()

        def field_fn(X):
            v, d1, d2 = self.trunk.taylor(X, first=(0, 1, 2, 3), second=(1, 2, 3))
            return v @ a + c, d1 @ a, d2 @ a

        def value_fn(X):
            v, d1, _ = self.trunk.taylor(X, first=(0, 1, 2, 3))
            return v @ a + c, d1 @ a

        return field_fn, value_fn


def pde_residual_operator(model: EnDeepOnetModel, encoding, problem: ThermalProblem,
                          scenario: Scenario | None, X) -> np.ndarray:
    """Heat-equation residual [W/m^3]; derivatives are taken along the trunk inputs only."""
    from .laser import heat_source

    X = np.asarray(X, dtype=float).reshape(-1, 4)
    q = np.zeros(len(X)) if scenario is None else heat_source(X[:, 1], X[:, 2], X[:, 3], X[:, 0], scenario, problem.laser)
    E = model._encoding_matrix(encoding, 1)[0]
    with torch.no_grad():
        views = model.layout().views(torch.tensor(model.pack(), dtype=DTYPE))
        fn, _ = _TorchOperator(model, views).field_fns(torch.tensor(E, dtype=DTYPE))
        u, du, d2u = fn(torch.tensor(model.norm.to_unit(X), dtype=DTYPE))
        T, dT, d2T = physical_derivatives(u, du, d2u, model.norm)
        R = residual_from_derivatives(T, dT, d2T, torch.tensor(q, dtype=DTYPE), problem.material)
    return R.numpy()


# Training ---------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorConfig:
    m: int = 30
    p: int = 64
    branch_hidden: tuple = (64, 64)
    trunk_hidden: tuple = (64, 64, 64, 64, 64)
    counts: CollocationCounts = field(default_factory=CollocationCounts)  # per scenario
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    T_scale: float = 1700.0
    trunk_output_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.p < 1:
            raise ValueError("need m >= 2 and p >= 1")
        object.__setattr__(self, "branch_hidden", tuple(self.branch_hidden))
        object.__setattr__(self, "trunk_hidden", tuple(self.trunk_hidden))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedOperator:
    model: EnDeepOnetModel
    scenarios: list
    metadata: dict = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return bool(self.metadata.get("degraded", False))

    def bind(self, scenario: Scenario) -> BoundOperator:
        return self.model.bind(scenario)

    def save(self, directory) -> None:
        """Bundle: operator.pbfm (+ sidecar) and scenarios.json."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.model.save(d / "operator.pbfm", self.metadata)
        manifest = [{"label": s.label, "tracks": [[t.id, list(t.start), list(t.end)] for t in s.tracks],
                     "scan_speed": s.scan_speed} for s in self.scenarios]
        (d / "scenarios.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "TrainedOperator":
        from .laser import Track

        d = Path(directory)
        model = EnDeepOnetModel.load(d / "operator.pbfm")
        scen = [Scenario(tuple(Track(i, tuple(a), tuple(b)) for i, a, b in s["tracks"]), s["scan_speed"])
                for s in json.loads((d / "scenarios.json").read_text())]
        return cls(model, scen, io.read_model_metadata(d / "operator.pbfm"))


def _pool(terms: list[LossTerms]) -> LossTerms:
    n = len(terms)
    faces = terms[0].bc.keys()
    return LossTerms(sum(t.ic for t in terms) / n, {f: sum(t.bc[f] for t in terms) / n for f in faces},
                     sum(t.pde for t in terms) / n)


def train_endeeponet(problem: ThermalProblem, scenarios: list[Scenario], cfg: OperatorConfig = OperatorConfig(),
                     interval: tuple[float, float] | None = None, callback=None) -> TrainedOperator:
    """Physics-only training of one operator model over several scan paths at once.

    Each scenario gets its own collocation set from one Sobol stream
    (disjoint offsets); every loss group is averaged over scenarios and the
    weights are captured once from the pooled initial losses.
    """
    if not scenarios:
        raise ValueError("need at least one scenario")
    durations = {round(s.duration, 15) for s in scenarios}
    if len(durations) != 1:
        raise ValueError("all scenarios must share one duration")
    t0, t1 = interval if interval is not None else (0.0, scenarios[0].duration)
    norm = NormalizationSpec.for_interval(problem.workpiece, t0, t1, problem.initial_temperature, cfg.T_scale)
    path_norm = PathNormalization.for_workpiece(problem.workpiece)
    model0 = EnDeepOnetModel.init(norm, path_norm, cfg.m, cfg.p, cfg.branch_hidden, cfg.trunk_hidden,
                                  cfg.seed, cfg.trunk_output_scale)
    layout = model0.layout()
    initial = UniformInitial(problem.initial_temperature)

    per = []
    n_total = cfg.counts.n_pde + cfg.counts.n_ic + cfg.counts.n_bc
    for i, sc in enumerate(scenarios):
        colloc = sample_collocation(problem.workpiece, (t0, t1), cfg.counts, sc, problem.laser, cfg.cluster,
                                    seed=cfg.seed + i, sobol_offset=i * n_total)
        inputs = prepare_inputs(colloc, norm, problem, sc, initial.values(colloc.initial[:, 1:]))
        enc = torch.tensor(path_norm.apply(encode_path(sc, cfg.m).vector), dtype=DTYPE)
        per.append((inputs, enc))

    def pooled(views):
        op = _TorchOperator(model0, views)
        terms = []
        for inputs, enc in per:
            fn, vfn = op.field_fns(enc)
            terms.append(compute_losses(fn, inputs, norm, problem, value_fn=vfn))
        return _pool(terms)

    with torch.no_grad():
        t_init = pooled(layout.views(torch.tensor(model0.pack(), dtype=DTYPE)))
    weights = capture_weights(float(t_init.ic), float(t_init.bc_total), float(t_init.pde))

    seen: dict[float, dict] = {}

    def loss_fn(views):
        terms = pooled(views)
        total = total_loss(terms, weights)
        seen[float(total.detach())] = terms.as_floats()
        return total

    objective = flat_objective(layout, loss_fn)
    x0 = model0.pack()
    f0 = objective(x0)[0]
    trace = [{"iteration": 0, **seen[f0], "total": f0}]

    def on_iter(it, f, g):
        row = {"iteration": it, **seen.get(float(f), {}), "total": float(f)}
        trace.append(row)
        seen.clear()
        if callback is not None:
            callback(it, row)
        if it % 100 == 0:
            log.info("operator it %d loss %.4g", it, f)

    start = time.perf_counter()
    res = lbfgs_minimize(objective, x0, cfg.lbfgs, callback=on_iter)
    elapsed = time.perf_counter() - start
    degraded = (not res.ok) or not np.isfinite(res.loss)
    if degraded:
        warnings.warn(f"operator training ended with status {res.status}; result is DEGRADED", stacklevel=2)
    meta = {
        "seed": cfg.seed, "interval": [t0, t1], "scenarios": [s.label for s in scenarios],
        "weights": weights.to_dict(), "initial_total_loss": f0, "final_loss": res.loss,
        "status": res.status, "iterations": res.iterations, "evaluations": res.evaluations,
        "degraded": degraded, "config": cfg.to_dict(), "trace": trace,
    }
    out = TrainedOperator(model0.with_params(res.x), list(scenarios), meta)
    out.training_seconds = elapsed
    return out
