"""Strict JSON run configuration with defaults, validation and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .fd import BoundarySpec, FdConfig
from .laser import LaserParams, PathError, Scenario, Track, Workpiece, enumerate_scenarios, parallel_tracks
from .lbfgs import LbfgsConfig
from .material import MaterialParams
from .operator import OperatorConfig
from .physics import ClusterConfig, CollocationCounts, ThermalProblem
from .pinn import PinnConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometrySection:
    length: float = 1.0e-3
    width: float = 1.5e-3
    depth: float = 0.3e-3
    _positive = ("length", "width", "depth")


@dataclass(frozen=True)
class LaserSection:
    effective_power: float = 150.0
    radius: float = 450e-6
    scan_speed: float = 0.1
    penetration_depth: float | None = None  # null -> radius
    _positive = ("effective_power", "radius", "scan_speed", "penetration_depth")


@dataclass(frozen=True)
class PathSection:
    n_tracks: int = 3
    track_length: float = 1.0e-3
    hatch: float = 0.5e-3
    tracks: list | None = None  # explicit [{"id", "start", "end"}] overrides the generated layout
    scenarios: object = "all"   # "all" or list of labels such as "2-3-1"
    _positive = ("n_tracks", "track_length", "hatch")


@dataclass(frozen=True)
class FdSection:
    spacing: float = 25e-6
    safety: float = 0.9
    snapshots_per_track: int = 3
    _positive = ("spacing", "safety", "snapshots_per_track")


@dataclass(frozen=True)
class PinnSection:
    hidden_layers: int = 5
    width: int = 64
    n_pde: int = 20000
    n_ic: int = 2000
    n_bc: int = 1000
    cluster_fraction: float = 0.5
    cluster_radius: float | None = None  # null -> 2 * laser radius
    T_scale: float = 1700.0
    output_init_scale: float = 0.0
    max_iterations: int = 2000
    history_size: int = 50
    gradient_tolerance: float = 1e-10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    warmup_steps: int = 0
    warmup_lr: float = 1e-3
    _positive = ("hidden_layers", "width", "n_pde", "n_ic", "n_bc", "cluster_radius", "T_scale",
                 "history_size", "gradient_tolerance", "wolfe_c1", "wolfe_c2", "warmup_lr")


@dataclass(frozen=True)
class OperatorSection:
    m: int = 30
    p: int = 64
    branch_hidden: list = field(default_factory=lambda: [64, 64])
    trunk_hidden: list = field(default_factory=lambda: [64] * 5)
    _positive = ("m", "p")


@dataclass(frozen=True)
class SequentialSection:
    cooling: bool = True
    cooling_time: float | None = None  # null -> total scan duration
    _positive = ("cooling_time",)


@dataclass(frozen=True)
class EvalSection:
    threshold: float = 1600.0
    handoff_probes: int = 1000
    history_samples: int = 11
    _positive = ("threshold", "handoff_probes", "history_samples")


SECTIONS = {
    "geometry": GeometrySection, "laser": LaserSection, "path": PathSection, "fd": FdSection,
    "pinn": PinnSection, "operator": OperatorSection, "sequential": SequentialSection, "eval": EvalSection,
}
SCALARS = {"seed": 0, "initial_temperature": 300.0, "threads": 1}


def _section(cls, data, name):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key {name}.{sorted(unknown)[0]}")
    obj = cls(**data)
    for key in cls._positive:
        v = getattr(obj, key)
        if v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"{name}.{key} must be a positive number, got {v!r}")
    return obj


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    material: dict = field(default_factory=lambda: MaterialParams().to_dict())
    laser: LaserSection = field(default_factory=LaserSection)
    path: PathSection = field(default_factory=PathSection)
    boundary: dict = field(default_factory=lambda: BoundarySpec.default().to_dict())
    fd: FdSection = field(default_factory=FdSection)
    pinn: PinnSection = field(default_factory=PinnSection)
    operator: OperatorSection = field(default_factory=OperatorSection)
    sequential: SequentialSection = field(default_factory=SequentialSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    initial_temperature: float = 300.0
    threads: int = 1

    # construction ----------------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration root must be an object")
        allowed = set(SECTIONS) | set(SCALARS) | {"material", "boundary"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]}")
        kw = {name: _section(c, data.get(name), name) for name, c in SECTIONS.items()}
        try:
            kw["material"] = MaterialParams.from_dict(data.get("material")).to_dict()
        except (ValueError, TypeError, KeyError) as e:
            raise ConfigError(f"material: {e}") from None
        try:
            kw["boundary"] = BoundarySpec.from_dict(data.get("boundary") or {}).to_dict()
        except (ValueError, TypeError, KeyError) as e:
            raise ConfigError(f"boundary: {e}") from None
        for k, default in SCALARS.items():
            v = data.get(k, default)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{k} must be a number")
            kw[k] = type(default)(v)
        if kw["initial_temperature"] <= 0:
            raise ConfigError("initial_temperature must be positive")
        if kw["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        cfg = cls(**kw)
        cfg.problem()  # cross-field validation (laser, tracks)
        cfg.scenarios()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
        return json.loads(json.dumps(out))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    # resolved domain objects ---------------------------------------------------------
    def workpiece(self) -> Workpiece:
        g = self.geometry
        return Workpiece(g.length, g.width, g.depth)

    def laser_params(self) -> LaserParams:
        s = self.laser
        try:
            return LaserParams(s.effective_power, s.radius, s.scan_speed, s.penetration_depth)
        except PathError as e:
            raise ConfigError(str(e)) from None

    def problem(self) -> ThermalProblem:
        return ThermalProblem(self.workpiece(), MaterialParams.from_dict(self.material), self.laser_params(),
                              BoundarySpec.from_dict(self.boundary), self.initial_temperature)

    def tracks(self) -> list[Track]:
        p = self.path
        if p.tracks is not None:
            try:
                return [Track(int(t["id"]), tuple(t["start"]), tuple(t["end"])) for t in p.tracks]
            except (KeyError, TypeError, PathError) as e:
                raise ConfigError(f"path.tracks: {e}") from None
        return parallel_tracks(self.workpiece(), p.n_tracks, p.track_length, p.hatch)

    def scenarios(self) -> list[Scenario]:
        try:
            every = enumerate_scenarios(self.tracks(), self.laser.scan_speed)
        except PathError as e:
            raise ConfigError(f"path: {e}") from None
        sel = self.path.scenarios
        if sel == "all":
            return every
        if not isinstance(sel, list):
            raise ConfigError("path.scenarios must be \"all\" or a list of labels")
        by_label = {s.label: s for s in every}
        missing = [s for s in sel if s not in by_label]
        if missing:
            raise ConfigError(f"path.scenarios: unknown scenario {missing[0]!r}")
        return [by_label[s] for s in sel]

    def pinn_config(self) -> PinnConfig:
        p = self.pinn
        return PinnConfig(
            hidden_layers=p.hidden_layers, width=p.width,
            counts=CollocationCounts(p.n_pde, p.n_ic, p.n_bc),
            cluster=ClusterConfig(p.cluster_fraction, p.cluster_radius),
            lbfgs=self.lbfgs_config(), T_scale=p.T_scale, output_init_scale=p.output_init_scale,
            warmup_steps=p.warmup_steps, warmup_lr=p.warmup_lr, seed=self.seed)

    def lbfgs_config(self) -> LbfgsConfig:
        p = self.pinn
        try:
            return LbfgsConfig(p.history_size, p.max_iterations, p.gradient_tolerance, p.wolfe_c1, p.wolfe_c2)
        except ValueError as e:
            raise ConfigError(f"pinn: {e}") from None

    def operator_config(self) -> OperatorConfig:
        o, p = self.operator, self.pinn
        return OperatorConfig(
            m=o.m, p=o.p, branch_hidden=tuple(o.branch_hidden), trunk_hidden=tuple(o.trunk_hidden),
            counts=CollocationCounts(p.n_pde, p.n_ic, p.n_bc), cluster=ClusterConfig(p.cluster_fraction,
                                                                                      p.cluster_radius),
            lbfgs=self.lbfgs_config(), T_scale=p.T_scale, trunk_output_scale=p.output_init_scale, seed=self.seed)

    def cooling_time(self, scenario_duration: float) -> float | None:
        s = self.sequential
        if not s.cooling:
            return None
        return scenario_duration if s.cooling_time is None else s.cooling_time

    def fd_config(self, scenario: Scenario, end_time: float | None = None) -> FdConfig:
        end = scenario.duration if end_time is None else end_time
        n = self.fd.snapshots_per_track * max(1, round(end / scenario.per_track_duration))
        snaps = [end * (k + 1) / n for k in range(n)]
        return FdConfig(self.workpiece(), self.fd.spacing, scenario, self.laser_params(),
                        MaterialParams.from_dict(self.material), BoundarySpec.from_dict(self.boundary),
                        end_time=end, snapshot_times=snaps, initial_temperature=self.initial_temperature,
                        safety=self.fd.safety)


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {p}: {e}") from None
    try:
        return RunConfig.from_dict(data)
    except TypeError as e:
        raise ConfigError(str(e)) from None
