"""Prefix tree of per-track networks chained through predecessor end states."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .laser import MAX_TRACKS, PathError, Scenario, Track, enumerate_scenarios
from .pinn import PinnConfig, PredecessorInitial, TrainedPinn, UniformInitial, train_pinn
from .physics import ThermalProblem

log = logging.getLogger(__name__)

COOL = "cool"


class TreeError(RuntimeError):
    pass


def n_train(n: int) -> int:
    """Number of distinct prefixes over all orderings: sum_i n!/(n-i-1)!."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return sum(math.prod(n - j for j in range(i + 1)) for i in range(n))


def node_name(key: tuple) -> str:
    return "-".join(str(k) for k in key)


@dataclass
class TreeNode:
    key: tuple  # track-id prefix, or prefix + ("cool",) for a cooling node
    depth: int
    interval: tuple[float, float]
    parent: tuple | None
    model: TrainedPinn | None = None
    status: str = "pending"

    @property
    def is_cooling(self) -> bool:
        return bool(self.key) and self.key[-1] == COOL

    @property
    def prefix(self) -> tuple:
        return self.key[:-1] if self.is_cooling else self.key


@dataclass
class TrackTree:
    tracks: dict  # id -> Track
    scan_speed: float
    nodes: dict = field(default_factory=dict)  # key -> TreeNode
    cooling_time: float | None = None

    @property
    def n(self) -> int:
        return len(self.tracks)

    @property
    def per_track_duration(self) -> float:
        return next(iter(self.tracks.values())).length / self.scan_speed

    def scenario(self, prefix: Sequence[int]) -> Scenario:
        try:
            return Scenario(tuple(self.tracks[i] for i in prefix), self.scan_speed)
        except KeyError as e:
            raise TreeError(f"unknown track id {e.args[0]}") from None

    def scenarios(self) -> list[Scenario]:
        return enumerate_scenarios(list(self.tracks.values()), self.scan_speed)

    def track_nodes(self) -> list[TreeNode]:
        return [v for v in self.nodes.values() if not v.is_cooling]

    def breadth_first(self) -> list[TreeNode]:
        return sorted(self.nodes.values(), key=lambda v: (v.depth, v.is_cooling, tuple(map(str, v.key))))


def build_tree(tracks: Sequence[Track], scan_speed: float, cooling_time: float | None = None) -> TrackTree:
    """All distinct prefixes of all orderings; optional cooling node per full ordering."""
    tracks = sorted(tracks, key=lambda tr: tr.id)
    n = len(tracks)
    if not 1 <= n <= MAX_TRACKS:
        raise PathError(f"tree needs 1..{MAX_TRACKS} tracks, got {n}")
    tree = TrackTree({t.id: t for t in tracks}, scan_speed, cooling_time=cooling_time)
    d = tree.per_track_duration
    for sc in tree.scenarios():
        ids = sc.ids
        for k in range(1, n + 1):
            key = ids[:k]
            if key not in tree.nodes:
                tree.nodes[key] = TreeNode(key, k, ((k - 1) * d, k * d), ids[:k - 1] or None)
        if cooling_time is not None:
            if not cooling_time > 0:
                raise ValueError("cooling time must be positive")
            key = ids + (COOL,)
            tree.nodes[key] = TreeNode(key, n + 1, (n * d, n * d + cooling_time), ids)
    return tree


def node_seed(seed: int, key: tuple) -> int:
    """Deterministic per-node seed from the global seed and the node key."""
    words = [int(seed), len(key)] + [0 if k == COOL else int(k) + 1 for k in key]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


class TreeStore:
    """``<root>/tree/<prefix>/model.pbfm`` plus ``<root>/tree/manifest.json``."""

    def __init__(self, root):
        self.root = Path(root) / "tree"

    def path(self, key: tuple) -> Path:
        return self.root / node_name(key) / "model.pbfm"

    def has(self, key: tuple) -> bool:
        p = self.path(key)
        return p.exists() and p.with_suffix(".pbfm.json").exists()

    def save(self, node: TreeNode) -> None:
        p = self.path(node.key)
        p.parent.mkdir(parents=True, exist_ok=True)
        node.model.save(p)

    def load(self, key: tuple) -> TrainedPinn:
        return TrainedPinn.load(self.path(key))

    def write_manifest(self, tree: TrackTree) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        nodes = {node_name(v.key): {"depth": v.depth, "interval": list(v.interval),
                                    "parent": None if v.parent is None else node_name(v.parent),
                                    "status": v.status} for v in tree.breadth_first()}
        doc = {"n_tracks": tree.n, "scan_speed": tree.scan_speed, "cooling_time": tree.cooling_time,
               "nodes": nodes}
        (self.root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def required_keys(tree: TrackTree, scenarios: Iterable[Scenario] | None) -> set:
    if scenarios is None:
        return set(tree.nodes)
    keys = set()
    for sc in scenarios:
        for k in range(1, len(sc.ids) + 1):
            keys.add(sc.ids[:k])
        if tree.cooling_time is not None:
            keys.add(sc.ids + (COOL,))
    missing = keys - set(tree.nodes)
    if missing:
        raise TreeError(f"scenarios need nodes absent from the tree: {sorted(map(node_name, missing))}")
    return keys


def train_tree(tree: TrackTree, problem: ThermalProblem, cfg: PinnConfig, store_dir=None,
               scenarios: Iterable[Scenario] | None = None, seed: int | None = None) -> TrackTree:
    """Train nodes breadth first, each from its parent's end state.

    Nodes already present in the store are loaded instead of retrained.
    ``scenarios`` restricts training to the prefixes those orderings need.
    """
    store = TreeStore(store_dir) if store_dir is not None else None
    base_seed = cfg.seed if seed is None else seed
    wanted = required_keys(tree, scenarios)
    for node in tree.breadth_first():
        if node.key not in wanted:
            continue
        if node.model is not None:
            continue
        if store is not None and store.has(node.key):
            node.model = store.load(node.key)
            node.status = "degraded" if node.model.degraded else "trained"
            log.info("node %s loaded from store", node_name(node.key))
            continue
        if node.parent is None:
            initial = UniformInitial(problem.initial_temperature)
        else:
            parent = tree.nodes[node.parent]
            if parent.model is None:
                raise TreeError(f"parent {node_name(node.parent)} of {node_name(node.key)} has no model")
            initial = PredecessorInitial(parent.model, node.interval[0])
        node_cfg = _with_seed(cfg, node_seed(base_seed, node.key))
        log.info("training node %s on [%g, %g]", node_name(node.key), *node.interval)
        node.model = train_pinn(problem, tree.scenario(node.prefix), node.interval, node_cfg, initial)
        node.model.metadata["node"] = node_name(node.key)
        node.status = "degraded" if node.model.degraded else "trained"
        if node.model.degraded:
            warnings.warn(f"node {node_name(node.key)} is DEGRADED; continuing", stacklevel=2)
        if store is not None:
            store.save(node)
            store.write_manifest(tree)
    if store is not None:
        store.write_manifest(tree)
    return tree


def _with_seed(cfg: PinnConfig, seed: int) -> PinnConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed)


@dataclass
class ComposedSurrogate:
    """Dispatches t in [t_{i-1}, t_i) to node i; the last interval is closed."""

    scenario: Scenario
    nodes: list  # TreeNode, ordered in time

    @property
    def edges(self) -> np.ndarray:
        return np.array([self.nodes[0].interval[0]] + [v.interval[1] for v in self.nodes])

    @property
    def interval(self) -> tuple[float, float]:
        e = self.edges
        return float(e[0]), float(e[-1])

    def dispatch(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        e = self.edges
        if np.any(t < e[0]) or np.any(t > e[-1] * (1 + 1e-12)):
            raise ValueError(f"query time outside [{e[0]:g}, {e[-1]:g}]")
        return np.clip(np.searchsorted(e, t, side="right") - 1, 0, len(self.nodes) - 1)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 4)
        idx = self.dispatch(X[:, 0])
        out = np.empty(len(X))
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = self.nodes[i].model.predict(X[sel])
        return out


def compose(tree: TrackTree, scenario: Scenario | Sequence[int], cooling: bool = True) -> ComposedSurrogate:
    ids = tuple(scenario.ids if isinstance(scenario, Scenario) else scenario)
    sc = tree.scenario(ids)
    keys = [ids[:k] for k in range(1, len(ids) + 1)]
    if cooling and tree.cooling_time is not None:
        keys.append(ids + (COOL,))
    nodes = []
    for k in keys:
        node = tree.nodes.get(k)
        if node is None or node.model is None:
            raise TreeError(f"node {node_name(k)} is not trained")
        nodes.append(node)
    return ComposedSurrogate(sc, nodes)


def handoff_discontinuity(composed: ComposedSurrogate, probes: np.ndarray) -> list[float]:
    """Per interior boundary, max |T_before - T_after| over spatial probes (N, 3)."""
    probes = np.asarray(probes, dtype=float).reshape(-1, 3)
    out = []
    for a, b in zip(composed.nodes[:-1], composed.nodes[1:]):
        t = a.interval[1]
        X = np.hstack([np.full((len(probes), 1), t), probes])
        out.append(float(np.max(np.abs(a.model.predict(X) - b.model.predict(X)))))
    return out
