"""``pbf`` command line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config

log = logging.getLogger("pbf")

COMMANDS = ("fd", "pinn", "endeeponet", "sequential", "compose", "eval", "report")


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = replace(cfg, threads=int(args.threads))
    return cfg


def _set_threads(n: int) -> None:
    import torch

    torch.set_num_threads(int(n))


def _scenario(cfg: RunConfig, label: str | None):
    if label is None:
        return cfg.scenarios()[0]
    from .laser import PathError, Scenario

    # any ordered selection of distinct track ids, e.g. "2" or "2-3-1"
    tracks = {t.id: t for t in cfg.tracks()}
    try:
        ids = [int(v) for v in label.split("-")]
        return Scenario(tuple(tracks[i] for i in ids), cfg.laser.scan_speed)
    except (ValueError, KeyError, PathError):
        raise ConfigError(f"unknown scenario {label!r}") from None


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_default))


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _manifest(out: Path, command: str, cfg: RunConfig, extra: dict | None = None, seconds: float | None = None):
    doc = {"command": command, "version": __version__, "config": cfg.to_dict(), "config_hash": cfg.hash(),
           "seed": cfg.seed}
    doc.update(extra or {})
    _write_json(out / "manifest.json", doc)
    if seconds is not None:
        # wall-clock time is the one output that is not reproducible, so it lives apart
        _write_json(out / "timing.json", {"seconds": seconds})


# commands ------------------------------------------------------------------------

def cmd_fd(args, cfg: RunConfig) -> int:
    from .fd import solve
    from .io import write_field_binary, write_field_csv

    out = Path(args.out)
    chosen = [_scenario(cfg, args.scenario)] if args.scenario else cfg.scenarios()
    runs = {}
    start = time.perf_counter()
    for sc in chosen:
        cool = cfg.cooling_time(sc.duration) if args.cooling else None
        end = sc.duration + (cool or 0.0)
        run = solve(cfg.fd_config(sc, end))
        d = out / "fd" / sc.label
        d.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(run.snapshots):
            write_field_binary(s, d / f"snapshot_{i:03d}.pbft")
            write_field_csv(s, d / f"snapshot_{i:03d}.csv")
        runs[sc.label] = {"dt": run.dt, "n_steps": run.n_steps, "times": run.times.tolist(),
                          "peak": [float(s.values.max()) for s in run.snapshots]}
    _manifest(out, "fd", cfg, {"runs": runs}, time.perf_counter() - start)
    return 0


def cmd_pinn(args, cfg: RunConfig) -> int:
    from .pinn import train_pinn, write_trace_csv

    out = Path(args.out)
    sc = _scenario(cfg, args.scenario)
    res = train_pinn(cfg.problem(), sc, (0.0, sc.duration), cfg.pinn_config())
    out.mkdir(parents=True, exist_ok=True)
    res.save(out / "model.pbfm")
    write_trace_csv(res.metadata["trace"], out / "training_trace.csv")
    _manifest(out, "pinn", cfg, {"scenario": sc.label, "weights": res.metadata["weights"],
                                  "status": res.metadata["status"], "degraded": res.degraded},
              res.training_seconds)
    return 0


def cmd_endeeponet(args, cfg: RunConfig) -> int:
    from .operator import train_endeeponet
    from .pinn import write_trace_csv

    out = Path(args.out)
    scen = [_scenario(cfg, args.scenario)] if args.scenario else cfg.scenarios()
    res = train_endeeponet(cfg.problem(), scen, cfg.operator_config())
    res.save(out / "operator")
    write_trace_csv(res.metadata["trace"], out / "training_trace.csv")
    _manifest(out, "endeeponet", cfg, {"scenarios": [s.label for s in scen], "weights": res.metadata["weights"],
                                        "status": res.metadata["status"], "degraded": res.degraded},
              res.training_seconds)
    return 0


def _tree(cfg: RunConfig):
    from .sequential import build_tree

    scen = cfg.scenarios()
    return build_tree(cfg.tracks(), cfg.laser.scan_speed, cfg.cooling_time(scen[0].duration))


def cmd_sequential(args, cfg: RunConfig) -> int:
    from .sequential import TreeStore, train_tree

    out = Path(args.out)
    store = TreeStore(out)
    if store.root.exists() and not args.resume and any(store.root.iterdir()):
        raise ConfigError(f"{store.root} already holds a tree; pass --resume to continue it")
    tree = _tree(cfg)
    scen = [_scenario(cfg, args.scenario)] if args.scenario else cfg.scenarios()
    start = time.perf_counter()
    train_tree(tree, cfg.problem(), cfg.pinn_config(), out, scenarios=scen)
    statuses = {"-".join(map(str, v.key)): v.status for v in tree.breadth_first()}
    _manifest(out, "sequential", cfg, {"scenarios": [s.label for s in scen], "nodes": statuses},
              time.perf_counter() - start)
    return 0


def _load_tree(cfg: RunConfig, root: Path):
    from .sequential import TreeStore

    tree = _tree(cfg)
    store = TreeStore(root)
    for key, node in tree.nodes.items():
        if store.has(key):
            node.model = store.load(key)
            node.status = "degraded" if node.model.degraded else "trained"
    return tree


def cmd_compose(args, cfg: RunConfig) -> int:
    from .evaluation import surrogate_field
    from .fd import Grid
    from .io import write_field_binary
    from .sequential import compose, handoff_discontinuity

    if not args.scenario:
        raise ConfigError("compose needs --scenario, e.g. --scenario 2-3-1")
    out = Path(args.out)
    tree = _load_tree(cfg, out)
    ids = tuple(int(s) for s in args.scenario.split("-"))
    comp = compose(tree, ids)
    rng = np.random.default_rng(cfg.seed)
    wp = cfg.workpiece()
    probes = wp.lower + rng.random((cfg.eval.handoff_probes, 3)) * (wp.upper - wp.lower)
    jumps = handoff_discontinuity(comp, probes)
    d = out / "composed" / comp.scenario.label
    grid = Grid.for_workpiece(wp, cfg.fd.spacing)
    t0, t1 = comp.interval
    n = cfg.fd.snapshots_per_track * len(comp.nodes)
    for k in range(n):
        t = t0 + (t1 - t0) * (k + 1) / n
        d.mkdir(parents=True, exist_ok=True)
        write_field_binary(surrogate_field(comp, grid, t), d / f"snapshot_{k:03d}.pbft")
    _write_json(d / "compose.json", {"scenario": comp.scenario.label,
                                     "nodes": ["-".join(map(str, v.key)) for v in comp.nodes],
                                     "edges": comp.edges.tolist(), "handoff_max_abs_K": jumps})
    return 0


def _load_surrogate(path: Path, cfg: RunConfig, scenario: str | None):
    from .operator import TrainedOperator
    from .pinn import TrainedPinn
    from .sequential import compose

    if path.is_file():
        return TrainedPinn.load(path)
    if (path / "operator" / "operator.pbfm").exists() or (path / "operator.pbfm").exists():
        bundle = TrainedOperator.load(path / "operator" if (path / "operator").exists() else path)
        return bundle.bind(_scenario(cfg, scenario))
    if (path / "tree").exists():
        if not scenario:
            raise ConfigError("a tree surrogate needs --scenario")
        return compose(_load_tree(cfg, path), tuple(int(s) for s in scenario.split("-")))
    if (path / "model.pbfm").exists():
        return TrainedPinn.load(path / "model.pbfm")
    raise ConfigError(f"cannot find a surrogate at {path}")


def _load_reference(path: Path):
    from .fd import FdRun
    from .io import read_field_binary

    files = sorted(path.glob("snapshot_*.pbft"))
    if not files:
        raise ConfigError(f"no snapshot_*.pbft files under {path}")
    snaps = [read_field_binary(f) for f in files]
    return FdRun(snaps, float("nan"), 0)


def cmd_eval(args, cfg: RunConfig) -> int:
    from .evaluation import compare

    if not args.surrogate or not args.reference:
        raise ConfigError("eval needs --surrogate and --reference")
    sur = _load_surrogate(Path(args.surrogate), cfg, args.scenario)
    ref = _load_reference(Path(args.reference))
    lo, hi = getattr(sur, "interval", (ref.times[0], ref.times[-1]))
    keep = [s for s in ref.snapshots if lo - 1e-12 <= s.time <= hi * (1 + 1e-12)]
    ref = type(ref)(keep, ref.dt, ref.n_steps)
    report = compare(sur, ref, cfg.eval.threshold, label=args.scenario or Path(args.surrogate).name)
    out = Path(args.out)
    json_path = out if out.suffix == ".json" else out / "report.json"
    json_path.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(json_path)
    report.to_csv(json_path.with_suffix(".csv"))
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    from .evaluation import EvalReport

    out = Path(args.out)
    reports = sorted(out.rglob("report*.json"))
    if not reports:
        raise ConfigError(f"no report*.json files under {out}")
    rows = []
    for p in reports:
        r = EvalReport.from_json(p)
        mde = r.mean_dim_error
        rows.append([str(p.relative_to(out)), r.label, repr(100 * r.mape), "" if mde is None else repr(100 * mde)])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["report", "label", "MAPE in temperature [%]", "average relative melt-pool error [%]"])
        w.writerows(rows)
    return 0


HANDLERS = {"fd": cmd_fd, "pinn": cmd_pinn, "endeeponet": cmd_endeeponet, "sequential": cmd_sequential,
            "compose": cmd_compose, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbf", description="Thermal surrogates for laser powder bed fusion")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        p.add_argument("--out", default="pbf_out", help="output directory (or report path for eval)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="cap on internal threads (default 1)")
        p.add_argument("--resume", action="store_true", help="continue an interrupted tree")
        p.add_argument("--scenario", help="scenario label such as 2-3-1")
        if name == "fd":
            p.add_argument("--cooling", action="store_true", help="extend the run by the cooling interval")
        if name == "eval":
            p.add_argument("--surrogate")
            p.add_argument("--reference")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if not args.command:
        ap.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        _set_threads(cfg.threads)
        return HANDLERS[args.command](args, cfg)
    except ConfigError as e:
        print(json.dumps({"error": "config", "message": str(e)}), file=sys.stderr)
        return 2
    except Exception as e:  # structured failure for any pipeline error
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
