"""Command-line entry point: topology generation, single phases, pipeline runs, sweeps and analytics."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import analytics
from .dslr import DslrSimulation
from .harness import ConfigError, ExperimentConfig, PipelineFailure, metrics_csv, run_pipeline, sweep, trajectory_csv
from .oracle import Schedule, verify_feasible
from .rdtdma import Phase1Deadlock, Phase1Timeout, RdTdmaConfig, required_slots, run_phase1
from .simcore import ChannelConfig
from .topology import MODES, Topology, generate_random, interference_graph, range_for_density


def _write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _topology_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("topology")
    g.add_argument("--topology-file", help="JSON topology written by 'topo gen'")
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--area", type=float, nargs=2, default=(250.0, 250.0), metavar=("W", "H"))
    g.add_argument("--range", type=float, help="radio range in meters")
    g.add_argument("--density", type=float, help="target mean two-hop neighborhood size (sets the range)")
    g.add_argument("--mode", choices=MODES, default=None)
    g.add_argument("--seed", type=int, default=0)


def _load_topology(args: argparse.Namespace) -> Topology:
    mode = args.mode
    if args.topology_file:
        topo = Topology.load(args.topology_file)
        return topo if mode in (None, topo.mode) else topo.with_mode(mode, args.seed)
    rng = args.range
    if rng is None:
        if args.density is None:
            raise ConfigError("give --topology-file, --range or --density")
        rng = range_for_density(args.n, args.density, tuple(args.area), args.seed)
    return generate_random(args.n, tuple(args.area), rng, args.seed, mode or "broadcast")


def cmd_topo_gen(args: argparse.Namespace) -> int:
    topo = _load_topology(args)
    _write(args.out, topo.to_json() + "\n")
    return 0


def cmd_phase1(args: argparse.Namespace) -> int:
    topo = _load_topology(args)
    need = required_slots(topo)
    S = args.S if args.S is not None else need
    if S < need and not args.unsafe_S:
        raise ConfigError(f"S={S} is below the safe minimum {need}; add --unsafe-S to force it")
    cfg = RdTdmaConfig(
        S=S, K=args.K, max_attempts=args.max_attempts, dynamic_probabilities=args.dynamic,
        vs_wait=args.vs_wait, tick_budget=args.tick_budget, seed=args.seed,
    )
    channel = ChannelConfig(per=args.per, collisions_enabled=args.collisions, seed=args.seed)
    res = run_phase1(topo, cfg, channel, record_trace=bool(args.trace))
    if args.trace:
        with open(args.trace, "w") as fh:
            res.engine.dump_trace(fh)
    if args.schedule_out:
        res.schedule.save(args.schedule_out)
    bad = verify_feasible(res.schedule, interference_graph(topo))
    print(
        f"S={S} convergence_ticks={res.convergence_ticks} rounds_max={res.convergence_rounds} "
        f"schedule_length={res.schedule.length} all_terminated={res.all_terminated} conflicts={len(bad)}"
    )
    return 1 if bad else 0


def cmd_phase2(args: argparse.Namespace) -> int:
    topo = _load_topology(args)
    sched = Schedule.load(args.schedule_in)
    channel = ChannelConfig(per=args.per, seed=args.seed)
    sim = DslrSimulation(topo, sched, channel, record_trace=bool(args.trace))
    if args.fixed_point:
        res = sim.run_to_fixed_point(topo.hop_diameter() + 1, args.phase2_rounds)
    else:
        res = sim.run(args.phase2_rounds)
    if args.trace:
        with open(args.trace, "w") as fh:
            sim.engine.dump_trace(fh)
    if args.emit_trajectory:
        _write(args.emit_trajectory, res.trajectory_csv())
    if args.schedule_out:
        res.final.save(args.schedule_out)
    print(f"rounds={len(res.trajectory) - 1} initial_length={res.lengths[0]} final_length={res.final.length}")
    return 0


_PIPELINE_FLAGS = {
    "n": "n", "range": "range", "density": "density", "mode": "mode", "topology_file": "topology_file",
    "per": "per", "S": "S", "K": "K", "max_attempts": "max_attempts", "tick_budget": "tick_budget",
    "vs_wait": "vs_wait", "phase2_rounds": "phase2_rounds",
}


def _pipeline_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    for flag, key in _PIPELINE_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            doc[key] = v
    if args.area is not None:
        doc["area"] = list(args.area)
    if args.seeds is not None:
        doc["seeds"] = args.seeds
    for flag in ("dynamic", "unsafe_S", "fixed_point"):
        if getattr(args, flag):
            doc["phase2_fixed_point" if flag == "fixed_point" else flag] = True
    if args.collisions:
        doc["collisions"] = True
    return ExperimentConfig.from_dict(doc)


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    metrics = [run_pipeline(cfg, s) for s in cfg.seeds]
    _write(args.out, metrics_csv(metrics))
    if args.emit_trajectory:
        _write(args.emit_trajectory, "".join(trajectory_csv(m) for m in metrics[:1]))
    if args.schedule_out:
        metrics[0].schedule.save(args.schedule_out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.config).read_text())
    cells = doc["cells"] if isinstance(doc, dict) else doc
    configs = [ExperimentConfig.from_dict(c) for c in cells]
    _write(args.out, sweep(configs, args.parallelism))
    return 0


def cmd_analytics(args: argparse.Namespace) -> int:
    rows = analytics.analytics_rows(args.S, args.t_cs, args.t_req)
    _write(args.out, "\n".join(rows) + "\n")
    for S in args.bmin or ():
        for line in analytics.verify_bmin_structure(S).lines():
            print(line, file=sys.stderr)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    topo = _load_topology(args)
    sched = Schedule.load(args.schedule_in)
    bad = verify_feasible(sched, interference_graph(topo))
    if bad:
        for i, j in bad:
            print(f"conflict {i} {j} slot {sched[i]}")
        return 1
    print(f"feasible: {len(sched)} nodes, schedule length {sched.length}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twophase-tdma", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topo", help="topology tools").add_subparsers(dest="action", required=True)
    p = topo.add_parser("gen", help="generate a random topology")
    _topology_args(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_topo_gen)

    ph1 = sub.add_parser("phase1", help="slot acquisition").add_subparsers(dest="action", required=True)
    p = ph1.add_parser("run")
    _topology_args(p)
    p.add_argument("--S", type=int)
    p.add_argument("--unsafe-S", action="store_true", help="allow S below max two-hop density + 1")
    p.add_argument("--K", type=float, default=0.25)
    p.add_argument("--dynamic", action="store_true", help="dynamic slot probabilities")
    p.add_argument("--max-attempts", type=int, default=3)
    p.add_argument("--tick-budget", type=int)
    p.add_argument("--vs-wait", choices=("uniform", "slot-index"), default="uniform")
    p.add_argument("--per", type=float, default=0.0)
    p.add_argument("--collisions", action="store_true", help="lose same-tick transmissions audible at one receiver")
    p.add_argument("--trace", help="write the event trace here")
    p.add_argument("--schedule-out")
    p.set_defaults(func=cmd_phase1)

    ph2 = sub.add_parser("phase2", help="schedule compaction").add_subparsers(dest="action", required=True)
    p = ph2.add_parser("run")
    _topology_args(p)
    p.add_argument("--schedule-in", required=True)
    p.add_argument("--phase2-rounds", type=int, default=40)
    p.add_argument("--fixed-point", action="store_true", help="stop after D+1 quiet rounds (rounds is the cap)")
    p.add_argument("--per", type=float, default=0.0)
    p.add_argument("--emit-trajectory", help="CSV of round,schedule_length,moves_this_round")
    p.add_argument("--trace")
    p.add_argument("--schedule-out")
    p.set_defaults(func=cmd_phase2)

    pl = sub.add_parser("pipeline", help="both phases").add_subparsers(dest="action", required=True)
    p = pl.add_parser("run")
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--topology-file")
    p.add_argument("--n", type=int)
    p.add_argument("--area", type=float, nargs=2, metavar=("W", "H"))
    p.add_argument("--range", type=float)
    p.add_argument("--density", type=float)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--per", type=float)
    p.add_argument("--collisions", action="store_true", help="lose same-tick transmissions audible at one receiver")
    p.add_argument("--S", type=int)
    p.add_argument("--unsafe-S", action="store_true")
    p.add_argument("--K", type=float)
    p.add_argument("--dynamic", action="store_true")
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--tick-budget", type=int)
    p.add_argument("--vs-wait", choices=("uniform", "slot-index"))
    p.add_argument("--phase2-rounds", type=int)
    p.add_argument("--fixed-point", action="store_true")
    p.add_argument("--out", default="-", help="metrics CSV")
    p.add_argument("--emit-trajectory", help="trajectory CSV of the first seed")
    p.add_argument("--schedule-out", help="final schedule of the first seed")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="run a list of experiment cells")
    p.add_argument("--config", required=True, help='JSON list of cells or {"cells": [...]}')
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analytics", help="closed-form bounds as CSV")
    p.add_argument("--S", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    p.add_argument("--t-cs", type=float, default=0.0)
    p.add_argument("--t-req", type=float, default=1.0)
    p.add_argument("--bmin", type=int, nargs="*", help="also search worst-case contention matrices for these S")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_analytics)

    p = sub.add_parser("verify", help="check a schedule against a topology")
    _topology_args(p)
    p.add_argument("--schedule-in", required=True)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, Phase1Timeout, Phase1Deadlock, PipelineFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
