"""Experiment configuration, the two-phase pipeline, and deterministic seed sweeps."""

from __future__ import annotations

import csv
import io
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dslr import TRAJECTORY_HEADER, DslrSimulation
from .oracle import Schedule, greedy_coloring, nodes_with_lower_free_slot, verify_feasible
from .rdtdma import RdTdmaConfig, run_phase1, required_slots
from .simcore import ADV, IND, REJECT, REQ, ChannelConfig
from .topology import BROADCAST, Topology, generate_random, interference_graph, mean_two_hop_density, range_for_density


class ConfigError(ValueError):
    pass


class PipelineFailure(RuntimeError):
    """An invariant broke mid-run; ``bundle`` carries what is needed to replay it."""

    def __init__(self, message: str, bundle: dict[str, Any]):
        super().__init__(message)
        self.bundle = bundle


@dataclass
class ExperimentConfig:
    """One experiment cell. ``range`` wins over ``density``; a topology file wins over both."""

    n: int = 50
    area: tuple[float, float] = (250.0, 250.0)
    range: float | None = None
    density: float | None = None
    mode: str = BROADCAST
    topology_file: str | None = None
    per: float = 0.0
    collisions: bool = False
    seeds: list[int] = field(default_factory=lambda: [0])
    S: int | None = None
    unsafe_S: bool = False
    K: float = 0.25
    dynamic: bool = False
    max_attempts: int = 3
    tick_budget: int | None = None
    vs_wait: str = "uniform"
    phase2_rounds: int = 0
    phase2_fixed_point: bool = False
    phase2_max_rounds: int = 500
    phase2_per: float | None = None
    label: str = ""

    def __post_init__(self) -> None:
        self.area = tuple(float(a) for a in self.area)
        self.seeds = [int(s) for s in self.seeds]
        if self.phase2_rounds < 0:
            raise ConfigError("phase2_rounds must be >= 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def key(self) -> str:
        if self.label:
            return self.label
        dens = "file" if self.topology_file else (f"r{self.range:g}" if self.range else f"d{self.density:g}")
        dyn = "dyn" if self.dynamic else "static"
        return f"n{self.n}-{dens}-{self.mode}-per{self.per:g}-{dyn}"

    def topology(self, seed: int) -> Topology:
        if self.topology_file:
            topo = Topology.load(self.topology_file)
            return topo if topo.mode == self.mode else topo.with_mode(self.mode, seed)
        rng = self.range
        if rng is None:
            if self.density is None:
                raise ConfigError("set one of range, density or topology_file")
            rng = range_for_density(self.n, self.density, self.area, seed)
        return generate_random(self.n, self.area, rng, seed, self.mode)


@dataclass
class RunMetrics:
    cell: str
    seed: int
    n: int
    mode: str
    per: float
    density: float
    S: int
    delta_plus_1: int
    phase1_ticks: int
    phase1_rounds_max: int
    phase1_rounds_mean: float
    msgs_req: float
    msgs_ind: float
    msgs_reject: float
    msgs_adv: float
    phase1_sl: int
    phase2_rounds: int
    final_sl: int
    greedy_sl: int
    moves_total: int
    fixed_point: bool
    feasible_at_every_round: bool
    trajectory: list[tuple[int, int, int]] = field(default_factory=list, repr=False)
    schedule: Schedule | None = field(default=None, repr=False)


METRIC_COLUMNS = [f.name for f in fields(RunMetrics) if f.name not in ("trajectory", "schedule")]
CSV_COLUMNS = METRIC_COLUMNS + ["status"]


def _check_S(cfg: ExperimentConfig, topo: Topology) -> int:
    need = required_slots(topo)
    S = cfg.S if cfg.S is not None else need
    if S < need and not cfg.unsafe_S:
        raise ConfigError(f"S={S} is below max two-hop density + 1 = {need}; pass unsafe_S to force it")
    return max(S, 1)


def run_pipeline(cfg: ExperimentConfig, seed: int, topology: Topology | None = None) -> RunMetrics:
    """Phase 1, feasibility check, Phase 2 with per-round checks, then metrics."""
    topo = topology or cfg.topology(seed)
    graph = interference_graph(topo)
    S = _check_S(cfg, topo)
    p1cfg = RdTdmaConfig(
        S=S, K=cfg.K, max_attempts=cfg.max_attempts, dynamic_probabilities=cfg.dynamic,
        vs_wait=cfg.vs_wait, tick_budget=cfg.tick_budget, seed=seed,
    )
    channel = ChannelConfig(per=cfg.per, collisions_enabled=cfg.collisions, seed=seed)
    p1 = run_phase1(topo, p1cfg, channel)
    bad = verify_feasible(p1.schedule, graph)
    if bad:
        raise PipelineFailure(
            f"Phase 1 produced conflicting pairs {bad[:5]}",
            {"seed": seed, "cell": cfg.key, "pairs": bad, "trace_tail": [r.line() for r in p1.engine.trace[-20:]]},
        )
    per2 = cfg.per if cfg.phase2_per is None else cfg.phase2_per
    sim = DslrSimulation(topo, p1.schedule, ChannelConfig(per=per2, seed=seed + 1), graph=graph)
    try:
        if cfg.phase2_fixed_point:
            res = sim.run_to_fixed_point(topo.hop_diameter() + 1, cfg.phase2_max_rounds)
        else:
            res = sim.run(cfg.phase2_rounds)
    except AssertionError as exc:
        raise PipelineFailure(str(exc), {"seed": seed, "cell": cfg.key, "round": sim.round}) from exc
    feasible = all(not verify_feasible(r.schedule, graph) for r in res.trajectory)
    lengths = res.lengths
    if any(b > a for a, b in zip(lengths, lengths[1:])):
        raise PipelineFailure("schedule length grew", {"seed": seed, "cell": cfg.key, "lengths": lengths})
    fixed = not nodes_with_lower_free_slot(res.final.assignment, graph)
    msgs = p1.msgs_per_node
    mean = lambda kind: float(np.mean([c[kind] for c in msgs])) if msgs else 0.0  # noqa: E731
    return RunMetrics(
        cell=cfg.key,
        seed=seed,
        n=topo.n,
        mode=topo.mode,
        per=cfg.per,
        density=round(mean_two_hop_density(topo), 6),
        S=S,
        delta_plus_1=graph.delta + 1,
        phase1_ticks=p1.convergence_ticks,
        phase1_rounds_max=p1.convergence_rounds,
        phase1_rounds_mean=round(float(np.mean(p1.rounds_per_node)), 6),
        msgs_req=round(mean(REQ), 6),
        msgs_ind=round(mean(IND), 6),
        msgs_reject=round(mean(REJECT), 6),
        msgs_adv=round(mean(ADV), 6),
        phase1_sl=p1.schedule.length,
        phase2_rounds=len(res.trajectory) - 1,
        final_sl=res.final.length,
        greedy_sl=greedy_coloring(graph).length,
        moves_total=sum(r.moves for r in res.trajectory),
        fixed_point=fixed,
        feasible_at_every_round=feasible,
        trajectory=[(r.round, r.schedule.length, r.moves) for r in res.trajectory],
        schedule=res.final,
    )


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def metrics_rows(metrics: Iterable[RunMetrics]) -> list[list[str]]:
    return [[_fmt(getattr(m, c)) for c in METRIC_COLUMNS] + ["ok"] for m in metrics]


def metrics_csv(metrics: Iterable[RunMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(metrics_rows(metrics))
    return buf.getvalue()


def trajectory_csv(m: RunMetrics) -> str:
    return TRAJECTORY_HEADER + "".join(f"{r},{sl},{mv}\n" for r, sl, mv in m.trajectory)


@dataclass
class CellOutcome:
    cell: ExperimentConfig
    seed: int
    metrics: RunMetrics | None
    error: str | None = None


def _run_one(args: tuple[ExperimentConfig, int]) -> CellOutcome:
    cfg, seed = args
    try:
        return CellOutcome(cfg, seed, run_pipeline(cfg, seed))
    except Exception as exc:  # recorded per row, the sweep keeps going
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip().replace("\n", " ")
        return CellOutcome(cfg, seed, None, f"error:{detail}")


def run_cells(configs: Sequence[ExperimentConfig], parallelism: int = 1) -> list[CellOutcome]:
    """Run every (cell, seed) pair; results come back in input order whatever the worker count."""
    keys = [c.key for c in configs]
    if len(set(keys)) != len(keys):
        raise ConfigError("cell keys must be unique; set distinct labels")
    jobs = [(c, s) for c in configs for s in c.seeds]
    if parallelism <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_one, jobs))


NUMERIC_AGG = [
    c for c in METRIC_COLUMNS if c not in ("cell", "seed", "mode", "fixed_point", "feasible_at_every_round")
]


def summarize(values: Sequence[float]) -> tuple[float, float, float]:
    """Median, 25th and 75th percentile."""
    a = np.asarray(values, dtype=float)
    return float(np.median(a)), float(np.percentile(a, 25)), float(np.percentile(a, 75))


def sweep_csv(outcomes: Sequence[CellOutcome]) -> str:
    """One row per (cell, seed), then one aggregate row per cell.

    Aggregate rows have seed ``aggregate`` and hold ``median;q1;q3`` in every
    numeric column, computed over the cell's successful runs.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    order: list[str] = []
    by_cell: dict[str, list[RunMetrics]] = {}
    for o in outcomes:
        key = o.cell.key
        if key not in by_cell:
            order.append(key)
            by_cell[key] = []
        if o.metrics is not None:
            w.writerows(metrics_rows([o.metrics]))
            by_cell[key].append(o.metrics)
        else:
            row = {c: "" for c in METRIC_COLUMNS}
            row.update(cell=key, seed=str(o.seed))
            w.writerow([row[c] for c in METRIC_COLUMNS] + [o.error or "error"])
    for key in order:
        ms = by_cell[key]
        row = {c: "" for c in METRIC_COLUMNS}
        row.update(cell=key, seed="aggregate")
        if ms:
            row["mode"] = ms[0].mode
            for c in NUMERIC_AGG:
                med, q1, q3 = summarize([float(getattr(m, c)) for m in ms])
                row[c] = f"{med:.6g};{q1:.6g};{q3:.6g}"
            row["fixed_point"] = _fmt(all(m.fixed_point for m in ms))
            row["feasible_at_every_round"] = _fmt(all(m.feasible_at_every_round for m in ms))
        w.writerow([row[c] for c in METRIC_COLUMNS] + [f"runs={len(ms)}"])
    return buf.getvalue()


def sweep(configs: Sequence[ExperimentConfig], parallelism: int = 1) -> str:
    return sweep_csv(run_cells(configs, parallelism))


def expand(base: ExperimentConfig, **axes: Sequence[Any]) -> list[ExperimentConfig]:
    """Cartesian product of parameter values over a base cell."""
    cells = [base]
    for name, values in axes.items():
        cells = [replace(c, **{name: v}) for c in cells for v in values]
    return cells
