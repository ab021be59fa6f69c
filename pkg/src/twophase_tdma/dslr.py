"""Phase 2: round-based compaction of a feasible schedule.

Each round has four frames of ``F`` slots (``F`` = input schedule length). A
node transmits one HELLO per frame in the slot it holds in the input
schedule, so the physical timing never changes while the logical slots
shrink. Frames carry, in order: the node's logical slot, its receiver
status vector, its first-free slot, and maxFree aggregates. Moves take
effect at the round boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .oracle import Schedule, is_free, verify_feasible
from .simcore import HELLO, ChannelConfig, Engine, Message
from .topology import InterferenceGraph, Topology, interference_graph

FREE, BY_SENDER, BY_OTHER, UNKNOWN = 0, 1, 2, 3

TRAJECTORY_HEADER = "round,schedule_length,moves_this_round\n"


class Phase2Violation(AssertionError):
    pass


@dataclass(frozen=True)
class HelloPayload:
    """``body`` is the slot (frame 1), RV (frame 2), FF (frame 3) or maxFree pairs (frame 4).

    ``complete`` travels with frame 4: the sender heard every neighbor's
    frame-3 HELLO, so its maxFree list covers its whole neighborhood.
    """

    frame: int
    body: Any
    complete: bool = True


class DslrNode:
    def __init__(
        self,
        node_id: int,
        neighbors: Sequence[int],
        receivers: Sequence[int],
        senders: Sequence[int],
        slot: int,
        F: int,
    ):
        if not 1 <= slot <= F:
            raise ValueError(f"slot {slot} outside 1..{F}")
        self.id = node_id
        self.neighbors = tuple(sorted(neighbors))
        self.receivers = frozenset(receivers)
        self.senders = frozenset(senders)
        self.F = F
        self.tx_slot = slot
        self.slot = slot
        self.sv: dict[int, int] = {}
        self.sv_old: dict[int, int] = {}
        self.rv = np.zeros(F + 1, dtype=np.int8)
        self.nrv: dict[int, np.ndarray] = {}
        self.ffv: dict[int, int] = {}
        self.max_sv = np.zeros(F + 1, dtype=np.int64)
        self.ff = 0
        self.heard_ff = False
        self.frame4_from: dict[int, bool] = {}

    # rv, nrv and max_sv are indexed by slot id; index 0 is unused

    def begin_round(self) -> int | None:
        """Apply the pending move if allowed, then reset round state. Returns the new slot on a move."""
        moved = None
        if self.ff and self.max_sv[self.ff] <= self.slot and self.informed():
            if self.ff >= self.slot:
                raise Phase2Violation(f"node {self.id} would move up from {self.slot} to {self.ff}")
            self.slot = moved = self.ff
        self.sv_old.update({j: s for j, s in self.sv.items() if s})
        self.sv = {}
        self.rv[:] = FREE
        self.nrv = {}
        self.ffv = {}
        self.max_sv[:] = 0
        self.ff = 0
        self.heard_ff = False
        self.frame4_from = {}
        return moved

    def informed(self) -> bool:
        """Every neighbor's maxFree list arrived and was built from a full frame 3."""
        return (
            self.heard_ff
            and len(self.frame4_from) == len(self.neighbors)
            and all(self.frame4_from.values())
        )

    def receive_hello(self, sender: int, hello: HelloPayload) -> None:
        if hello.frame == 1:
            self.sv[sender] = int(hello.body)
        elif hello.frame == 2:
            self.nrv[sender] = hello.body
        elif hello.frame == 3:
            self.ffv[sender] = int(hello.body)
        elif hello.frame == 4:
            self.merge_max_free(hello.body)
            self.frame4_from[sender] = hello.complete
        else:
            raise ValueError(f"bad frame {hello.frame}")

    def compute_rv(self) -> np.ndarray:
        """Status of every slot as seen by this node in its role as a receiver."""
        rv = np.zeros(self.F + 1, dtype=np.int8)
        for j in self.neighbors:
            s = self.sv.get(j)
            if s is None:
                old = self.sv_old.get(j, self.F)
                rv[1 : old + 1] = np.maximum(rv[1 : old + 1], UNKNOWN)
        for j in self.neighbors:
            s = self.sv.get(j)
            if s is None:
                continue
            if j in self.senders:
                rv[s] = BY_SENDER
            elif rv[s] == FREE:
                rv[s] = BY_OTHER
        self.rv = rv
        return rv

    def _neighbor_rv(self, j: int) -> np.ndarray:
        got = self.nrv.get(j)
        if got is None:
            return np.ones(self.F + 1, dtype=np.int8)
        return got

    def free_slots(self) -> list[int]:
        """Slots below the current one that no conflicting node can be using."""
        if self.slot <= 1:
            return []
        ok = np.ones(self.F + 1, dtype=bool)
        ok[0] = False
        ok[self.slot :] = False
        for j in self.neighbors:
            row = self._neighbor_rv(j)
            if j in self.receivers:
                ok &= row == FREE
            else:
                ok &= (row == FREE) | (row == BY_OTHER)
            if j in self.receivers or j in self.senders:
                s = self.sv.get(j)
                if s is not None:
                    ok[s] = False
                else:
                    # unheard this round: it may sit anywhere at or below its last slot
                    ok[1 : self.sv_old.get(j, self.F) + 1] = False
        return np.flatnonzero(ok).tolist()

    def compute_ff(self) -> int:
        free = self.free_slots()
        self.ff = free[0] if free else 0
        return self.ff

    def compute_max_free(self) -> list[tuple[int, int]]:
        """(first-free slot, largest slot among self and neighbors sharing it)."""
        best: dict[int, int] = {}
        entries = list(self.ffv.items()) + [(self.id, self.ff)]
        for j, f in entries:
            if not f:
                continue
            s = self.slot if j == self.id else self.sv.get(j, self.sv_old.get(j, self.F))
            best[f] = max(best.get(f, 0), s)
        self.heard_ff = len(self.ffv) == len(self.neighbors)
        pairs = sorted(best.items())
        self.merge_max_free(pairs)
        return pairs

    def merge_max_free(self, pairs: Sequence[tuple[int, int]]) -> None:
        for s1, s2 in pairs:
            if s1 < s2 and self.max_sv[s1] < s2:
                self.max_sv[s1] = s2

    def hello(self, frame: int) -> HelloPayload:
        if frame == 1:
            return HelloPayload(1, self.slot)
        if frame == 2:
            return HelloPayload(2, self.compute_rv().copy())
        if frame == 3:
            return HelloPayload(3, self.compute_ff())
        if frame == 4:
            pairs = tuple(self.compute_max_free())
            return HelloPayload(4, pairs, complete=self.heard_ff)
        raise ValueError(f"bad frame {frame}")


@dataclass
class RoundRecord:
    round: int
    schedule: Schedule
    moves: int


@dataclass
class Phase2Result:
    trajectory: list[RoundRecord]
    F: int
    engine: Engine | None = field(default=None, repr=False)

    @property
    def final(self) -> Schedule:
        return self.trajectory[-1].schedule

    @property
    def lengths(self) -> list[int]:
        return [r.schedule.length for r in self.trajectory]

    def trajectory_csv(self) -> str:
        return TRAJECTORY_HEADER + "".join(f"{r.round},{r.schedule.length},{r.moves}\n" for r in self.trajectory)


class DslrSimulation:
    """Drives ``DslrNode`` instances over the engine, one HELLO per node per frame.

    Collisions are not modeled here: HELLOs go out in the slots of a
    feasible input schedule, so intended receivers never see two at once.
    Only the channel's random loss and scripted drops apply.
    """

    def __init__(
        self,
        topology: Topology,
        schedule: Schedule | Sequence[int],
        channel: ChannelConfig | None = None,
        *,
        graph: InterferenceGraph | None = None,
        check: bool = True,
        record_trace: bool = False,
    ):
        schedule = schedule if isinstance(schedule, Schedule) else Schedule.of(schedule)
        self.topology = topology
        self.graph = graph or interference_graph(topology)
        bad = verify_feasible(schedule, self.graph)
        if bad:
            raise ValueError(f"input schedule is infeasible, conflicting pairs: {bad[:5]}")
        ch = channel or ChannelConfig()
        ch = ChannelConfig(per=ch.per, collisions_enabled=False, seed=ch.seed, drop=ch.drop)
        self.lossless = ch.per == 0.0 and ch.drop is None
        self.F = schedule.length
        self.check = check
        self.nodes = [
            DslrNode(i, topology.adjacency[i], topology.receivers[i], topology.senders[i], schedule[i], self.F)
            for i in topology.nodes
        ]
        self.engine = Engine(topology.adjacency, ch, record_trace=record_trace)
        for i in topology.nodes:
            self.engine.attach(i, self._handler(i))
        self.round = 0
        self.trajectory = [RoundRecord(0, schedule, 0)]

    def _handler(self, i: int) -> Callable[[Message], None]:
        node = self.nodes[i]
        return lambda m: node.receive_hello(m.sender, m.payload)

    def _transmit(self, i: int, frame: int) -> None:
        hello = self.nodes[i].hello(frame)
        if frame == 3 and self.check:
            self._check_ff(i)
        self.engine.broadcast(Message(HELLO, i, hello, self.engine.now))

    def _check_ff(self, i: int) -> None:
        node = self.nodes[i]
        slots = [nd.slot for nd in self.nodes]
        if node.ff and not is_free(i, node.ff, slots, self.graph):
            raise Phase2Violation(f"node {i} took slot {node.ff} as free but a conflicting node uses it")
        if self.lossless:
            truth = [s for s in range(1, node.slot) if is_free(i, s, slots, self.graph)]
            if truth != node.free_slots():
                raise Phase2Violation(f"node {i}: local free slots disagree with the oracle")

    def step(self) -> RoundRecord:
        """Run one full round and apply its moves at the closing boundary."""
        eng, F = self.engine, self.F
        start = eng.now
        for i, node in enumerate(self.nodes):
            for frame in (1, 2, 3, 4):
                eng.schedule(start + (frame - 1) * F + node.tx_slot - 1, i, self._transmit, i, frame)
        eng.run(until=start + 4 * F)
        before = [nd.slot for nd in self.nodes]
        moved = {i: s for i, nd in enumerate(self.nodes) if (s := nd.begin_round()) is not None}
        self.round += 1
        sched = Schedule.of(nd.slot for nd in self.nodes)
        if self.check:
            self._check_round(before, moved, sched)
        rec = RoundRecord(self.round, sched, len(moved))
        self.trajectory.append(rec)
        return rec

    def _check_round(self, before: list[int], moved: dict[int, int], sched: Schedule) -> None:
        for i, s in moved.items():
            if s >= before[i]:
                raise Phase2Violation(f"node {i} moved up from {before[i]} to {s}")
            for j in self.graph.adjacency[i]:
                if moved.get(j) == s:
                    raise Phase2Violation(f"conflicting nodes {i} and {j} both moved to slot {s}")
        bad = verify_feasible(sched, self.graph)
        if bad:
            raise Phase2Violation(f"round {self.round} produced conflicts {bad[:5]}")

    def run(self, rounds: int) -> Phase2Result:
        if rounds < 0:
            raise ValueError("rounds must be >= 0")
        for _ in range(rounds):
            self.step()
        return Phase2Result(list(self.trajectory), self.F, self.engine)

    def run_to_fixed_point(self, quiet_rounds: int, max_rounds: int) -> Phase2Result:
        """Run until ``quiet_rounds`` consecutive rounds without a move, or ``max_rounds``."""
        quiet = 0
        while self.round < max_rounds and quiet < quiet_rounds:
            quiet = quiet + 1 if self.step().moves == 0 else 0
        return Phase2Result(list(self.trajectory), self.F, self.engine)


def run_phase2(
    topology: Topology,
    schedule_in: Schedule | Sequence[int],
    rounds: int,
    channel: ChannelConfig | None = None,
    *,
    check: bool = True,
    record_trace: bool = False,
) -> Phase2Result:
    return DslrSimulation(topology, schedule_in, channel, check=check, record_trace=record_trace).run(rounds)
