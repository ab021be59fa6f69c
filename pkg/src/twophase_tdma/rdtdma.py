"""Phase 1: randomized distributed slot acquisition (RD-TDMA).

Every node runs a four-state machine. In CS it samples a slot from its
slot-probability vector, in VS it asks all one-hop neighbors for that slot
with a REQ and collects grants, in SS it owns the slot and announces it with
IND messages, and in TS it has confirmed that every neighbor knows its slot
and falls silent.

Grants, occupancy and (optionally) slot-probability snapshots ride on every
message a node sends. A node that owes a grant but has nothing to send emits
a standalone ADV carrying the same vectors.
"""

from __future__ import annotations

import enum
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .oracle import Schedule
from .simcore import ADV, IND, REJECT, REQ, ChannelConfig, Engine, Message
from .topology import Topology, two_hop

_EPS = 1e-12


class NodeState(str, enum.Enum):
    CS = "CS"
    VS = "VS"
    SS = "SS"
    TS = "TS"


CS, VS, SS, TS = NodeState.CS, NodeState.VS, NodeState.SS, NodeState.TS

GRANT = "GRANT"
REFUSE = "REJECT"
DUPLICATE = "DUPLICATE"


class ProtocolViolation(AssertionError):
    pass


class Phase1Deadlock(RuntimeError):
    """A node has every slot occupied around it; S is too small."""


class Phase1Timeout(RuntimeError):
    def __init__(self, message: str, states: list[str], slots: list[int | None], tick: int):
        super().__init__(message)
        self.states = states
        self.slots = slots
        self.tick = tick


@dataclass(frozen=True)
class ProbSnapshot:
    stamp: int
    p: np.ndarray
    scheduled: bool = False


@dataclass(frozen=True)
class Payload:
    """Control fields shared by REQ, IND, REJECT and ADV.

    ``slot`` is the requested slot of a REQ or the refused slot of a REJECT;
    ``holder_slot`` is the sender's own slot once it is scheduled.
    ``gv`` and ``ov`` mirror the sender's local vectors (index s-1 for slot s).
    """

    gv: tuple[int | None, ...]
    ov: np.ndarray | tuple[bool, ...]
    slot: int | None = None
    target: int | None = None
    holder_slot: int | None = None
    probs: Mapping[int, ProbSnapshot] | None = None


ReqPayload = Payload


def sample_slot(p: np.ndarray, rng: random.Random) -> int:
    """Draw a slot id (1-based) with probability p[s-1]."""
    u = rng.random() * float(p.sum())
    acc = 0.0
    last = 0
    for k, w in enumerate(p):
        if w <= 0.0:
            continue
        acc += w
        last = k
        if u < acc:
            return k + 1
    return last + 1


class RdTdmaNode:
    def __init__(
        self,
        node_id: int,
        neighbors: Sequence[int],
        two_hop_set: Sequence[int],
        S: int,
        *,
        K: float = 0.25,
        dynamic: bool = False,
        rng: random.Random | None = None,
    ):
        if S < 1:
            raise ValueError("S must be >= 1")
        self.id = node_id
        self.neighbors = tuple(sorted(neighbors))
        self._order = {j: k for k, j in enumerate(self.neighbors)}
        self.two_hop = frozenset(two_hop_set)
        self.S = S
        self.K = K
        self.dynamic = dynamic
        self.rng = rng or random.Random(node_id)

        self.state = CS
        self.p = np.full(S, 1.0 / S)
        self.gv: list[int | None] = [None] * S
        self._granted = np.zeros(S, dtype=bool)
        self._grants_to: dict[int, set[int]] = {}
        self.ov = np.zeros(S, dtype=bool)
        # slots held by nodes two hops away, learned from relayed OV bits
        self.far = np.zeros(S, dtype=bool)
        self.rgv = np.zeros(len(self.neighbors), dtype=bool)
        self.indv = np.zeros(len(self.neighbors), dtype=bool)
        self.slot: int | None = None
        self.pending_slot: int | None = None
        self.attempts = 0
        self.rounds = 0
        self.vs_since = -1
        self.holders: dict[int, int] = {}

        self.known: dict[int, ProbSnapshot] = {}
        self._prior = np.full(S, 1.0 / S)
        self._adv_sum = self._prior * len(self.two_hop)

    def order(self, j: int) -> int:
        return self._order[j]

    # ------------------------------------------------------------------ probabilities

    def blocked(self) -> np.ndarray:
        return self.ov | self.far | self._granted

    def available(self) -> np.ndarray:
        return ~self.blocked()

    def _refresh(self, restored: Sequence[int] = ()) -> None:
        """Zero blocked slots and redistribute their mass over the rest."""
        if self.state in (SS, TS):
            return
        avail = self.available()
        if self.state == VS and self.pending_slot is not None:
            avail[self.pending_slot - 1] = True
        k = int(avail.sum())
        if k == 0:
            self.p[:] = 0.0
            return
        if not self.dynamic:
            self.p = avail / k
            return
        p = np.where(avail, self.p, 0.0)
        for s in restored:
            if avail[s - 1]:
                p[s - 1] = 1.0 / k
        total = p.sum()
        self.p = p / total if total > _EPS else avail / k

    def update_probabilities(self, advertised: Mapping[int, ProbSnapshot] | None = None) -> np.ndarray:
        """Pull this node's slot probabilities toward a zero probability budget.

        budget(s) = 1 - (sum of two-hop neighbors' P_j(s) + own P(s)); a slot
        any scheduled two-hop neighbor owns drops to 0, every other slot moves
        by K * budget(s). The result is clamped to [0, 1] and renormalized.
        """
        if advertised:
            self.absorb_snapshots(advertised)
        if self.state not in (CS, VS):
            return self.p
        budget = 1.0 - (self._adv_sum + self.p)
        p = np.clip(self.p + self.K * budget, 0.0, 1.0)
        avail = self.available()
        if self.state == VS and self.pending_slot is not None:
            avail[self.pending_slot - 1] = True
        p[~avail] = 0.0
        total = p.sum()
        k = int(avail.sum())
        if total > _EPS:
            self.p = p / total
        else:
            self.p = avail / k if k else np.zeros(self.S)
        return self.p

    def absorb_snapshots(self, advertised: Mapping[int, ProbSnapshot]) -> int:
        """Record snapshots newer than the ones held; returns how many were new."""
        fresh = 0
        for j, snap in advertised.items():
            if j == self.id or j not in self.two_hop:
                continue
            old = self.known.get(j)
            if old is not None and old.stamp >= snap.stamp:
                continue
            self._adv_sum += snap.p - (old.p if old is not None else self._prior)
            self.known[j] = snap
            fresh += 1
            if snap.scheduled:
                s = int(np.argmax(snap.p)) + 1
                if j in self._order:
                    self.ov[s - 1] = True
                else:
                    self.far[s - 1] = True
                self._check_pending_lost()
        return fresh

    def snapshot(self, stamp: int) -> ProbSnapshot:
        return ProbSnapshot(stamp, self.p.copy(), self.state in (SS, TS))

    # ------------------------------------------------------------------ state machine

    def enter_cs(self, now: int = 0) -> int | None:
        """Sample a slot and move to VS; ``None`` when every slot is blocked for now."""
        if self.state != CS:
            raise ProtocolViolation(f"node {self.id} sampled a slot outside CS")
        if float(self.p.sum()) <= _EPS:
            self._refresh()
        if float(self.p.sum()) <= _EPS:
            if bool((self.ov | self.far).all()):
                raise Phase1Deadlock(f"node {self.id}: all {self.S} slots occupied nearby")
            return None
        s = sample_slot(self.p, self.rng)
        self.rounds += 1
        self.state = VS
        self.pending_slot = s
        self.attempts = 0
        self.rgv[:] = False
        self.vs_since = now
        return s

    def back_to_cs(self) -> None:
        self.state = CS
        self.pending_slot = None
        self.attempts = 0
        self.rgv[:] = False
        self._refresh()

    def grants_complete(self) -> bool:
        return self.state == VS and bool(self.rgv.all())

    def handle_grant_progress(self) -> bool:
        """Enter SS once every neighbor has granted the pending slot."""
        if not self.grants_complete():
            return False
        s = self.pending_slot
        self.state = SS
        self.slot = s
        self.pending_slot = None
        self.p = np.zeros(self.S)
        self.p[s - 1] = 1.0
        return True

    def indv_complete(self) -> bool:
        return self.state == SS and bool(self.indv.all())

    def enter_ts(self) -> None:
        if not self.indv_complete():
            raise ProtocolViolation(f"node {self.id} entered TS before every neighbor confirmed")
        self.state = TS

    def _grant(self, k: int, sender: int) -> None:
        self.gv[k] = sender
        self._granted[k] = True
        self._grants_to.setdefault(sender, set()).add(k + 1)

    def _revoke(self, sender: int, keep: int | None) -> list[int]:
        held = self._grants_to.get(sender)
        if not held:
            return []
        freed = sorted(s for s in held if s != keep)
        for s in freed:
            self.gv[s - 1] = None
            self._granted[s - 1] = False
            held.discard(s)
        return freed

    def handle_req(self, sender: int, slot: int) -> str:
        """Decide a REQ for ``slot`` from a one-hop neighbor: GRANT, REJECT or DUPLICATE."""
        if sender not in self._order:
            raise ProtocolViolation(f"node {self.id} got a REQ from non-neighbor {sender}")
        freed = self._revoke(sender, keep=slot)
        k = slot - 1
        if self.state in (SS, TS) and self.slot == slot:
            decision = REFUSE
        elif self.state == VS and self.pending_slot == slot:
            decision = REFUSE
        elif self.gv[k] == sender:
            decision = DUPLICATE
        elif self.gv[k] is not None:
            decision = REFUSE
        else:
            self._grant(k, sender)
            decision = GRANT
        self._refresh(restored=freed)
        return decision

    def handle_ind_and_ov(
        self,
        sender: int,
        ov: Sequence[bool] = (),
        holder_slot: int | None = None,
    ) -> None:
        """Absorb a neighbor's own slot (if scheduled) and its occupied-vector."""
        if holder_slot is not None:
            if self.state in (SS, TS) and self.slot == holder_slot:
                raise ProtocolViolation(
                    f"neighbors {self.id} and {sender} both hold slot {holder_slot}"
                )
            k = holder_slot - 1
            self.holders[sender] = holder_slot
            self.ov[k] = True
            if self.gv[k] is None:
                self._grant(k, sender)
            freed = self._revoke(sender, keep=holder_slot)
        else:
            freed = []
        if len(ov):
            ovs = ov if isinstance(ov, np.ndarray) else np.asarray(ov, dtype=bool)
            if self.state in (SS, TS) and ovs[self.slot - 1]:
                if holder_slot is not None:
                    self.indv[self._order[sender]] = True
                ovs = ovs.copy()
                ovs[self.slot - 1] = False
            self.far |= ovs & ~self.ov
        self._check_pending_lost()
        self._refresh(restored=freed)

    def _check_pending_lost(self) -> None:
        if self.state == VS and self.pending_slot is not None:
            k = self.pending_slot - 1
            if self.ov[k] or self.far[k]:
                self.back_to_cs()

    def absorb_grants(self, sender: int, gv: Sequence[int | None], tx_time: int) -> None:
        if self.state != VS or not len(gv):
            return
        # grants sent before the current VS episode began may be stale
        if tx_time >= self.vs_since and gv[self.pending_slot - 1] == self.id:
            self.rgv[self._order[sender]] = True

    def handle_reject(self, payload: Payload, tx_time: int) -> bool:
        if (
            payload.target == self.id
            and self.state == VS
            and payload.slot == self.pending_slot
            and tx_time >= self.vs_since
        ):
            self.back_to_cs()
            return True
        return False

    def payload(self, stamp: int, **fields) -> Payload:
        probs = None
        if self.dynamic:
            probs = {self.id: self.snapshot(stamp)}
            for j in self.neighbors:
                snap = self.known.get(j)
                if snap is not None:
                    probs[j] = snap
        return Payload(
            gv=tuple(self.gv),
            ov=self.ov.copy(),
            holder_slot=self.slot if self.state in (SS, TS) else None,
            probs=probs,
            **fields,
        )

    def check_invariants(self) -> None:
        p = self.p
        if np.any(p < -_EPS) or np.any(p > 1 + _EPS):
            raise ProtocolViolation(f"node {self.id}: probability out of [0, 1]")
        total = float(p.sum())
        if total > _EPS and abs(total - 1.0) > 1e-9:
            raise ProtocolViolation(f"node {self.id}: probabilities sum to {total}")
        if self.state in (SS, TS):
            if self.slot is None or p[self.slot - 1] != 1.0 or np.count_nonzero(p) != 1:
                raise ProtocolViolation(f"node {self.id}: scheduled node without one-hot P")
        else:
            for k, g in enumerate(self.gv):
                if g is not None and p[k] != 0.0 and self.pending_slot != k + 1:
                    raise ProtocolViolation(f"node {self.id}: granted slot {k + 1} still has mass")
            if np.any(p[self.ov] != 0.0):
                raise ProtocolViolation(f"node {self.id}: occupied slot still has mass")
        if self.state == TS and not self.indv.all():
            raise ProtocolViolation(f"node {self.id}: TS with unconfirmed neighbors")


@dataclass
class RdTdmaConfig:
    S: int
    K: float = 0.25
    max_attempts: int = 3
    dynamic_probabilities: bool = False
    vs_wait: str = "uniform"
    tick_budget: int | None = None
    tail_ticks: int | None = None
    seed: int = 0
    check_invariants: bool = False

    def __post_init__(self) -> None:
        if self.vs_wait not in ("uniform", "slot-index"):
            raise ValueError("vs_wait must be 'uniform' or 'slot-index'")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def budget(self) -> int:
        return self.tick_budget if self.tick_budget is not None else 2000 * self.S + 5000

    def tail(self) -> int:
        return self.tail_ticks if self.tail_ticks is not None else 20 * self.S + 20


@dataclass
class Phase1Result:
    schedule: Schedule
    S: int
    convergence_ticks: int
    end_tick: int
    rounds_per_node: list[int]
    msgs_per_node: list[Counter]
    ss_time: list[int]
    ts_time: list[int | None]
    engine: Engine = field(repr=False)

    @property
    def convergence_rounds(self) -> int:
        return max(self.rounds_per_node, default=0)

    @property
    def all_terminated(self) -> bool:
        return all(t is not None for t in self.ts_time)

    def mean_msgs(self, kind: str | None = None) -> float:
        if not self.msgs_per_node:
            return 0.0
        if kind is None:
            return float(np.mean([sum(c.values()) for c in self.msgs_per_node]))
        return float(np.mean([c[kind] for c in self.msgs_per_node]))


class RdTdmaSimulation:
    """Wires RD-TDMA nodes to the event engine and checks safety as it runs."""

    def __init__(
        self,
        topology: Topology,
        config: RdTdmaConfig,
        channel: ChannelConfig | None = None,
        record_trace: bool = False,
    ):
        self.topology = topology
        self.config = config
        n = topology.n
        self.n2 = [two_hop(topology, i) for i in range(n)]
        S = config.S
        self.nodes = [
            RdTdmaNode(
                i,
                topology.adjacency[i],
                self.n2[i],
                S,
                K=config.K,
                dynamic=config.dynamic_probabilities,
                rng=random.Random(f"rdtdma:{config.seed}:{i}"),
            )
            for i in range(n)
        ]
        self.engine = Engine(topology.adjacency, channel or ChannelConfig(seed=config.seed), record_trace=record_trace)
        for i in range(n):
            self.engine.attach(i, self._handler(i))
        self._epoch = [0] * n
        self._adv_pending = [False] * n
        # last tick each node overheard a REJECT for (target, slot)
        self._heard_reject: list[dict[tuple[int, int], int]] = [{} for _ in range(n)]
        self.msgs = [Counter() for _ in range(n)]
        self.ss_time: list[int | None] = [None] * n
        self.ts_time: list[int | None] = [None] * n
        self.n_ss = 0
        self.n_ts = 0

    # ------------------------------------------------------------------ helpers

    def _wait(self, i: int) -> int:
        return self.nodes[i].rng.randrange(self.config.S)

    def _send(self, i: int, kind: str, **fields) -> None:
        node = self.nodes[i]
        eng = self.engine
        eng.broadcast(Message(kind, i, node.payload(eng.now, **fields), eng.now))
        self.msgs[i][kind] += 1
        self._adv_pending[i] = False

    def _handler(self, i: int):
        def receive(msg: Message) -> None:
            self._receive(i, msg)

        return receive

    def _after(self, i: int) -> None:
        node = self.nodes[i]
        if node.state == CS:
            self._enter_cs(i)
        elif node.state == VS and node.grants_complete():
            self._enter_ss(i)
        if node.state == SS and node.indv_complete():
            self._enter_ts(i)
        if self.config.check_invariants:
            node.check_invariants()

    # ------------------------------------------------------------------ events

    def _enter_cs(self, i: int) -> None:
        node = self.nodes[i]
        if node.state != CS:
            return
        self._epoch[i] += 1
        epoch = self._epoch[i]
        now = self.engine.now
        s = node.enter_cs(now)
        if s is None:
            self.engine.schedule(now + self.config.S, i, self._retry_cs, i, epoch)
            return
        wait = s - 1 if self.config.vs_wait == "slot-index" else self._wait(i)
        self.engine.schedule(now + wait, i, self._send_req, i, epoch)

    def _retry_cs(self, i: int, epoch: int) -> None:
        if epoch == self._epoch[i]:
            self._enter_cs(i)

    def _send_req(self, i: int, epoch: int) -> None:
        node = self.nodes[i]
        if epoch != self._epoch[i] or node.state != VS:
            return
        if node.grants_complete():
            self._enter_ss(i)
            return
        self._send(i, REQ, slot=node.pending_slot)
        node.attempts += 1
        self.engine.schedule(self.engine.now + 1 + self.config.S, i, self._req_timeout, i, epoch, node.attempts)

    def _req_timeout(self, i: int, epoch: int, attempt: int) -> None:
        node = self.nodes[i]
        if epoch != self._epoch[i] or node.state != VS or node.attempts != attempt:
            return
        if node.attempts >= self.config.max_attempts:
            node.back_to_cs()
            self._enter_cs(i)
        else:
            self.engine.schedule(self.engine.now + self._wait(i), i, self._send_req, i, epoch)

    def _enter_ss(self, i: int) -> None:
        node = self.nodes[i]
        if not node.handle_grant_progress():
            return
        now = self.engine.now
        for j in self.n2[i]:
            other = self.nodes[j]
            if other.state in (SS, TS) and other.slot == node.slot:
                raise ProtocolViolation(f"two-hop nodes {i} and {j} both scheduled in slot {node.slot}")
        self.ss_time[i] = now
        self.n_ss += 1
        self._epoch[i] += 1
        if not node.neighbors:
            self._enter_ts(i)
            return
        self.engine.schedule(now + self._wait(i), i, self._send_ind, i, self._epoch[i])

    def _send_ind(self, i: int, epoch: int) -> None:
        node = self.nodes[i]
        if epoch != self._epoch[i] or node.state != SS:
            return
        self._send(i, IND)
        self.engine.schedule(self.engine.now + self.config.S + self._wait(i), i, self._send_ind, i, epoch)

    def _enter_ts(self, i: int) -> None:
        node = self.nodes[i]
        if node.neighbors:
            # last word: lets neighbors confirm us before we fall silent
            self._send(i, IND)
        node.enter_ts()
        self._epoch[i] += 1
        self.ts_time[i] = self.engine.now
        self.n_ts += 1

    def _convey(self, i: int) -> None:
        if not self._adv_pending[i]:
            self._adv_pending[i] = True
            self.engine.schedule(self.engine.now + self._wait(i), i, self._send_adv, i)

    def _send_adv(self, i: int) -> None:
        if self._adv_pending[i] and self.nodes[i].state != TS:
            self._send(i, ADV)

    def _send_reject(self, i: int, target: int, slot: int, decided: int) -> None:
        # one REJECT is enough to send the requester back to CS
        if self._heard_reject[i].get((target, slot), -1) >= decided:
            return
        if self.nodes[i].state != TS:
            self._send(i, REJECT, slot=slot, target=target)

    def _periodic_adv(self, i: int) -> None:
        node = self.nodes[i]
        if node.state in (CS, VS):
            self._send(i, ADV)
            self.engine.schedule(self.engine.now + self.config.S, i, self._periodic_adv, i)

    def _receive(self, i: int, msg: Message) -> None:
        node = self.nodes[i]
        if node.state == TS:
            return
        pl: Payload = msg.payload
        j = msg.sender
        fresh = node.absorb_snapshots(pl.probs) if pl.probs and node.dynamic else 0
        node.handle_ind_and_ov(j, pl.ov, pl.holder_slot)
        node.absorb_grants(j, pl.gv, msg.tx_time)
        if msg.kind == REQ:
            decision = node.handle_req(j, pl.slot)
            if decision == REFUSE:
                self.engine.schedule(self.engine.now + self._wait(i), i, self._send_reject, i, j, pl.slot, msg.tx_time)
            else:
                self._convey(i)
        elif msg.kind == REJECT:
            node.handle_reject(pl, msg.tx_time)
            self._heard_reject[i][(pl.target, pl.slot)] = msg.tx_time
        if fresh and node.state in (CS, VS):
            node.update_probabilities()
        self._after(i)

    # ------------------------------------------------------------------ driver

    def run(self) -> Phase1Result:
        eng = self.engine
        n = self.topology.n
        cfg = self.config
        for i in range(n):
            eng.schedule(0, i, self._enter_cs, i)
            if cfg.dynamic_probabilities and self.nodes[i].neighbors:
                eng.schedule(self._wait(i), i, self._periodic_adv, i)
        eng.run(until=cfg.budget(), stop=lambda: self.n_ss == n)
        if self.n_ss < n:
            raise Phase1Timeout(
                f"{n - self.n_ss} of {n} nodes unscheduled after {eng.now} ticks",
                [nd.state.value for nd in self.nodes],
                [nd.slot for nd in self.nodes],
                eng.now,
            )
        converged = max(t for t in self.ss_time if t is not None) if n else 0
        eng.run(until=eng.now + cfg.tail(), stop=lambda: self.n_ts == n)
        return Phase1Result(
            schedule=Schedule.of(nd.slot for nd in self.nodes),
            S=cfg.S,
            convergence_ticks=converged,
            end_tick=eng.now,
            rounds_per_node=[nd.rounds for nd in self.nodes],
            msgs_per_node=self.msgs,
            ss_time=[t for t in self.ss_time],
            ts_time=list(self.ts_time),
            engine=eng,
        )


def run_phase1(
    topology: Topology,
    config: RdTdmaConfig,
    channel: ChannelConfig | None = None,
    record_trace: bool = False,
) -> Phase1Result:
    return RdTdmaSimulation(topology, config, channel, record_trace).run()


def required_slots(topology: Topology) -> int:
    """Smallest safe frame size: one more than the largest two-hop neighborhood."""
    return max((len(two_hop(topology, i)) for i in topology.nodes), default=0) + 1
