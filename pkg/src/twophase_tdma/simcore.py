"""Slot-granular discrete-event engine with a lossy, collision-prone broadcast channel.

Time is an integer tick count where one tick is one slot. A transmission
started at tick ``t`` occupies ``[t, t + duration)`` and is delivered at
``t + duration``. Events at the same tick run in the order
(channel deliveries first, then owner id, then scheduling sequence number).
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence, TextIO

REQ = "REQ"
IND = "IND"
REJECT = "REJECT"
ADV = "ADV"
HELLO = "HELLO"
KINDS = (REQ, IND, REJECT, ADV, HELLO)

_DELIVERY = 0
_TIMER = 1


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Message:
    kind: str
    sender: int
    payload: Any
    tx_time: int = 0


@dataclass
class ChannelConfig:
    """Per-reception Bernoulli loss plus optional same-tick collisions.

    ``drop`` is a scripted-loss hook ``(tick, message, receiver) -> bool``
    evaluated before the random loss draw; tests use it to lose specific
    receptions.
    """

    per: float = 0.0
    collisions_enabled: bool = True
    seed: int = 0
    drop: Callable[[int, Message, int], bool] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.per <= 1.0:
            raise ValueError("per must lie in [0, 1]")


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    kind: str
    sender: int
    delivered: tuple[int, ...]
    lost: tuple[int, ...]

    def line(self) -> str:
        d = ",".join(map(str, self.delivered)) or "-"
        lo = ",".join(map(str, self.lost)) or "-"
        return f"{self.tick} {self.kind} {self.sender} {d} {lo}"


class Engine:
    def __init__(
        self,
        adjacency: Sequence[Iterable[int]],
        channel: ChannelConfig | None = None,
        duration: int = 1,
        record_trace: bool = True,
    ):
        self.adjacency = [tuple(sorted(a)) for a in adjacency]
        self.channel = channel or ChannelConfig()
        self.duration = duration
        self.record_trace = record_trace
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.sent = 0
        self.receptions = 0
        self.losses = 0
        self._rng = random.Random(self.channel.seed)
        self._queue: list[tuple] = []
        self._seq = 0
        self._handlers: dict[int, Callable[[Message], None]] = {}
        self._on_air: dict[int, list[Message]] = {}

    def attach(self, node: int, handler: Callable[[Message], None]) -> None:
        self._handlers[node] = handler

    def schedule(self, time: int, owner: int, callback: Callable[..., Any], *args: Any) -> None:
        if time < self.now:
            raise SimulationError(f"event for owner {owner} scheduled at {time} < now {self.now}")
        self._push(time, _TIMER, owner, callback, args)

    def _push(self, time: int, prio: int, owner: int, callback, args) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, prio, owner, self._seq, callback, args))

    def broadcast(self, message: Message) -> None:
        """Put ``message`` on the air at the current tick."""
        t = self.now
        if message.tx_time != t:
            message = Message(message.kind, message.sender, message.payload, t)
        batch = self._on_air.get(t)
        if batch is None:
            batch = self._on_air[t] = []
            self._push(t + self.duration, _DELIVERY, -1, self._resolve, (t,))
        batch.append(message)
        self.sent += 1

    def delivery_plan(self, batch: Sequence[Message]) -> list[tuple[Message, list[int], list[int]]]:
        """Decide, for every message sent in one tick, who receives it."""
        ch = self.channel
        audible: dict[int, int] = {}
        if ch.collisions_enabled and len(batch) > 1:
            for m in batch:
                for j in self.adjacency[m.sender]:
                    audible[j] = audible.get(j, 0) + 1
        plan = []
        for m in sorted(batch, key=lambda m: m.sender):
            got, lost = [], []
            for j in self.adjacency[m.sender]:
                if audible.get(j, 0) > 1:
                    lost.append(j)
                elif ch.drop is not None and ch.drop(m.tx_time, m, j):
                    lost.append(j)
                elif ch.per > 0.0 and self._rng.random() < ch.per:
                    lost.append(j)
                else:
                    got.append(j)
            plan.append((m, got, lost))
        return plan

    def _resolve(self, t: int) -> None:
        batch = self._on_air.pop(t)
        for m, got, lost in self.delivery_plan(batch):
            self.receptions += len(got)
            self.losses += len(lost)
            if self.record_trace:
                self.trace.append(TraceRecord(t, m.kind, m.sender, tuple(got), tuple(lost)))
            for j in got:
                handler = self._handlers.get(j)
                if handler is not None:
                    handler(m)

    def pending(self) -> int:
        return len(self._queue)

    def run(self, until: int | None = None, stop: Callable[[], bool] | None = None) -> list[TraceRecord]:
        """Process events up to and including tick ``until`` (or to quiescence).

        ``stop`` is polled after every event and ends the run early when true.
        """
        q = self._queue
        while q:
            time = q[0][0]
            if until is not None and time > until:
                self.now = until
                break
            if time < self.now:
                raise SimulationError(f"event at {time} behind clock {self.now}")
            _, _, _, _, callback, args = heapq.heappop(q)
            self.now = time
            callback(*args)
            if stop is not None and stop():
                break
        else:
            if until is not None and until > self.now:
                self.now = until
        return self.trace

    def dump_trace(self, out: TextIO) -> None:
        for rec in self.trace:
            out.write(rec.line() + "\n")
