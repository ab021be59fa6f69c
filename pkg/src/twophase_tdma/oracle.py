"""Ground truth for schedules: feasibility, free-slot scans, greedy and exact colorings."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .topology import InterferenceGraph


@dataclass(frozen=True)
class Schedule:
    """One slot (>= 1) per node; the schedule length is the largest slot used."""

    assignment: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(s < 1 for s in self.assignment):
            raise ValueError("every node needs a slot >= 1")

    @classmethod
    def of(cls, slots: Iterable[int]) -> "Schedule":
        return cls(tuple(int(s) for s in slots))

    @property
    def length(self) -> int:
        return max(self.assignment, default=0)

    def __len__(self) -> int:
        return len(self.assignment)

    def __getitem__(self, i: int) -> int:
        return self.assignment[i]

    def to_text(self) -> str:
        return "".join(f"{i},{s}\n" for i, s in enumerate(self.assignment))

    @classmethod
    def from_text(cls, text: str) -> "Schedule":
        rows = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            node, slot = line.split(",")
            rows[int(node)] = int(slot)
        if sorted(rows) != list(range(len(rows))):
            raise ValueError("schedule file must list nodes 0..n-1 exactly once")
        return cls.of(rows[i] for i in range(len(rows)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "Schedule":
        return cls.from_text(Path(path).read_text())


def verify_feasible(schedule: Schedule | Sequence[int], graph: InterferenceGraph) -> list[tuple[int, int]]:
    """Conflicting pairs that share a slot; an empty list means the schedule is feasible."""
    slots = schedule.assignment if isinstance(schedule, Schedule) else tuple(schedule)
    if len(slots) != graph.n:
        raise ValueError("schedule does not cover every node")
    return sorted((i, j) for i, j in graph.edges if slots[i] == slots[j])


def is_free(i: int, s: int, slots: Sequence[int], graph: InterferenceGraph) -> bool:
    """Whether slot ``s`` is unused by every node in conflict with ``i``."""
    return all(slots[j] != s for j in graph.adjacency[i])


def first_free_below(i: int, slots: Sequence[int], graph: InterferenceGraph) -> int:
    """Smallest free slot strictly below node i's own slot, 0 if none."""
    taken = {slots[j] for j in graph.adjacency[i]}
    for s in range(1, slots[i]):
        if s not in taken:
            return s
    return 0


def nodes_with_lower_free_slot(slots: Sequence[int], graph: InterferenceGraph) -> list[int]:
    """Nodes that could still move down; empty exactly at a compaction fixed point."""
    return [i for i in range(graph.n) if first_free_below(i, slots, graph)]


def greedy_coloring(graph: InterferenceGraph, order: Iterable[int] | None = None) -> Schedule:
    """Sequential smallest-free-slot assignment in the given node order."""
    order = list(range(graph.n)) if order is None else list(order)
    if sorted(order) != list(range(graph.n)):
        raise ValueError("order must be a permutation of the nodes")
    slots = [0] * graph.n
    for i in order:
        taken = {slots[j] for j in graph.adjacency[i]}
        s = 1
        while s in taken:
            s += 1
        slots[i] = s
    return Schedule.of(slots)


MAX_BRUTE_FORCE_NODES = 12


def brute_force_optimum(graph: InterferenceGraph) -> int:
    """Exact chromatic number by backtracking.

    Nodes are colored in descending degree order and a node may only open
    the next unused color, which removes color-permutation symmetry.
    """
    n = graph.n
    if n > MAX_BRUTE_FORCE_NODES:
        raise ValueError(f"brute force refuses n={n} > {MAX_BRUTE_FORCE_NODES}")
    if n == 0:
        return 0
    order = sorted(range(n), key=lambda v: (-graph.degree(v), v))
    pos = {v: k for k, v in enumerate(order)}
    earlier = [[pos[u] for u in graph.adjacency[v] if pos[u] < k] for k, v in enumerate(order)]
    colors = [0] * n
    best = graph.delta + 1

    def extend(k: int, used: int) -> None:
        nonlocal best
        if used >= best:
            return
        if k == n:
            best = used
            return
        taken = {colors[u] for u in earlier[k]}
        for c in range(1, used + 2):
            if c in taken:
                continue
            colors[k] = c
            extend(k + 1, max(used, c))
        colors[k] = 0

    extend(0, 0)
    return best


def clique_lower_bound(graph: InterferenceGraph) -> int:
    """Greedy clique size, a cheap lower bound on the optimal schedule length."""
    best = 1 if graph.n else 0
    for v in range(graph.n):
        clique = [v]
        for u in sorted(graph.adjacency[v], key=lambda u: -graph.degree(u)):
            if all(u in graph.adjacency[w] for w in clique):
                clique.append(u)
        best = max(best, len(clique))
    return best
