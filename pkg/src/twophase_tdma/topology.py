"""Random multi-hop topologies, neighbor relations and the interference graph."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

BROADCAST = "broadcast"
UNICAST = "unicast"
MODES = (BROADCAST, UNICAST)


class TopologyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Topology:
    """Immutable node placement plus the one-hop relation and receiver sets.

    ``receivers[i]`` is R_i, the set of intended receivers of node i. Sender
    sets are derived from it: j is a sender of i iff i is a receiver of j.
    """

    positions: tuple[tuple[float, float], ...]
    range: float
    adjacency: tuple[frozenset[int], ...]
    mode: str = BROADCAST
    receivers: tuple[frozenset[int], ...] = ()
    area: tuple[float, float] | None = None
    senders: tuple[frozenset[int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        n = len(self.positions)
        if len(self.adjacency) != n:
            raise ValueError("adjacency size does not match positions")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise ValueError(f"node {i} is its own neighbor")
            for j in nbrs:
                if i not in self.adjacency[j]:
                    raise ValueError(f"asymmetric link {i}->{j}")
        if not self.receivers:
            object.__setattr__(self, "receivers", self.adjacency)
        if len(self.receivers) != n:
            raise ValueError("receiver sets size does not match positions")
        for i, rx in enumerate(self.receivers):
            if not rx <= self.adjacency[i]:
                raise ValueError(f"R_{i} is not a subset of N_{i}")
            if self.mode == BROADCAST and rx != self.adjacency[i]:
                raise ValueError("broadcast mode requires R_i = N_i")
            if self.mode == UNICAST and self.adjacency[i] and len(rx) != 1:
                raise ValueError("unicast mode requires exactly one receiver")
        senders: list[set[int]] = [set() for _ in range(n)]
        for j, rx in enumerate(self.receivers):
            for i in rx:
                senders[i].add(j)
        object.__setattr__(self, "senders", tuple(frozenset(s) for s in senders))

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def nodes(self) -> range:
        return range(self.n)

    def neighbors(self, i: int) -> frozenset[int]:
        return self.adjacency[i]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def with_mode(self, mode: str, seed: int = 0) -> "Topology":
        """Same placement and links in another transmission mode.

        Unicast receivers are drawn uniformly from N_i with a stream derived
        from ``seed`` only, so repeated calls agree.
        """
        if mode == BROADCAST:
            receivers = self.adjacency
        else:
            receivers = _unicast_receivers(self.adjacency, seed)
        return Topology(self.positions, self.range, self.adjacency, mode, receivers, self.area)

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from((i, j) for i in self.nodes for j in self.adjacency[i] if i < j)
        return g

    def hop_diameter(self) -> int:
        """Largest hop distance between two connected nodes (0 for no links)."""
        g = self.graph()
        return max((nx.diameter(g.subgraph(c)) for c in nx.connected_components(g)), default=0)

    def to_dict(self) -> dict:
        doc = {
            "n": self.n,
            "range": self.range,
            "mode": self.mode,
            "positions": [list(p) for p in self.positions],
            "receivers": [sorted(r) for r in self.receivers],
        }
        if self.area is not None:
            doc["area"] = list(self.area)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        positions = tuple((float(x), float(y)) for x, y in doc["positions"])
        if len(positions) != doc["n"]:
            raise ValueError("'n' disagrees with the number of positions")
        rng = float(doc["range"])
        adjacency = _adjacency(np.asarray(positions, dtype=float).reshape(-1, 2), rng)
        receivers = tuple(frozenset(int(j) for j in r) for r in doc["receivers"])
        area = tuple(doc["area"]) if "area" in doc else None
        return cls(positions, rng, adjacency, doc["mode"], receivers, area)

    @classmethod
    def load(cls, path: str | Path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _adjacency(pos: np.ndarray, rng: float) -> tuple[frozenset[int], ...]:
    if len(pos) == 0:
        return ()
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
    close = d2 <= rng * rng
    np.fill_diagonal(close, False)
    return tuple(frozenset(np.flatnonzero(row).tolist()) for row in close)


def _unicast_receivers(adjacency: Sequence[frozenset[int]], seed: int) -> tuple[frozenset[int], ...]:
    rng = np.random.default_rng([seed, 1])
    out = []
    isolated = []
    for i, nbrs in enumerate(adjacency):
        # one draw per node keeps the stream aligned regardless of isolation
        u = rng.random()
        if not nbrs:
            isolated.append(i)
            out.append(frozenset())
            continue
        ordered = sorted(nbrs)
        out.append(frozenset([ordered[int(u * len(ordered))]]))
    if isolated:
        warnings.warn(f"isolated nodes in unicast mode get no receiver: {isolated}", TopologyWarning)
    return tuple(out)


def from_positions(
    positions: Iterable[tuple[float, float]],
    range: float,
    mode: str = BROADCAST,
    seed: int = 0,
    area: tuple[float, float] | None = None,
) -> Topology:
    pos = tuple((float(x), float(y)) for x, y in positions)
    adjacency = _adjacency(np.asarray(pos, dtype=float).reshape(-1, 2), range)
    topo = Topology(pos, float(range), adjacency, BROADCAST, adjacency, area)
    return topo if mode == BROADCAST else topo.with_mode(mode, seed)


def from_edges(
    n: int,
    edges: Iterable[tuple[int, int]],
    mode: str = BROADCAST,
    receivers: Sequence[Iterable[int]] | None = None,
) -> Topology:
    """Topology with an explicit link set (positions are placeholders on a line)."""
    adj: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    adjacency = tuple(frozenset(s) for s in adj)
    rx = tuple(frozenset(r) for r in receivers) if receivers is not None else ()
    positions = tuple((float(i), 0.0) for i in range(n))
    return Topology(positions, 0.0, adjacency, mode, rx)


def generate_random(
    n: int,
    area: tuple[float, float] = (250.0, 250.0),
    range: float = 50.0,
    seed: int = 0,
    mode: str = BROADCAST,
) -> Topology:
    """Nodes placed i.i.d. uniformly over ``area``; links between nodes within ``range``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if range <= 0 or min(area) <= 0:
        raise ValueError("range and area dimensions must be positive")
    rng = np.random.default_rng([seed, 0])
    pos = rng.random((n, 2)) * np.asarray(area, dtype=float)
    return from_positions(map(tuple, pos.tolist()), range, mode, seed, tuple(map(float, area)))


def two_hop(t: Topology, i: int) -> frozenset[int]:
    """N2_i: union of neighbors' neighborhoods plus N_i, minus i itself."""
    out = set(t.adjacency[i])
    for j in t.adjacency[i]:
        out |= t.adjacency[j]
    out.discard(i)
    return frozenset(out)


def two_hop_sizes(t: Topology) -> list[int]:
    return [len(two_hop(t, i)) for i in t.nodes]


def mean_two_hop_density(t: Topology) -> float:
    sizes = two_hop_sizes(t)
    return float(np.mean(sizes)) if sizes else 0.0


def range_for_density(
    n: int,
    density: float,
    area: tuple[float, float] = (250.0, 250.0),
    seed: int = 0,
    tol: float = 0.5,
) -> float:
    """Bisect the radio range so the seeded topology's mean |N2_i| is close to ``density``."""
    if density >= n - 1:
        return float(np.hypot(*area))
    lo, hi = 0.0, float(np.hypot(*area))
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        got = mean_two_hop_density(generate_random(n, area, mid, seed))
        if abs(got - density) <= tol:
            return mid
        if got < density:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def in_conflict(t: Topology, i: int, j: int) -> bool:
    """Two distinct nodes conflict when one's transmission reaches a receiver of the other.

    A node cannot receive while it transmits, so each node counts as part of
    its own reach: (N_i + {i}) & R_j or (N_j + {j}) & R_i must be non-empty.
    """
    if i == j:
        return False
    ri, rj = t.receivers[i], t.receivers[j]
    return bool(j in ri or i in rj or t.adjacency[i] & rj or t.adjacency[j] & ri)


@dataclass(frozen=True)
class InterferenceGraph:
    n: int
    edges: frozenset[tuple[int, int]]
    adjacency: tuple[frozenset[int], ...]

    @property
    def delta(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def has_edge(self, i: int, j: int) -> bool:
        return j in self.adjacency[i]

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "InterferenceGraph":
        adj: list[set[int]] = [set() for _ in range(n)]
        norm = set()
        for a, b in edges:
            if a == b:
                continue
            adj[a].add(b)
            adj[b].add(a)
            norm.add((min(a, b), max(a, b)))
        return cls(n, frozenset(norm), tuple(frozenset(s) for s in adj))


def interference_graph(t: Topology) -> InterferenceGraph:
    edges = []
    for i in t.nodes:
        # every conflict partner is within two hops, so only scan N2_i
        for j in two_hop(t, i):
            if i < j and in_conflict(t, i, j):
                edges.append((i, j))
    return InterferenceGraph.from_edges(t.n, edges)
