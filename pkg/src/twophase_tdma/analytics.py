"""Closed-form runtime bounds for both phases and Monte Carlo estimators that check them."""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .rdtdma import RdTdmaNode, sample_slot


def q_single_hop(S: int, m: int) -> float:
    """Per-round success chance of a tagged node when m of S slots are taken in a single-hop network."""
    if not 0 <= m < S:
        raise ValueError("need 0 <= m < S")
    k = S - m
    if k == 1:
        return 1.0
    return (1.0 - 1.0 / k) ** (k - 1)


def q_min(S: int) -> float:
    """Closed-form worst-case per-round success probability in a multi-hop network."""
    if S < 2:
        raise ValueError("S must be >= 2")
    return 1.0 - ((4 * S - 1) / (4 * S)) ** (S - 2) * ((2 * S - 1) / (2 * S)) ** 2


def q_min_structural(S: int) -> float:
    """q of the worst-case contention matrix (every other row spread over two slots)."""
    if S < 2:
        raise ValueError("S must be >= 2")
    return (S + 2) / (4 * S)


def expected_rounds_bound(S: int) -> float:
    return 1.0 / q_min(S)


def expected_time_bound(S: int, t_cs: float = 0.0, t_req: float = 1.0) -> float:
    return (t_cs + t_req + S) / q_min(S)


def expected_max_rounds_bound(S: int, n: int) -> float:
    """Approximate expected maximum of n geometric round counts with parameter q_min(S)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 1.0 - math.log(n) / math.log(1.0 - q_min(S))


def expected_max_geometric(q: float, n: int, tol: float = 1e-12) -> float:
    """E[max of n i.i.d. Geometric(q) on {1, 2, ...}] by summing P(max > r)."""
    mu = 1.0 - q
    total, r = 0.0, 0
    while True:
        term = 1.0 - (1.0 - mu**r) ** n
        total += term
        if term < tol:
            return total
        r += 1


# ---------------------------------------------------------------------- contention matrices


@dataclass(frozen=True)
class ContentionMatrix:
    """Binary S x S matrix: row 0 is the tagged node, b[i, s] = 1 when node i may try slot s."""

    b: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.b, dtype=np.int64)
        if b.ndim != 2 or not np.isin(b, (0, 1)).all():
            raise ValueError("contention matrix must be a 2-D 0/1 array")
        object.__setattr__(self, "b", b)

    @property
    def beta(self) -> np.ndarray:
        return self.b.sum(axis=1)

    @property
    def alpha(self) -> np.ndarray:
        return self.b[1:].sum(axis=0)


def q_of_matrix(m: ContentionMatrix | np.ndarray) -> float:
    """Success probability of the tagged row when every row tries its 1-slots uniformly."""
    b = m.b if isinstance(m, ContentionMatrix) else ContentionMatrix(m).b
    beta = b.sum(axis=1).astype(float)
    if beta[0] == 0:
        return 0.0
    others = b[1:]
    keep = beta[1:] > 0
    frac = np.zeros_like(others, dtype=float)
    frac[keep] = others[keep] / beta[1:][keep, None]
    per_slot = b[0] / beta[0] * np.prod(1.0 - frac, axis=0)
    return float(per_slot.sum())


def worst_case_matrix(S: int) -> ContentionMatrix:
    """The claimed minimizer: full first row, every other row covers two slots, two columns covered once."""
    if S < 2:
        raise ValueError("S must be >= 2")
    b = np.zeros((S, S), dtype=np.int64)
    b[0] = 1
    for i in range(1, S):
        b[i, i - 1] = 1
        b[i, i] = 1
    return ContentionMatrix(b)


def has_minimizer_structure(b: np.ndarray) -> bool:
    beta = b[1:].sum(axis=1)
    alpha = np.sort(b[1:].sum(axis=0))
    S = b.shape[0]
    want = np.array([1, 1] + [2] * (S - 2))
    return bool((beta == 2).all() and (alpha == want).all())


@dataclass
class BminReport:
    """Outcome of the search for the contention matrix with the smallest q.

    ``structured_minimizers`` counts minimizers with every other row covering
    two slots and exactly two columns covered once; ``other_minimizers``
    counts matrices of a different shape that tie with them.
    """

    S: int
    matrices: int
    q_min_found: float
    structured_minimizers: int
    other_minimizers: int
    structured_all_minimal: bool
    exhaustive: bool
    q_structural: float
    q_closed_form: float

    @property
    def structure_confirmed(self) -> bool:
        return (
            self.structured_minimizers > 0
            and self.structured_all_minimal
            and math.isclose(self.q_min_found, self.q_structural, abs_tol=1e-12)
        )

    def lines(self) -> list[str]:
        how = "exhaustively searched" if self.exhaustive else "sampled"
        return [
            f"S={self.S}: {how} {self.matrices} matrices with a full first row and rows of >= 2 ones",
            f"minimum q = {self.q_min_found:.6f}; minimizers with the claimed shape: "
            f"{self.structured_minimizers} (every such matrix minimal: {self.structured_all_minimal}); "
            f"tied minimizers of other shapes: {self.other_minimizers}",
            f"(S+2)/(4S) = {self.q_structural:.6f}; closed-form q_min = {self.q_closed_form:.6f}; "
            f"difference {self.q_structural - self.q_closed_form:+.6f}",
        ]


def verify_bmin_structure(S: int, exhaustive_limit: int = 5, samples: int = 20000, seed: int = 0) -> BminReport:
    """Search admissible contention matrices for the smallest q.

    Admissible: row 0 all ones, every other row has at least two ones (a row
    with one 1 is a scheduled node, which would have cleared that slot from
    row 0). Exhaustive for S <= ``exhaustive_limit``; otherwise random
    single-entry perturbations of the claimed minimizer are scored.
    """
    if S < 3:
        raise ValueError("S must be >= 3")
    if S <= exhaustive_limit:
        rows = np.array([r for r in itertools.product((0, 1), repeat=S) if sum(r) >= 2], dtype=np.int64)
        factors = 1.0 - rows / rows.sum(axis=1, keepdims=True)
        idx = np.array(list(itertools.product(range(len(rows)), repeat=S - 1)), dtype=np.int64)
        prod = np.ones((len(idx), S))
        for k in range(S - 1):
            prod *= factors[idx[:, k]]
        q = prod.sum(axis=1) / S
        best = float(q.min())
        minimal = np.isclose(q, best, rtol=0, atol=1e-12)
        two_per_row = (rows.sum(axis=1) == 2)[idx].all(axis=1)
        alpha = np.sort(rows[idx].sum(axis=1), axis=1)
        shaped = two_per_row & (alpha == np.array([1, 1] + [2] * (S - 2))).all(axis=1)
        return BminReport(
            S, len(idx), best,
            int((minimal & shaped).sum()), int((minimal & ~shaped).sum()),
            bool(minimal[shaped].all()), True,
            q_min_structural(S), q_min(S),
        )
    rng = np.random.default_rng(seed)
    base = worst_case_matrix(S).b
    best = q_of_matrix(base)
    lower = 0
    for _ in range(samples):
        b = base.copy()
        b[int(rng.integers(1, S)), int(rng.integers(0, S))] ^= 1
        if (b[1:].sum(axis=1) < 2).any():
            continue
        q = q_of_matrix(b)
        if q < best - 1e-12:
            lower += 1
    return BminReport(S, samples, best, 1, 0, lower == 0, False, q_min_structural(S), q_min(S))


# ---------------------------------------------------------------------- Monte Carlo


@dataclass
class Estimate:
    mean: float
    sigma: float
    trials: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.sigma


def single_hop_success(S: int, m: int, trials: int, seed: int = 0) -> Estimate:
    """Tagged-node success frequency in one contention round of a single-hop network.

    Each of the S - m unscheduled nodes is a protocol node that has learned
    the m occupied slots and samples its slot from its own probability
    vector; the tagged node wins when no one else picks its slot.
    """
    k = S - m
    rng = random.Random(seed)
    occupied = [True] * m + [False] * k
    nodes = []
    for i in range(k):
        nd = RdTdmaNode(i, [], [], S, rng=rng)
        nd.handle_ind_and_ov(-1, occupied)
        nodes.append(nd)
    wins = 0
    for _ in range(trials):
        picks = [sample_slot(nd.p, rng) for nd in nodes]
        if picks[0] not in picks[1:]:
            wins += 1
    return _bernoulli(wins, trials)


def matrix_success(b: np.ndarray | ContentionMatrix, trials: int, seed: int = 0) -> Estimate:
    """Tagged-row success frequency when every row draws uniformly among its 1-slots."""
    b = b.b if isinstance(b, ContentionMatrix) else np.asarray(b)
    rng = np.random.default_rng(seed)
    S = b.shape[1]
    picks = np.empty((trials, b.shape[0]), dtype=np.int64)
    for i, row in enumerate(b):
        cols = np.flatnonzero(row)
        picks[:, i] = cols[rng.integers(0, len(cols), size=trials)] if len(cols) else S
    clash = (picks[:, 1:] == picks[:, :1]).any(axis=1)
    return _bernoulli(int((~clash).sum()), trials)


def _bernoulli(wins: int, trials: int) -> Estimate:
    p = wins / trials
    return Estimate(p, math.sqrt(max(p * (1 - p), 1e-12) / trials), trials)


def dslr_moves_bound(S: int) -> float:
    """Expected jumps of the uniform jump-down chain from slot S to slot 1: H_{S-1}."""
    if S < 1:
        raise ValueError("S must be >= 1")
    return math.fsum(1.0 / l for l in range(1, S))


def dslr_moves_exact(S: int) -> float:
    """Same expectation by solving E[X_n] = 1 + mean(E[X_1..X_{n-1}]) as a linear system."""
    if S < 1:
        raise ValueError("S must be >= 1")
    A = np.eye(S)
    rhs = np.zeros(S)
    for n in range(2, S + 1):
        A[n - 1, : n - 1] -= 1.0 / (n - 1)
        rhs[n - 1] = 1.0
    return float(np.linalg.solve(A, rhs)[S - 1])


def dslr_dtmc_moves(S: int, trials: int, seed: int = 0) -> Estimate:
    """Simulate the chain that jumps from slot i to a uniform slot below it until slot 1."""
    rng = np.random.default_rng(seed)
    state = np.full(trials, S, dtype=np.int64)
    moves = np.zeros(trials, dtype=np.int64)
    active = state > 1
    while active.any():
        idx = np.flatnonzero(active)
        state[idx] = (rng.random(len(idx)) * (state[idx] - 1)).astype(np.int64) + 1
        moves[idx] += 1
        active = state > 1
    mean = float(moves.mean())
    sigma = float(moves.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return Estimate(mean, sigma, trials)


def dslr_runtime_bound(n: int, S: int, D: int, p: float) -> float:
    """ln(n) * D / (1 - p)^(4S): moves times rounds spent waiting for a clean round."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.log(n) * D / (1.0 - p) ** (4 * S)


ANALYTICS_HEADER = (
    "S,q_min,q_structural,expected_rounds_bound,expected_time_bound,dslr_moves_bound"
)


def analytics_rows(S_values: Iterable[int], t_cs: float = 0.0, t_req: float = 1.0) -> list[str]:
    rows = [ANALYTICS_HEADER]
    for S in S_values:
        rows.append(
            f"{S},{q_min(S):.9f},{q_min_structural(S):.9f},{expected_rounds_bound(S):.9f},"
            f"{expected_time_bound(S, t_cs, t_req):.9f},{dslr_moves_bound(S):.9f}"
        )
    return rows


def mean_rounds_single_hop(S: int, trials: int, seed: int = 0) -> Estimate:
    """Rounds until a tagged node wins when all S nodes of a clique contend afresh each round."""
    rng = np.random.default_rng(seed)
    rounds = np.zeros(trials, dtype=np.int64)
    pending = np.ones(trials, dtype=bool)
    r = 0
    while pending.any():
        r += 1
        idx = np.flatnonzero(pending)
        picks = rng.integers(0, S, size=(len(idx), S))
        win = ~(picks[:, 1:] == picks[:, :1]).any(axis=1)
        rounds[idx[win]] = r
        pending[idx[win]] = False
    return Estimate(float(rounds.mean()), float(rounds.std(ddof=1) / math.sqrt(trials)), trials)
