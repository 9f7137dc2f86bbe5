"""Synthetic platform scenarios: paired reference/filtered chains and their feeds.

The reference chain defaults to uniform rows (content picked uniformly at
random). A user's filtered chain is the reference with probability mass moved
inside one designated row until that row sits at the requested l1 distance.
Every entry is kept at or above ``1/(10n)`` so all chains stay irreducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InfeasibleGap
from .markov import MarkovChain, simulate_trajectory, stationary_distribution, validate_chain
from .oracle import ScenarioTruth, linf_matrix_distance
from .regulatory import FeedBatch
from .rng import derive_rng

GAP_TOL = 1e-12


def entry_floor(n: int) -> float:
    return 1.0 / (10 * n)


@dataclass(frozen=True)
class ScenarioSpec:
    """Description of a synthetic population.

    ``gap`` is one target distance per honest user (a scalar is broadcast).
    ``self_loop`` mixes the uniform reference with the identity, slowing
    mixing. ``reference`` overrides the reference matrix for all users.
    ``row`` is the row the filtered chain perturbs in the first epoch;
    later epochs pick a fresh row per user at random.
    """

    n: int
    U: int
    gap: tuple = (0.0,)
    self_loop: float = 0.0
    epochs: int = 1
    adversarial: int = 0
    placement: str = "end"
    reference: tuple | None = None
    row: int = 0
    eps1: float = 0.0
    eps2: float = 0.5

    def __post_init__(self):
        gap = tuple(float(g) for g in np.atleast_1d(self.gap))
        if len(gap) == 1 and self.U > 1:
            gap = gap * self.U
        object.__setattr__(self, "gap", gap)
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.U < 1:
            raise ValueError("U must be >= 1")
        if len(gap) != self.U:
            raise ValueError(f"gap has {len(gap)} entries for U={self.U} users")
        if any(not 0 <= g <= 2 for g in gap):
            raise ValueError("gap values must lie in [0, 2]")
        if not 0 <= self.self_loop < 1:
            raise ValueError("self_loop must lie in [0, 1)")
        if self.epochs < 1 or self.adversarial < 0:
            raise ValueError("epochs must be >= 1 and adversarial >= 0")
        if self.placement not in ("end", "front"):
            raise ValueError("placement must be 'end' or 'front'")
        if not 0 <= self.row < self.n:
            raise ValueError(f"row {self.row} outside [0, {self.n})")
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(tuple(map(float, r)) for r in self.reference))


@dataclass(frozen=True)
class Scenario:
    """Per-epoch list of ``(P_R, Q_F)`` chain pairs, one per user."""

    spec: ScenarioSpec
    epochs: tuple
    adversarial_users: tuple = ()
    distances: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "distances",
                           tuple(tuple(linf_matrix_distance(p, q) for p, q in users) for users in self.epochs))

    @property
    def users(self) -> tuple:
        return self.epochs[0]

    @property
    def U(self) -> int:
        return len(self.users)

    @property
    def n(self) -> int:
        return self.spec.n

    def truth(self, epoch: int = 0) -> ScenarioTruth:
        return ScenarioTruth(tuple((p.rows, q.rows) for p, q in self.epochs[epoch]), self.spec.eps1, self.spec.eps2)

    def average_variability(self, epoch: int = 0) -> float:
        return sum(self.distances[epoch]) / len(self.distances[epoch])


def reference_matrix(spec: ScenarioSpec) -> np.ndarray:
    if spec.reference is not None:
        return np.array(spec.reference, dtype=float)
    n = spec.n
    return (1 - spec.self_loop) * np.full((n, n), 1.0 / n) + spec.self_loop * np.eye(n)


def max_row_gap(row, floor: float) -> float:
    """Largest l1 move reachable by draining every entry but the smallest down to ``floor``."""
    row = np.asarray(row, dtype=float)
    keep = int(np.argmin(row))
    drainable = sum(max(v - floor, 0.0) for j, v in enumerate(row) if j != keep)
    return 2 * drainable


def move_mass(row, gap: float, floor: float) -> np.ndarray:
    """Shift ``gap / 2`` of mass onto the smallest entry, draining the largest entries first."""
    row = np.array(row, dtype=float)
    if gap > max_row_gap(row, floor) + GAP_TOL:
        raise InfeasibleGap(f"gap {gap} exceeds the {max_row_gap(row, floor):.6g} reachable with entry floor {floor:.4g}")
    recipient = int(np.argmin(row))
    need = gap / 2
    out = row.copy()
    out[recipient] += need
    donors = sorted((j for j in range(row.size) if j != recipient), key=lambda j: (-row[j], j))
    for j in donors:
        if need <= 0:
            break
        take = min(need, max(out[j] - floor, 0.0))
        out[j] -= take
        need -= take
    return out


def _filtered(reference: np.ndarray, row: int, gap: float, floor: float) -> np.ndarray:
    q = reference.copy()
    q[row] = move_mass(reference[row], gap, floor)
    return q


def make_scenario(spec: ScenarioSpec, seed) -> Scenario:
    """Build validated chain pairs for every epoch (and adversarial users, if requested)."""
    ref = reference_matrix(spec)
    floor = entry_floor(spec.n)
    if ref.min() < 0:
        raise ValueError("reference matrix has negative entries")
    P = validate_chain(ref)
    rng = derive_rng(seed, "sim", "rows")
    epochs = []
    for e in range(spec.epochs):
        users = []
        for u, g in enumerate(spec.gap):
            row = spec.row if e == 0 else int(rng.integers(spec.n))
            users.append((P, validate_chain(_filtered(ref, row, g, floor))))
        epochs.append(tuple(users))
    scenario = Scenario(spec, tuple(epochs))
    if spec.adversarial:
        scenario = inject_adversarial_users(scenario, spec.adversarial, seed, spec.placement)
    return scenario


def adversarial_gap(scenario: Scenario) -> float:
    ref = reference_matrix(scenario.spec)
    return max_row_gap(ref[scenario.spec.row], entry_floor(scenario.n))


def inject_adversarial_users(scenario: Scenario, count: int, seed=0, placement: str = "end") -> Scenario:
    """Add ``count`` users whose filtered chain sits at the largest feasible distance.

    The adversarial chain drains the designated row of the reference as far
    as the entry floor allows. ``seed`` is accepted for interface symmetry;
    the construction is deterministic.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return scenario
    ref = reference_matrix(scenario.spec)
    floor = entry_floor(scenario.n)
    gap = adversarial_gap(scenario)
    P = validate_chain(ref)
    bad = (P, validate_chain(_filtered(ref, scenario.spec.row, gap, floor)))
    epochs = []
    for users in scenario.epochs:
        extra = (bad,) * count
        epochs.append(users + extra if placement == "end" else extra + users)
    U0 = scenario.U
    if placement == "end":
        idx = scenario.adversarial_users + tuple(range(U0, U0 + count))
    else:
        idx = tuple(range(count)) + tuple(i + count for i in scenario.adversarial_users)
    return replace(scenario, epochs=tuple(epochs), adversarial_users=idx)


def _batch(chain: MarkovChain, pi: np.ndarray, user: int, world: str, M: int, T: int, seed, epoch: int) -> FeedBatch:
    trajs = []
    for j in range(M):
        rng = derive_rng(seed, "sim", epoch, user, world, j)
        start = int(rng.choice(chain.n, p=pi))
        trajs.append(simulate_trajectory(chain, start, T, rng))
    return FeedBatch(user=user, world=world, trajectories=tuple(trajs), n=chain.n)


def feeds_from_chains(pairs: Sequence[tuple], M: int, T: int, n: int, seed, epoch: int = 0):
    """Filtered and reference batches for ``(P_R, Q_F)`` pairs with stationary starts.

    Each trajectory has its own stream ``(seed, "sim", epoch, user, world, j)``.
    """
    chains = {}

    def chain_of(x):
        c = x if isinstance(x, MarkovChain) else validate_chain(x)
        if c not in chains:
            chains[c] = (c, stationary_distribution(c))
        return chains[c]

    filtered, reference = [], []
    for u, (p, q) in enumerate(pairs):
        cp, pip = chain_of(p)
        cq, piq = chain_of(q)
        if cp.n != n or cq.n != n:
            raise ValueError(f"user {u}: chain size differs from n={n}")
        filtered.append(_batch(cq, piq, u, "F", M, T, seed, epoch))
        reference.append(_batch(cp, pip, u, "R", M, T, seed, epoch))
    return filtered, reference


def generate_feeds(scenario: Scenario, M: int, T: int, seed, epoch: int = 0):
    """``M`` trajectories of length ``T`` per user and world for one epoch."""
    if M < 1 or T < 1:
        raise ValueError("M and T must be positive")
    return feeds_from_chains(scenario.epochs[epoch], M, T, scenario.n, seed, epoch)
