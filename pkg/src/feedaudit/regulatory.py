"""Filtered-vs-reference regulation over Markov feed trajectories.

For every state ``i`` the procedure gates coverage, pulls the first ``m_bar``
successors of ``i`` out of each user's filtered and reference trajectories,
and hands the ``U`` paired sample sets to the i.i.d. tester. Successors of a
fixed state are i.i.d. draws from that state's transition row, so each
per-state test is an ordinary closeness test between row ``i`` of ``P^R_u``
and row ``i`` of ``Q^F_u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

from .errors import ConfigMismatch
from .iid import DEFAULT_REGIME_RATIO, Decision, IIDTestConfig, iid_tester, poisson_headroom, required_m
from .markov import MarkovChain, Trajectory, estimate_cover_time, extract_successors, successor_bearing_visits
from .rng import derive_rng, derive_seed

WORLDS = ("F", "R")


class Reason(str, Enum):
    COVERAGE = "Coverage"
    STATISTIC = "Statistic"
    CLEAN = "Clean"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class FeedBatch:
    """``M`` trajectories of equal length ``T`` for one user in one world."""

    user: int
    world: str
    trajectories: tuple
    n: int

    def __post_init__(self):
        if self.world not in WORLDS:
            raise ValueError(f"world must be 'F' or 'R', got {self.world!r}")
        trajs = tuple(t if isinstance(t, Trajectory) else Trajectory(t) for t in self.trajectories)
        if not trajs:
            raise ValueError("a feed batch needs at least one trajectory")
        lengths = {len(t) for t in trajs}
        if len(lengths) != 1:
            raise ValueError(f"trajectories differ in length: {sorted(lengths)}")
        top = max(int(t.states.max()) for t in trajs)
        if top >= self.n or min(int(t.states.min()) for t in trajs) < 0:
            raise ValueError(f"state labels outside [0, {self.n})")
        object.__setattr__(self, "trajectories", trajs)

    @property
    def M(self) -> int:
        return len(self.trajectories)

    @property
    def T(self) -> int:
        return len(self.trajectories[0])


@dataclass(frozen=True)
class RegulatoryConfig:
    """Parameters of the regulation procedure.

    ``m_bar`` is the number of successors each user must supply per world and
    state. It is split into two halves of ``m_bar // 2`` for the i.i.d.
    tester, so the default is twice the tester's per-half sample size at
    per-state risk ``delta / (2n)``. With Poissonization each half is padded
    so the Poisson draw almost never runs past it.
    """

    n: int
    U: int
    M: int
    T: int
    eps1: float
    eps2: float
    delta: float
    m_bar: int | None = None
    poissonize: bool = False
    early_exit: bool = True
    c: float | None = None
    C: float | None = None
    regime_ratio: float = DEFAULT_REGIME_RATIO

    def __post_init__(self):
        if not 0 <= self.eps1 < self.eps2 <= 1:
            raise ValueError(f"need 0 <= eps1 < eps2 <= 1, got ({self.eps1}, {self.eps2})")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.m_bar is not None and self.m_bar < 1:
            raise ValueError("m_bar must be >= 1")
        if min(self.n, self.U, self.M) < 1:
            raise ValueError("n, U and M must be positive")
        if self.T < 1:
            raise ValueError("T must be positive")

    @property
    def per_state_delta(self) -> float:
        return self.delta / (2 * self.n)

    def constants(self) -> tuple[float, float]:
        from .calibration import default_calibration
        cal = default_calibration()
        return (self.c if self.c is not None else cal.c, self.C if self.C is not None else cal.C)

    def successor_budget(self, alphabet: int | None = None) -> int:
        if self.m_bar is not None:
            return self.m_bar
        _, C = self.constants()
        m = required_m(alphabet or self.n, self.U, self.eps1, self.eps2, self.per_state_delta, C, self.regime_ratio)
        return 2 * (poisson_headroom(m) if self.poissonize else m)

    def tester_m(self) -> int:
        """Per-half sample size handed to the i.i.d. tester."""
        half = self.successor_budget() // 2
        if not self.poissonize:
            return half
        m = half
        while m > 0 and poisson_headroom(m) > half:
            m -= 1
        return m

    def iid_config(self) -> IIDTestConfig:
        c, _ = self.constants()
        return IIDTestConfig(U=self.U, n=self.n, m=self.tester_m(), eps1=self.eps1, eps2=self.eps2,
                             delta=self.per_state_delta, c=c, poissonize=self.poissonize)


@dataclass(frozen=True)
class StateReport:
    coverage_ok: bool
    successor_counts: dict  # pair index -> {"user_F", "user_R", "F": visits, "R": visits}
    G: float | None = None
    tau: float | None = None
    decision: Decision | None = None

    def to_json(self) -> dict:
        return {"coverage_ok": self.coverage_ok, "G": self.G, "tau": self.tau,
                "decision": None if self.decision is None else self.decision.value,
                "successor_counts": {str(u): c for u, c in self.successor_counts.items()}}


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    reason: Reason
    per_state: dict = field(default_factory=dict)  # state -> StateReport

    def __post_init__(self):
        if (self.decision is Decision.NO) != (self.reason is not Reason.CLEAN):
            raise ValueError(f"inconsistent verdict {self.decision}/{self.reason}")

    def to_json(self) -> dict:
        return {"decision": self.decision.value, "reason": self.reason.value,
                "per_state": {str(i): r.to_json() for i, r in sorted(self.per_state.items())}}


def coverage_gate(batch: FeedBatch, state: int, m_bar: int) -> bool:
    """True iff the batch holds at least ``m_bar`` successor-bearing visits to ``state``."""
    return successor_bearing_visits(batch.trajectories, state) >= m_bar


def _check_inputs(filtered, reference, config, match_users):
    if len(filtered) != config.U or len(reference) != config.U:
        raise ConfigMismatch(f"expected {config.U} users, got {len(filtered)} filtered and {len(reference)} reference batches")
    for f, r in zip(filtered, reference):
        if f.n != config.n or r.n != config.n:
            raise ConfigMismatch(f"batch alphabet differs from config n={config.n}")
        if match_users and f.user != r.user:
            raise ConfigMismatch(f"filtered user {f.user} paired with reference user {r.user}")


def regulatory_tester(filtered: Sequence[FeedBatch], reference: Sequence[FeedBatch], config: RegulatoryConfig,
                      seed=0, match_users: bool = True) -> Verdict:
    """Decide whether the filtered feeds stay within tolerance of the reference feeds.

    Batches are paired by position and must carry the same user id unless
    ``match_users`` is off (the counterfactual procedure pits one user's
    reference batch against another user's filtered batch).
    States are visited in ascending order and, with ``config.early_exit``,
    the first NO ends the run. Without early exit every state is examined
    and the reason of the lowest failing state is reported.
    """
    _check_inputs(filtered, reference, config, match_users)
    m_bar = config.successor_budget()
    iid_cfg = config.iid_config()
    half = m_bar // 2
    per_state = {}
    first_fail = None
    for i in range(config.n):
        visits = {u: {"user_F": f.user, "user_R": r.user, "F": successor_bearing_visits(f.trajectories, i),
                      "R": successor_bearing_visits(r.trajectories, i)}
                  for u, (f, r) in enumerate(zip(filtered, reference))}
        covered = all(v["F"] >= m_bar and v["R"] >= m_bar for v in visits.values())
        if not covered:
            per_state[i] = StateReport(False, visits, decision=Decision.NO)
            first_fail = first_fail or Reason.COVERAGE
            if config.early_exit:
                break
            continue
        samples_r, samples_f = [], []
        for f, r in zip(filtered, reference):
            sr = extract_successors(r.trajectories, i, m_bar)
            sf = extract_successors(f.trajectories, i, m_bar)
            samples_r.append((sr[:half], sr[half:2 * half]))
            samples_f.append((sf[:half], sf[half:2 * half]))
        v = iid_tester(samples_r, samples_f, iid_cfg, derive_rng(seed, "regulatory", i))
        per_state[i] = StateReport(True, visits, G=v.G, tau=v.tau, decision=v.decision)
        if v.decision is Decision.NO:
            first_fail = first_fail or Reason.STATISTIC
            if config.early_exit:
                break
    if first_fail is None:
        return Verdict(Decision.YES, Reason.CLEAN, per_state)
    return Verdict(Decision.NO, first_fail, per_state)


def regulate_intervals(intervals: Sequence[tuple[Sequence[FeedBatch], Sequence[FeedBatch]]],
                       config: RegulatoryConfig, seed=0) -> list[Verdict]:
    """One independent run per re-filtering interval; no state carries across."""
    return [regulatory_tester(f, r, config, derive_seed(seed, "interval", k))
            for k, (f, r) in enumerate(intervals)]


def horizon_multiplier(U: int, delta: float) -> float:
    """``e * ln(4U / delta)``: blow-up turning a mean cover time into a high-probability horizon."""
    return math.e * math.log(4 * U / delta)


def required_horizon(chains: Sequence[tuple[MarkovChain, MarkovChain]], config: RegulatoryConfig, trials: int = 200,
                     seed=0, successors: int | None = None, workers: int = 1) -> int:
    """Trajectory length ``T`` so every user's batches cover each state ``m_bar`` times w.h.p.

    ``chains`` holds one ``(P_R, Q_F)`` pair per user. Identical chains share
    one cover-time estimate.
    """
    if len(chains) != config.U:
        raise ConfigMismatch(f"expected {config.U} chain pairs, got {len(chains)}")
    k = successors if successors is not None else config.successor_budget()
    cache = {}
    worst = 0.0
    for pair in chains:
        for chain in pair:
            if chain not in cache:
                cache[chain] = estimate_cover_time(chain, config.M, k, trials, seed, workers=workers).t_hat
            worst = max(worst, cache[chain])
    # +1: the final position of a trajectory has no successor
    return int(math.ceil(horizon_multiplier(config.U, config.delta) * worst)) + 1


def with_horizon(config: RegulatoryConfig, T: int) -> RegulatoryConfig:
    return replace(config, T=T)

