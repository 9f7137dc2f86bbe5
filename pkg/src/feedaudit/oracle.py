"""Ground truth for validation: exact chain distances, the filtering-variability
metric, plug-in estimates, and Monte Carlo verdict rates.

This is the only module that accepts reducible chains (boundary fixtures such
as the identity matrix); testers always re-validate their inputs.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, UncoveredState
from .iid import Decision
from .markov import MarkovChain, _as_states
from .rng import derive_rng, derive_seed

NULL, ALT, GAP = "Null", "Alt", "Gap"


def _matrix(x) -> np.ndarray:
    return x.rows if isinstance(x, MarkovChain) else np.asarray(x, dtype=float)


def linf_matrix_distance(A, B) -> float:
    """Maximum absolute row sum of ``A - B``."""
    a, b = _matrix(A), _matrix(B)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.abs(a - b).sum(axis=1).max())


@dataclass(frozen=True)
class ScenarioTruth:
    """Known per-user ``(P_R, Q_F)`` chain pairs with tolerance bounds."""

    users: tuple  # of (P_R, Q_F) matrices
    eps1: float
    eps2: float

    def __post_init__(self):
        users = tuple((np.array(_matrix(p), dtype=float), np.array(_matrix(q), dtype=float)) for p, q in self.users)
        if not users:
            raise ValueError("scenario has no users")
        for p, q in users:
            p.setflags(write=False)
            q.setflags(write=False)
        object.__setattr__(self, "users", users)

    @property
    def U(self) -> int:
        return len(self.users)

    @property
    def n(self) -> int:
        return self.users[0][0].shape[0]

    @property
    def distances(self) -> tuple:
        return tuple(linf_matrix_distance(p, q) for p, q in self.users)

    @property
    def total_distance(self) -> float:
        return float(sum(self.distances))

    @property
    def regime(self) -> str:
        total = self.total_distance
        if total <= self.U * self.eps1 + 1e-12:
            return NULL
        if total >= self.U * self.eps2 - 1e-12:
            return ALT
        return GAP

    def to_json(self) -> dict:
        return {"users": [{"P_R": p.tolist(), "Q_F": q.tolist()} for p, q in self.users],
                "eps1": self.eps1, "eps2": self.eps2}

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioTruth":
        return cls(tuple((u["P_R"], u["Q_F"]) for u in d["users"]), float(d["eps1"]), float(d["eps2"]))


def total_filter_variability(truth: ScenarioTruth) -> float:
    """Average per-user distance ``(1/U) sum_u ||P_R_u - Q_F_u||_inf``."""
    return truth.total_distance / truth.U


def binomial_se(rate: float, trials: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / trials)


def verdict_probability(truth: ScenarioTruth, tester: Callable[[ScenarioTruth, int], Decision], trials: int, seed,
                        workers: int = 1) -> tuple[float, float]:
    """Empirical YES rate (and binomial SE) of ``tester`` on data drawn from ``truth``.

    ``tester(truth, trial_seed)`` runs one full pipeline; trial seeds are
    derived from ``(seed, "trial", t)`` so parallel and serial runs agree.
    Build testers with :func:`regulatory_trial` or :func:`iid_trial`.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    seeds = [derive_seed(seed, "trial", t) for t in range(trials)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(lambda s: tester(truth, s), seeds))
    else:
        outcomes = [tester(truth, s) for s in seeds]
    rate = sum(o is Decision.YES for o in outcomes) / trials
    return rate, binomial_se(rate, trials)


def regulatory_trial(config) -> Callable[[ScenarioTruth, int], Decision]:
    """Tester factory: simulate feeds from the truth chains, then run the regulation procedure."""
    from .regulatory import regulatory_tester
    from .sim import feeds_from_chains

    def run(truth: ScenarioTruth, trial_seed: int) -> Decision:
        filtered, reference = feeds_from_chains(truth.users, config.M, config.T, config.n, trial_seed)
        return regulatory_tester(filtered, reference, config, derive_seed(trial_seed, "regulatory")).decision

    return run


def iid_trial(config, row: int = 0) -> Callable[[ScenarioTruth, int], Decision]:
    """Tester factory: the i.i.d. tester on row ``row`` of each user's chains, ``P_R`` vs ``Q_F``."""
    from .iid import simulate_iid_trial

    def run(truth: ScenarioTruth, trial_seed: int) -> Decision:
        P = [p[row] for p, _ in truth.users]
        Q = [q[row] for _, q in truth.users]
        return simulate_iid_trial(P, Q, config, derive_rng(trial_seed, "iid")).decision

    return run


@dataclass(frozen=True)
class GMoments:
    mean: np.ndarray
    var: np.ndarray
    se: np.ndarray
    trials: int


def empirical_g_moments(p, q, m: float, trials: int, seed) -> GMoments:
    """Monte Carlo mean and variance of ``(V-Y)^2 - V - Y`` per symbol.

    ``V ~ Poisson(m p_i)`` and ``Y ~ Poisson(m q_i)`` independently, which is
    what Poissonized sampling produces for each symbol.
    """
    if trials < 10**4:
        raise ValueError("trials must be >= 1e4")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    rng = derive_rng(seed, "g-moments")
    V = rng.poisson(m * p, size=(trials, p.size)).astype(float)
    Y = rng.poisson(m * q, size=(trials, q.size)).astype(float)
    G = (V - Y) ** 2 - V - Y
    mean = G.mean(axis=0)
    var = G.var(axis=0, ddof=1)
    return GMoments(mean=mean, var=var, se=np.sqrt(var / trials), trials=trials)


@dataclass(frozen=True)
class PluginEstimate:
    matrix: np.ndarray
    uncovered: tuple
    visits: np.ndarray


def plugin_chain_estimate(trajectories: Sequence, n: int | None = None) -> PluginEstimate:
    """Empirical transition matrix from observed successor pairs.

    Accepts a :class:`~feedaudit.regulatory.FeedBatch` or a sequence of
    trajectories. States never seen with a successor get an all-zero row and
    are listed in ``uncovered`` (with an :class:`UncoveredState` warning).
    """
    if hasattr(trajectories, "trajectories"):
        n = trajectories.n if n is None else n
        trajectories = trajectories.trajectories
    arrays = [_as_states(t) for t in trajectories]
    if n is None:
        n = 1 + max(int(a.max()) for a in arrays)
    counts = np.zeros((n, n))
    for a in arrays:
        np.add.at(counts, (a[:-1], a[1:]), 1)
    visits = counts.sum(axis=1)
    uncovered = tuple(int(i) for i in np.flatnonzero(visits == 0))
    if uncovered:
        warnings.warn(f"states without successor observations: {list(uncovered)}", UncoveredState, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(visits[:, None] > 0, counts / np.maximum(visits, 1)[:, None], 0.0)
    return PluginEstimate(matrix=matrix, uncovered=uncovered, visits=visits)
