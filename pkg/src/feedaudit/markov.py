"""Markov chains, trajectory simulation, cover/mixing times and successor extraction.

States are 0-based integers ``0..n-1`` throughout the Python API. The JSON /
JSONL file formats use 1-based labels; conversion happens in
:mod:`feedaudit.io` only.
"""

from __future__ import annotations

from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from collections.abc import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    BudgetExceeded,
    CapExceeded,
    InsufficientCoverage,
    NegativeEntry,
    NoConvergence,
    NotIrreducible,
    NotStochastic,
)
from .rng import derive_rng

ROW_SUM_TOL = 1e-9
MIX_THRESHOLD = 0.25
DEFAULT_COVER_BUDGET = 10**7
COVER_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """A validated row-stochastic transition matrix.

    Build instances with :func:`validate_chain`; the constructor does not
    check anything. ``irreducible`` is False only for oracle-mode chains.
    """

    rows: np.ndarray
    irreducible: bool = True
    _cum: tuple = field(init=False, repr=False)

    def __post_init__(self):
        cum = np.cumsum(self.rows, axis=1)
        # pin everything from the last positive entry on to exactly 1 so
        # rounding residue can never select a trailing zero-probability state
        for i, row in enumerate(self.rows):
            cum[i, np.flatnonzero(row > 0)[-1]:] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", (cum, [list(r) for r in cum]))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def cumulative(self) -> np.ndarray:
        return self._cum[0]

    def __eq__(self, other):
        if not isinstance(other, MarkovChain):
            return NotImplemented
        return np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())

    def tolist(self) -> list[list[float]]:
        return self.rows.tolist()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A finite walk; ``states[0]`` is the start state."""

    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("trajectory must be a non-empty 1-d sequence")
        arr.setflags(write=False)
        object.__setattr__(self, "states", arr)

    @property
    def start(self) -> int:
        return int(self.states[0])

    def __len__(self):
        return self.states.size

    def __array__(self, dtype=None, copy=None):
        return self.states if dtype is None else self.states.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.states, other.states)

    def __hash__(self):
        return hash(self.states.tobytes())


@dataclass(frozen=True)
class CountingMeasure:
    """Per-state visit counts of a trajectory prefix."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, state):
        return int(self.counts[state])


@dataclass(frozen=True)
class CoverTimeEstimate:
    """Monte Carlo estimate of the m-joint-k-cover time.

    ``profiles`` maps a start profile name (``"start:v"`` or
    ``"stationary"``) to ``(mean, standard error)``; ``samples`` keeps the raw
    stop times per profile. ``t_hat`` is the maximum profile mean.
    """

    m: int
    k: int
    trials: int
    profiles: dict
    samples: dict = field(repr=False)
    worst_profile: str

    @property
    def t_hat(self) -> float:
        return self.profiles[self.worst_profile][0]

    @property
    def t_hat_se(self) -> float:
        return self.profiles[self.worst_profile][1]


@dataclass(frozen=True)
class ChainDiagnostics:
    stationary: np.ndarray
    pi_star: float
    t_mix_hat: int | None
    t_cov_hat: dict


def _as_states(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.states
    return np.asarray(traj, dtype=np.int64)


def is_irreducible(matrix) -> bool:
    """True iff the graph of strictly positive entries is strongly connected."""
    matrix = np.asarray(matrix)
    ncomp, _ = connected_components(matrix > 0, directed=True, connection="strong")
    return ncomp == 1


def validate_chain(rows, *, allow_reducible: bool = False) -> MarkovChain:
    """Validate ``rows`` as a transition matrix and wrap it in a :class:`MarkovChain`.

    Row sums within ``1e-9`` of one are renormalized; anything further off
    raises :class:`NotStochastic`. ``allow_reducible`` is reserved for the
    oracle, which needs boundary fixtures such as the identity matrix.
    """
    mat = np.array(rows, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise ValueError(f"transition matrix must be square and non-empty, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("transition matrix has non-finite entries")
    if np.any(mat < 0):
        r, c = np.argwhere(mat < 0)[0]
        raise NegativeEntry(f"entry ({r}, {c}) = {mat[r, c]} is negative")
    sums = mat.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise NotStochastic(f"row {bad[0]} sums to {sums[bad[0]]!r}")
    mat /= sums[:, None]
    irreducible = is_irreducible(mat)
    if not irreducible and not allow_reducible:
        raise NotIrreducible("positive-entry graph is not strongly connected")
    mat.setflags(write=False)
    return MarkovChain(mat, irreducible=irreducible)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(seed)


def simulate_trajectory(chain: MarkovChain, start: int, length: int, seed) -> Trajectory:
    """Simulate ``length`` states starting at ``start`` (which counts as the first state).

    ``seed`` is an integer root seed or a ready ``numpy.random.Generator``.
    """
    if not 0 <= start < chain.n:
        raise ValueError(f"start state {start} outside [0, {chain.n})")
    if length < 1:
        raise ValueError("length must be positive")
    cum = chain._cum[1]
    draws = _rng(seed).random(length - 1).tolist()
    out = [start]
    s = start
    for u in draws:
        s = bisect_right(cum[s], u)
        out.append(s)
    return Trajectory(np.array(out, dtype=np.int64))


def iter_trajectory(chain: MarkovChain, start: int, seed, block: int = 4096) -> Iterator[int]:
    """Infinite lazy walk; used where the stopping time is not known upfront."""
    if not 0 <= start < chain.n:
        raise ValueError(f"start state {start} outside [0, {chain.n})")
    rng = _rng(seed)
    cum = chain._cum[1]
    s = start
    yield s
    while True:
        for u in rng.random(block).tolist():
            s = bisect_right(cum[s], u)
            yield s


def counting_measure(trajectory, n: int, t: int | None = None) -> CountingMeasure:
    """Counts of each state in the first ``t`` positions (all positions if None)."""
    states = _as_states(trajectory)
    if t is not None:
        states = states[:t]
    return CountingMeasure(np.bincount(states, minlength=n))


def stationary_distribution(chain: MarkovChain, tol: float = 1e-12, max_iter: int = 10**6) -> np.ndarray:
    """Stationary distribution by power iteration from the uniform vector.

    The returned vector is the average of two consecutive iterates, which
    converges for period-2 chains as well. Its residual ``||pi M - pi||_1``
    equals half the distance between iterates two steps apart.
    """
    M = chain.rows
    prev = np.full(chain.n, 1.0 / chain.n)
    cur = prev @ M
    for _ in range(max_iter):
        nxt = cur @ M
        if 0.5 * np.abs(nxt - prev).sum() <= tol:
            pi = 0.5 * (prev + cur)
            return pi / pi.sum()
        prev, cur = cur, nxt
    raise NoConvergence(f"power iteration did not reach tol={tol} in {max_iter} iterations")


def _worst_tv(power: np.ndarray, pi: np.ndarray) -> float:
    return 0.5 * float(np.abs(power - pi).sum(axis=1).max())


def mixing_time_estimate(chain: MarkovChain, cap: int = 10**5) -> int:
    """Smallest ``t >= 1`` with ``max_i TV(delta_i M^t, pi) <= 1/4``.

    The worst-start TV distance is non-increasing in ``t``, so the search
    brackets the answer by repeated squaring and then bisects with exact
    matrix powers.
    """
    pi = stationary_distribution(chain)
    M = chain.rows
    if _worst_tv(M, pi) <= MIX_THRESHOLD:
        return 1
    lo, power = 1, M
    while True:
        hi = 2 * lo
        if hi >= cap:
            hi = cap
            power = np.linalg.matrix_power(M, cap)
            if _worst_tv(power, pi) > MIX_THRESHOLD:
                raise CapExceeded(f"mixing time exceeds cap={cap}")
            break
        power = power @ power
        if _worst_tv(power, pi) <= MIX_THRESHOLD:
            break
        lo = hi
    # invariant: d(lo) > 1/4 >= d(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _worst_tv(np.linalg.matrix_power(M, mid), pi) <= MIX_THRESHOLD:
            hi = mid
        else:
            lo = mid
    return hi


def joint_k_cover_stop(trajectories: Sequence[Iterable[int]], k: int, budget: int = DEFAULT_COVER_BUDGET, n: int | None = None) -> int:
    """First time ``t`` (1-based) at which the walks jointly visited every state ``k`` times.

    The walks advance in lockstep; the state at ``t = 1`` counts as a visit.
    Streams may be finite sequences or lazy iterators. ``n`` defaults to one
    more than the largest label seen in finite inputs and must be given for
    lazy ones.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not trajectories:
        raise ValueError("need at least one trajectory")
    if n is None:
        try:
            n = 1 + max(int(np.max(_as_states(t))) for t in trajectories)
        except TypeError as exc:
            raise ValueError("n is required for lazy streams") from exc
    streams = [iter(_as_states(t).tolist()) if not isinstance(t, Iterator) else t for t in trajectories]
    counts = [0] * n
    missing = n
    t = 0
    for column in zip(*streams):
        t += 1
        if t > budget:
            raise BudgetExceeded(f"cover not reached within budget={budget}")
        for s in column:
            counts[s] += 1
            if counts[s] == k:
                missing -= 1
        if missing == 0:
            return t
    raise BudgetExceeded(f"streams exhausted after t={t} before a {k}-cover")


def _cover_chunk(cum: np.ndarray, starts: np.ndarray, k: int, budget: int, rng: np.random.Generator) -> np.ndarray:
    batch, m = starts.shape
    n = cum.shape[0]
    counts = np.zeros((batch, n), dtype=np.int64)
    rows = np.arange(batch)
    for j in range(m):
        counts[rows, starts[:, j]] += 1
    tau = np.ones(batch, dtype=np.int64)
    state = starts.copy()
    idx = np.flatnonzero(~(counts >= k).all(axis=1))
    t = 1
    while idx.size:
        t += 1
        if t > budget:
            raise BudgetExceeded(f"cover not reached within budget={budget}")
        s = state[idx]
        u = rng.random(s.shape)
        nxt = (u[..., None] >= cum[s]).sum(axis=-1)
        state[idx] = nxt
        for j in range(m):
            counts[idx, nxt[:, j]] += 1
        done = (counts[idx] >= k).all(axis=1)
        tau[idx[done]] = t
        idx = idx[~done]
    return tau


def sample_cover_times(chain: MarkovChain, m: int, k: int, trials: int, seed, profile: str = "stationary",
                       budget: int = DEFAULT_COVER_BUDGET, workers: int = 1) -> np.ndarray:
    """Raw m-joint-k-cover stop times for one start profile.

    Trials are processed in fixed chunks, each with its own stream derived
    from ``(seed, "cover", profile, chunk)``, so the output does not depend
    on ``workers``.
    """
    if profile == "stationary":
        pi = stationary_distribution(chain)
    elif profile.startswith("start:"):
        v = int(profile.split(":", 1)[1])
        if not 0 <= v < chain.n:
            raise ValueError(f"profile start {v} outside [0, {chain.n})")
    else:
        raise ValueError(f"unknown start profile {profile!r}")
    cum = chain.cumulative

    def run(chunk: int) -> np.ndarray:
        size = min(COVER_CHUNK, trials - chunk * COVER_CHUNK)
        rng = derive_rng(seed, "cover", profile, chunk)
        if profile == "stationary":
            starts = rng.choice(chain.n, size=(size, m), p=pi)
        else:
            starts = np.full((size, m), v, dtype=np.int64)
        return _cover_chunk(cum, starts, k, budget, rng)

    chunks = range(-(-trials // COVER_CHUNK))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts)


def estimate_cover_time(chain: MarkovChain, m: int, k: int, trials: int, seed,
                        budget: int = DEFAULT_COVER_BUDGET, workers: int = 1) -> CoverTimeEstimate:
    """Estimate the m-joint-k-cover time as a max over start profiles.

    The worst case over all ``n**m`` start vectors is out of reach, so the
    profiles are the ``n`` homogeneous starts (every walk at state ``v``)
    plus independent stationary starts.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    if m < 1 or k < 1:
        raise ValueError("m and k must be >= 1")
    names = [f"start:{v}" for v in range(chain.n)] + ["stationary"]
    samples, profiles = {}, {}
    for name in names:
        tau = sample_cover_times(chain, m, k, trials, seed, name, budget, workers)
        samples[name] = tau
        profiles[name] = (float(tau.mean()), float(tau.std(ddof=1) / np.sqrt(trials)))
    worst = max(names, key=lambda p: profiles[p][0])
    return CoverTimeEstimate(m=m, k=k, trials=trials, profiles=profiles, samples=samples, worst_profile=worst)


def successor_bearing_visits(trajectories: Sequence, state: int) -> int:
    """Visits to ``state`` that have a successor (the final position never does)."""
    return sum(int(np.count_nonzero(_as_states(t)[:-1] == state)) for t in trajectories)


def extract_successors(trajectories: Sequence, state: int, count: int) -> np.ndarray:
    """First ``count`` immediate successors of ``state``, trajectory-major scan order.

    Raises :class:`InsufficientCoverage` when fewer successors exist.
    """
    parts, have = [], 0
    for traj in trajectories:
        if have >= count:
            break
        s = _as_states(traj)
        succ = s[1:][s[:-1] == state]
        parts.append(succ[: count - have])
        have += parts[-1].size
    if have < count:
        raise InsufficientCoverage(f"state {state}: {have} successors available, {count} required")
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def chain_diagnostics(chain: MarkovChain, cover: Iterable[tuple[int, int]] = (), trials: int = 1000, seed=0,
                      mix_cap: int = 10**5) -> ChainDiagnostics:
    """Stationary law, ``pi_star``, mixing time and cover times for ``(k, m)`` pairs.

    A periodic chain reports ``t_mix_hat = None`` instead of raising.
    """
    pi = stationary_distribution(chain)
    try:
        t_mix = mixing_time_estimate(chain, mix_cap)
    except CapExceeded:
        t_mix = None
    t_cov = {}
    for k, m in cover:
        est = estimate_cover_time(chain, m, k, trials, seed)
        t_cov[(k, m)] = (est.t_hat, est.t_hat_se)
    return ChainDiagnostics(stationary=pi, pi_star=float(pi.min()), t_mix_hat=t_mix, t_cov_hat=t_cov)


def stationary_starts(chain: MarkovChain, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(chain.n, size=size, p=stationary_distribution(chain))


__all__ = [
    "MarkovChain", "Trajectory", "CountingMeasure", "CoverTimeEstimate", "ChainDiagnostics",
    "validate_chain", "is_irreducible", "simulate_trajectory", "iter_trajectory", "counting_measure",
    "stationary_distribution", "mixing_time_estimate", "joint_k_cover_stop", "sample_cover_times",
    "estimate_cover_time", "successor_bearing_visits", "extract_successors", "chain_diagnostics",
    "stationary_starts",
]
