"""Sum-of-pairs tolerant closeness tester on i.i.d. samples.

For ``U`` pairs of distributions ``(P_u, Q_u)`` over ``n`` symbols the tester
decides between ``sum_u ||P_u - Q_u||_1 <= U * eps1`` and ``>= U * eps2``.
Each distribution contributes two disjoint halves of samples: the first half
feeds the statistic ``G``, the second half the normalising weights ``f_hat``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InsufficientSamples, RegimeViolation, TruncatedPoissonDraw
from .rng import derive_rng

DEFAULT_REGIME_RATIO = 0.5


class Decision(str, Enum):
    YES = "YES"
    NO = "NO"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class IIDTestConfig:
    U: int
    n: int
    m: int
    eps1: float
    eps2: float
    delta: float
    c: float
    poissonize: bool = True

    def __post_init__(self):
        if self.U < 1 or self.n < 1:
            raise ValueError("U and n must be positive")
        if self.m < 0:
            raise ValueError("m must be non-negative")
        if not 0 <= self.eps1 < self.eps2 <= 1:
            raise ValueError(f"need 0 <= eps1 < eps2 <= 1, got ({self.eps1}, {self.eps2})")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.c <= 0:
            raise ValueError("c must be positive")


@dataclass(frozen=True)
class SampleCounts:
    """Symbol counts for one distribution: primary half and auxiliary half.

    ``drawn`` records the realised sample size per half (the Poisson draw
    under Poissonization, ``m`` otherwise); ``truncated`` is set when a draw
    exceeded the symbols available.
    """

    primary: np.ndarray
    auxiliary: np.ndarray
    nominal_m: int
    drawn: tuple[int, int]
    truncated: bool = False


@dataclass(frozen=True)
class GStatistic:
    per_pair_terms: np.ndarray  # (U, n): G_{u,i} / f_hat_{u,i}
    total: float
    f_hat: np.ndarray  # (U, n)
    tau: float
    raw: np.ndarray = field(repr=False)  # (U, n): G_{u,i}


@dataclass(frozen=True)
class IIDVerdict:
    decision: Decision
    statistic: GStatistic
    truncated: bool = False

    @property
    def G(self) -> float:
        return self.statistic.total

    @property
    def tau(self) -> float:
        return self.statistic.tau


def build_counts(half1: Sequence[int], half2: Sequence[int], config: IIDTestConfig,
                 rng: np.random.Generator | None = None) -> SampleCounts:
    """Tabulate the two halves of one distribution's samples.

    With ``config.poissonize`` a size ``K ~ Poisson(m)`` is drawn per half
    from ``rng`` and the first ``K`` symbols are used; if ``K`` exceeds the
    half, it is cut to the available length and a
    :class:`TruncatedPoissonDraw` warning is issued. Without Poissonization
    exactly the first ``m`` symbols of each half are used.
    """
    m, n = config.m, config.n
    halves = [np.asarray(half1, dtype=np.int64), np.asarray(half2, dtype=np.int64)]
    for h in halves:
        if h.size < m:
            raise InsufficientSamples(f"half has {h.size} symbols, need at least m={m}")
        if h.size and (h.min() < 0 or h.max() >= n):
            raise ValueError(f"symbols must lie in [0, {n})")
    truncated = False
    if config.poissonize:
        if rng is None:
            raise ValueError("Poissonized counting needs an rng")
        sizes = [int(k) for k in rng.poisson(m, size=2)]
        if sizes[0] > halves[0].size or sizes[1] > halves[1].size:
            truncated = True
            warnings.warn(f"Poisson draw {sizes} exceeds available samples; truncated", TruncatedPoissonDraw, stacklevel=2)
            sizes = [min(k, h.size) for k, h in zip(sizes, halves)]
    else:
        sizes = [m, m]
    primary, auxiliary = (np.bincount(h[:k], minlength=n) for h, k in zip(halves, sizes))
    return SampleCounts(primary, auxiliary, m, (sizes[0], sizes[1]), truncated)


def f_hat(aux_p, aux_q, m: int, n: int) -> np.ndarray:
    """Data-driven weights from the auxiliary halves; always ``>= 1``."""
    aux_p = np.asarray(aux_p, dtype=float)
    aux_q = np.asarray(aux_q, dtype=float)
    if m > n:
        scale = m / n
        return np.maximum.reduce([np.abs(aux_p - aux_q) / math.sqrt(scale), (aux_p + aux_q) / scale, np.ones_like(aux_p)])
    return np.maximum(aux_p + aux_q, 1.0)


def g_terms(v, y) -> np.ndarray:
    """``(V - Y)^2 - V - Y``, elementwise. Negative values are legitimate."""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    return (v - y) ** 2 - v - y


def threshold(m: float, n: int, U: int, eps2: float, c: float) -> float:
    """``c * min(m^{3/2} eps2 / sqrt(n), U m^2 eps2^2 / n)``."""
    return c * min(m**1.5 * eps2 / math.sqrt(n), U * m**2 * eps2**2 / n)


def config_threshold(config: IIDTestConfig) -> float:
    return threshold(config.m, config.n, config.U, config.eps2, config.c)


def g_statistic(counts_p: Sequence[SampleCounts], counts_q: Sequence[SampleCounts], config: IIDTestConfig) -> GStatistic:
    if len(counts_p) != config.U or len(counts_q) != config.U:
        raise ValueError(f"expected {config.U} pairs, got {len(counts_p)} and {len(counts_q)}")
    V = np.stack([c.primary for c in counts_p])
    Y = np.stack([c.primary for c in counts_q])
    weights = np.stack([f_hat(cp.auxiliary, cq.auxiliary, config.m, config.n) for cp, cq in zip(counts_p, counts_q)])
    raw = g_terms(V, Y)
    terms = raw / weights
    return GStatistic(per_pair_terms=terms, total=float(terms.sum()), f_hat=weights,
                      tau=config_threshold(config), raw=raw)


def iid_tester(samples_p: Sequence[tuple], samples_q: Sequence[tuple], config: IIDTestConfig, seed=0) -> IIDVerdict:
    """Run the tester on ``U`` pairs of sample sets.

    ``samples_p[u]`` and ``samples_q[u]`` are ``(half1, half2)`` symbol
    sequences. ``seed`` (int or Generator) drives the Poisson sample sizes.
    Returns YES iff ``G < tau``; a tie is a NO.
    """
    if len(samples_p) != config.U or len(samples_q) != config.U:
        raise ValueError(f"expected {config.U} pairs of sample sets")
    rng = seed if isinstance(seed, np.random.Generator) else None
    cp, cq = [], []
    for u in range(config.U):
        r_p = rng or derive_rng(seed, "iid", u, "P")
        r_q = rng or derive_rng(seed, "iid", u, "Q")
        cp.append(build_counts(*samples_p[u], config, r_p))
        cq.append(build_counts(*samples_q[u], config, r_q))
    stat = g_statistic(cp, cq, config)
    decision = Decision.YES if stat.total < stat.tau else Decision.NO
    return IIDVerdict(decision, stat, truncated=any(c.truncated for c in cp + cq))


def complexity_terms(n: int, U: int, eps1: float, eps2: float, delta: float) -> tuple[float, float, float, float]:
    """The four terms of the i.i.d. sample-complexity bound, constant omitted."""
    return (
        math.sqrt(n / (eps2**4 * delta * U)),
        n * eps1**2 / eps2**4,
        n * eps1 / eps2**2,
        n ** (2 / 3) / (U * eps2 ** (4 / 3)),
    )


def required_m(n: int, U: int, eps1: float, eps2: float, delta: float, C: float | None = None,
               regime_ratio: float = DEFAULT_REGIME_RATIO) -> int:
    """Per-half sample size ``ceil(C * sum(complexity_terms))``.

    ``C`` defaults to the shipped calibration. ``eps1`` above
    ``regime_ratio * eps2`` is outside the range the calibration covers and
    raises :class:`RegimeViolation`.
    """
    if not 0 < eps2 <= 1 or eps1 < 0:
        raise ValueError("need 0 <= eps1 and 0 < eps2 <= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if eps1 > regime_ratio * eps2:
        raise RegimeViolation(f"eps1={eps1} exceeds {regime_ratio} * eps2={eps2}")
    if C is None:
        from .calibration import default_calibration
        C = default_calibration().C
    # guard against 181.00000000000003-style float noise before the ceiling
    return max(1, math.ceil(round(C * sum(complexity_terms(n, U, eps1, eps2, delta)), 9)))


def poisson_headroom(m: int) -> int:
    """Half length that a Poisson(m) draw exceeds with negligible probability (about 8 sigma)."""
    return m + int(8 * math.sqrt(m)) + 10


def draw_sample_sets(dists, m: int, rng: np.random.Generator, poissonize: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    """Two halves of i.i.d. symbols per distribution, long enough for a Poisson(m) draw."""
    dists = np.asarray(dists, dtype=float)
    size = poisson_headroom(m) if poissonize else m
    n = dists.shape[1]
    return [(rng.choice(n, size=size, p=p), rng.choice(n, size=size, p=p)) for p in dists]


def simulate_iid_trial(P, Q, config: IIDTestConfig, rng: np.random.Generator) -> IIDVerdict:
    """Draw fresh samples from the true distributions and run the tester once."""
    sp = draw_sample_sets(P, config.m, rng, config.poissonize)
    sq = draw_sample_sets(Q, config.m, rng, config.poissonize)
    return iid_tester(sp, sq, config, rng)


def iid_yes_rate(P, Q, config: IIDTestConfig, trials: int, seed) -> tuple[float, float]:
    """Empirical YES rate and its binomial standard error over seeded trials."""
    yes = sum(simulate_iid_trial(P, Q, config, derive_rng(seed, "trial", t)).decision is Decision.YES
              for t in range(trials))
    rate = yes / trials
    return rate, math.sqrt(max(rate * (1 - rate), 0.0) / trials)
