"""Counterfactual regulation: do paired users receive indistinguishable filtering?

For pairs ``(i, j)`` of users that differ only in a protected property, two
filtered-vs-reference runs share user ``i``'s reference feeds as the common
anchor:

* block 1 tests ``filtered_i`` against ``reference_i``;
* block 2 tests ``filtered_j`` against ``reference_i``;

and the combiner answers YES only when both blocks do. Because
``||Q_i - Q_j|| <= ||P_i - Q_i|| + ||P_i - Q_j||``, two YES answers bound
the distance between the paired users' filtering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .errors import PairingMismatch
from .iid import Decision
from .oracle import linf_matrix_distance
from .regulatory import FeedBatch, RegulatoryConfig, Verdict, horizon_multiplier, regulatory_tester
from .markov import MarkovChain, estimate_cover_time
from .rng import derive_seed


@dataclass(frozen=True)
class CounterfactualPairing:
    pairs: tuple

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        if not pairs:
            raise ValueError("pairing is empty")
        if len(set(pairs)) != len(pairs):
            raise ValueError("pairing repeats a pair")
        if any(i == j for i, j in pairs):
            raise ValueError("a user cannot be paired with itself")
        object.__setattr__(self, "pairs", pairs)

    @property
    def first_of(self) -> tuple:
        return tuple(i for i, _ in self.pairs)

    @property
    def second_of(self) -> tuple:
        return tuple(j for _, j in self.pairs)

    def users(self) -> set:
        return set(self.first_of) | set(self.second_of)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class CounterfactualConfig:
    """Block-level settings on top of a regulation config.

    ``base.U`` is ignored: each block runs on ``len(pairing)`` batch pairs.
    """

    base: RegulatoryConfig
    delta_b1: float
    delta_b2: float

    def __post_init__(self):
        for d in (self.delta_b1, self.delta_b2):
            if not 0 < d < 1:
                raise ValueError("block risks must lie in (0, 1)")

    @property
    def delta(self) -> float:
        return max(self.delta_b1, self.delta_b2)

    def block_config(self, U: int, block: int) -> RegulatoryConfig:
        """Config of one block; both blocks share the successor budget of the combined risk."""
        shared = replace(self.base, U=U, delta=self.delta)
        m_bar = shared.successor_budget(pair_budget_alphabet(shared.n))
        return replace(shared, delta=self.delta_b1 if block == 1 else self.delta_b2, m_bar=m_bar)


@dataclass(frozen=True)
class CounterfactualVerdict:
    decision: Decision
    block1: Verdict
    block2: Verdict

    def to_json(self) -> dict:
        return {"decision": self.decision.value,
                "block1": self.block1.to_json(), "block2": self.block2.to_json()}


def combine(r1: Decision, r2: Decision) -> Decision:
    return Decision.YES if r1 is Decision.YES and r2 is Decision.YES else Decision.NO


def pair_alphabet(n: int) -> int:
    """Number of unordered state pairs, ``n(n-1)/2``."""
    return n * (n - 1) // 2


def pair_budget_alphabet(n: int) -> int:
    """Alphabet parameter for the counterfactual sample budget.

    Floored at ``n``: for ``n <= 3`` the pair count does not exceed ``n`` and
    would shrink the budget below what a single block already needs.
    """
    return max(n, pair_alphabet(n))


def counterfactual_tester(pairing: CounterfactualPairing, filtered: Mapping[int, FeedBatch],
                          reference: Mapping[int, FeedBatch], config: CounterfactualConfig, seed=0,
                          block_tester: Callable[..., Verdict] = regulatory_tester) -> CounterfactualVerdict:
    """Run both blocks and combine them.

    ``filtered`` must hold a batch for every user in the pairing and
    ``reference`` one for every first-projection user. Both blocks receive
    the very same reference list object. ``block_tester`` is injectable so
    the combiner can be exercised with stubs.
    """
    missing = [u for u in sorted(pairing.users()) if u not in filtered]
    missing += [f"R:{u}" for u in sorted(set(pairing.first_of)) if u not in reference]
    if missing:
        raise PairingMismatch(f"no feed batch for users {missing}")
    U = len(pairing)
    ref = [reference[i] for i in pairing.first_of]
    first = [filtered[i] for i in pairing.first_of]
    second = [filtered[j] for j in pairing.second_of]
    r1 = block_tester(first, ref, config.block_config(U, 1), derive_seed(seed, "block", 1), match_users=False)
    r2 = block_tester(second, ref, config.block_config(U, 2), derive_seed(seed, "block", 2), match_users=False)
    return CounterfactualVerdict(combine(r1.decision, r2.decision), r1, r2)


def counterfactual_variability(chains: Mapping[int, MarkovChain], pairing: CounterfactualPairing) -> float:
    """Average over pairs of the max-row l1 distance between the two users' filtered chains."""
    return sum(linf_matrix_distance(chains[i], chains[j]) for i, j in pairing.pairs) / len(pairing)


def required_horizon_cf(chains: Sequence[tuple[MarkovChain, MarkovChain]], config: CounterfactualConfig,
                        trials: int = 200, seed=0, n_pairs: int | None = None) -> int:
    """Horizon for the counterfactual procedure.

    Same construction as the single-block horizon, with the successor budget
    taken at the pair alphabet and the combined risk ``max(delta_b1, delta_b2)``.
    ``chains`` lists the ``(P_R, Q_F)`` pairs of every user whose feeds enter
    either block; ``n_pairs`` (default ``len(chains)``) is the pairing size
    the blocks run with.
    """
    U = len(chains)
    k = config.block_config(n_pairs or U, 1).m_bar
    worst = 0.0
    cache = {}
    for pair in chains:
        for chain in pair:
            if chain not in cache:
                cache[chain] = estimate_cover_time(chain, config.base.M, k, trials, seed).t_hat
            worst = max(worst, cache[chain])
    return int(math.ceil(horizon_multiplier(U, config.delta) * worst)) + 1


def triangle_bound_holds(P_ref: Mapping[int, MarkovChain], Q_filt: Mapping[int, MarkovChain],
                         pairing: CounterfactualPairing) -> bool:
    """Check ``sum ||Q_i - Q_j|| <= sum ||P_i - Q_i|| + sum ||P_i - Q_j||`` on known chains."""
    lhs = sum(linf_matrix_distance(Q_filt[i], Q_filt[j]) for i, j in pairing.pairs)
    rhs = sum(linf_matrix_distance(P_ref[i], Q_filt[i]) + linf_matrix_distance(P_ref[i], Q_filt[j])
              for i, j in pairing.pairs)
    return bool(lhs <= rhs + 1e-12)

