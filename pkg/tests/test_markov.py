import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feedaudit.errors import (BudgetExceeded, CapExceeded, InsufficientCoverage, NegativeEntry, NotIrreducible,
                              NotStochastic)
from feedaudit.markov import (chain_diagnostics, counting_measure, estimate_cover_time, extract_successors,
                              iter_trajectory, joint_k_cover_stop, mixing_time_estimate, sample_cover_times,
                              simulate_trajectory, stationary_distribution, successor_bearing_visits, validate_chain)

SYM = [[0.5, 0.5], [0.5, 0.5]]
ALT = [[0.0, 1.0], [1.0, 0.0]]
LAZY = [[0.9, 0.1], [0.2, 0.8]]


@st.composite
def positive_chains(draw, max_n=5):
    n = draw(st.integers(2, max_n))
    raw = draw(st.lists(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n), min_size=n, max_size=n))
    m = np.array(raw)
    return m / m.sum(axis=1, keepdims=True)


class TestValidate:
    def test_symmetric_is_valid(self):
        c = validate_chain(SYM)
        assert c.n == 2 and c.irreducible

    def test_identity_is_reducible(self):
        with pytest.raises(NotIrreducible):
            validate_chain([[1, 0], [0, 1]])
        assert not validate_chain([[1, 0], [0, 1]], allow_reducible=True).irreducible

    def test_row_sum_off(self):
        with pytest.raises(NotStochastic):
            validate_chain([[0.9, 0.2], [0.2, 0.8]])

    def test_negative_entry(self):
        with pytest.raises(NegativeEntry):
            validate_chain([[1.1, -0.1], [0.5, 0.5]])

    def test_rows_are_read_only(self):
        c = validate_chain(SYM)
        with pytest.raises(ValueError):
            c.rows[0, 0] = 1.0


class TestSimulate:
    def test_alternating_chain(self):
        t = simulate_trajectory(validate_chain(ALT), 0, 5, seed=3)
        assert t.states.tolist() == [0, 1, 0, 1, 0]

    def test_symmetric_frequencies(self):
        t = simulate_trajectory(validate_chain(SYM), 0, 10**5, seed=11)
        freq = np.bincount(t.states, minlength=2) / 10**5
        assert np.all(np.abs(freq - 0.5) <= 0.01)

    def test_same_seed_same_trajectory(self):
        c = validate_chain(LAZY)
        assert simulate_trajectory(c, 1, 500, 42) == simulate_trajectory(c, 1, 500, 42)
        assert simulate_trajectory(c, 1, 500, 42) != simulate_trajectory(c, 1, 500, 43)

    def test_iterator_matches_batch(self):
        c = validate_chain(LAZY)
        it = iter_trajectory(c, 0, seed=9, block=7)
        head = [next(it) for _ in range(50)]
        assert head[0] == 0 and set(head) <= {0, 1}

    @settings(max_examples=30, deadline=None)
    @given(positive_chains(), st.integers(0, 2**32), st.integers(1, 200))
    def test_labels_stay_in_range(self, rows, seed, length):
        c = validate_chain(rows)
        t = simulate_trajectory(c, 0, length, seed)
        assert len(t) == length and t.states.min() >= 0 and t.states.max() < c.n

    def test_zero_transition_never_taken(self):
        c = validate_chain([[0.5, 0.5, 0.0], [0.3, 0.3, 0.4], [0.2, 0.4, 0.4]])
        s = simulate_trajectory(c, 0, 20000, 5).states
        assert not np.any((s[:-1] == 0) & (s[1:] == 2))


class TestStationary:
    def test_symmetric(self):
        assert np.allclose(stationary_distribution(validate_chain(SYM)), [0.5, 0.5])

    def test_lazy_against_linear_solve(self):
        P = np.array(LAZY)
        A = np.vstack([P.T - np.eye(2), np.ones(2)])
        exact = np.linalg.lstsq(A, np.array([0, 0, 1.0]), rcond=None)[0]
        assert np.allclose(stationary_distribution(validate_chain(LAZY)), exact, atol=1e-10)
        assert np.allclose(exact, [2 / 3, 1 / 3])

    def test_periodic_chain(self):
        assert np.allclose(stationary_distribution(validate_chain(ALT)), [0.5, 0.5])

    @settings(max_examples=40, deadline=None)
    @given(positive_chains())
    def test_is_fixed_point(self, rows):
        pi = stationary_distribution(validate_chain(rows))
        assert np.isclose(pi.sum(), 1.0) and np.all(pi >= 0)
        assert np.allclose(pi @ rows, pi, atol=1e-9)


class TestMixing:
    def test_symmetric_one_step(self):
        assert mixing_time_estimate(validate_chain(SYM)) == 1

    def test_lazy_matches_direct_powering(self):
        P = np.array(LAZY)
        pi = np.array([2 / 3, 1 / 3])
        t, Pt = 1, P.copy()
        while 0.5 * np.abs(Pt - pi).sum(axis=1).max() > 0.25:
            t, Pt = t + 1, Pt @ P
        assert mixing_time_estimate(validate_chain(LAZY)) == t

    def test_periodic_never_mixes(self):
        with pytest.raises(CapExceeded):
            mixing_time_estimate(validate_chain(ALT))


class TestCover:
    def test_two_walks_alternating(self):
        assert joint_k_cover_stop([[0, 1, 0, 1], [1, 0, 1, 0]], k=1) == 1

    def test_second_visit(self):
        # walk (1,1,2,1,2) in 1-based labels; second visit to state 2 is at t=5
        assert joint_k_cover_stop([[0, 0, 1, 0, 1, 0]], k=2) == 5

    def test_exhausted_stream(self):
        with pytest.raises(BudgetExceeded):
            joint_k_cover_stop([[0, 0, 0]], k=1, n=2)

    def test_symmetric_geometric_oracle(self):
        tau = sample_cover_times(validate_chain(SYM), 1, 1, 10**4, seed=1, profile="start:0")
        se = tau.std(ddof=1) / np.sqrt(tau.size)
        assert abs(tau.mean() - 3.0) <= max(0.05, 4 * se)

    def test_alternating_deterministic(self):
        est = estimate_cover_time(validate_chain(ALT), 1, 1, 100, seed=0)
        assert est.profiles["start:0"][0] == 2.0 and est.profiles["start:1"][0] == 2.0

    def test_more_walks_cover_faster(self):
        c = validate_chain(SYM)
        one = sample_cover_times(c, 1, 1, 4000, 2, "stationary").mean()
        two = sample_cover_times(c, 2, 1, 4000, 2, "stationary").mean()
        assert two < one

    def test_worker_count_does_not_change_samples(self):
        c = validate_chain(LAZY)
        a = sample_cover_times(c, 2, 3, 3000, 5, "stationary", workers=1)
        b = sample_cover_times(c, 2, 3, 3000, 5, "stationary", workers=4)
        assert np.array_equal(a, b)

    def test_vectorized_matches_reference_stop(self):
        # the vectorized sampler and the streaming definition agree on stop times of the same walks
        c = validate_chain(LAZY)
        walks = [simulate_trajectory(c, 0, 400, s).states for s in range(3)]
        t = joint_k_cover_stop(walks, k=2)
        counts = np.zeros(2)
        for step in range(t):
            for w in walks:
                counts[w[step]] += 1
        assert counts.min() >= 2
        counts -= np.bincount([w[t - 1] for w in walks], minlength=2)
        assert counts.min() < 2

    def test_trials_floor(self):
        with pytest.raises(ValueError):
            estimate_cover_time(validate_chain(SYM), 1, 1, 10, 0)


class TestSuccessors:
    TRAJ = [0, 1, 0, 0, 1, 0]

    def test_extract(self):
        assert extract_successors([self.TRAJ], 0, 3).tolist() == [1, 0, 1]

    def test_final_position_excluded(self):
        assert successor_bearing_visits([self.TRAJ], 0) == 3
        with pytest.raises(InsufficientCoverage):
            extract_successors([self.TRAJ], 0, 5)

    def test_trajectory_major_order(self):
        assert extract_successors([[0, 1, 0, 1], [0, 0, 1]], 0, 4).tolist() == [1, 1, 0, 1]

    def test_successor_frequencies(self):
        c = validate_chain([[0.3, 0.7], [0.6, 0.4]])
        t = simulate_trajectory(c, 0, 300_000, 8)
        s = extract_successors([t], 0, 10**5)
        assert abs(np.mean(s == 0) - 0.3) <= 0.01


def test_counting_measure():
    cm = counting_measure([0, 1, 1, 2, 1], 3)
    assert cm.counts.tolist() == [1, 3, 1] and cm.total == 5
    assert counting_measure([0, 1, 1, 2, 1], 3, t=2).counts.tolist() == [1, 1, 0]


def test_diagnostics():
    d = chain_diagnostics(validate_chain(LAZY), cover=[(1, 1)], trials=200, seed=0)
    assert np.isclose(d.pi_star, 1 / 3)
