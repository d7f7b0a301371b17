import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momdp.envs import make_combination_lock, make_random_distinguishable
from momdp.ost import (EpisodeCounts, OstConfig, OstState, PseudoStateStore,
                       assign_pseudo_states, bonus_values, compute_bonuses,
                       counts_from_trajectory, estimate_model, optimistic_rewards, ost_betas,
                       ost_hyperparameters, ost_k, ost_test_delta, permutation_consistent,
                       run_ost, simulate_episode_counts)
from momdp.pomdp import OpenLoopPolicy, TabularPOMDP, UniformPolicy, simulate_episode


def routed_model():
    """Two states, identity emissions; action ``a`` at step 1 moves to state ``a``."""
    T = np.zeros((2, 2, 2, 2))
    T[0, :, 0, 0] = 1
    T[0, :, 1, 1] = 1
    T[1] = np.eye(2)[:, None, :]
    return TabularPOMDP(np.array([0.5, 0.5]), T, np.array([np.eye(2)] * 2),
                        np.array([[0.0, 0.0], [0.0, 1.0]]))


def state_with_counts(n_s, n_sa, beta1, beta2):
    H = n_s.shape[0]
    return OstState(0, np.ones(H), n_s, n_sa, None, None, None, None, beta1, beta2)


class TestHyperparameters:
    def test_forms(self):
        S, A, O, H, T, d = 3, 2, 2, 2, 500, 0.1
        assert ost_test_delta(S, T, H, d) == d / (2 * S * T * H)
        b1, b2 = ost_betas(S, A, O, H, T, d)
        assert b1 == pytest.approx(H**3 * math.log(O * S * A * H * T / d))
        assert b2 == pytest.approx(O * math.log(O * S * T * H / d))
        k = ost_k(S, O, H, T, 0.5, d, c1=4.0)
        factor = math.sqrt(2) / 0.25 + 2 ** (2 / 3) / 0.5 ** (4 / 3)
        assert k == math.ceil(4.0 * factor * math.log(2 * S * T * H / d))
        hp = ost_hyperparameters(S, A, O, H, T, 0.5, d, c1=4.0)
        assert hp["k"] == k and hp["num_blocks"] == math.ceil(18 * math.log(1 / hp["test_delta"]))


class TestBonuses:
    def test_examples(self):
        st_ = state_with_counts(np.array([[4]]), np.array([[[1]]]), 4.0, 1.0)
        b_s, b_sa = compute_bonuses(st_, 0, 0, 0)
        assert b_sa == 2.0 and b_s == 0.5

    def test_zero_count_caps(self):
        H = 3
        st_ = state_with_counts(np.zeros((H, 1)), np.zeros((H, 1, 1)), 1.0, 1.0)
        assert compute_bonuses(st_, 1, 0, 0) == (2.0, 2.0 * H)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(0, 10**4), beta=st.floats(0, 100), cap=st.floats(0.1, 10))
    def test_bonus_bounded(self, n, beta, cap):
        b = float(bonus_values(n, beta, cap))
        assert 0 <= b <= cap
        if n > 0:
            assert b == pytest.approx(min(math.sqrt(beta / n), cap))

    def test_optimistic_reward_clipped(self):
        r_bar = np.array([[0.5, 0.9]])
        r_hat, _, _ = optimistic_rewards(r_bar, np.array([[100, 0]]),
                                         np.array([[[100, 100], [0, 0]]]), 1.0, 1.0)
        assert r_hat.max() <= 1.0
        assert r_hat[0, 0, 0] == pytest.approx(0.5 + 0.1 + 0.1)


class TestEstimate:
    def test_single_deterministic_episode(self):
        labels = np.array([[0, 1]])
        d0, T, E, r_bar, n_s, n_sa = estimate_model(labels, np.array([[1, 0]]),
                                                    np.array([[1, 0]]), [1, 2],
                                                    np.array([[0.0, 1.0], [1.0, 0.0]]), 2)
        assert d0.tolist() == [1.0, 0.0]
        assert T[0, 0, 1].tolist() == [0.0, 1.0]
        assert E[0, 0].tolist() == [0.0, 1.0] and E[1, 1].tolist() == [1.0, 0.0]
        assert r_bar[0, 0] == 1.0 and r_bar[1, 1] == 1.0

    def test_zero_count_placeholders(self):
        _, T, E, r_bar, n_s, _ = estimate_model(np.array([[0, 0]]), np.array([[0, 0]]),
                                                np.array([[0, 0]]), [2, 3],
                                                np.ones((2, 4)) * 0.5, 2)
        assert np.allclose(E[0, 1], 0.25) and r_bar[0, 1] == 0.0
        assert np.allclose(T[0, 1, 0], [1 / 3, 1 / 3, 1 / 3])
        assert np.allclose(T[0, 0, 1], [1 / 3, 1 / 3, 1 / 3])

    def test_all_k_emissions(self):
        totals = np.array([[[3, 1]], [[2, 2]]])
        _, _, E, _, _, _ = estimate_model(np.zeros((2, 1), int), np.zeros((2, 1), int),
                                          np.zeros((2, 1), int), [1], np.zeros((1, 2)), 1,
                                          obs_totals=totals, k=4)
        assert E[0, 0].tolist() == [5 / 8, 3 / 8]

    @settings(max_examples=25, deadline=None)
    @given(t=st.integers(1, 40), seed=st.integers(0, 10**6))
    def test_count_conservation(self, t, seed):
        g = np.random.default_rng(seed)
        H, A, O = 3, 2, 3
        labels = g.integers(0, 3, (t, H))
        _, T, E, _, n_s, n_sa = estimate_model(labels, g.integers(0, A, (t, H)),
                                               g.integers(0, O, (t, H)), labels.max(0) + 1,
                                               g.random((H, O)), A)
        assert np.all(n_s.sum(axis=1) == t) and np.all(n_sa.sum(axis=(1, 2)) == t)
        assert np.allclose(E.sum(-1), 1) and np.allclose(T.sum(-1), 1)

    def test_emission_error_decays(self):
        g = np.random.default_rng(0)
        p = np.array([0.6, 0.3, 0.1])
        ns = np.array([100, 400, 1600, 6400])
        errs = []
        for n in ns:
            e = []
            for _ in range(60):
                obs = g.choice(3, size=(n, 1), p=p)
                _, _, E, _, _, _ = estimate_model(np.zeros((n, 1), int), np.zeros((n, 1), int),
                                                  obs, [1], np.zeros((1, 3)), 1)
                e.append(np.abs(E[0, 0] - p).sum())
            errs.append(np.mean(e))
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert -0.6 <= slope <= -0.4


class TestStore:
    def partitions(self, H, k, M):
        return [np.full(M, k // M)] * H

    def test_empty_store_label_one(self, rng):
        m, _ = make_random_distinguishable(3, 2, 3, 2, 0.5, seed=0)
        store = PseudoStateStore(2, 40, 3, self.partitions(2, 40, 4), rng=0)
        labels = assign_pseudo_states(store, simulate_episode(m, UniformPolicy(2), 40, rng))
        assert labels.tolist() == [0, 0] and store.counts.tolist() == [1, 1]

    def test_deterministic_emissions_same_labels(self):
        m = routed_model()
        store = PseudoStateStore(2, 12, 2, self.partitions(2, 12, 3), rng=0)
        pol = OpenLoopPolicy([1, 0], 2)
        a = store.assign(simulate_episode(m, pol, 12, 1))
        b = store.assign(simulate_episode(m, pol, 12, 2))
        assert a[1] == b[1]

    def test_disjoint_supports_never_merge(self):
        m = routed_model()
        store = PseudoStateStore(2, 12, 2, self.partitions(2, 12, 3), rng=0)
        a = store.assign(simulate_episode(m, OpenLoopPolicy([0, 0], 2), 12, 1))
        b = store.assign(simulate_episode(m, OpenLoopPolicy([1, 0], 2), 12, 2))
        assert a[1] != b[1] and store.count(1) == 2

    def test_rep_cap(self):
        m = routed_model()
        store = PseudoStateStore(2, 12, 2, self.partitions(2, 12, 3), rep_cap=3, rng=0)
        for i in range(10):
            store.assign(simulate_episode(m, OpenLoopPolicy([0, 0], 2), 12, i))
        assert store.labels[1][0].n == 3 and store.labels[1][0].seen == 10

    def test_wrong_k(self):
        store = PseudoStateStore(2, 12, 2, self.partitions(2, 12, 3))
        with pytest.raises(ValueError):
            store.assign(simulate_episode(routed_model(), UniformPolicy(2), 5, 0))

    def test_permutation_consistency(self):
        hidden = np.array([[0, 1], [1, 1], [0, 0]])
        assert permutation_consistent(np.array([[2, 0], [1, 0], [2, 1]]), hidden)
        assert not permutation_consistent(np.array([[0, 0], [0, 0], [0, 1]]), hidden)
        assert not permutation_consistent(np.array([[0, 0], [1, 0], [2, 1]]), hidden)


class TestCountSampler:
    def test_same_law_as_sequences(self):
        m, _ = make_random_distinguishable(2, 2, 3, 2, 0.5, seed=1)
        k = 30
        parts = [np.array([6, 0, 9]), np.array([10, 10, 5])]
        g1, g2 = np.random.default_rng(0), np.random.default_rng(1)
        pol = UniformPolicy(2)
        n = 4000
        seq = [counts_from_trajectory(simulate_episode(m, pol, k, g1, oracle=True), parts, 3)
               for _ in range(n)]
        cnt = [simulate_episode_counts(m, pol, k, parts, g2) for _ in range(n)]
        for h in range(2):
            a = np.mean([e.blocks[h] for e in seq], axis=0)
            b = np.mean([e.blocks[h] for e in cnt], axis=0)
            assert np.abs(a - b).max() < 0.25
            first_a = np.mean([e.blocks[h][int(np.argmax(parts[h] > 0)), e.first_obs[h]]
                               for e in seq])
            first_b = np.mean([e.blocks[h][int(np.argmax(parts[h] > 0)), e.first_obs[h]]
                               for e in cnt])
            assert abs(first_a - first_b) < 0.25
        assert all(e.totals.sum(axis=1).tolist() == [k, k] for e in cnt)

    def test_counts_consistent(self):
        m = routed_model()
        e = simulate_episode_counts(m, OpenLoopPolicy([1, 0], 2), 20, [np.array([5, 5])] * 2,
                                    np.random.default_rng(0))
        assert isinstance(e, EpisodeCounts)
        assert e.blocks[1].tolist() == [[0, 5], [0, 5]] and e.totals[1].tolist() == [0, 20]


class TestRun:
    def test_fully_observable_converges(self):
        res = run_ost(routed_model(), 60, OstConfig(k=16, num_blocks=1, beta1=0.05, beta2=0.05),
                      seed=0)
        assert res.optimal_value == 1.0
        assert np.all(res.regret[30:] == 0.0)
        assert res.values[0] == pytest.approx(0.5)
        assert res.permutation_ok.all() and res.store.counts.tolist() == [2, 2]

    def test_single_symbol_blocks_merge(self):
        res = run_ost(routed_model(), 20, OstConfig(k=1, beta1=0.05, beta2=0.05), seed=0)
        assert res.store.counts.tolist() == [1, 1]

    def test_lock_flagged(self):
        res = run_ost(make_combination_lock(3, 2, seed=0), 5, OstConfig(k=20), seed=0)
        assert "distinguishability 0" in res.flags and len(res.values) == 5

    def test_first_policy_uniform(self):
        m, _ = make_random_distinguishable(2, 2, 2, 2, 0.5, seed=0)
        res = run_ost(m, 3, OstConfig(k=50, keep_policies=True), seed=0)
        assert np.allclose(res.policies[0].action_probs((0,)), 0.5)

    def test_determinism_and_samplers(self):
        m, _ = make_random_distinguishable(2, 2, 2, 2, 0.8, seed=3)
        cfg = OstConfig(k=5000, bonus_c1=0.01, bonus_c2=0.01)
        a = run_ost(m, 30, cfg, seed=4)
        b = run_ost(m, 30, cfg, seed=4)
        assert np.array_equal(a.values, b.values) and a.log == b.log
        assert a.samples_per_episode == 2 * 5000

    def test_logs(self):
        res = run_ost(routed_model(), 5, OstConfig(k=16, num_blocks=1), seed=0)
        entry = res.log[-1]
        assert entry["iteration"] == 5 and set(entry["tests"]) == {"accept", "reject", "fail"}
        assert res.cumulative_regret[-1] == pytest.approx(res.regret.sum())
