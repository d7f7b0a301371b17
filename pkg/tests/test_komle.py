import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momdp.envs import make_combination_lock
from momdp.komle import (ConfidenceSet, ModelClass, PlanCache, confidence_set_from_scores,
                         dataset_log_likelihoods, default_beta, exploration_policies,
                         optimistic_select, run_komle, update_confidence_set)
from momdp.pomdp import OpenLoopPolicy, TabularPOMDP, simulate_episode
from momdp.spectral import revealing_certificate
from momdp.suites import lock_class, revealing_class


def bandit(p_win, emission=1.0):
    """Two steps; action 1 reaches the rewarded state with probability ``p_win``."""
    T = np.zeros((2, 2, 2, 2))
    T[0, :, 0] = (0.0, 1.0)
    T[0, :, 1] = (p_win, 1 - p_win)
    T[1] = np.eye(2)[:, None, :]
    e = emission
    E = np.array([[[e, 1 - e], [1 - e, e]]] * 2)
    return TabularPOMDP(np.array([1.0, 0.0]), T, E, np.array([[0.0, 0.0], [1.0, 0.0]]))


class TestExplorationPolicies:
    def test_first_is_uniform(self):
        pols = exploration_policies(OpenLoopPolicy([1, 1, 1], 2), 3)
        assert len(pols) == 3
        assert np.allclose(pols[0].action_probs((0,)), 0.5)

    def test_last_follows_prefix(self):
        pols = exploration_policies(OpenLoopPolicy([1, 0, 1], 2), 3)
        assert pols[2].action_probs((0,)).tolist() == [0.0, 1.0]
        assert pols[2].action_probs((0, 1, 1)).tolist() == [1.0, 0.0]
        assert np.allclose(pols[2].action_probs((0, 1, 1, 0, 0)), 0.5)

    @pytest.mark.parametrize("h", [1, 2, 3])
    def test_uniform_marginal_at_switch_step(self, h):
        pol = exploration_policies(OpenLoopPolicy([1, 0, 1], 2), 3)[h - 1]
        hist = (0,)
        for a in [1, 0, 1][: h - 1]:
            hist = hist + (a, 0)
        assert np.allclose(pol.action_probs(hist), 0.5)


class TestConfidenceSet:
    def test_singleton(self):
        m = bandit(0.7)
        data = [(OpenLoopPolicy([1, 0], 2), simulate_episode(m, OpenLoopPolicy([1, 0], 2), 2, 0))]
        conf = update_confidence_set([m], data, 0.0)
        assert conf.members.tolist() == [0]

    def test_beta_zero_is_argmax(self):
        conf = confidence_set_from_scores(np.array([-3.0, -1.0, -1.0, -2.0]), 0.0)
        assert conf.members.tolist() == [1, 2]
        assert 1 in conf and 0 not in conf

    def test_all_impossible(self):
        with pytest.raises(ValueError):
            confidence_set_from_scores(np.array([-np.inf, -np.inf]), 1.0)

    def test_excludes_perturbed_emission(self):
        truth = bandit(1.0, emission=0.9)
        wrong = bandit(1.0, emission=0.8)
        beta = math.log(2 / 0.05)
        pol = OpenLoopPolicy([1, 0], 2)
        excluded = 0
        for seed in range(40):
            g = np.random.default_rng(seed)
            data = [(pol, simulate_episode(truth, pol, 1, g)) for _ in range(200)]
            conf = update_confidence_set([truth, wrong], data, beta)
            excluded += 1 not in conf
        assert excluded / 40 >= 0.95

    @settings(max_examples=20, deadline=None)
    @given(scores=st.lists(st.floats(-100, 0), min_size=1, max_size=8), beta=st.floats(0, 10))
    def test_nonempty(self, scores, beta):
        conf = confidence_set_from_scores(np.array(scores), beta)
        assert len(conf) >= 1 and int(np.argmax(scores)) in conf


class TestOptimisticSelect:
    def test_argmax_value(self):
        cands = [bandit(0.3), bandit(0.7)]
        i, plan = optimistic_select(cands, ConfidenceSet(np.arange(2), np.zeros(2)))
        assert i == 1 and plan.value == pytest.approx(0.7)

    def test_ties_to_lowest_index(self):
        cands = [bandit(0.5), bandit(0.5)]
        i, _ = optimistic_select(cands, ConfidenceSet(np.array([1, 0]), np.zeros(2)))
        assert i == 0

    def test_plans_cached(self):
        cache = PlanCache([bandit(0.5)])
        assert cache[0] is cache[0]

    def test_class_dims_checked(self):
        with pytest.raises(ValueError):
            ModelClass([bandit(0.5), make_combination_lock(3, 2)], 1.0)


class TestRun:
    def test_singleton_optimal_from_start(self):
        m = bandit(0.6)
        res = run_komle(m, ModelClass([m], 1.0, 0), 5, 1, seed=0)
        assert np.allclose(res.values, res.optimal_value)
        assert res.dataset_size == 10 and res.samples == 5 * 2 * 1 * 2

    def test_optimism_and_growth(self):
        truth, mc = revealing_class(T=20)
        res = run_komle(truth, mc, 20, 2, seed=1)
        assert res.optimism_ok.all()
        assert res.retained.all()
        assert [e["iteration"] for e in res.log] == list(range(1, 21))

    def test_revealing_class_is_revealing(self):
        truth, _ = revealing_class()
        assert revealing_certificate(truth, 0, 2, "lp_exact").norm <= 2.0

    def test_lock_class_one_iteration(self):
        mc = lock_class(4, 2, (0, 0, 0))
        assert len(mc) == 8 and mc.true_index == 0
        env = mc.candidates[5]
        res = run_komle(env, ModelClass(mc.candidates, mc.beta, 5), 1, 1, seed=0)
        assert res.selected[0] == 0 and res.values[0] == 0.0

    def test_deterministic(self):
        truth, mc = revealing_class(T=10)
        a = run_komle(truth, mc, 10, 2, seed=3)
        b = run_komle(truth, mc, 10, 2, seed=3)
        assert np.array_equal(a.values, b.values) and a.log == b.log

    def test_beta_default(self):
        assert default_beta(4, 300, 0.1) == pytest.approx(math.log(4 * 300 / 0.1))

    def test_dataset_likelihoods_shape(self):
        m = bandit(0.5)
        pol = OpenLoopPolicy([1, 0], 2)
        data = [(pol, simulate_episode(m, pol, 3, s)) for s in range(4)]
        assert dataset_log_likelihoods([m, bandit(0.9)], data).shape == (2,)
