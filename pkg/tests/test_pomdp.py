import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from oracles import brute_force_log_likelihood
from momdp.envs import make_combination_lock
from momdp.pomdp import (InvalidModelError, KObsTrajectory, OpenLoopPolicy, SwitchPolicy,
                         TabularPOMDP, TabularPolicy, TreeTooLargeError, UniformPolicy,
                         check_valid, evaluate_policy, require_single_obs, simulate_episode,
                         trajectory_log_likelihood, validate)


def lock(H=3, A=2, good=(0, 1)):
    return make_combination_lock(H, A, good_actions=good)


class TestValidate:
    def test_lock_is_valid(self):
        m = lock()
        assert np.allclose(m.emissions[0], 0.5)
        assert validate(m) == []

    def test_transition_row_defect_names_index(self):
        m = lock()
        T = m.transitions.copy()
        T[1, 0, 1] = (0.5, 0.4)
        problems = validate(m.replace(transitions=T))
        assert len(problems) == 1
        assert "h=1, s=0, a=1" in problems[0] and "0.9" in problems[0]

    def test_negative_reward(self):
        m = lock()
        r = m.rewards.copy()
        r[0, 1] = -0.1
        problems = validate(m.replace(rewards=r))
        assert problems and "reward" in problems[0]
        with pytest.raises(InvalidModelError):
            check_valid(m.replace(rewards=r))

    def test_arrays_are_read_only(self):
        m = lock()
        with pytest.raises(ValueError):
            m.d0[0] = 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            TabularPOMDP(np.ones(2) / 2, np.ones((1, 2, 1, 2)) / 2, np.ones((1, 3, 2)) / 2,
                         np.zeros((1, 2)))


class TestPolicies:
    def test_switch_policy_prefix_then_uniform(self):
        base = OpenLoopPolicy([1, 1, 1], 3)
        pol = SwitchPolicy(base, 3)
        assert np.allclose(pol.action_probs((0,)), [0, 1, 0])
        assert np.allclose(pol.action_probs((0, 1, 0)), [0, 1, 0])
        assert np.allclose(pol.action_probs((0, 1, 0, 1, 0)), np.full(3, 1 / 3))

    def test_tabular_default_is_uniform(self):
        pol = TabularPolicy(2, {(0,): np.array([1.0, 0.0])})
        assert np.allclose(pol.action_probs((1,)), [0.5, 0.5])

    def test_full_block_policy_refused(self):
        class Peeking(UniformPolicy):
            first_slot_only = False
        with pytest.raises(ValueError):
            require_single_obs(Peeking(2))


class TestSimulate:
    @pytest.mark.parametrize("k", [1, 2, 7])
    def test_shapes(self, k, rng):
        m = random_model(rng, 3, 2, 4, 3)
        traj = simulate_episode(m, UniformPolicy(2), k, rng)
        assert traj.observations.shape == (3, k)
        assert traj.actions.shape == (3,)
        assert traj.hidden_states is None

    def test_point_mass_single_state(self):
        m = TabularPOMDP(np.ones(1), np.ones((2, 1, 2, 1)), np.array([[[0, 0, 1.0]]] * 2),
                         np.zeros((2, 3)))
        traj = simulate_episode(m, UniformPolicy(2), 5, 0)
        assert np.all(traj.observations == 2)

    def test_lock_good_path_hidden_states(self):
        m = lock(4, 2, (1, 0, 1))
        traj = simulate_episode(m, OpenLoopPolicy([1, 0, 1, 0], 2), 3, 0, oracle=True)
        assert traj.hidden_states.tolist() == [0, 0, 0, 0]
        assert np.all(traj.observations[-1] == 0)

    def test_block_length_checked(self):
        with pytest.raises(ValueError):
            KObsTrajectory(2, np.zeros(2, int), np.zeros((2, 3), int))

    def test_seed_determinism(self, rng):
        m = random_model(rng, 3, 2, 3, 3)
        a = simulate_episode(m, UniformPolicy(2), 4, 99, oracle=True)
        b = simulate_episode(m, UniformPolicy(2), 4, 99, oracle=True)
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.hidden_states, b.hidden_states)

    def test_empirical_frequency_concentration(self, rng):
        m = random_model(rng, 2, 1, 5, 1)
        n, delta, O = 400, 0.05, 5
        bound = 2 * np.sqrt(O / n) + np.sqrt(2 * np.log(1 / delta) / n)
        d = m.replace(d0=np.array([1.0, 0.0]))
        misses = 0
        for i in range(200):
            traj = simulate_episode(d, UniformPolicy(1), n, i)
            freq = np.bincount(traj.observations[0], minlength=O) / n
            misses += np.abs(freq - m.emissions[0, 0]).sum() > bound
        assert misses / 200 <= delta

    def test_k1_mean_reward_matches_evaluation(self, rng):
        m = random_model(rng, 2, 2, 2, 2)
        pol = UniformPolicy(2)
        exact = evaluate_policy(m, pol)
        g = np.random.default_rng(7)
        rewards = []
        for _ in range(10_000):
            traj = simulate_episode(m, pol, 1, g, check=False)
            rewards.append(sum(m.rewards[h, o] for h, o in enumerate(traj.first_observations)))
        rewards = np.array(rewards)
        assert abs(rewards.mean() - exact) <= 3 * rewards.std() / np.sqrt(len(rewards))


class TestLikelihood:
    def test_point_mass_model_only_policy_factors(self):
        m = lock(3, 2, (0, 0)).replace(emissions=np.array([np.eye(2)] * 3))
        pol = UniformPolicy(2)
        traj = KObsTrajectory(1, np.array([0, 0, 1]), np.array([[0], [0], [0]]))
        assert trajectory_log_likelihood(m, pol, traj) == pytest.approx(3 * np.log(0.5), abs=1e-12)

    def test_single_state_two_draws(self):
        m = TabularPOMDP(np.ones(1), np.ones((1, 1, 1, 1)), np.array([[[0.5, 0.5]]]),
                         np.zeros((1, 2)))
        traj = KObsTrajectory(2, np.array([0]), np.array([[0, 1]]))
        assert trajectory_log_likelihood(m, None, traj) == pytest.approx(np.log(0.25))

    def test_two_state_mixture(self):
        m = TabularPOMDP(np.array([0.3, 0.7]), np.ones((1, 2, 1, 2)) / 2,
                         np.array([[[0.9, 0.1], [0.2, 0.8]]]), np.zeros((1, 2)))
        traj = KObsTrajectory(3, np.array([0]), np.array([[0, 1, 1]]))
        expected = 0.3 * 0.9 * 0.1 * 0.1 + 0.7 * 0.2 * 0.8 * 0.8
        assert trajectory_log_likelihood(m, None, traj) == pytest.approx(np.log(expected))

    def test_impossible_trajectory(self):
        m = lock(2, 2, (0,))
        traj = KObsTrajectory(1, np.array([1, 0]), np.array([[0], [0]]))
        assert trajectory_log_likelihood(m, None, traj) == -np.inf

    @settings(max_examples=25, deadline=None)
    @given(S=st.integers(1, 3), A=st.integers(1, 2), O=st.integers(2, 3), H=st.integers(1, 3),
           k=st.integers(1, 3), seed=st.integers(0, 10**6))
    def test_matches_brute_force(self, S, A, O, H, k, seed):
        g = np.random.default_rng(seed)
        m = random_model(g, S, A, O, H)
        pol = UniformPolicy(A)
        traj = simulate_episode(m, pol, k, g)
        assert trajectory_log_likelihood(m, pol, traj) == pytest.approx(
            brute_force_log_likelihood(m, pol, traj), abs=1e-9)


class TestEvaluate:
    def test_lock_good_sequence(self):
        m = lock(4, 2, (1, 1, 0))
        assert evaluate_policy(m, OpenLoopPolicy([1, 1, 0, 0], 2)) == pytest.approx(1.0)

    @pytest.mark.parametrize("H,A", [(2, 2), (3, 2), (4, 2), (3, 3)])
    def test_lock_uniform(self, H, A):
        m = make_combination_lock(H, A, seed=1)
        assert evaluate_policy(m, UniformPolicy(A)) == pytest.approx(A ** -(H - 1))

    def test_lock_uniform_matches_enumeration(self):
        m = lock(4, 2, (0, 1, 1))
        seqs = list(itertools.product(range(2), repeat=4))
        avg = np.mean([evaluate_policy(m, OpenLoopPolicy(s, 2)) for s in seqs])
        assert evaluate_policy(m, UniformPolicy(2)) == pytest.approx(avg)

    def test_zero_reward(self, rng):
        m = random_model(rng, 3, 2, 2, 3).replace(rewards=np.zeros((3, 2)))
        assert evaluate_policy(m, UniformPolicy(2)) == 0.0

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_value_range(self, seed):
        m = random_model(np.random.default_rng(seed), 2, 2, 2, 3)
        assert 0.0 <= evaluate_policy(m, UniformPolicy(2)) <= 3.0

    def test_tree_cap(self, rng):
        m = random_model(rng, 2, 2, 2, 4)
        with pytest.raises(TreeTooLargeError):
            evaluate_policy(m, UniformPolicy(2), max_nodes=10)
