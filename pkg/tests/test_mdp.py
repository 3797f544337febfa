import itertools

import numpy as np
import pytest

from boselect.envs import make_gridworld, random_mdp, random_policy
from boselect.mdp import (
    Policy,
    TabularMdp,
    Trajectory,
    monte_carlo_return,
    optimal_policy,
    policy_averaged,
    policy_value,
    rollout,
    total_return,
    visitation_distribution,
)

from conftest import single_state_mdp


def iterative_policy_value(mdp, policy, sweeps):
    """Independent fixed-point oracle for policy evaluation."""
    r_pi, p_pi = policy_averaged(mdp, policy)
    v = np.zeros(mdp.n_states)
    for _ in range(sweeps):
        v = r_pi + mdp.gamma * p_pi @ v
    return v


def truncated_visitation(mdp, policy, n_terms):
    """Truncated-series oracle for the visitation distribution."""
    _, p_pi = policy_averaged(mdp, policy)
    d = np.zeros(mdp.n_states)
    state_dist = mdp.initial_dist.copy()
    for t in range(n_terms):
        d += mdp.gamma**t * state_dist
        state_dist = p_pi.T @ state_dist
    return (1.0 - mdp.gamma) * d[:, None] * policy.action_probs


class TestPolicyValue:
    def test_single_state_geometric_series(self):
        mdp = single_state_mdp(reward=1.0, gamma=0.5)
        v = policy_value(mdp, Policy(np.array([[1.0]])))
        assert v == pytest.approx([2.0], abs=1e-12)

    def test_zero_reward_gives_zero_value(self):
        mdp = random_mdp(4, 2, 0.9, seed=0)
        mdp.reward[:] = 0.0
        v = policy_value(mdp, random_policy(4, 2, seed=1))
        assert np.allclose(v, 0.0, atol=1e-12)

    def test_matches_iterative_oracle(self):
        mdp = random_mdp(5, 3, 0.9, seed=2)
        policy = random_policy(5, 3, seed=3)
        v = policy_value(mdp, policy)
        assert np.max(np.abs(v - iterative_policy_value(mdp, policy, 10_000))) < 1e-7

    def test_dimension_mismatch_raises(self):
        mdp = random_mdp(4, 2, 0.9, seed=0)
        with pytest.raises(ValueError):
            policy_value(mdp, random_policy(5, 2, seed=1))

    def test_bellman_consistency(self):
        for seed in range(5):
            mdp = random_mdp(6, 3, 0.95, seed=seed)
            policy = random_policy(6, 3, seed=seed + 100)
            v = policy_value(mdp, policy)
            r_pi, p_pi = policy_averaged(mdp, policy)
            assert np.max(np.abs(v - (r_pi + mdp.gamma * p_pi @ v))) <= 1e-9


class TestTotalReturn:
    def test_single_state(self):
        mdp = single_state_mdp(reward=1.0, gamma=0.5)
        assert total_return(mdp, Policy(np.array([[1.0]]))) == pytest.approx(2.0)

    def test_point_mass_start_equals_state_value(self):
        mdp = random_mdp(4, 2, 0.85, seed=4)
        mdp.initial_dist[:] = 0.0
        mdp.initial_dist[2] = 1.0
        policy = random_policy(4, 2, seed=5)
        assert total_return(mdp, policy) == pytest.approx(policy_value(mdp, policy)[2])

    def test_return_identity_with_visitation(self):
        for seed in range(5):
            mdp = random_mdp(5, 3, 0.9, seed=seed)
            policy = random_policy(5, 3, seed=seed + 50)
            rho = visitation_distribution(mdp, policy)
            identity = (rho * mdp.reward).sum() / (1.0 - mdp.gamma)
            assert total_return(mdp, policy) == pytest.approx(identity, abs=1e-8)


class TestVisitationDistribution:
    def test_single_pair(self):
        mdp = single_state_mdp()
        rho = visitation_distribution(mdp, Policy(np.array([[1.0]])))
        assert np.allclose(rho, [[1.0]], atol=1e-12)

    def test_symmetric_chain_uniform(self):
        # Two states swapping with probability 1/2 under either action.
        transition = np.full((2, 2, 2), 0.5)
        mdp = TabularMdp(transition, np.zeros((2, 2)), 0.9, np.array([0.5, 0.5]), r_max=1.0)
        rho = visitation_distribution(mdp, Policy.uniform(2, 2))
        assert np.allclose(rho, 0.25, atol=1e-12)

    def test_matches_truncated_series_oracle(self):
        mdp = random_mdp(5, 2, 0.9, seed=6)
        policy = random_policy(5, 2, seed=7)
        rho = visitation_distribution(mdp, policy)
        oracle = truncated_visitation(mdp, policy, 2000)
        assert np.max(np.abs(rho - oracle)) < 1e-7

    def test_normalization(self):
        for seed in range(5):
            mdp = random_mdp(6, 3, 0.97, seed=seed)
            rho = visitation_distribution(mdp, random_policy(6, 3, seed=seed + 10))
            assert abs(rho.sum() - 1.0) <= 1e-9
            assert np.all(rho >= -1e-12)


class TestOptimalPolicy:
    def test_dominant_action(self):
        # a1 deterministically reaches the only rewarding (absorbing) state.
        transition = np.zeros((2, 2, 2))
        transition[0, 0, 0] = 1.0
        transition[0, 1, 1] = 1.0
        transition[1, :, 1] = 1.0
        reward = np.array([[0.0, 0.0], [1.0, 1.0]])
        mdp = TabularMdp(transition, reward, 0.9, np.array([1.0, 0.0]), r_max=1.0)
        policy = optimal_policy(mdp)
        assert policy.greedy_actions()[0] == 1

    def test_constant_reward_tie_break(self):
        # One-hot transitions keep the backed-up values bitwise equal across
        # actions, so every state is an exact tie.
        rng = np.random.default_rng(8)
        transition = np.zeros((4, 3, 4))
        transition[np.arange(4)[:, None], np.arange(3)[None, :], rng.integers(0, 4, (4, 3))] = 1.0
        mdp = TabularMdp(transition, np.full((4, 3), 0.7), 0.9, np.full(4, 0.25), r_max=1.0)
        policy = optimal_policy(mdp)
        assert np.all(policy.greedy_actions() == 0)

    @pytest.mark.parametrize("n_states,n_actions,seed", [(6, 2, 9), (4, 3, 10)])
    def test_dominates_all_deterministic_policies(self, n_states, n_actions, seed):
        mdp = random_mdp(n_states, n_actions, 0.9, seed=seed)
        j_opt = total_return(mdp, optimal_policy(mdp))
        for assignment in itertools.product(range(n_actions), repeat=n_states):
            j = total_return(mdp, Policy.deterministic(np.array(assignment), n_actions))
            assert j_opt >= j - 1e-9


class TestRollout:
    def test_deterministic_mdp_seed_independent(self):
        mdp, _ = make_gridworld(3, 3, slip_prob=0.0)
        policy = optimal_policy(mdp)
        t1 = rollout(mdp, policy, 20, rng_seed=1)
        t2 = rollout(mdp, policy, 20, rng_seed=999)
        assert t1.steps == t2.steps

    def test_zero_horizon(self):
        mdp = single_state_mdp()
        assert rollout(mdp, Policy(np.array([[1.0]])), 0, rng_seed=0).steps == []

    def test_equal_seeds_bitwise_equal(self):
        mdp = random_mdp(4, 2, 0.9, seed=11)
        policy = random_policy(4, 2, seed=12)
        t1 = rollout(mdp, policy, 100, rng_seed=42)
        t2 = rollout(mdp, policy, 100, rng_seed=42)
        assert t1.steps == t2.steps

    def test_mean_return_matches_exact_value(self):
        mdp = random_mdp(4, 2, 0.7, seed=13)
        policy = random_policy(4, 2, seed=14)
        exact = total_return(mdp, policy)
        horizon = 60  # truncation error ~ 0.7^60 / 0.3, far below the noise floor
        returns = np.array(
            [
                rollout(mdp, policy, horizon, rng_seed=[15, k]).discounted_return(mdp.gamma)
                for k in range(50_000)
            ]
        )
        se = returns.std(ddof=1) / np.sqrt(len(returns))
        assert abs(returns.mean() - exact) < 3 * se


class TestMonteCarloReturn:
    def test_single_trajectory(self):
        traj = Trajectory(steps=[(0, 0, 1.0, 0), (0, 0, 1.0, 0)], horizon=2)
        assert monte_carlo_return([traj], 0.5) == pytest.approx(1.5)

    def test_zero_rewards(self):
        traj = Trajectory(steps=[(0, 0, 0.0, 0)], horizon=1)
        assert monte_carlo_return([traj], 0.9) == 0.0

    def test_mean_of_two(self):
        t1 = Trajectory(steps=[(0, 0, 1.0, 0)], horizon=1)
        t2 = Trajectory(steps=[(0, 0, 3.0, 0)], horizon=1)
        assert monte_carlo_return([t1, t2], 0.9) == pytest.approx(2.0)

    def test_empty_list_raises(self):
        with pytest.raises(ValueError):
            monte_carlo_return([], 0.9)


class TestInvariantValidation:
    def test_bad_transition_rejected(self):
        transition = np.ones((2, 1, 2))  # rows sum to 2
        with pytest.raises(ValueError):
            TabularMdp(transition, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]), r_max=1.0)

    def test_reward_bound_enforced(self):
        with pytest.raises(ValueError):
            TabularMdp(
                np.ones((1, 1, 1)), np.array([[2.0]]), 0.9, np.array([1.0]), r_max=1.0
            )

    def test_chained_trajectory_enforced(self):
        with pytest.raises(ValueError):
            Trajectory(steps=[(0, 0, 0.0, 1), (0, 0, 0.0, 0)], horizon=5)
