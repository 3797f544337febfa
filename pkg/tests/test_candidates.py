import numpy as np
import pytest

from boselect.candidates import (
    CandidateConfig,
    MdpShape,
    count_uncertainty,
    generate_candidate_set,
    learn_mle_model,
    load_candidate_set,
    make_candidate,
    save_candidate_set,
    true_returns,
    tv_uncertainty,
    verify_candidate_policies,
)
from boselect.envs import make_gridworld, random_mdp, random_policy
from boselect.mdp import bellman_optimality_residual, total_return
from boselect.offline_data import behavior_policy, empirical_counts, generate_dataset

from test_offline_data import manual_dataset


def grid_shape(mdp):
    return MdpShape.of(mdp)


class TestLearnMleModel:
    def test_recovers_deterministic_data(self):
        mdp, _ = make_gridworld(3, 3, slip_prob=0.0)
        behavior = behavior_policy(mdp, "random")
        data = generate_dataset(mdp, behavior, 4000, horizon=50, seed=2,
                                validation_fraction=0.0)
        counts, _ = empirical_counts(data, mdp.n_states, mdp.n_actions)
        learned = learn_mle_model(data, grid_shape(mdp), smoothing=1e-9)
        covered = counts.sum(axis=2) > 0
        gap = np.abs(learned.transition - mdp.transition).max(axis=2)
        assert gap[covered].max() < 1e-6

    def test_zero_data_gives_uniform(self):
        data = manual_dataset([(0, 0, 1.0, 1)], split_index=0)
        mdp = random_mdp(3, 2, 0.9, seed=0)
        learned = learn_mle_model(data, grid_shape(mdp), smoothing=1.0)
        assert np.allclose(learned.transition, 1.0 / 3.0)
        assert np.allclose(learned.reward, 0.0)

    def test_smoothed_row_arithmetic(self):
        data = manual_dataset(
            [(0, 0, 1.0, 0), (0, 0, 1.0, 0), (0, 0, 1.0, 0), (0, 0, 1.0, 1)],
            split_index=4,
        )
        mdp = random_mdp(2, 1, 0.9, seed=0)
        learned = learn_mle_model(data, grid_shape(mdp), smoothing=1.0)
        assert np.allclose(learned.transition[0, 0], [4 / 6, 2 / 6])


class TestUncertainty:
    def test_zero_count(self):
        assert count_uncertainty(np.array([[0]]), 1.0)[0, 0] == 1.0

    def test_many_counts(self):
        assert count_uncertainty(np.array([[99]]), 1.0)[0, 0] == pytest.approx(0.1)

    def test_exact_estimator_zero_at_truth(self):
        mdp = random_mdp(4, 2, 0.9, seed=1)
        assert np.allclose(tv_uncertainty(mdp, mdp), 0.0)


class TestGenerateCandidateSet:
    def test_zero_perturbation_equals_mle(self, grid5_problem):
        mdp, _, _, data, _ = grid5_problem
        config = CandidateConfig(transition_noise=0.0, reward_noise_scale=0.0)
        cset = generate_candidate_set(data, grid_shape(mdp), 1, seed=3, config=config)
        mle = learn_mle_model(data, grid_shape(mdp), smoothing=config.smoothing)
        assert np.array_equal(cset[0].learned_mdp.transition, mle.transition)
        assert np.array_equal(cset[0].learned_mdp.reward, mle.reward)

    def test_same_seed_identical(self, grid5_problem):
        mdp, _, _, data, _ = grid5_problem
        a = generate_candidate_set(data, grid_shape(mdp), 4, seed=7)
        b = generate_candidate_set(data, grid_shape(mdp), 4, seed=7)
        for ca, cb in zip(a.candidates, b.candidates):
            assert np.array_equal(ca.learned_mdp.transition, cb.learned_mdp.transition)
            assert np.array_equal(ca.learned_mdp.reward, cb.learned_mdp.reward)

    def test_true_return_spread_nonzero(self, grid5_problem):
        mdp, _, _, data, cset = grid5_problem
        returns, j_star, best = true_returns(cset, mdp)
        assert returns.max() - returns.min() > 0
        assert j_star == returns.max()
        assert best == int(np.argmax(returns))

    def test_dirichlet_rows_valid(self, grid5_problem):
        _, _, _, _, cset = grid5_problem
        for cand in cset.candidates:
            sums = cand.learned_mdp.transition.sum(axis=2)
            assert np.max(np.abs(sums - 1.0)) <= 1e-9
            assert cand.learned_mdp.transition.min() >= 0

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            CandidateConfig(reward_noise_scale=-1.0)
        with pytest.raises(ValueError):
            CandidateConfig(penalty_weight=-0.5)


class TestPenalization:
    def test_penalized_reward_identity(self, grid5_problem):
        _, _, _, _, cset = grid5_problem
        for cand in cset.candidates:
            expected = cand.learned_mdp.reward - cand.penalty_weight * cand.uncertainty
            assert np.allclose(cand.penalized_mdp.reward, expected, atol=1e-12)
            assert np.all(cand.penalized_mdp.reward <= cand.learned_mdp.reward + 1e-12)

    def test_penalization_lowers_fixed_policy_return(self, grid5_problem):
        _, _, _, _, cset = grid5_problem
        policy = random_policy(cset[0].learned_mdp.n_states, cset[0].learned_mdp.n_actions, seed=4)
        for cand in cset.candidates[:4]:
            assert total_return(cand.penalized_mdp, policy) <= total_return(
                cand.learned_mdp, policy
            ) + 1e-12

    def test_policies_bellman_optimal(self, grid5_problem):
        _, _, _, _, cset = grid5_problem
        assert verify_candidate_policies(cset, tol=1e-9) <= 1e-9
        for cand in cset.candidates[:3]:
            assert bellman_optimality_residual(cand.penalized_mdp, cand.policy) <= 1e-9


class TestTrueReturns:
    def test_identical_candidates(self, grid5_problem):
        mdp, _, _, data, _ = grid5_problem
        config = CandidateConfig(transition_noise=0.0, reward_noise_scale=0.0)
        cset = generate_candidate_set(data, grid_shape(mdp), 3, seed=1, config=config)
        returns, j_star, _ = true_returns(cset, mdp)
        assert np.allclose(returns, returns[0])
        assert j_star == returns[0]

    def test_true_optimal_policy_candidate(self, grid5_problem):
        mdp, _, _, _, cset = grid5_problem
        from boselect.mdp import optimal_policy

        star = make_candidate(mdp, np.zeros((mdp.n_states, mdp.n_actions)), 0.0)
        extended = type(cset)(cset.candidates + [star])
        returns, j_star, _ = true_returns(extended, mdp)
        assert returns[-1] == pytest.approx(total_return(mdp, optimal_policy(mdp)), abs=1e-9)
        assert j_star >= returns.max() - 1e-12


class TestSerialization:
    def test_round_trip_exact(self, tmp_path, grid5_problem):
        _, _, _, _, cset = grid5_problem
        path = tmp_path / "set.txt"
        save_candidate_set(cset, str(path))
        loaded = load_candidate_set(str(path))
        assert len(loaded) == len(cset)
        for ca, cb in zip(cset.candidates, loaded.candidates):
            assert np.array_equal(ca.learned_mdp.transition, cb.learned_mdp.transition)
            assert np.array_equal(ca.learned_mdp.reward, cb.learned_mdp.reward)
            assert np.array_equal(ca.uncertainty, cb.uncertainty)
            assert ca.penalty_weight == cb.penalty_weight
            assert np.array_equal(ca.policy.action_probs, cb.policy.action_probs)
