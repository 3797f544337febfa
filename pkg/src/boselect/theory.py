"""Numerical verification of the framework's theoretical apparatus.

Three independent checks, each computing both sides of a claimed relation
through separate exact code paths:

* the simulation lemma, an exact identity relating the return gap of one
  policy under two dynamics models to occupancy-weighted one-step value
  discrepancies;
* the suboptimality bound on the true-environment return gap between the
  optimal policies of two uncertainty-penalized models, whose right side
  combines a behavior-policy gap, the occupancy-weighted modeling error,
  and a Lipschitz-weighted next-step prediction gap;
* the GP posterior against brute-force joint-Gaussian conditioning.

The bound check constructs its candidates with the exact total-variation
uncertainty (which reads the true kernel), so the pessimism premise holds
by construction and is re-verified numerically per instance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .candidates import CandidateModel, make_candidate, tv_uncertainty
from .distance import new_distance_matrix
from .envs import random_mdp, random_policy
from .gp import KernelParams, build_state, posterior_batch
from .mdp import (
    Policy,
    StateEmbedding,
    TabularMdp,
    optimal_policy,
    policy_value,
    total_return,
    visitation_distribution,
)
from .offline_data import epsilon_greedy_policy


class PremiseViolationError(RuntimeError):
    """The pessimism premise (penalized return <= true return) failed
    numerically, so the bound check does not apply to this instance.
    """


@dataclass
class BoundReport:
    """Both sides of the suboptimality bound on one instance.

    term_a1_a2 is the behavior-policy gap plus twice the penalty-weighted
    modeling error of the first model under the behavior visitation;
    term_a3 is the Lipschitz-weighted next-step discrepancy term. slack is
    rhs - lhs and must be nonnegative whenever the premise verifies.
    """

    lhs: float
    term_a1_a2: float
    term_a3: float
    rhs: float
    slack: float
    lipschitz_L: float
    epsilon_beta: float


def simulation_lemma_check(
    m_prime: TabularMdp, m_double_prime: TabularMdp, policy: Policy
) -> tuple[float, float, float]:
    """Evaluate both sides of the simulation lemma and their gap.

    lhs is the exact return difference of the policy under the two models.
    rhs re-expresses it as gamma/(1-gamma) times the expectation, under the
    first model's discounted visitation, of the one-step discrepancy in the
    second model's value function. The lemma is an identity, so the gap is
    numerical noise only. Both models must share shape, discount, initial
    distribution, and reward (only the dynamics vary).
    """
    if m_prime.transition.shape != m_double_prime.transition.shape:
        raise ValueError("models must share their shape")
    if m_prime.gamma != m_double_prime.gamma:
        raise ValueError("models must share gamma")
    if not np.array_equal(m_prime.initial_dist, m_double_prime.initial_dist):
        raise ValueError("models must share their initial distribution")
    if not np.array_equal(m_prime.reward, m_double_prime.reward):
        raise ValueError("the lemma varies dynamics only; rewards must match")
    gamma = m_prime.gamma
    lhs = total_return(m_prime, policy) - total_return(m_double_prime, policy)
    v2 = policy_value(m_double_prime, policy)
    rho1 = visitation_distribution(m_prime, policy)
    delta = np.einsum("sax,x->sa", m_prime.transition - m_double_prime.transition, v2)
    rhs = gamma / (1.0 - gamma) * float((rho1 * delta).sum())
    return lhs, rhs, abs(lhs - rhs)


def lipschitz_constant(
    mdp: TabularMdp, policy: Policy, embedding: StateEmbedding, norm: str = "l1"
) -> float:
    """Tightest state-Lipschitz constant of the policy's value function on
    this finite instance: max over state pairs of |V(s) - V(s')| divided by
    the embedding distance.
    """
    if mdp.n_states < 2:
        raise ValueError("need at least two states")
    v = policy_value(mdp, policy)
    dist = embedding.pairwise_distances(norm)
    off = ~np.eye(mdp.n_states, dtype=bool)
    if np.any(dist[off] == 0.0):
        raise ValueError("duplicate state embeddings make the constant undefined")
    gaps = np.abs(v[:, None] - v[None, :])
    return float(np.max(gaps[off] / dist[off]))


def _independent_state_gap(
    m1: CandidateModel, m2: CandidateModel, embedding: StateEmbedding
) -> np.ndarray:
    """Per-(s,a) expected L1 gap between independently drawn successors,
    exactly zero when the two penalized models are bitwise identical.
    """
    p1 = m1.penalized_mdp.transition
    p2 = m2.penalized_mdp.transition
    if np.array_equal(p1, p2) and np.array_equal(
        m1.penalized_mdp.reward, m2.penalized_mdp.reward
    ):
        return np.zeros(m1.penalized_mdp.reward.shape)
    dist = embedding.pairwise_distances("l1")
    return np.einsum("sax,xy,say->sa", p1, dist, p2)


def _verify_premise(
    true_mdp: TabularMdp,
    m1: CandidateModel,
    m2: CandidateModel,
    policies: list[Policy],
    tol: float = 1e-9,
) -> None:
    for model_idx, cand in enumerate((m1, m2)):
        for pol in policies:
            gap = total_return(cand.penalized_mdp, pol) - total_return(true_mdp, pol)
            if gap > tol:
                raise PremiseViolationError(
                    f"penalized model {model_idx + 1} beats the true environment by "
                    f"{gap:.3g} for one of the checked policies; the pessimism premise fails"
                )


def return_gap_bound(
    true_mdp: TabularMdp,
    m1: CandidateModel,
    m2: CandidateModel,
    behavior: Policy,
    embedding: StateEmbedding,
) -> BoundReport:
    """Check the suboptimality bound on one instance.

    lhs is the exact true-environment return gap between the two penalized
    models' optimal policies. The bound's right side is

        (J_pi1 - J_behavior)  +  2 * lambda * epsilon(behavior)
        + 1/(1-gamma) * E_{s~omega, a~pi1}[ gamma * L * E||s1' - s2'||_1
                                            + |r1(s,a) - r2(s,a)| ],

    with epsilon(behavior) the first model's uncertainty averaged under the
    behavior policy's true-environment visitation, L the exact Lipschitz
    constant of pi1's value on the first penalized model, successor draws
    independent per model (in closed form), and rewards the penalized ones.
    The expectation over initial states follows the bound statement; the
    practical kernel's distance deliberately uses dataset probe states
    instead.

    Both candidates must share the penalty weight and be built with an
    admissible uncertainty (use the exact total-variation estimator); the
    premise is verified numerically for the three involved policies and a
    PremiseViolationError marks instances where it fails.
    """
    if m1.penalty_weight != m2.penalty_weight:
        raise ValueError("the bound assumes a shared penalty weight")
    lam = m1.penalty_weight
    pi1, pi2 = m1.policy, m2.policy
    _verify_premise(true_mdp, m1, m2, [pi1, pi2, behavior])

    gamma = true_mdp.gamma
    j1 = total_return(true_mdp, pi1)
    j2 = total_return(true_mdp, pi2)
    j_beta = total_return(true_mdp, behavior)
    lhs = j1 - j2

    rho_beta = visitation_distribution(true_mdp, behavior)
    epsilon_beta = float((rho_beta * m1.uncertainty).sum())
    term_a1_a2 = (j1 - j_beta) + 2.0 * lam * epsilon_beta

    lipschitz = lipschitz_constant(m1.penalized_mdp, pi1, embedding, norm="l1")
    state_gap = _independent_state_gap(m1, m2, embedding)
    reward_gap = np.abs(m1.penalized_mdp.reward - m2.penalized_mdp.reward)
    per_sa = gamma * lipschitz * state_gap + reward_gap
    weighted = (pi1.action_probs * per_sa).sum(axis=1)
    term_a3 = float(true_mdp.initial_dist @ weighted) / (1.0 - gamma)

    rhs = term_a1_a2 + term_a3
    return BoundReport(
        lhs=lhs,
        term_a1_a2=term_a1_a2,
        term_a3=term_a3,
        rhs=rhs,
        slack=rhs - lhs,
        lipschitz_L=lipschitz,
        epsilon_beta=epsilon_beta,
    )


def perturbed_model(
    true_mdp: TabularMdp, concentration: float, seed, keep_reward: bool = True
) -> TabularMdp:
    """Dirichlet perturbation of the true dynamics: each transition row is
    drawn around the true row with the given concentration (larger means
    closer to the truth).
    """
    rng = np.random.default_rng(seed)
    transition = np.empty_like(true_mdp.transition)
    for s in range(true_mdp.n_states):
        for a in range(true_mdp.n_actions):
            transition[s, a] = rng.dirichlet(
                concentration * true_mdp.transition[s, a] + 0.05
            )
    reward = true_mdp.reward if keep_reward else true_mdp.reward.copy()
    return TabularMdp(
        transition, reward, true_mdp.gamma, true_mdp.initial_dist, r_max=true_mdp.r_max
    )


def random_bound_instance(
    seed: int,
    n_states: int = 5,
    n_actions: int = 3,
    penalty_weight: float = 2.0,
    concentration: float = 40.0,
) -> tuple[TabularMdp, CandidateModel, CandidateModel, Policy, StateEmbedding]:
    """One random instance for the bound suite.

    The true MDP is dense with gamma in [0.30, 0.55]; the two candidates
    share the true reward, perturb the true dynamics by Dirichlet draws,
    and carry the exact total-variation uncertainty with the shared penalty
    weight, which makes the pessimism premise hold with margin. The
    behavior policy is epsilon-greedy around the true optimum.
    """
    rng = np.random.default_rng([seed, 0x7EAD])
    gamma = float(rng.uniform(0.30, 0.55))
    true_mdp = random_mdp(n_states, n_actions, gamma, seed=[seed, 1], r_max=1.0)
    embedding = StateEmbedding(rng.normal(size=(n_states, 2)))
    behavior = epsilon_greedy_policy(optimal_policy(true_mdp), float(rng.uniform(0.3, 0.7)))
    models = []
    for k in (2, 3):
        learned = perturbed_model(true_mdp, concentration, seed=[seed, k])
        uncertainty = tv_uncertainty(learned, true_mdp)
        models.append(make_candidate(learned, uncertainty, penalty_weight))
    return true_mdp, models[0], models[1], behavior, embedding


def random_simulation_lemma_instance(
    seed: int, max_states: int = 6, max_actions: int = 3
) -> tuple[TabularMdp, TabularMdp, Policy]:
    """Random (M', M'', policy) triple sharing rewards, for the identity suite."""
    rng = np.random.default_rng([seed, 0x51A])
    n_states = int(rng.integers(2, max_states + 1))
    n_actions = int(rng.integers(1, max_actions + 1))
    gamma = float(rng.uniform(0.2, 0.9))
    m_prime = random_mdp(n_states, n_actions, gamma, seed=[seed, 1], r_max=1.0)
    m_double = random_mdp(n_states, n_actions, gamma, seed=[seed, 2], r_max=1.0)
    m_double = TabularMdp(
        m_double.transition, m_prime.reward, gamma, m_prime.initial_dist, r_max=1.0
    )
    policy = random_policy(n_states, n_actions, seed=[seed, 3])
    return m_prime, m_double, policy


def gp_conditioning_check(seed: int, max_evaluated: int = 8) -> float:
    """Compare the surrogate's posterior to brute-force joint-Gaussian
    conditioning on one random instance; returns the largest absolute
    deviation over every candidate's mean and variance.

    Distances come from random embedded points, so they satisfy the
    distance-matrix invariants and keep the kernel well conditioned.
    """
    rng = np.random.default_rng([seed, 0x69])
    n = int(rng.integers(3, 13))
    t = int(rng.integers(1, min(max_evaluated, n - 1) + 1))
    points = rng.normal(size=(n, 3))
    diffs = points[:, None, :] - points[None, :, :]
    dist_values = np.sqrt((diffs**2).sum(axis=-1))

    matrix = new_distance_matrix(n, probe_states=[0])
    matrix.values = dist_values
    matrix.filled_mask = np.ones((n, n), dtype=bool)
    matrix.fill_counts = np.ones((n, n), dtype=np.int64)

    params = KernelParams(
        lengthscale=float(rng.uniform(0.5, 3.0)),
        signal_variance=float(rng.uniform(0.2, 4.0)),
        noise_variance=float(rng.choice([0.0, 0.01, 0.1])),
    )
    evaluated = rng.choice(n, size=t, replace=False).tolist()
    observations = rng.normal(size=t)
    state = build_state(evaluated, observations, params, matrix)
    means, variances = posterior_batch(state, matrix, range(n))

    # Independent oracle: explicit inversion of the same regularized matrix.
    k_hh = params.signal_variance * np.exp(
        -dist_values[np.ix_(evaluated, evaluated)] ** 2 / (2 * params.lengthscale**2)
    )
    k_hh += (params.noise_variance + state.jitter_used) * np.eye(t)
    k_inv = np.linalg.inv(k_hh)
    y_bar = observations.mean()
    worst = 0.0
    for q in range(n):
        k_q = params.signal_variance * np.exp(
            -dist_values[q, evaluated] ** 2 / (2 * params.lengthscale**2)
        )
        mean_oracle = y_bar + k_q @ k_inv @ (observations - y_bar)
        var_oracle = params.signal_variance - k_q @ k_inv @ k_q
        worst = max(
            worst,
            abs(float(means[q]) - float(mean_oracle)),
            abs(float(variances[q]) - max(float(var_oracle), 0.0)),
        )
    return float(worst)
