"""Exact tabular MDP primitives: linear-solve policy evaluation, value
iteration, discounted visitation distributions, and seeded rollouts.

All solvers here are exact (direct linear algebra), so downstream numerical
checks never have to budget for iteration tolerances. Everything is a pure
function of its inputs; rollout randomness is supplied by the caller as a
seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_ATOL = 1e-9


def _check_distribution(p: np.ndarray, what: str, axis: int = -1) -> None:
    if np.any(p < -PROB_ATOL):
        raise ValueError(f"{what} has negative entries")
    sums = p.sum(axis=axis)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=PROB_ATOL):
        raise ValueError(f"{what} rows must sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3g})")


@dataclass
class TabularMdp:
    """Finite MDP: transition tensor P[s, a, s'], reward table r[s, a],
    discount gamma in [0, 1), and initial state distribution omega.

    The same type plays the role of the true environment and of every
    learned candidate model.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    r_max: float

    def __post_init__(self) -> None:
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        s, a = self.reward.shape
        if self.transition.shape != (s, a, s):
            raise ValueError(
                f"transition shape {self.transition.shape} does not match reward shape {self.reward.shape}"
            )
        if self.initial_dist.shape != (s,):
            raise ValueError("initial_dist length must equal the number of states")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.r_max <= 0.0:
            raise ValueError("r_max must be positive")
        if np.max(np.abs(self.reward)) > self.r_max + PROB_ATOL:
            raise ValueError("reward table exceeds the declared r_max bound")
        _check_distribution(self.transition, "transition tensor")
        _check_distribution(self.initial_dist, "initial distribution")

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


@dataclass
class StateEmbedding:
    """One real vector per state, giving tabular states the geometry needed
    by state-difference norms (for gridworlds: the (row, col) pair).
    """

    coords: np.ndarray

    def __post_init__(self) -> None:
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))

    @property
    def n_states(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def pairwise_distances(self, norm: str = "l2") -> np.ndarray:
        """All-pairs distance matrix between state embeddings (l2 or l1)."""
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        if norm == "l2":
            return np.sqrt((diff**2).sum(axis=-1))
        if norm == "l1":
            return np.abs(diff).sum(axis=-1)
        raise ValueError(f"unknown norm {norm!r}")


@dataclass
class Policy:
    """Stationary stochastic policy as a row-stochastic matrix pi[s, a]."""

    action_probs: np.ndarray

    def __post_init__(self) -> None:
        self.action_probs = np.asarray(self.action_probs, dtype=np.float64)
        if self.action_probs.ndim != 2:
            raise ValueError("action_probs must be a 2-D (states x actions) matrix")
        _check_distribution(self.action_probs, "policy matrix")

    @property
    def n_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.action_probs.shape[1]

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "Policy":
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), np.asarray(actions, dtype=int)] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.action_probs, axis=1)


@dataclass
class Trajectory:
    """A rollout: ordered (state, action, reward, next_state) steps."""

    steps: list[tuple[int, int, float, int]]
    horizon: int

    def __post_init__(self) -> None:
        if len(self.steps) > self.horizon:
            raise ValueError("trajectory longer than its horizon")
        for (_, _, _, nxt), (s, _, _, _) in zip(self.steps, self.steps[1:]):
            if nxt != s:
                raise ValueError("steps are not chained: next_state mismatch")

    def discounted_return(self, gamma: float) -> float:
        return float(sum(r * gamma**k for k, (_, _, r, _) in enumerate(self.steps)))


def _check_match(mdp: TabularMdp, policy: Policy) -> None:
    if policy.action_probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.action_probs.shape} does not match mdp "
            f"({mdp.n_states} states, {mdp.n_actions} actions)"
        )


def policy_averaged(mdp: TabularMdp, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Policy-averaged reward vector r_pi and transition matrix P_pi."""
    _check_match(mdp, policy)
    r_pi = (policy.action_probs * mdp.reward).sum(axis=1)
    p_pi = np.einsum("sa,sax->sx", policy.action_probs, mdp.transition)
    return r_pi, p_pi


def policy_value(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """State values of a policy via the exact linear solve
    V = (I - gamma * P_pi)^-1 r_pi.
    """
    r_pi, p_pi = policy_averaged(mdp, policy)
    eye = np.eye(mdp.n_states)
    return np.linalg.solve(eye - mdp.gamma * p_pi, r_pi)


def total_return(mdp: TabularMdp, policy: Policy) -> float:
    """Total expected discounted return from the initial distribution."""
    return float(mdp.initial_dist @ policy_value(mdp, policy))


def state_occupancy(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Normalized discounted state occupancy (1 - gamma) * sum_t gamma^t P(s_t = s),
    from the exact solve (I - gamma * P_pi^T) mu = omega.
    """
    _, p_pi = policy_averaged(mdp, policy)
    eye = np.eye(mdp.n_states)
    mu = np.linalg.solve(eye - mdp.gamma * p_pi.T, mdp.initial_dist)
    return (1.0 - mdp.gamma) * mu


def visitation_distribution(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Discounted state-action visitation distribution rho[s, a]; sums to 1."""
    d = state_occupancy(mdp, policy)
    return d[:, None] * policy.action_probs


class ValueIterationError(RuntimeError):
    """Value iteration failed to reach the target residual within the cap."""


def optimal_policy(
    mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 100_000
) -> Policy:
    """Deterministic greedy policy from value iteration.

    Iterates V <- max_a [r + gamma P V] until the sup-norm residual drops
    below ``tol``; ties in the final greedy step break toward the lowest
    action index, which makes the output reproducible.
    """
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        q = mdp.reward + mdp.gamma * np.einsum("sax,x->sa", mdp.transition, v)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) <= tol:
            v = v_new
            break
        v = v_new
    else:
        raise ValueIterationError(
            f"value iteration did not reach residual {tol:g} within {max_iters} "
            f"sweeps (gamma={mdp.gamma}); raise the cap or check the model"
        )
    q = mdp.reward + mdp.gamma * np.einsum("sax,x->sa", mdp.transition, v)
    return Policy.deterministic(np.argmax(q, axis=1), mdp.n_actions)


def bellman_optimality_residual(mdp: TabularMdp, policy: Policy) -> float:
    """Sup-norm gap between V^pi and the Bellman optimality backup of V^pi.

    Zero (to solver precision) iff the policy is greedy-optimal for the mdp.
    """
    v = policy_value(mdp, policy)
    q = mdp.reward + mdp.gamma * np.einsum("sax,x->sa", mdp.transition, v)
    return float(np.max(np.abs(q.max(axis=1) - v)))


def _sample_index(cdf: np.ndarray, u: float) -> int:
    # Inverse-CDF draw; one-hot rows land on the support regardless of u.
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def rollout(mdp: TabularMdp, policy: Policy, horizon: int, rng_seed) -> Trajectory:
    """Sample one seeded trajectory of at most ``horizon`` steps.

    Equal seeds give bitwise-identical trajectories. Truncation at the
    horizon leaves a discounted-return error of at most
    gamma^horizon * r_max / (1 - gamma).
    """
    _check_match(mdp, policy)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    cum_omega = np.cumsum(mdp.initial_dist)
    cum_pi = np.cumsum(policy.action_probs, axis=1)
    cum_p = np.cumsum(mdp.transition, axis=2)
    steps: list[tuple[int, int, float, int]] = []
    s = _sample_index(cum_omega, rng.random())
    for _ in range(horizon):
        a = _sample_index(cum_pi[s], rng.random())
        s_next = _sample_index(cum_p[s, a], rng.random())
        steps.append((s, a, float(mdp.reward[s, a]), s_next))
        s = s_next
    return Trajectory(steps=steps, horizon=horizon)


def monte_carlo_return(trajectories: list[Trajectory], gamma: float) -> float:
    """Mean discounted return over a batch of trajectories."""
    if not trajectories:
        raise ValueError("monte_carlo_return needs at least one trajectory")
    return float(np.mean([t.discounted_return(gamma) for t in trajectories]))
