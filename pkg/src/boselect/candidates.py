"""Candidate model construction.

Each candidate is a learned tabular MDP plus an uncertainty table, the
uncertainty-penalized MDP built from them (reward r - lambda * u, MOPO
style), and the exact optimal policy of that penalized MDP. Candidate
diversity comes from seeded Dirichlet posterior draws around the MLE
transition model and Gaussian jitter on the learned rewards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import Policy, TabularMdp, bellman_optimality_residual, optimal_policy, total_return
from .offline_data import OfflineDataset, empirical_counts


@dataclass
class MdpShape:
    """Shared structure of a model family: sizes, discount, initial
    distribution, and the reward bound of the environment that produced
    the data.
    """

    n_states: int
    n_actions: int
    gamma: float
    initial_dist: np.ndarray
    r_max: float

    def __post_init__(self) -> None:
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)

    @classmethod
    def of(cls, mdp: TabularMdp) -> "MdpShape":
        return cls(mdp.n_states, mdp.n_actions, mdp.gamma, mdp.initial_dist.copy(), mdp.r_max)


@dataclass
class CandidateModel:
    """A learned model, its uncertainty table, the penalized MDP, and the
    penalized MDP's pre-computed optimal policy.
    """

    learned_mdp: TabularMdp
    uncertainty: np.ndarray
    penalty_weight: float
    penalized_mdp: TabularMdp
    policy: Policy
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.uncertainty = np.asarray(self.uncertainty, dtype=np.float64)
        if np.any(self.uncertainty < 0):
            raise ValueError("uncertainty table must be nonnegative")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be nonnegative")
        if not np.array_equal(self.learned_mdp.transition, self.penalized_mdp.transition):
            raise ValueError("penalized MDP must share the learned transition tensor")
        expected = self.learned_mdp.reward - self.penalty_weight * self.uncertainty
        if not np.allclose(self.penalized_mdp.reward, expected, rtol=0.0, atol=1e-12):
            raise ValueError("penalized reward must equal learned reward minus lambda * u")


def make_candidate(
    learned_mdp: TabularMdp,
    uncertainty: np.ndarray,
    penalty_weight: float,
    provenance: dict | None = None,
) -> CandidateModel:
    """Attach the penalized MDP and its exact optimal policy to a learned model."""
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    penalized_reward = learned_mdp.reward - penalty_weight * uncertainty
    penalized = TabularMdp(
        transition=learned_mdp.transition,
        reward=penalized_reward,
        gamma=learned_mdp.gamma,
        initial_dist=learned_mdp.initial_dist,
        r_max=max(learned_mdp.r_max, float(np.max(np.abs(penalized_reward)))) or 1e-12,
    )
    policy = optimal_policy(penalized)
    return CandidateModel(
        learned_mdp=learned_mdp,
        uncertainty=uncertainty,
        penalty_weight=penalty_weight,
        penalized_mdp=penalized,
        policy=policy,
        provenance=provenance or {},
    )


@dataclass
class CandidateSet:
    """Ordered, shape-consistent collection of candidate models.

    The true environment is deliberately not a member: selection logic only
    ever sees the candidates, while evaluation harnesses receive the true
    MDP separately.
    """

    candidates: list[CandidateModel]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidate set must be non-empty")
        first = self.candidates[0].learned_mdp
        for cand in self.candidates[1:]:
            m = cand.learned_mdp
            if (
                m.n_states != first.n_states
                or m.n_actions != first.n_actions
                or m.gamma != first.gamma
                or not np.array_equal(m.initial_dist, first.initial_dist)
            ):
                raise ValueError("candidates must share shape, gamma, and initial distribution")

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, i: int) -> CandidateModel:
        return self.candidates[i]


@dataclass
class CandidateConfig:
    """Knobs for candidate-set generation.

    transition_noise rescales the Dirichlet posterior concentration
    (1.0 = plain posterior draw, 0.0 = posterior mean, i.e. the smoothed
    MLE); reward_noise_scale is the std of Gaussian jitter on learned
    rewards; uncertainty_scale defaults to the environment's r_max.
    """

    smoothing: float = 1.0
    transition_noise: float = 1.0
    reward_noise_scale: float = 0.05
    penalty_weight: float = 1.0
    uncertainty_scale: float | None = None

    def __post_init__(self) -> None:
        if self.smoothing <= 0:
            raise ValueError("smoothing must be positive")
        if self.transition_noise < 0:
            raise ValueError("transition_noise must be nonnegative")
        if self.reward_noise_scale < 0:
            raise ValueError("reward_noise_scale must be nonnegative")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be nonnegative")


def learn_mle_model(data: OfflineDataset, shape: MdpShape, smoothing: float) -> TabularMdp:
    """Smoothed maximum-likelihood model from the training split.

    P(s'|s,a) = (n(s,a,s') + smoothing) / (n(s,a) + smoothing * |S|); the
    reward estimate is the empirical mean, 0 where a pair was never visited.
    """
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    counts, reward_sums = empirical_counts(data, shape.n_states, shape.n_actions)
    pair_counts = counts.sum(axis=2)
    transition = (counts + smoothing) / (pair_counts + smoothing * shape.n_states)[..., None]
    with np.errstate(invalid="ignore"):
        reward = np.where(pair_counts > 0, reward_sums / np.maximum(pair_counts, 1.0), 0.0)
    r_max = max(shape.r_max, float(np.max(np.abs(reward)))) or 1e-12
    return TabularMdp(transition, reward, shape.gamma, shape.initial_dist, r_max=r_max)


def count_uncertainty(pair_counts: np.ndarray, scale: float) -> np.ndarray:
    """Count-based uncertainty u(s,a) = scale / sqrt(n(s,a) + 1).

    Unvisited pairs get the maximal value, so pessimism is strongest exactly
    where the data says nothing.
    """
    return scale / np.sqrt(np.asarray(pair_counts, dtype=np.float64) + 1.0)


def tv_uncertainty(learned: TabularMdp, true_mdp: TabularMdp) -> np.ndarray:
    """Exact uncertainty u(s,a) = L_V * TV(P_learned(.|s,a), P_true(.|s,a))
    with L_V = r_max / (1 - gamma).

    This estimator reads the true transition kernel, so it is reserved for
    the bound-verification suites and must never feed a selector.
    """
    tv = 0.5 * np.abs(learned.transition - true_mdp.transition).sum(axis=2)
    l_v = true_mdp.r_max / (1.0 - true_mdp.gamma)
    return l_v * tv


def generate_candidate_set(
    data: OfflineDataset,
    shape: MdpShape,
    n_candidates: int,
    seed: int,
    config: CandidateConfig | None = None,
) -> CandidateSet:
    """Seeded candidate set around the MLE model.

    Candidate i draws its transition rows from the Dirichlet posterior with
    parameters (counts + smoothing) / transition_noise and jitters the MLE
    rewards with Gaussian noise, using the independent substream
    (seed, i), so any execution order reproduces the same set.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    config = config or CandidateConfig()
    counts, _ = empirical_counts(data, shape.n_states, shape.n_actions)
    pair_counts = counts.sum(axis=2)
    mle = learn_mle_model(data, shape, config.smoothing)
    scale = config.uncertainty_scale if config.uncertainty_scale is not None else shape.r_max
    uncertainty = count_uncertainty(pair_counts, scale)
    alpha = counts + config.smoothing

    members = []
    for i in range(n_candidates):
        rng = np.random.default_rng([seed, i])
        if config.transition_noise > 0:
            conc = alpha / config.transition_noise
            transition = np.empty_like(mle.transition)
            for s in range(shape.n_states):
                for a in range(shape.n_actions):
                    transition[s, a] = rng.dirichlet(conc[s, a])
            transition /= transition.sum(axis=2, keepdims=True)
        else:
            transition = mle.transition.copy()
        reward = mle.reward + config.reward_noise_scale * rng.standard_normal(mle.reward.shape)
        r_max = max(shape.r_max, float(np.max(np.abs(reward)))) or 1e-12
        learned = TabularMdp(transition, reward, shape.gamma, shape.initial_dist, r_max=r_max)
        members.append(
            make_candidate(
                learned,
                uncertainty,
                config.penalty_weight,
                provenance={
                    "seed": seed,
                    "index": i,
                    "transition_noise": config.transition_noise,
                    "reward_noise_scale": config.reward_noise_scale,
                },
            )
        )
    return CandidateSet(members)


def true_returns(cset: CandidateSet, true_mdp: TabularMdp) -> tuple[np.ndarray, float, int]:
    """Exact true-environment return of every candidate policy, with the
    best value and its index.

    For evaluation and reporting layers only; selectors never see this.
    """
    returns = np.array([total_return(true_mdp, c.policy) for c in cset.candidates])
    best = int(np.argmax(returns))
    return returns, float(returns[best]), best


def verify_candidate_policies(cset: CandidateSet, tol: float = 1e-9) -> float:
    """Largest Bellman-optimality residual of any candidate policy on its
    penalized MDP; raises if one exceeds the tolerance.
    """
    worst = max(
        bellman_optimality_residual(c.penalized_mdp, c.policy) for c in cset.candidates
    )
    if worst > tol:
        raise ValueError(f"candidate policy fails Bellman optimality check ({worst:.3g})")
    return worst


def save_candidate_set(cset: CandidateSet, path: str) -> None:
    """Full-precision text dump of every candidate's P, r, u and lambda."""
    first = cset[0].learned_mdp
    s, a = first.n_states, first.n_actions
    lines = [
        "boselect-candidates v1",
        f"{len(cset)} {s} {a} {float(first.gamma)!r} {float(first.r_max)!r}",
        " ".join(repr(float(x)) for x in first.initial_dist),
    ]
    for cand in cset.candidates:
        lines.append(f"candidate {float(cand.penalty_weight)!r}")
        for i in range(s):
            for j in range(a):
                lines.append(" ".join(repr(float(x)) for x in cand.learned_mdp.transition[i, j]))
        for i in range(s):
            lines.append(" ".join(repr(float(x)) for x in cand.learned_mdp.reward[i]))
        for i in range(s):
            lines.append(" ".join(repr(float(x)) for x in cand.uncertainty[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_candidate_set(path: str) -> CandidateSet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "boselect-candidates v1":
        raise ValueError(f"{path}: not a boselect candidate-set file")
    n_str, s_str, a_str, gamma_str, r_max_str = lines[1].split()
    n, s, a = int(n_str), int(s_str), int(a_str)
    gamma, r_max = float(gamma_str), float(r_max_str)
    initial = np.array([float(x) for x in lines[2].split()])
    members = []
    pos = 3
    for _ in range(n):
        tag, lam_str = lines[pos].split()
        if tag != "candidate":
            raise ValueError(f"{path}: malformed candidate block at line {pos + 1}")
        pos += 1
        transition = np.array(
            [[float(x) for x in lines[pos + k].split()] for k in range(s * a)]
        ).reshape(s, a, s)
        pos += s * a
        reward = np.array([[float(x) for x in lines[pos + k].split()] for k in range(s)])
        pos += s
        uncertainty = np.array([[float(x) for x in lines[pos + k].split()] for k in range(s)])
        pos += s
        learned = TabularMdp(
            transition,
            reward,
            gamma,
            initial,
            r_max=max(r_max, float(np.max(np.abs(reward)))) or 1e-12,
        )
        members.append(make_candidate(learned, uncertainty, float(lam_str)))
    return CandidateSet(members)
