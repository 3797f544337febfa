"""Offline dataset generation and management.

A dataset is a fixed stream of transitions collected by a behavior policy in
the true environment, with a train/validation split consumed by the
validation-loss selector. Rewards in the stream are the environment's true
rewards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import Policy, TabularMdp, optimal_policy, rollout


@dataclass
class OfflineDataset:
    """Transition stream (s, a, r, s') with a train/validation boundary.

    The first ``split_index`` transitions are the training split; the rest
    are held out for validation. ``behavior_policy`` is kept for provenance
    and may be None after deserialization.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    split_index: int
    behavior_policy: Policy | None
    source_seed: int

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.next_states = np.asarray(self.next_states, dtype=np.int64)
        n = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.next_states) == n):
            raise ValueError("transition arrays must share their length")
        if not 0 <= self.split_index <= n:
            raise ValueError("split_index out of range")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def n_train(self) -> int:
        return self.split_index

    @property
    def n_validation(self) -> int:
        return len(self) - self.split_index

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        k = self.split_index
        return self.states[:k], self.actions[:k], self.rewards[:k], self.next_states[:k]

    def validation_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        k = self.split_index
        return self.states[k:], self.actions[k:], self.rewards[k:], self.next_states[k:]

    def transitions(self) -> list[tuple[int, int, float, int]]:
        return [
            (int(s), int(a), float(r), int(n))
            for s, a, r, n in zip(self.states, self.actions, self.rewards, self.next_states)
        ]


def epsilon_greedy_policy(base: Policy, epsilon: float) -> Policy:
    """Mix a base policy with uniform noise: (1 - eps) * base + eps * uniform."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    uniform = np.full_like(base.action_probs, 1.0 / base.n_actions)
    return Policy((1.0 - epsilon) * base.action_probs + epsilon * uniform)


def mixture_policy(a: Policy, b: Policy, weight: float = 0.5) -> Policy:
    """Convex mixture of two policies' action distributions."""
    if a.action_probs.shape != b.action_probs.shape:
        raise ValueError("policies must share their shape")
    return Policy(weight * a.action_probs + (1.0 - weight) * b.action_probs)


def behavior_policy(true_mdp: TabularMdp, kind: str, epsilon: float = 0.3) -> Policy:
    """Named behavior policies for dataset generation.

    medium: epsilon-greedy around the true optimal policy.
    random: uniform over actions.
    mixed:  50/50 blend of the medium policy and the pure optimal policy.
    """
    if kind == "random":
        return Policy.uniform(true_mdp.n_states, true_mdp.n_actions)
    pi_star = optimal_policy(true_mdp)
    if kind == "medium":
        return epsilon_greedy_policy(pi_star, epsilon)
    if kind == "mixed":
        return mixture_policy(epsilon_greedy_policy(pi_star, epsilon), pi_star, 0.5)
    raise ValueError(f"unknown behavior kind {kind!r}")


def generate_dataset(
    true_mdp: TabularMdp,
    behavior: Policy,
    n_transitions: int,
    horizon: int,
    seed: int,
    validation_fraction: float = 0.2,
    shuffle_split: bool = False,
) -> OfflineDataset:
    """Collect transitions from repeated seeded rollouts until the target
    count is reached (the final trajectory is truncated).

    The validation split is the tail of the stream by default; with
    ``shuffle_split`` the split assignment is randomized (seeded) instead.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be positive")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if not 0.0 <= validation_fraction < 1.0:
        raise ValueError("validation_fraction must lie in [0, 1)")
    n_validation = int(np.ceil(validation_fraction * n_transitions))
    if n_validation >= n_transitions:
        raise ValueError("validation_fraction leaves an empty training split")

    states, actions, rewards, next_states = [], [], [], []
    episode = 0
    while len(states) < n_transitions:
        traj = rollout(true_mdp, behavior, horizon, rng_seed=[seed, episode])
        for s, a, r, s_next in traj.steps:
            states.append(s)
            actions.append(a)
            rewards.append(r)
            next_states.append(s_next)
            if len(states) == n_transitions:
                break
        episode += 1

    order = np.arange(n_transitions)
    if shuffle_split:
        order = np.random.default_rng([seed, 0x5917]).permutation(n_transitions)
    take = lambda xs: np.asarray(xs)[order]
    return OfflineDataset(
        states=take(states),
        actions=take(actions),
        rewards=take(rewards),
        next_states=take(next_states),
        split_index=n_transitions - n_validation,
        behavior_policy=behavior,
        source_seed=seed,
    )


def empirical_counts(
    data: OfflineDataset, n_states: int, n_actions: int
) -> tuple[np.ndarray, np.ndarray]:
    """Transition counts n[s, a, s'] and reward sums over the training split only."""
    s, a, r, s_next = data.train_arrays()
    if len(s) and (s.max() >= n_states or a.max() >= n_actions or s_next.max() >= n_states):
        raise ValueError("dataset indices exceed the declared shape")
    counts = np.zeros((n_states, n_actions, n_states))
    reward_sums = np.zeros((n_states, n_actions))
    np.add.at(counts, (s, a, s_next), 1.0)
    np.add.at(reward_sums, (s, a), r)
    return counts, reward_sums


def save_dataset(data: OfflineDataset, path: str) -> None:
    """One `s a r s'` line per transition after a count/seed header.

    Rewards are written with repr so the round-trip is bit-exact. The
    behavior policy is provenance only and is not serialized.
    """
    lines = [f"boselect-dataset v1 n={len(data)} split={data.split_index} seed={data.source_seed}"]
    for s, a, r, s_next in zip(data.states, data.actions, data.rewards, data.next_states):
        lines.append(f"{s} {a} {float(r)!r} {s_next}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> OfflineDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("boselect-dataset v1 "):
        raise ValueError(f"{path}: not a boselect dataset file")
    header = dict(item.split("=") for item in lines[0].split()[2:])
    n = int(header["n"])
    rows = [line.split() for line in lines[1 : 1 + n]]
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} transitions, found {len(rows)}")
    return OfflineDataset(
        states=np.array([int(r[0]) for r in rows]),
        actions=np.array([int(r[1]) for r in rows]),
        rewards=np.array([float(r[2]) for r in rows]),
        next_states=np.array([int(r[3]) for r in rows]),
        split_index=int(header["split"]),
        behavior_policy=None,
        source_seed=int(header["seed"]),
    )
