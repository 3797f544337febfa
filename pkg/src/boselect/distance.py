"""Model-to-model distances feeding the surrogate's kernel.

The default distance is the expected one-step prediction gap between two
models under a shared rollout policy: probe states come from the offline
dataset, the action is drawn from the policy, each model proposes a
successor independently, and the distance mixes the embedded successor gap
with the reward gap (weight alpha). For tabular models the expectation is
computed in closed form, so the kernel sees no sampling noise.

Distances compare the penalized models (shared transitions, reward
r - lambda * u); with a shared uncertainty table the reward gap reduces to
the learned-reward gap. A pair of bitwise-identical models has distance 0
by definition, matching the zero-diagonal contract, even though two
independent draws from the same stochastic row would not coincide.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .candidates import CandidateModel, CandidateSet
from .mdp import Policy, StateEmbedding

POLICY_SOURCES = (
    "selected-model",
    "model-based-fixed",
    "model-free-empirical",
    "exploratory-random",
    "parameter-space",
)


@dataclass
class DistanceMatrix:
    """Symmetric, lazily filled distance matrix over the candidate set.

    Entries are only trusted where ``filled_mask`` is set. When a pair is
    measured from both directions (each under its own rollout policy), the
    stored value is the running mean of the directional measurements, which
    keeps the matrix symmetric and order-insensitive.
    """

    values: np.ndarray
    filled_mask: np.ndarray
    fill_counts: np.ndarray
    alpha: float
    rollout_length: int
    probe_states: np.ndarray
    policy_source: str
    norm: str = "l2"
    n_rollouts: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.policy_source not in POLICY_SOURCES:
            raise ValueError(f"unknown policy source {self.policy_source!r}")
        if self.rollout_length < 1:
            raise ValueError("rollout_length must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def entry(self, i: int, j: int) -> float:
        if not self.filled_mask[i, j]:
            raise KeyError(f"distance ({i}, {j}) has not been computed")
        return float(self.values[i, j])

    def record(self, i: int, j: int, value: float) -> None:
        """Fold one directional measurement into the (i, j) = (j, i) cell."""
        if value < 0:
            raise ValueError("distances must be nonnegative")
        c = self.fill_counts[i, j]
        merged = (self.values[i, j] * c + value) / (c + 1)
        for a, b in ((i, j), (j, i)):
            self.values[a, b] = merged
            self.fill_counts[a, b] = c + 1
            self.filled_mask[a, b] = True


def new_distance_matrix(
    n: int,
    probe_states,
    alpha: float = 1.0,
    rollout_length: int = 1,
    policy_source: str = "selected-model",
    norm: str = "l2",
    n_rollouts: int = 500,
    seed: int = 0,
) -> DistanceMatrix:
    return DistanceMatrix(
        values=np.zeros((n, n)),
        filled_mask=np.zeros((n, n), dtype=bool),
        fill_counts=np.zeros((n, n), dtype=np.int64),
        alpha=alpha,
        rollout_length=rollout_length,
        probe_states=np.asarray(probe_states, dtype=np.int64),
        policy_source=policy_source,
        norm=norm,
        n_rollouts=n_rollouts,
        seed=seed,
    )


def draw_probe_states(train_states: np.ndarray, n_probe: int, seed) -> np.ndarray:
    """Probe states sampled uniformly (with replacement) from the training
    split, so the distance expectation runs over the empirical state
    distribution of the offline data.
    """
    train_states = np.asarray(train_states)
    if train_states.size == 0:
        raise ValueError("cannot draw probe states from an empty training split")
    rng = np.random.default_rng(seed)
    return train_states[rng.integers(0, train_states.size, size=n_probe)]


def models_identical(m_a: CandidateModel, m_b: CandidateModel) -> bool:
    if m_a is m_b:
        return True
    return np.array_equal(
        m_a.penalized_mdp.transition, m_b.penalized_mdp.transition
    ) and np.array_equal(m_a.penalized_mdp.reward, m_b.penalized_mdp.reward)


def one_step_distance(
    m_t: CandidateModel,
    m_other: CandidateModel,
    policy: Policy,
    probe_states,
    embedding: StateEmbedding,
    alpha: float,
    norm: str = "l2",
) -> float:
    """Exact expected one-step discrepancy between two models.

    Averages, over probe states and policy actions, the closed-form
    double sum  sum_{x,y} P_t(x|s,a) P(y|s,a) ||phi(x) - phi(y)||  plus
    alpha * |r_t(s,a) - r(s,a)|. Identical models give exactly 0.
    """
    probe = np.asarray(probe_states, dtype=np.int64)
    if probe.size == 0:
        raise ValueError("probe state set must be non-empty")
    if models_identical(m_t, m_other):
        return 0.0
    dist = embedding.pairwise_distances(norm)
    p1 = m_t.penalized_mdp.transition[probe]
    p2 = m_other.penalized_mdp.transition[probe]
    state_term = np.einsum("pax,xy,pay->pa", p1, dist, p2)
    reward_term = np.abs(m_t.penalized_mdp.reward[probe] - m_other.penalized_mdp.reward[probe])
    per_sa = state_term + alpha * reward_term
    weights = policy.action_probs[probe]
    return float(np.mean((weights * per_sa).sum(axis=1)))


def _vector_sample(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # Row-wise inverse CDF; clamping guards against cumsum round-off.
    idx = (cdf_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def multi_step_distance(
    m_t: CandidateModel,
    m_other: CandidateModel,
    policy: Policy,
    probe_states,
    embedding: StateEmbedding,
    alpha: float,
    ell_roll: int,
    n_rollouts: int,
    seed,
    norm: str = "l2",
) -> float:
    """Monte-Carlo multi-step variant of the model distance.

    Both models roll forward ell_roll steps from shared probe starts.
    Action draws share one uniform variate per step (so equal states pick
    equal actions under the shared policy); transition draws are
    independent per model. The per-rollout score is the mean over steps of
    ||phi(s1_k) - phi(s2_k)|| + alpha * |r1_k - r2_k|. With ell_roll = 1
    this estimates exactly what one_step_distance computes.
    """
    if ell_roll < 1:
        raise ValueError("ell_roll must be at least 1")
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    probe = np.asarray(probe_states, dtype=np.int64)
    if probe.size == 0:
        raise ValueError("probe state set must be non-empty")
    if models_identical(m_t, m_other):
        return 0.0

    rng = np.random.default_rng(seed)
    dist = embedding.pairwise_distances(norm)
    mdp1, mdp2 = m_t.penalized_mdp, m_other.penalized_mdp
    cum_pi = np.cumsum(policy.action_probs, axis=1)
    cum_p1 = np.cumsum(mdp1.transition, axis=2)
    cum_p2 = np.cumsum(mdp2.transition, axis=2)

    s1 = probe[np.arange(n_rollouts) % probe.size]
    s2 = s1.copy()
    total = np.zeros(n_rollouts)
    for _ in range(ell_roll):
        u_act = rng.random(n_rollouts)
        a1 = _vector_sample(cum_pi[s1], u_act)
        a2 = _vector_sample(cum_pi[s2], u_act)
        r_gap = np.abs(mdp1.reward[s1, a1] - mdp2.reward[s2, a2])
        s1 = _vector_sample(cum_p1[s1, a1], rng.random(n_rollouts))
        s2 = _vector_sample(cum_p2[s2, a2], rng.random(n_rollouts))
        total += dist[s1, s2] + alpha * r_gap
    return float(total.mean() / ell_roll)


def parameter_distance(m_a: CandidateModel, m_b: CandidateModel) -> float:
    """Raw-parameter discrepancy: per-(s,a) average of the L1 gap between
    transition rows plus the L1 gap between learned rewards.
    """
    pa, pb = m_a.learned_mdp, m_b.learned_mdp
    if pa.transition.shape != pb.transition.shape:
        raise ValueError("models must share their shape")
    trans_gap = np.abs(pa.transition - pb.transition).sum(axis=2)
    reward_gap = np.abs(pa.reward - pb.reward)
    return float((trans_gap + reward_gap).mean())


class PairTermTable:
    """Memoized per-pair profiles of the one-step discrepancy terms.

    The state and reward terms at each (probe, action) pair do not depend
    on the rollout policy, so they are computed once per unordered model
    pair and re-weighted by whatever policy the current iteration uses.
    """

    def __init__(
        self,
        cset: CandidateSet,
        probe_states,
        embedding: StateEmbedding,
        norm: str = "l2",
    ) -> None:
        self._cset = cset
        self._probe = np.asarray(probe_states, dtype=np.int64)
        if self._probe.size == 0:
            raise ValueError("probe state set must be non-empty")
        self._dist = embedding.pairwise_distances(norm)
        self._profiles: dict[tuple[int, int], tuple[np.ndarray, np.ndarray] | None] = {}

    def _profile(self, i: int, j: int):
        key = (min(i, j), max(i, j))
        if key not in self._profiles:
            m_i, m_j = self._cset[key[0]], self._cset[key[1]]
            if models_identical(m_i, m_j):
                self._profiles[key] = None
            else:
                p1 = m_i.penalized_mdp.transition[self._probe]
                p2 = m_j.penalized_mdp.transition[self._probe]
                state_term = np.einsum("pax,xy,pay->pa", p1, self._dist, p2)
                reward_term = np.abs(
                    m_i.penalized_mdp.reward[self._probe]
                    - m_j.penalized_mdp.reward[self._probe]
                )
                self._profiles[key] = (state_term, reward_term)
        return self._profiles[key]

    def distance(self, i: int, j: int, policy: Policy, alpha: float) -> float:
        profile = self._profile(i, j)
        if profile is None:
            return 0.0
        state_term, reward_term = profile
        weights = policy.action_probs[self._probe]
        return float(np.mean((weights * (state_term + alpha * reward_term)).sum(axis=1)))


def update_distances(
    matrix: DistanceMatrix,
    t_index: int,
    cset: CandidateSet,
    policy_t: Policy | None,
    embedding: StateEmbedding,
    term_table: PairTermTable | None = None,
) -> DistanceMatrix:
    """Fill row and column ``t_index`` with distances measured under the
    matrix's configured policy source, mirroring for symmetry.

    Re-measured cells (a pair seen earlier from the opposite direction)
    become the mean of the directional measurements.
    """
    if not 0 <= t_index < matrix.n:
        raise ValueError("model index out of range")
    m_t = cset[t_index]
    for j in range(matrix.n):
        if j == t_index:
            matrix.record(t_index, t_index, 0.0)
            continue
        if matrix.policy_source == "parameter-space":
            d = parameter_distance(m_t, cset[j])
        elif matrix.rollout_length == 1:
            if policy_t is None:
                raise ValueError("a rollout policy is required for prediction distances")
            if term_table is not None:
                d = term_table.distance(t_index, j, policy_t, matrix.alpha)
            else:
                d = one_step_distance(
                    m_t, cset[j], policy_t, matrix.probe_states, embedding,
                    matrix.alpha, matrix.norm,
                )
        else:
            if policy_t is None:
                raise ValueError("a rollout policy is required for prediction distances")
            d = multi_step_distance(
                m_t, cset[j], policy_t, matrix.probe_states, embedding,
                matrix.alpha, matrix.rollout_length, matrix.n_rollouts,
                seed=[matrix.seed, t_index, j], norm=matrix.norm,
            )
        matrix.record(t_index, j, d)
    return matrix


def distance_matrix_to_csv(matrix: DistanceMatrix) -> str:
    """Row-major full-precision dump; unfilled cells print as nan."""
    rows = []
    for i in range(matrix.n):
        cells = [
            repr(float(matrix.values[i, j])) if matrix.filled_mask[i, j] else "nan"
            for j in range(matrix.n)
        ]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"
