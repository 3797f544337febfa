"""The active selection loop and the baseline selectors.

One trial runs T iterations. Iteration 1 picks a candidate uniformly at
random; afterwards the GP posterior over the candidate set is refreshed and
the acquisition argmax (over unevaluated candidates) is chosen. The chosen
candidate's pre-computed policy is evaluated with a few seeded trajectories
in the true environment, the distance matrix gains that model's row, and
the observed return feeds the GP. The final output is the evaluated model
with the largest empirical return.

True returns appear in traces for reporting only; nothing on the decision
path reads them. Inference regret at iteration t is the gap between the
best true return over the whole candidate set and the true return of the
model the selector would output after t iterations, and it is not
guaranteed to be monotone: the running output is the empirical-return
argmax, and Monte-Carlo noise can make it step backwards.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionConfig, select_next
from .candidates import CandidateSet, MdpShape, learn_mle_model
from .distance import PairTermTable, draw_probe_states, new_distance_matrix, update_distances
from .gp import KernelParams, empty_state
from .gp import update as gp_update
from .mdp import Policy, StateEmbedding, TabularMdp, monte_carlo_return, optimal_policy, rollout, total_return
from .offline_data import OfflineDataset

# Seed-stream labels, so permutation draws never collide with rollout draws.
_PERM_STREAM = 0
_EVAL_STREAM = 1


@dataclass
class TraceRecord:
    iteration: int
    selected_index: int
    mc_return: float
    true_return: float
    output_index: int
    inference_regret: float
    normalized_regret: float


@dataclass
class SelectionTrace:
    records: list[TraceRecord]
    budget_used: int

    def final(self) -> TraceRecord:
        return self.records[-1]

    def at_iteration(self, t: int) -> TraceRecord:
        for rec in self.records:
            if rec.iteration == t:
                return rec
        raise KeyError(f"no record for iteration {t}")


@dataclass
class GpOptions:
    fit_mode: str = "median-heuristic"
    fixed_lengthscale: float | None = None
    noise_variance: float | None = None


@dataclass
class DistanceOptions:
    alpha: float = 1.0
    norm: str = "l2"
    rollout_length: int = 1
    n_rollouts: int = 500
    policy_source: str = "selected-model"
    n_probe: int = 256
    probe_seed: int = 0
    fixed_candidate: int = 0


@dataclass
class SelectorConfig:
    """Protocol parameters shared by the selection loop and its baselines.

    ``noise_free`` swaps Monte-Carlo evaluation for the exact return, the
    limiting regime the surrogate models; it exists for tests and sanity
    checks and consumes no trajectory budget.
    """

    n_iterations: int = 20
    trajectories_per_eval: int = 5
    horizon: int = 200
    seed: int = 0
    noise_free: bool = False
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp: GpOptions = field(default_factory=GpOptions)
    distance: DistanceOptions = field(default_factory=DistanceOptions)

    def __post_init__(self) -> None:
        if self.n_iterations < 1:
            raise ValueError("need at least one iteration")
        if self.trajectories_per_eval < 1:
            raise ValueError("need at least one trajectory per evaluation")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


def shared_first_permutation(seed: int, n: int) -> np.ndarray:
    """Trial-seeded candidate permutation. Its first element is the random
    initial pick of the GP-driven loop, and its prefix is the whole
    schedule of the random-selection baseline, so both selectors start
    from the same model on a shared trial seed.
    """
    return np.random.default_rng([seed, _PERM_STREAM]).permutation(n)


def _evaluate(
    true_mdp: TabularMdp, policy: Policy, config: SelectorConfig, t: int
) -> tuple[float, int]:
    if config.noise_free:
        return total_return(true_mdp, policy), 0
    trajs = [
        rollout(true_mdp, policy, config.horizon, rng_seed=[config.seed, _EVAL_STREAM, t, k])
        for k in range(config.trajectories_per_eval)
    ]
    return monte_carlo_return(trajs, true_mdp.gamma), len(trajs)


def _default_true_return_fn(cset: CandidateSet, true_mdp: TabularMdp):
    cache: dict[int, float] = {}

    def fn(i: int) -> float:
        if i not in cache:
            cache[i] = total_return(true_mdp, cset[i].policy)
        return cache[i]

    return fn


def _trace_row(
    t: int,
    selected: list[int],
    observed: list[float],
    true_fn,
    j_star: float,
) -> TraceRecord:
    out_pos = int(np.argmax(observed))  # earliest iteration wins ties
    output_index = selected[out_pos]
    j_out = true_fn(output_index)
    return TraceRecord(
        iteration=t,
        selected_index=selected[-1],
        mc_return=observed[-1],
        true_return=true_fn(selected[-1]),
        output_index=output_index,
        inference_regret=j_star - j_out,
        normalized_regret=normalized_regret(j_out, j_star),
    )


def _resolve_static_policy(
    source: str,
    cset: CandidateSet,
    data: OfflineDataset | None,
    true_mdp: TabularMdp,
    fixed_candidate: int,
) -> Policy | None:
    """Rollout policy for distance measurement when it does not track the
    selected model. Returns None for sources resolved per iteration or not
    needing a policy at all.
    """
    if source in ("selected-model", "parameter-space"):
        return None
    if source == "model-based-fixed":
        return cset[fixed_candidate].policy
    if source == "exploratory-random":
        first = cset[0].learned_mdp
        return Policy.uniform(first.n_states, first.n_actions)
    if source == "model-free-empirical":
        if data is None:
            raise ValueError("model-free-empirical policy source needs the offline dataset")
        full = OfflineDataset(
            data.states, data.actions, data.rewards, data.next_states,
            split_index=len(data), behavior_policy=None, source_seed=data.source_seed,
        )
        shape = MdpShape.of(true_mdp)
        return optimal_policy(learn_mle_model(full, shape, smoothing=1.0))
    raise ValueError(f"unknown policy source {source!r}")


def run_bo_selection(
    cset: CandidateSet,
    true_mdp: TabularMdp,
    data: OfflineDataset,
    embedding: StateEmbedding,
    config: SelectorConfig,
    true_return_fn=None,
    artifacts: dict | None = None,
) -> SelectionTrace:
    """One trial of the GP-driven selection loop.

    When ``artifacts`` is a dict, the final distance matrix and GP state
    are stored in it under "distance_matrix" and "gp_state" for inspection
    and file dumps.
    """
    n = len(cset)
    t_max = config.n_iterations
    if not config.acquisition.allow_reselect and t_max > n:
        raise ValueError("cannot run more iterations than candidates without reselection")
    true_fn = true_return_fn or _default_true_return_fn(cset, true_mdp)
    j_star = max(true_fn(i) for i in range(n))

    dopt = config.distance
    probe = draw_probe_states(data.train_arrays()[0], dopt.n_probe, [dopt.probe_seed])
    matrix = new_distance_matrix(
        n, probe, alpha=dopt.alpha, rollout_length=dopt.rollout_length,
        policy_source=dopt.policy_source, norm=dopt.norm,
        n_rollouts=dopt.n_rollouts, seed=config.seed,
    )
    term_table = None
    if dopt.rollout_length == 1 and dopt.policy_source != "parameter-space":
        term_table = PairTermTable(cset, probe, embedding, dopt.norm)
    static_policy = _resolve_static_policy(
        dopt.policy_source, cset, data, true_mdp, dopt.fixed_candidate
    )

    state = empty_state(KernelParams(lengthscale=1.0))
    selected = [int(shared_first_permutation(config.seed, n)[0])]
    observed: list[float] = []
    records: list[TraceRecord] = []
    budget = 0
    for t in range(1, t_max + 1):
        idx = selected[-1]
        cand = cset[idx]
        mc_return, n_traj = _evaluate(true_mdp, cand.policy, config, t)
        budget += n_traj
        observed.append(mc_return)

        rollout_policy = cand.policy if dopt.policy_source == "selected-model" else static_policy
        update_distances(matrix, idx, cset, rollout_policy, embedding, term_table)
        if idx not in state.evaluated_indices:
            state = gp_update(
                state, idx, mc_return, matrix,
                refit=True, fit_mode=config.gp.fit_mode,
                fixed_lengthscale=config.gp.fixed_lengthscale,
                noise_variance=config.gp.noise_variance,
            )
        records.append(_trace_row(t, selected, observed, true_fn, j_star))
        if t < t_max:
            selected.append(
                select_next(config.acquisition, state, matrix, n, iteration=t + 1)
            )
    if artifacts is not None:
        artifacts["distance_matrix"] = matrix
        artifacts["gp_state"] = state
    return SelectionTrace(records=records, budget_used=budget)


def run_random_selection(
    cset: CandidateSet,
    true_mdp: TabularMdp,
    config: SelectorConfig,
    true_return_fn=None,
) -> SelectionTrace:
    """Uniform selection without replacement, same evaluation budget."""
    n = len(cset)
    if config.n_iterations > n:
        raise ValueError("cannot run more iterations than candidates without replacement")
    true_fn = true_return_fn or _default_true_return_fn(cset, true_mdp)
    j_star = max(true_fn(i) for i in range(n))
    order = shared_first_permutation(config.seed, n)[: config.n_iterations]

    selected: list[int] = []
    observed: list[float] = []
    records: list[TraceRecord] = []
    budget = 0
    for t, idx in enumerate(order, start=1):
        cand = cset[int(idx)]
        mc_return, n_traj = _evaluate(true_mdp, cand.policy, config, t)
        budget += n_traj
        selected.append(int(idx))
        observed.append(mc_return)
        records.append(_trace_row(t, selected, observed, true_fn, j_star))
    return SelectionTrace(records=records, budget_used=budget)


def run_validation_baseline(cset: CandidateSet, data: OfflineDataset) -> tuple[int, np.ndarray]:
    """Candidate with the lowest held-out one-step loss.

    Per candidate, the loss over validation transitions is the mean of
    -log P(s'|s,a) plus the squared reward error. Consumes no online
    budget; ties go to the lowest index.
    """
    s, a, r, s_next = data.validation_arrays()
    if len(s) == 0:
        raise ValueError("validation split is empty")
    losses = np.empty(len(cset))
    for i, cand in enumerate(cset.candidates):
        model = cand.learned_mdp
        p = np.maximum(model.transition[s, a, s_next], 1e-300)
        losses[i] = float(np.mean(-np.log(p) + (model.reward[s, a] - r) ** 2))
    return int(np.argmin(losses)), losses


def run_fqe_ope(
    cset: CandidateSet,
    data: OfflineDataset,
    omega: np.ndarray,
    tol: float = 1e-13,
    max_iters: int = 100_000,
) -> tuple[int, np.ndarray]:
    """Fitted Q-evaluation scores from the full offline dataset.

    Builds the empirical (unsmoothed) MLE model over all transitions, then
    for each candidate policy iterates the policy's Bellman backup until
    the sup-norm residual is tiny. State-action pairs absent from the data
    keep Q = 0, a pessimistic default. Returns the argmax index and all
    scores; consumes no online budget.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    omega = np.asarray(omega, dtype=np.float64)
    first = cset[0].learned_mdp
    n_states, n_actions = first.n_states, first.n_actions
    gamma = first.gamma

    counts = np.zeros((n_states, n_actions, n_states))
    reward_sums = np.zeros((n_states, n_actions))
    np.add.at(counts, (data.states, data.actions, data.next_states), 1.0)
    np.add.at(reward_sums, (data.states, data.actions), data.rewards)
    pair_counts = counts.sum(axis=2)
    visited = pair_counts > 0
    denom = np.maximum(pair_counts, 1.0)
    p_emp = counts / denom[..., None]
    r_emp = np.where(visited, reward_sums / denom, 0.0)

    scores = np.empty(len(cset))
    for i, cand in enumerate(cset.candidates):
        pi = cand.policy.action_probs
        q = np.zeros((n_states, n_actions))
        for _ in range(max_iters):
            w = (pi * q).sum(axis=1)
            q_new = np.where(visited, r_emp + gamma * (p_emp @ w), 0.0)
            if np.max(np.abs(q_new - q)) <= tol:
                q = q_new
                break
            q = q_new
        scores[i] = float(omega @ (pi * q).sum(axis=1))
    return int(np.argmax(scores)), scores


def normalized_regret(j_out: float, j_star: float) -> float:
    """Regret rescaled so the candidate-set optimum scores 0 and a
    zero-return output scores 100.

    Requires a positive optimum; otherwise the scale is undefined and nan
    is returned with a warning. Negative raw regret clamps to 0; outputs
    below zero return exceed 100 and are reported unclamped.
    """
    if j_star <= 0:
        warnings.warn("normalized regret undefined for non-positive optimal return")
        return float("nan")
    value = 100.0 * (j_star - j_out) / j_star
    if value < 0.0:
        return 0.0
    if value > 100.0:
        warnings.warn("normalized regret above 100: output return is negative")
    return value


def d4rl_normalized_score(j: float, j_random: float, j_expert: float) -> float:
    """Score anchored at 0 for the random-policy return and 100 for the
    expert return (D4RL convention).
    """
    if j_expert <= j_random:
        raise ValueError("expert return must exceed random return")
    return 100.0 * (j - j_random) / (j_expert - j_random)


TRACE_CSV_HEADER = (
    "trial,iteration,selected,mc_return,true_return,output_index,"
    "inference_regret,normalized_regret"
)


def traces_to_csv(traces: list[SelectionTrace]) -> str:
    lines = [TRACE_CSV_HEADER]
    for trial, trace in enumerate(traces):
        for rec in trace.records:
            lines.append(
                f"{trial},{rec.iteration},{rec.selected_index},{rec.mc_return!r},"
                f"{rec.true_return!r},{rec.output_index},{rec.inference_regret!r},"
                f"{rec.normalized_regret!r}"
            )
    return "\n".join(lines) + "\n"


def summary_json(traces: list[SelectionTrace]) -> dict:
    """Per-iteration aggregates over trials plus final-output statistics."""
    iterations = sorted({rec.iteration for trace in traces for rec in trace.records})
    per_iteration = []
    for t in iterations:
        regrets = [tr.at_iteration(t).inference_regret for tr in traces]
        normalized = [tr.at_iteration(t).normalized_regret for tr in traces]
        per_iteration.append(
            {
                "iteration": t,
                "inference_regret_mean": float(np.mean(regrets)),
                "inference_regret_std": float(np.std(regrets)),
                "inference_regret_median": float(np.median(regrets)),
                "normalized_regret_mean": float(np.mean(normalized)),
                "normalized_regret_std": float(np.std(normalized)),
            }
        )
    finals = [tr.final().inference_regret for tr in traces]
    return {
        "n_trials": len(traces),
        "budget_per_trial": [tr.budget_used for tr in traces],
        "per_iteration": per_iteration,
        "final_inference_regret_mean": float(np.mean(finals)),
        "final_inference_regret_median": float(np.median(finals)),
    }
