"""Active model selection for offline model-based RL on exact tabular MDPs.

The library learns a set of candidate dynamics models from a fixed offline
dataset, places a Gaussian-process surrogate over the candidates via a
model-induced distance kernel, and spends a small online-interaction budget
to find the model whose pre-computed policy performs best in the true
environment. Baseline selectors (validation loss, fitted Q-evaluation,
random search) and numerical verifiers for the supporting theory are
included, along with a CLI driver for reproducible experiments.
"""

from .acquisition import AcquisitionConfig, score, select_next
from .candidates import (
    CandidateConfig,
    CandidateModel,
    CandidateSet,
    MdpShape,
    generate_candidate_set,
    learn_mle_model,
    make_candidate,
    true_returns,
)
from .distance import (
    DistanceMatrix,
    multi_step_distance,
    new_distance_matrix,
    one_step_distance,
    parameter_distance,
    update_distances,
)
from .envs import make_gridworld, random_mdp
from .gp import GpState, KernelParams, empty_state, kernel_value, posterior
from .mdp import (
    Policy,
    StateEmbedding,
    TabularMdp,
    Trajectory,
    monte_carlo_return,
    optimal_policy,
    policy_value,
    rollout,
    total_return,
    visitation_distribution,
)
from .offline_data import OfflineDataset, behavior_policy, generate_dataset
from .selection import (
    SelectionTrace,
    SelectorConfig,
    d4rl_normalized_score,
    normalized_regret,
    run_bo_selection,
    run_fqe_ope,
    run_random_selection,
    run_validation_baseline,
)
from .theory import (
    BoundReport,
    lipschitz_constant,
    return_gap_bound,
    simulation_lemma_check,
)

__all__ = [
    "AcquisitionConfig",
    "BoundReport",
    "CandidateConfig",
    "CandidateModel",
    "CandidateSet",
    "DistanceMatrix",
    "GpState",
    "KernelParams",
    "MdpShape",
    "OfflineDataset",
    "Policy",
    "SelectionTrace",
    "SelectorConfig",
    "StateEmbedding",
    "TabularMdp",
    "Trajectory",
    "behavior_policy",
    "d4rl_normalized_score",
    "empty_state",
    "generate_candidate_set",
    "generate_dataset",
    "kernel_value",
    "learn_mle_model",
    "lipschitz_constant",
    "make_candidate",
    "make_gridworld",
    "monte_carlo_return",
    "multi_step_distance",
    "new_distance_matrix",
    "normalized_regret",
    "one_step_distance",
    "optimal_policy",
    "parameter_distance",
    "policy_value",
    "posterior",
    "random_mdp",
    "return_gap_bound",
    "rollout",
    "run_bo_selection",
    "run_fqe_ope",
    "run_random_selection",
    "run_validation_baseline",
    "score",
    "select_next",
    "simulation_lemma_check",
    "total_return",
    "true_returns",
    "update_distances",
    "visitation_distribution",
]
