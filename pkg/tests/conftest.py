import numpy as np
import pytest

from boselect.candidates import CandidateConfig, MdpShape, generate_candidate_set
from boselect.envs import make_gridworld
from boselect.mdp import Policy, StateEmbedding, TabularMdp
from boselect.offline_data import behavior_policy, generate_dataset


def single_state_mdp(reward=1.0, gamma=0.5):
    return TabularMdp(
        transition=np.ones((1, 1, 1)),
        reward=np.array([[reward]]),
        gamma=gamma,
        initial_dist=np.array([1.0]),
        r_max=max(abs(reward), 1.0),
    )


@pytest.fixture(scope="session")
def grid6():
    return make_gridworld(6, 6, slip_prob=0.1)


@pytest.fixture(scope="session")
def grid5_problem():
    """Small gridworld with a medium dataset and a modest candidate set."""
    mdp, emb = make_gridworld(5, 5, slip_prob=0.1)
    behavior = behavior_policy(mdp, "medium", 0.3)
    data = generate_dataset(mdp, behavior, n_transitions=3000, horizon=100, seed=11)
    cset = generate_candidate_set(
        data, MdpShape.of(mdp), n_candidates=16, seed=5, config=CandidateConfig()
    )
    return mdp, emb, behavior, data, cset
