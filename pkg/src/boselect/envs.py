"""Benchmark environment builders and small random-instance generators.

The default testbed is a slippery gridworld with an absorbing goal: small
enough for exact solves, stochastic enough that learned models differ in
ways that matter.
"""
from __future__ import annotations

import numpy as np

from .mdp import Policy, StateEmbedding, TabularMdp

GRID_ACTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


def make_gridworld(
    rows: int = 6,
    cols: int = 6,
    slip_prob: float = 0.1,
    goal_reward: float = 1.0,
    step_reward: float = 0.0,
    gamma: float = 0.95,
    goal: tuple[int, int] | None = None,
    start: tuple[int, int] | None = (0, 0),
) -> tuple[TabularMdp, StateEmbedding]:
    """Slippery gridworld with an absorbing goal cell.

    Moves go in the intended direction with probability 1 - slip_prob and in
    a uniformly random other direction otherwise; bumping a wall stays put.
    The goal self-loops and pays ``goal_reward`` every step. ``start=None``
    gives a uniform initial distribution over non-goal cells.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must have at least one row and one column")
    if not 0.0 <= slip_prob < 1.0:
        raise ValueError("slip_prob must lie in [0, 1)")
    n_states = rows * cols
    n_actions = len(GRID_ACTIONS)
    if goal is None:
        goal = (rows - 1, cols - 1)
    goal_state = goal[0] * cols + goal[1]

    def move(r: int, c: int, dr: int, dc: int) -> int:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < rows and 0 <= nc < cols):
            nr, nc = r, c
        return nr * cols + nc

    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.full((n_states, n_actions), step_reward, dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            if s == goal_state:
                transition[s, :, s] = 1.0
                reward[s, :] = goal_reward
                continue
            for a, (dr, dc) in enumerate(GRID_ACTIONS):
                transition[s, a, move(r, c, dr, dc)] += 1.0 - slip_prob
                for b, (or_, oc) in enumerate(GRID_ACTIONS):
                    if b != a:
                        transition[s, a, move(r, c, or_, oc)] += slip_prob / (n_actions - 1)

    initial = np.zeros(n_states)
    if start is None:
        non_goal = [s for s in range(n_states) if s != goal_state]
        initial[non_goal] = 1.0 / len(non_goal)
    else:
        initial[start[0] * cols + start[1]] = 1.0

    r_max = max(abs(goal_reward), abs(step_reward), 1e-12)
    mdp = TabularMdp(transition, reward, gamma, initial, r_max=r_max)
    coords = np.array([(s // cols, s % cols) for s in range(n_states)], dtype=np.float64)
    return mdp, StateEmbedding(coords)


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    seed,
    r_max: float = 1.0,
    transition_concentration: float = 1.0,
) -> TabularMdp:
    """Dense random MDP: Dirichlet transition rows, uniform rewards in
    [-r_max, r_max], Dirichlet initial distribution.
    """
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(
        np.full(n_states, transition_concentration), size=(n_states, n_actions)
    )
    reward = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    return TabularMdp(transition, reward, gamma, initial, r_max=r_max)


def random_policy(n_states: int, n_actions: int, seed) -> Policy:
    rng = np.random.default_rng(seed)
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


def random_embedding(n_states: int, dim: int, seed, scale: float = 1.0) -> StateEmbedding:
    rng = np.random.default_rng(seed)
    return StateEmbedding(rng.normal(scale=scale, size=(n_states, dim)))


def save_mdp(mdp: TabularMdp, path: str, embedding: StateEmbedding | None = None) -> None:
    """Write an MDP (and optionally its state embedding) to a line-oriented
    text file; round-trips exactly.
    """
    s, a = mdp.n_states, mdp.n_actions
    lines = [
        "boselect-mdp v1",
        f"{s} {a} {float(mdp.gamma)!r} {float(mdp.r_max)!r}",
        " ".join(repr(float(x)) for x in mdp.initial_dist),
    ]
    for i in range(s):
        lines.append(" ".join(repr(float(x)) for x in mdp.reward[i]))
    for i in range(s):
        for j in range(a):
            lines.append(" ".join(repr(float(x)) for x in mdp.transition[i, j]))
    if embedding is not None:
        lines.append(f"embedding {embedding.dim}")
        for i in range(s):
            lines.append(" ".join(repr(float(x)) for x in embedding.coords[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_mdp_lines(path: str) -> tuple[TabularMdp, StateEmbedding | None]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "boselect-mdp v1":
        raise ValueError(f"{path}: not a boselect mdp file")
    s_str, a_str, gamma_str, r_max_str = lines[1].split()
    s, a = int(s_str), int(a_str)
    initial = np.array([float(x) for x in lines[2].split()])
    reward = np.array([[float(x) for x in lines[3 + i].split()] for i in range(s)])
    flat = lines[3 + s : 3 + s + s * a]
    transition = np.array([[float(x) for x in row.split()] for row in flat]).reshape(s, a, s)
    mdp = TabularMdp(transition, reward, float(gamma_str), initial, r_max=float(r_max_str))
    pos = 3 + s + s * a
    embedding = None
    if pos < len(lines) and lines[pos].startswith("embedding "):
        coords = np.array([[float(x) for x in lines[pos + 1 + i].split()] for i in range(s)])
        embedding = StateEmbedding(coords)
    return mdp, embedding


def load_mdp(path: str) -> TabularMdp:
    return _parse_mdp_lines(path)[0]


def load_environment(path: str) -> tuple[TabularMdp, StateEmbedding]:
    """Load an MDP together with its state embedding; the embedding block
    is required because the model distance needs state geometry.
    """
    mdp, embedding = _parse_mdp_lines(path)
    if embedding is None:
        raise ValueError(f"{path}: file carries no embedding block")
    return mdp, embedding
