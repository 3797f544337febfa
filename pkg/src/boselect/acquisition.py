"""Acquisition functions ranking unevaluated candidates.

GP-UCB scores mu + sqrt(beta_t) * sigma; the random acquisition ignores the
posterior and scores candidates with seeded uniform draws. Selection is the
argmax over candidates not yet evaluated, with ties broken toward the
lowest index so runs are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distance import DistanceMatrix
from .gp import GpState, posterior_batch


@dataclass
class AcquisitionConfig:
    """Acquisition kind and its schedule.

    beta_schedule "constant" uses ``beta`` at every iteration; "log-growth"
    uses beta_t = 2 * ln(N * t^2 * pi^2 / (6 * delta)) and needs
    ``n_candidates``. ``allow_reselect`` widens the argmax to evaluated
    candidates (off by default: re-evaluating adds nothing under noise-free
    observations, so each model is selected at most once).
    """

    kind: str = "gp-ucb"
    beta: float = 4.0
    beta_schedule: str = "constant"
    delta: float = 0.1
    n_candidates: int | None = None
    seed: int = 0
    allow_reselect: bool = False
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("gp-ucb", "random"):
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if self.beta_schedule not in ("constant", "log-growth"):
            raise ValueError(f"unknown beta schedule {self.beta_schedule!r}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        self._rng = np.random.default_rng(self.seed)


def beta_value(config: AcquisitionConfig, iteration: int) -> float:
    """Exploration coefficient beta_t at a given (1-based) iteration."""
    if config.beta_schedule == "constant":
        return config.beta
    if config.n_candidates is None:
        raise ValueError("log-growth schedule needs n_candidates")
    t = max(iteration, 1)
    return 2.0 * math.log(config.n_candidates * t * t * math.pi**2 / (6.0 * config.delta))


def score(
    config: AcquisitionConfig,
    posterior_mean: float,
    posterior_variance: float,
    iteration: int,
) -> float:
    """Acquisition value of one candidate from its posterior statistics."""
    if posterior_variance < 0:
        raise ValueError("posterior variance must be nonnegative")
    if config.kind == "random":
        return float(config._rng.random())
    return posterior_mean + math.sqrt(beta_value(config, iteration)) * math.sqrt(posterior_variance)


def select_next(
    config: AcquisitionConfig,
    gp_state: GpState,
    distances: DistanceMatrix,
    candidate_count: int,
    iteration: int,
) -> int:
    """Index of the acquisition argmax over unevaluated candidates.

    Ties break toward the lowest index. Raises when every candidate has
    already been evaluated (and reselection is disabled).
    """
    evaluated = set(gp_state.evaluated_indices)
    if config.allow_reselect:
        pool = list(range(candidate_count))
    else:
        pool = [i for i in range(candidate_count) if i not in evaluated]
    if not pool:
        raise ValueError("all candidates have been evaluated")
    means, variances = posterior_batch(gp_state, distances, pool)
    scores = [
        score(config, float(m), float(v), iteration) for m, v in zip(means, variances)
    ]
    return pool[int(np.argmax(scores))]
