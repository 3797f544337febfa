"""Gaussian-process surrogate over the discrete candidate set.

The kernel is an RBF over the model-induced distance matrix,

    k(M', M'') = signal_variance * exp(-d(M', M'')^2 / (2 * lengthscale^2)),

and the posterior at a query model, given the evaluated models and their
observed returns, is the standard noise-free conditioning

    mean = K(q, H) K(H, H)^-1 y,
    var  = k(q, q) - K(q, H) K(H, H)^-1 K(H, q),

realized through a cached Cholesky factor of the regularized K(H, H).
Two practical departures from the textbook zero-mean form, both recovered
exactly in the appropriate limit:

* observations are centered by their running mean before solving and the
  mean is added back afterwards, which is the zero-mean model applied to
  shifted data (returns far from zero would otherwise fight the prior);
* an explicit noise variance models the Monte-Carlo error of the observed
  returns; setting it to zero gives exact noise-free interpolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .distance import DistanceMatrix

JITTER_CAP_FACTOR = 1e-2


class FactorizationError(RuntimeError):
    """Kernel matrix stayed indefinite after the full jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    """RBF hyperparameters plus the numerical floor.

    ``jitter`` is the starting ridge relative to signal_variance; it
    escalates by factors of 10 up to 1e-2 * signal_variance before the
    factorization gives up.
    """

    lengthscale: float
    signal_variance: float = 1.0
    noise_variance: float = 0.0
    jitter: float = 1e-8

    def __post_init__(self) -> None:
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        if self.jitter <= 0:
            raise ValueError("jitter must be positive")


@dataclass(frozen=True)
class GpState:
    """Evaluated-model history, observed returns, hyperparameters, and the
    cached lower Cholesky factor of the regularized kernel matrix.

    States are immutable; ``update`` returns a new state.
    """

    evaluated_indices: tuple[int, ...]
    observations: np.ndarray
    params: KernelParams
    chol: np.ndarray | None
    jitter_used: float

    @property
    def n_evaluated(self) -> int:
        return len(self.evaluated_indices)


def kernel_value(d: float, params: KernelParams) -> float:
    """RBF kernel at distance d."""
    if d < 0:
        raise ValueError("distances must be nonnegative")
    return params.signal_variance * math.exp(-(d**2) / (2.0 * params.lengthscale**2))


def _pair_distances(distances: DistanceMatrix, rows, cols) -> np.ndarray:
    out = np.empty((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            out[i, j] = 0.0 if a == b else distances.entry(a, b)
    return out


def kernel_cross(
    distances: DistanceMatrix, rows, cols, params: KernelParams
) -> np.ndarray:
    """Kernel matrix between two index lists, from stored distances."""
    d = _pair_distances(distances, rows, cols)
    return params.signal_variance * np.exp(-(d**2) / (2.0 * params.lengthscale**2))


def _factorize(k_matrix: np.ndarray, params: KernelParams) -> tuple[np.ndarray, float]:
    """Cholesky of K + (noise + jitter) I with jitter escalation."""
    n = k_matrix.shape[0]
    jitter = params.jitter * params.signal_variance
    cap = JITTER_CAP_FACTOR * params.signal_variance
    while True:
        try:
            reg = k_matrix + (params.noise_variance + jitter) * np.eye(n)
            return cholesky(reg, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > cap:
                raise FactorizationError(
                    "kernel matrix is not positive definite even at the jitter cap; "
                    "the distance matrix is likely degenerate"
                ) from None


def empty_state(params: KernelParams) -> GpState:
    return GpState(
        evaluated_indices=(),
        observations=np.zeros(0),
        params=params,
        chol=None,
        jitter_used=0.0,
    )


def build_state(
    evaluated_indices,
    observations,
    params: KernelParams,
    distances: DistanceMatrix,
) -> GpState:
    """Assemble a state from scratch: kernel matrix, factorization, cache."""
    idx = tuple(int(i) for i in evaluated_indices)
    if len(set(idx)) != len(idx):
        raise ValueError("evaluated indices must be distinct")
    obs = np.asarray(observations, dtype=np.float64)
    if len(obs) != len(idx):
        raise ValueError("one observation per evaluated index is required")
    if not idx:
        return empty_state(params)
    k_matrix = kernel_cross(distances, idx, idx, params)
    chol, jitter_used = _factorize(k_matrix, params)
    return GpState(idx, obs, params, chol, jitter_used)


def posterior(
    state: GpState, distances: DistanceMatrix, query_index: int
) -> tuple[float, float]:
    """Posterior mean and variance of the objective at one candidate."""
    mean, var = posterior_batch(state, distances, [query_index])
    return float(mean[0]), float(var[0])


def posterior_batch(
    state: GpState, distances: DistanceMatrix, query_indices
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior over many candidates.

    One triangular solve against the cached factor is shared by all
    queries; with no evaluations this is the prior (0, signal_variance).
    """
    queries = list(query_indices)
    params = state.params
    if state.n_evaluated == 0:
        return np.zeros(len(queries)), np.full(len(queries), params.signal_variance)
    k_cross = kernel_cross(distances, state.evaluated_indices, queries, params)
    y_bar = float(state.observations.mean())
    alpha = cho_solve((state.chol, True), state.observations - y_bar)
    mean = y_bar + k_cross.T @ alpha
    v = solve_triangular(state.chol, k_cross, lower=True)
    var = params.signal_variance - (v * v).sum(axis=0)
    return mean, np.maximum(var, 0.0)


def fit_lengthscale(
    distances: DistanceMatrix,
    state: GpState,
    mode: str = "median-heuristic",
    fixed_lengthscale: float | None = None,
    noise_variance: float | None = None,
    grid_size: int = 25,
    grid_span: float = 10.0,
) -> KernelParams:
    """Refit kernel hyperparameters from the filled distances and the
    current observations.

    lengthscale: median of the filled off-diagonal distances
    (median-heuristic), the config value (fixed), or the maximizer of the
    log marginal likelihood over a log-spaced grid of ``grid_size`` values
    spanning [median/grid_span, median*grid_span] (mle-grid).

    signal_variance: sample variance of the observations, 1.0 when fewer
    than two observations exist or they are all equal.

    noise_variance: the explicit value if given, else
    (0.05 * observation range)^2, with floor 1e-4 when the range is
    degenerate.
    """
    off_diag = ~np.eye(distances.n, dtype=bool)
    filled = distances.filled_mask & off_diag
    if not filled.any():
        raise ValueError("no filled off-diagonal distances to fit from")
    pool = distances.values[filled]
    median = float(np.median(pool))
    if median <= 0:
        median = max(float(pool.max()), 1e-8)

    obs = state.observations
    if len(obs) >= 2 and float(np.var(obs, ddof=1)) > 0:
        signal_variance = float(np.var(obs, ddof=1))
    else:
        signal_variance = 1.0
    if noise_variance is None:
        obs_range = float(obs.max() - obs.min()) if len(obs) >= 2 else 0.0
        noise_variance = (0.05 * obs_range) ** 2 if obs_range > 0 else 1e-4

    if mode == "fixed":
        if fixed_lengthscale is None:
            raise ValueError("fixed mode needs fixed_lengthscale")
        lengthscale = float(fixed_lengthscale)
    elif mode == "median-heuristic":
        lengthscale = median
    elif mode == "mle-grid":
        grid = np.geomspace(median / grid_span, median * grid_span, grid_size)
        lengthscale = median
        if state.n_evaluated >= 2:
            best = -np.inf
            for ell in grid:
                params = KernelParams(float(ell), signal_variance, noise_variance)
                ll = log_marginal_likelihood(state.evaluated_indices, obs, distances, params)
                if ll > best:
                    best = ll
                    lengthscale = float(ell)
        else:
            lengthscale = float(grid[grid_size // 2])
    else:
        raise ValueError(f"unknown lengthscale mode {mode!r}")
    return KernelParams(lengthscale, signal_variance, noise_variance)


def log_marginal_likelihood(
    evaluated_indices, observations, distances: DistanceMatrix, params: KernelParams
) -> float:
    """Gaussian log marginal likelihood of the (centered) observations."""
    idx = tuple(evaluated_indices)
    obs = np.asarray(observations, dtype=np.float64)
    k_matrix = kernel_cross(distances, idx, idx, params)
    chol, _ = _factorize(k_matrix, params)
    resid = obs - obs.mean()
    alpha = cho_solve((chol, True), resid)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(-0.5 * resid @ alpha - 0.5 * log_det - 0.5 * len(obs) * math.log(2.0 * math.pi))


def update(
    state: GpState,
    new_index: int,
    new_observation: float,
    distances: DistanceMatrix,
    refit: bool = True,
    fit_mode: str = "median-heuristic",
    fixed_lengthscale: float | None = None,
    noise_variance: float | None = None,
) -> GpState:
    """Append one (model, observed return) pair and rebuild the cache.

    Hyperparameters are refit from the enlarged history unless ``refit``
    is false, in which case the current parameters are kept.
    """
    if new_index in state.evaluated_indices:
        raise ValueError(f"model {new_index} was already evaluated")
    idx = state.evaluated_indices + (int(new_index),)
    obs = np.append(state.observations, float(new_observation))
    params = state.params
    if refit:
        interim = GpState(idx, obs, params, None, 0.0)
        params = fit_lengthscale(
            distances,
            interim,
            mode=fit_mode,
            fixed_lengthscale=fixed_lengthscale,
            noise_variance=noise_variance,
        )
    return build_state(idx, obs, params, distances)
