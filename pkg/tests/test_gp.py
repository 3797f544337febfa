import math

import numpy as np
import pytest

from boselect.distance import new_distance_matrix
from boselect.gp import (
    FactorizationError,
    GpState,
    KernelParams,
    build_state,
    empty_state,
    fit_lengthscale,
    kernel_cross,
    kernel_value,
    log_marginal_likelihood,
    posterior,
    posterior_batch,
    update,
)


def matrix_from_points(points):
    """Distance matrix over embedded points (all entries filled)."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    diffs = points[:, None, :] - points[None, :, :]
    matrix = new_distance_matrix(n, probe_states=[0])
    matrix.values = np.sqrt((diffs**2).sum(axis=-1))
    matrix.filled_mask = np.ones((n, n), dtype=bool)
    matrix.fill_counts = np.ones((n, n), dtype=np.int64)
    return matrix


def matrix_from_values(values):
    values = np.asarray(values, dtype=float)
    matrix = new_distance_matrix(len(values), probe_states=[0])
    matrix.values = values
    matrix.filled_mask = np.ones(values.shape, dtype=bool)
    matrix.fill_counts = np.ones(values.shape, dtype=np.int64)
    return matrix


class TestKernelValue:
    def test_zero_distance(self):
        assert kernel_value(0.0, KernelParams(1.0)) == 1.0

    def test_half_decay_point(self):
        ell = 0.7
        d = ell * math.sqrt(2 * math.log(2))
        assert kernel_value(d, KernelParams(ell)) == pytest.approx(0.5)

    def test_monotone_decay_to_zero(self):
        params = KernelParams(1.0)
        values = [kernel_value(d, params) for d in np.linspace(0, 20, 50)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-10

    def test_signal_variance_scales(self):
        assert kernel_value(0.0, KernelParams(1.0, signal_variance=3.5)) == 3.5


class TestPosterior:
    def test_prior_with_no_observations(self):
        matrix = matrix_from_points([0.0, 1.0])
        state = empty_state(KernelParams(1.0, signal_variance=2.5))
        assert posterior(state, matrix, 0) == (0.0, 2.5)

    def test_noise_free_interpolation_single_point(self):
        matrix = matrix_from_points([0.0, 1.0, 2.0])
        params = KernelParams(1.0, signal_variance=1.0, noise_variance=0.0)
        state = build_state([1], [3.7], params, matrix)
        mean, var = posterior(state, matrix, 1)
        assert mean == pytest.approx(3.7, abs=1e-6)
        assert var <= 10 * state.jitter_used + 1e-12

    def test_matches_explicit_conditioning_two_points(self):
        rng = np.random.default_rng(0)
        points = rng.normal(size=3)
        matrix = matrix_from_points(points)
        params = KernelParams(0.8, signal_variance=1.3, noise_variance=0.05)
        obs = np.array([0.4, -1.2])
        state = build_state([0, 2], obs, params, matrix)
        mean, var = posterior(state, matrix, 1)

        # brute-force 3x3 joint conditioning on the same regularized matrix
        def k(i, j):
            d = abs(points[i] - points[j])
            return params.signal_variance * math.exp(-(d**2) / (2 * params.lengthscale**2))

        k_hh = np.array([[k(0, 0), k(0, 2)], [k(2, 0), k(2, 2)]])
        k_hh += (params.noise_variance + state.jitter_used) * np.eye(2)
        k_q = np.array([k(1, 0), k(1, 2)])
        y_bar = obs.mean()
        mean_oracle = y_bar + k_q @ np.linalg.inv(k_hh) @ (obs - y_bar)
        var_oracle = params.signal_variance - k_q @ np.linalg.inv(k_hh) @ k_q
        assert mean == pytest.approx(mean_oracle, abs=1e-8)
        assert var == pytest.approx(var_oracle, abs=1e-8)

    def test_variance_clamped_nonnegative(self):
        matrix = matrix_from_points(np.linspace(0, 1, 6))
        params = KernelParams(2.0, noise_variance=0.0)
        state = build_state([0, 1, 2, 3, 4], np.zeros(5), params, matrix)
        _, variances = posterior_batch(state, matrix, range(6))
        assert np.all(variances >= 0)

    def test_unfilled_distance_rejected(self):
        matrix = matrix_from_points([0.0, 1.0, 2.0])
        matrix.filled_mask[0, 2] = matrix.filled_mask[2, 0] = False
        params = KernelParams(1.0)
        state = build_state([0], [1.0], params, matrix)
        with pytest.raises(KeyError):
            posterior(state, matrix, 2)


class TestFitLengthscale:
    def test_median_heuristic_constant_distances(self):
        values = np.full((3, 3), 2.5)
        np.fill_diagonal(values, 0.0)
        matrix = matrix_from_values(values)
        state = empty_state(KernelParams(1.0))
        params = fit_lengthscale(matrix, state, mode="median-heuristic")
        assert params.lengthscale == 2.5

    def test_fixed_mode(self):
        matrix = matrix_from_points([0.0, 1.0])
        state = empty_state(KernelParams(1.0))
        params = fit_lengthscale(matrix, state, mode="fixed", fixed_lengthscale=2.0)
        assert params.lengthscale == 2.0

    def test_signal_variance_from_observations(self):
        matrix = matrix_from_points([0.0, 1.0, 2.0])
        obs = np.array([1.0, 2.0, 4.0])
        state = GpState((0, 1, 2), obs, KernelParams(1.0), None, 0.0)
        params = fit_lengthscale(matrix, state)
        assert params.signal_variance == pytest.approx(np.var(obs, ddof=1))
        assert params.noise_variance == pytest.approx((0.05 * 3.0) ** 2)

    def test_mle_grid_matches_exhaustive_oracle(self):
        # Data drawn from a known RBF GP with lengthscale 1.0 over 40 points.
        rng = np.random.default_rng(4)
        points = np.sort(rng.uniform(0, 10, size=40))
        matrix = matrix_from_points(points)
        true_params = KernelParams(1.0, signal_variance=1.0, noise_variance=1e-6)
        cov = kernel_cross(matrix, range(40), range(40), true_params)
        cov += true_params.noise_variance * np.eye(40)
        obs = np.linalg.cholesky(cov) @ rng.normal(size=40)

        state = GpState(tuple(range(40)), obs, true_params, None, 0.0)
        fitted = fit_lengthscale(matrix, state, mode="mle-grid", noise_variance=1e-6)

        pool = matrix.values[~np.eye(40, dtype=bool)]
        median = float(np.median(pool))
        grid = np.geomspace(median / 10, median * 10, 25)
        signal = float(np.var(obs, ddof=1))
        lls = [
            log_marginal_likelihood(
                range(40), obs, matrix, KernelParams(float(ell), signal, 1e-6)
            )
            for ell in grid
        ]
        oracle_idx = int(np.argmax(lls))
        fitted_idx = int(np.argmin(np.abs(grid - fitted.lengthscale)))
        assert abs(fitted_idx - oracle_idx) <= 1

    def test_no_filled_distances_rejected(self):
        matrix = new_distance_matrix(3, probe_states=[0])
        with pytest.raises(ValueError):
            fit_lengthscale(matrix, empty_state(KernelParams(1.0)))


class TestUpdate:
    def test_interpolates_after_update(self):
        matrix = matrix_from_points([0.0, 2.0, 5.0])
        state = empty_state(KernelParams(1.0))
        state = update(state, 1, 4.2, matrix, refit=True, noise_variance=0.0)
        mean, _ = posterior(state, matrix, 1)
        assert mean == pytest.approx(4.2, abs=1e-6)

    def test_duplicate_index_rejected(self):
        matrix = matrix_from_points([0.0, 2.0])
        state = update(empty_state(KernelParams(1.0)), 0, 1.0, matrix)
        with pytest.raises(ValueError):
            update(state, 0, 2.0, matrix)

    def test_equal_observations_shrink_toward_prior(self):
        c = 3.0
        matrix = matrix_from_points([0.0, 1.0, 2.0, 8.0])
        state = empty_state(KernelParams(1.0))
        for idx in (0, 1, 2):
            state = update(state, idx, c, matrix, noise_variance=0.0)
        means, _ = posterior_batch(state, matrix, range(4))
        assert np.all(means >= -1e-9) and np.all(means <= c + 1e-9)

    def test_incremental_equals_batch(self):
        rng = np.random.default_rng(9)
        matrix = matrix_from_points(rng.normal(size=8))
        obs = rng.normal(size=5)
        order = [3, 0, 6, 2, 7]
        state = empty_state(KernelParams(1.0))
        for idx, y in zip(order, obs):
            state = update(state, idx, float(y), matrix)
        batch = build_state(order, obs, state.params, matrix)
        m_inc, v_inc = posterior_batch(state, matrix, range(8))
        m_bat, v_bat = posterior_batch(batch, matrix, range(8))
        assert np.max(np.abs(m_inc - m_bat)) < 1e-10
        assert np.max(np.abs(v_inc - v_bat)) < 1e-10

    def test_exchangeability(self):
        rng = np.random.default_rng(10)
        matrix = matrix_from_points(rng.normal(size=6))
        pairs = [(0, 1.0), (2, -0.5), (4, 0.3)]
        states = []
        for perm in ([0, 1, 2], [2, 0, 1], [1, 2, 0]):
            state = empty_state(KernelParams(1.0))
            for k in perm:
                state = update(state, pairs[k][0], pairs[k][1], matrix)
            states.append(state)
        base_m, base_v = posterior_batch(states[0], matrix, range(6))
        for other in states[1:]:
            m, v = posterior_batch(other, matrix, range(6))
            assert np.max(np.abs(m - base_m)) < 1e-10
            assert np.max(np.abs(v - base_v)) < 1e-10

    def test_prior_recovery(self):
        params = KernelParams(1.0, signal_variance=2.0)
        state = empty_state(params)
        matrix = matrix_from_points([0.0, 1.0])
        mean, var = posterior(state, matrix, 0)
        assert (mean, var) == (0.0, 2.0)


class TestFactorization:
    def test_cholesky_reconstructs_kernel(self):
        rng = np.random.default_rng(11)
        matrix = matrix_from_points(rng.normal(size=7))
        params = KernelParams(0.5, noise_variance=0.01)
        state = build_state(range(7), rng.normal(size=7), params, matrix)
        k_matrix = kernel_cross(matrix, range(7), range(7), params)
        k_matrix += (params.noise_variance + state.jitter_used) * np.eye(7)
        assert np.max(np.abs(state.chol @ state.chol.T - k_matrix)) < 1e-8

    def test_jitter_rescues_duplicate_points(self):
        matrix = matrix_from_points([0.0, 0.0, 1.0])  # singular without jitter
        params = KernelParams(1.0, noise_variance=0.0)
        state = build_state([0, 1, 2], [1.0, 1.0, 0.0], params, matrix)
        assert state.jitter_used <= 1e-2 * params.signal_variance

    def test_indefinite_matrix_raises_after_escalation(self):
        # Distances violating the triangle inequality hard enough that the
        # RBF matrix is indefinite beyond what the jitter cap can fix.
        values = np.array(
            [
                [0.0, 1e-6, 1e-6],
                [1e-6, 0.0, 10.0],
                [1e-6, 10.0, 0.0],
            ]
        )
        matrix = matrix_from_values(values)
        with pytest.raises(FactorizationError):
            build_state([0, 1, 2], [0.0, 0.0, 0.0], KernelParams(1.0), matrix)
