import math

import numpy as np
import pytest

from brsnake.environment import (
    CovarianceKernel,
    EnvironmentConfig,
    EnvironmentConfigError,
    RandomFieldEnvironment,
    SmoothGaussianEnvironment,
    SpatialGrid,
    branch_probabilities,
    field_from_smooth_increments,
)


def make_env(n=100, nu=0.0, kernel=None, npts=21, seed=0):
    kernel = kernel or CovarianceKernel("zero")
    grid = SpatialGrid(origin=(-5.0,), spacing=0.5, shape=(npts,))
    cfg = EnvironmentConfig(n=n, mean_drift=nu, kernel=kernel, grid=grid)
    return RandomFieldEnvironment(cfg, np.random.default_rng(seed))


def test_kernel_gram_symmetric_psd():
    k = CovarianceKernel("sq_exp", sigma2=2.0, lam=0.7)
    pts = np.linspace(-3, 3, 40)[:, None]
    g = k.gram(pts)
    assert np.allclose(g, g.T)
    chol = k.cholesky(pts)
    assert np.allclose(chol @ chol.T, g, atol=1e-8)
    assert k.diag_sup() == 2.0


def test_kernel_rejects_bad_params():
    with pytest.raises(EnvironmentConfigError):
        CovarianceKernel("sq_exp", sigma2=-1.0)
    with pytest.raises(EnvironmentConfigError):
        CovarianceKernel("noise")


def test_duplicated_points_need_jitter_only():
    k = CovarianceKernel("sq_exp", sigma2=1.0, lam=1.0)
    pts = np.array([[0.0], [0.0], [1.0]])  # singular gram, PSD though
    chol = k.cholesky(pts)
    assert np.all(np.isfinite(chol))


def test_constant_kernel_not_psd_error_never_triggers():
    # constant kernels bypass the factorization entirely
    env = make_env(kernel=CovarianceKernel("constant", gamma=1.0))
    sl = env.sample_field_step(0)
    assert np.all(sl.values == sl.values[0])


def test_zero_kernel_slice_is_deterministic_mean():
    env = make_env(n=100, nu=2.0)
    sl = env.sample_field_step(3)
    assert np.all(sl.values == pytest.approx(0.2))


def test_clipping_bound_enforced():
    env = make_env(n=16, kernel=CovarianceKernel("constant", gamma=100.0), seed=3)
    vals = [env.sample_field_step(k).values for k in range(200)]
    v = np.concatenate(vals)
    assert np.max(np.abs(v)) <= math.sqrt(16) / 2 + 1e-12
    assert env.clip_frequency() > 0


def test_per_point_variance_matches_kernel():
    # constant kernel gamma=1, nu=0: per-point variance 1 within 4 SE
    env = make_env(n=10_000, kernel=CovarianceKernel("constant", gamma=1.0), seed=5)
    r = 4000
    vals = np.array([env.sample_field_step(k).values[7] for k in range(r)])
    var = vals.var(ddof=1)
    se = 1.0 * math.sqrt(2.0 / (r - 1))
    assert abs(var - 1.0) <= 4 * se


def test_independence_across_generations():
    env = make_env(n=100, kernel=CovarianceKernel("constant", gamma=1.0), seed=6)
    n_rep = 2500
    a = np.array([env.sample_field_step(2 * k).values[0] for k in range(n_rep)])
    b = np.array([env.sample_field_step(2 * k + 1).values[0] for k in range(n_rep)])
    cross = np.mean(a * b) - a.mean() * b.mean()
    assert abs(cross) <= 4.0 / math.sqrt(n_rep)


def test_stationary_mean():
    env = make_env(n=100, nu=1.0, kernel=CovarianceKernel("constant", gamma=1.0), seed=7)
    n_rep = 4000
    vals = np.array([env.sample_field_step(k).values[3] for k in range(n_rep)])
    assert abs(vals.mean() - 0.1) <= 4 * math.sqrt(1.0 / n_rep)


def test_eval_field_nearest_node_and_ties():
    env = make_env(seed=8, kernel=CovarianceKernel("constant", gamma=1.0))
    sl = env.sample_field_step(0)
    pts = env.config.grid.points()
    assert sl.eval_one(pts[4]) == sl.values[4]
    # midpoint between nodes 4 and 5 rounds toward the lower index
    mid = 0.5 * (pts[4, 0] + pts[5, 0])
    idx, clamped = env.config.grid.nearest_index(np.array([[mid]]))
    assert idx[0] == 4 and not clamped[0]
    # off-extent points clamp and are counted
    before = sl.clamp_count
    sl.eval_one(np.array([99.0]))
    assert sl.clamp_count == before + 1


def test_empty_grid_rejected():
    with pytest.raises(EnvironmentConfigError):
        SpatialGrid(origin=(0.0,), spacing=1.0, shape=(0,))


def test_branch_probabilities():
    assert branch_probabilities(0.0, 100) == (0.5, 0.5)
    n = 100
    p_up, p_dn = branch_probabilities(math.sqrt(n) / 2, n)
    assert p_up == pytest.approx(0.625) and p_dn == pytest.approx(0.375)
    assert branch_probabilities(1.0, 100)[0] == pytest.approx(0.525)
    with pytest.raises(ValueError):
        branch_probabilities(6.0, 100)


def test_smooth_increment_indicator():
    kernel = CovarianceKernel("sq_exp", sigma2=1.0, lam=1.0)
    env = SmoothGaussianEnvironment(9, kernel, np.random.default_rng(0), order=8)
    # rig the Brownian coefficients to force specific increments at y = 0
    basis0 = env._basis(np.array([0.0]))[0]
    direction = basis0 / np.dot(basis0, basis0)
    env._beta = [np.zeros(8), 0.3 / env._amp * direction]
    inc_small = env.xi_many(1, np.array([0.0]))[0] / math.sqrt(9)
    assert inc_small == pytest.approx(0.3, abs=1e-12)
    env._beta = [np.zeros(8), 0.6 / env._amp * direction]
    inc_big = field_from_smooth_increments(env, 1, np.array([0.0]))[0]
    assert inc_big == 0.0  # killed by the |increment| < 1/2 indicator


def test_smooth_cumulative_reconstructs_field():
    kernel = CovarianceKernel("sq_exp", sigma2=0.04, lam=1.0)
    env = SmoothGaussianEnvironment(50, kernel, np.random.default_rng(9), order=16)
    y = 0.37
    lvl = 30
    total = env.cumulative(lvl, y)
    direct = env.smooth_value(lvl, np.array([y]))
    assert total == pytest.approx(float(direct), abs=1e-12)
    # repeated evaluation is bit-identical
    assert env.cumulative(lvl, y) == total


def test_smooth_field_derivatives_match_finite_differences():
    kernel = CovarianceKernel("sq_exp", sigma2=1.0, lam=0.8)
    env = SmoothGaussianEnvironment(20, kernel, np.random.default_rng(11), order=32)
    t, y, h = 0.5, 0.3, 1e-5
    g = float(np.atleast_1d(env.b_grad(t, np.array([y])))[0])
    fd = (env.smooth_value(10, np.array([y + h]))
          - env.smooth_value(10, np.array([y - h]))) / (2 * h)
    assert g == pytest.approx(float(fd), rel=1e-5, abs=1e-6)
    lap = float(env.b_lap(t, np.array([y])))
    fd2 = (env.smooth_value(10, np.array([y + h]))
           - 2 * env.smooth_value(10, np.array([y]))
           + env.smooth_value(10, np.array([y - h]))) / h**2
    assert lap == pytest.approx(float(fd2), rel=1e-3, abs=1e-4)
