"""Cross-module statistical checks tying the snake to the measure process."""

import math

import numpy as np
import pytest

from brsnake.environment import (
    CovarianceKernel,
    EnvironmentConfigError,
    SmoothGaussianEnvironment,
    field_from_smooth_increments,
)
from brsnake.functional import build_functional_series, limit_target
from brsnake.harness import mp_residual_test
from brsnake.snake import LocalTimeLedger, SnakeConfig, run_contour_ensemble, run_snake


def test_snake_occupation_solves_the_martingale_problem_for_cos():
    # occupation trajectories X_t(phi) for phi = cos under the flat critical
    # environment; Lap cos = -cos, so the drift integrand is -<X, cos>/2.
    n, k1, lanes = 50, 1.0, 4000
    cap = int(round(n * k1))
    t_top = 25
    levels = tuple(range(t_top + 1))
    out = run_contour_ensemble(
        n, cap, lanes, np.random.default_rng(42), stop_mass=1.0,
        count_levels=levels,
        phis=(np.cos, lambda x: np.cos(x) ** 2),
    )
    x_cos = out["phisums"][0] / n   # [lanes, levels]
    x_cos2 = out["phisums"][1] / n
    rep = mp_residual_test(
        {"phi": x_cos, "phi2": x_cos2, "lap": -x_cos},
        dt=1.0 / n, growth_rate=0.0,
    )
    assert abs(rep["final_zero_mean_z"]) <= 4.5
    gap = abs(rep["rqv_mean"] - rep["qv_target_mean"])
    assert gap <= 0.10 * rep["qv_target_mean"] + 4 * rep["rqv_se"]


def test_snake_occupation_mass_martingale():
    # phi = 1 under the flat environment: X_t(1) is a critical mass chain
    n, cap, lanes = 40, 40, 4000
    levels = tuple(range(21))
    out = run_contour_ensemble(
        n, cap, lanes, np.random.default_rng(43), stop_mass=1.0,
        count_levels=levels, track_tips=False,
    )
    mass = out["counts"] / n
    rep = mp_residual_test(
        {"phi": mass, "phi2": mass, "lap": np.zeros_like(mass)},
        dt=1.0 / n, growth_rate=0.0,
    )
    assert abs(rep["final_zero_mean_z"]) <= 4.0
    assert abs(rep["autocorr"]) <= 4 * rep["autocorr_se"]


def test_smooth_environment_through_snake_and_functional():
    n = 12
    kernel = CovarianceKernel("sq_exp", sigma2=0.25, lam=1.5)
    env = SmoothGaussianEnvironment(n, kernel, np.random.default_rng(3),
                                    order=32)
    cfg = SnakeConfig(n=n, height_cap=1.0)
    record, ledger = run_snake(cfg, np.random.default_rng(4), env=env,
                               local_time_target=1.0)
    assert record.steps > 0
    series = build_functional_series(record, env)
    assert series.reconstruction_gap() <= 1e-10
    assert np.all(np.diff(series.bracket) >= -1e-15)
    tgt = limit_target(record, ledger, env, record.steps / n**2)
    assert np.isfinite(tgt["drift"]) and tgt["ell0"] > 0
    # the compensator should already be in the target's neighbourhood
    total = tgt["drift"] + tgt["ell0"] - tgt["capterm"]
    assert abs(series.compensator[-1] - total) <= 1.0


def test_smooth_increment_mode_requires_smooth_env():
    class NotSmooth:
        pass

    with pytest.raises(EnvironmentConfigError):
        field_from_smooth_increments(NotSmooth(), 1, np.array([0.0]))


def test_environment_growth_rate_feeds_the_bounds():
    from brsnake.environment import EnvironmentConfig, SpatialGrid

    cfg = EnvironmentConfig(
        n=100, mean_drift=-0.25,
        kernel=CovarianceKernel("constant", gamma=1.5),
        grid=SpatialGrid(origin=(0.0,), spacing=1.0, shape=(3,)),
    )
    assert cfg.growth_rate == pytest.approx(-0.25 + 0.75)
    assert cfg.bound == pytest.approx(5.0)
