"""CSV export surfaces and multi-dimensional smoke coverage."""

import csv
import math

import numpy as np
import pytest

from brsnake import brox
from brsnake.branching import PopulationState, step_population
from brsnake.environment import (
    CovarianceKernel,
    EnvironmentConfig,
    RandomFieldEnvironment,
    SpatialGrid,
    dump_field_csv,
)
from brsnake.functional import _gh_nodes, build_functional_series
from brsnake.snake import SnakeConfig, run_snake


class FlatEnv:
    def xi(self, level, y):
        return 0.0

    def cumulative(self, level, y):
        return 0.0


def test_field_csv(tmp_path):
    grid = SpatialGrid(origin=(0.0,), spacing=1.0, shape=(4,))
    cfg = EnvironmentConfig(n=25, mean_drift=1.0, grid=grid,
                            kernel=CovarianceKernel("zero"))
    env = RandomFieldEnvironment(cfg, np.random.default_rng(0))
    fields = [env.sample_field_step(k) for k in range(3)]
    path = tmp_path / "fields.csv"
    dump_field_csv(path, fields)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["k", "grid_index", "x0", "value"]
    assert len(rows) == 1 + 3 * 4
    assert float(rows[1][3]) == pytest.approx(1.0 / 5.0)


def test_contour_and_ledger_csv(tmp_path):
    cfg = SnakeConfig(n=3, height_cap=1.0)
    record, ledger = run_snake(cfg, np.random.default_rng(1), env=FlatEnv(),
                               local_time_target=1.0)
    rpath = tmp_path / "record.csv"
    record.to_csv(rpath)
    rows = list(csv.reader(rpath.open()))
    assert rows[0] == ["step", "level", "tip0"]
    assert len(rows) == record.steps + 2
    lpath = tmp_path / "ledger.csv"
    ledger.to_csv(lpath)
    lrows = list(csv.reader(lpath.open()))
    assert lrows[0] == ["level", "upcross_step_indices"]
    got = [int(v) for v in lrows[1][1].split()]
    assert got == list(record.upcross_indices(0))


def test_functional_series_csv(tmp_path):
    cfg = SnakeConfig(n=3, height_cap=1.0)
    record, _ = run_snake(cfg, np.random.default_rng(2), env=FlatEnv(),
                          local_time_target=1.0)
    series = build_functional_series(record, FlatEnv())
    path = tmp_path / "series.csv"
    series.to_csv(path, stride=2)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["k", "F", "A", "M", "bracket"]
    assert len(rows) == 1 + math.ceil((record.steps + 1) / 2)


def test_brox_schedule_csv(tmp_path):
    profs = [brox.build_potential(4, 1.0, np.random.default_rng(3))]
    out = brox.embed_rwre(profs, 10, np.random.default_rng(4))
    path = tmp_path / "sched.csv"
    brox.dump_schedule_csv(path, 4, out["walks"], out["sigma"])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["n", "replicate", "m", "sigma", "walk"]
    assert len(rows) == 1 + 11


# ------------------------------------------------------------ d = 2 smoke

def test_population_step_d2():
    class Env2:
        def xi_many(self, k, pos):
            return np.zeros(len(pos))

    st = PopulationState.initial(25, 100, np.array([0.0, 1.0]), dim=2)
    nxt = step_population(st, Env2(), np.random.default_rng(5))
    assert nxt.positions.shape[1] == 2


def test_snake_step_d2():
    cfg = SnakeConfig(n=9, height_cap=1.0, root=np.array([0.0, 0.0]), dim=2)
    record, _ = run_snake(cfg, np.random.default_rng(6), env=FlatEnv(),
                          local_time_target=1.0)
    assert record.tips.shape[1] == 2


def test_gh_nodes_d2_expectation():
    pts, wts = _gh_nodes(12, dim=2)
    # E exp(a.Z) = exp(|a|^2/2) for Z ~ N(0, I_2)
    a = np.array([0.3, -0.7])
    got = float(np.sum(wts * np.exp(pts @ a)))
    assert got == pytest.approx(math.exp(0.5 * float(a @ a)), rel=1e-10)
