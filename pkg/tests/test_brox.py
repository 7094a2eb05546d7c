import math

import numpy as np
import pytest

from brsnake.brox import (
    PotentialProfile,
    build_potential,
    direct_rwre_ensemble,
    embed_rwre,
    exact_embedded_ensemble,
    exit_time_stats,
    reflected_segment_site,
    sigma_convergence_report,
    simulate_bmre,
    tent_map,
)


def flat_profile(n, k1):
    cap = int(round(n * k1))
    return build_potential(n, k1, xi=np.zeros(cap + 1))


# ---------------------------------------------------------------- potential

def test_potential_zero_field():
    p = flat_profile(10, 1.0)
    assert np.allclose(p.cumulative, 0.0)


def test_potential_single_site_increment():
    xi = np.zeros(101)
    xi[1] = 1.0
    p = build_potential(100, 1.0, xi=xi)
    assert p.cumulative[1] == pytest.approx(math.log(0.475 / 0.525), rel=1e-12)
    assert p.cumulative[1] == pytest.approx(-0.10008345855698253, abs=1e-12)
    assert np.allclose(p.cumulative[1:], p.cumulative[1])


def test_potential_bound_errors():
    with pytest.raises(ValueError):
        build_potential(4, 1.0, xi=np.array([0.0, 5.0, 0.0, 0.0, 0.0]))


def test_tent_map_values():
    k1 = 1.5
    assert tent_map(0.0, k1) == 0.0
    assert tent_map(k1, k1) == k1
    assert tent_map(2 * k1, k1) == 0.0
    for u in (0.1, 0.7, 1.2):
        assert tent_map(k1 + u, k1) == pytest.approx(k1 - u)
        assert tent_map(-u, k1) == pytest.approx(u)  # even


def test_reflected_segment_site_even_about_boundaries():
    cap = 5
    # segment [-1, 0) mirrors [0, 1); [cap, cap+1) mirrors [cap-1, cap)
    assert reflected_segment_site(-1, cap) == 0
    assert reflected_segment_site(0, cap) == 0
    assert reflected_segment_site(cap, cap) == cap - 1
    assert reflected_segment_site(cap - 1, cap) == cap - 1
    assert reflected_segment_site(2 * cap, cap) == 0
    assert reflected_segment_site(2 * cap + 3, cap) == 3


def test_scale_function_matches_riemann_sum():
    rng = np.random.default_rng(0)
    p = build_potential(10, 1.0, rng)
    for z in (0.35, 0.999, 1.73, -0.6):
        fine = 0.0
        npts = 200_000
        zs = (np.arange(npts) + 0.5) * (z / npts)
        segs = np.floor(zs * p.n).astype(np.int64)
        fine = float(np.sum(np.exp(p.vhat_segment(segs))) * (z / npts))
        assert p.scale_function(z) == pytest.approx(fine, rel=1e-4)
    assert p.scale_function(0.0) == 0.0
    zs = np.linspace(-1.0, 2.0, 40)
    vals = [p.scale_function(z) for z in zs]
    assert all(vals[i + 1] > vals[i] for i in range(len(vals) - 1))


def test_scale_function_piecewise_exact():
    # one segment: A(z) = z * e^{V} exactly
    xi = np.zeros(3)
    xi[1] = 1.0
    p = build_potential(4, 0.5, xi=xi)
    n = 4
    slope0 = math.exp(p.cumulative[0])
    assert p.scale_function(0.5 / n) == pytest.approx(0.5 / n * slope0, rel=1e-12)
    full = (1.0 / n) * slope0
    slope1 = math.exp(p.cumulative[1])
    assert p.scale_function(1.5 / n) == pytest.approx(full + 0.5 / n * slope1, rel=1e-12)


# ---------------------------------------------------------------- diffusion

def test_bmre_flat_potential_is_brownian():
    p = flat_profile(1, 20.0)
    rng = np.random.default_rng(1)
    vals = np.array([simulate_bmre(p, np.array([0.25]), rng, du=2e-3)[0]
                     for _ in range(300)])
    # variance of Z(0.25) within 4 SE of 0.25
    var = vals.var(ddof=1)
    se = 0.25 * math.sqrt(2.0 / (len(vals) - 1))
    assert abs(var - 0.25) <= 4 * se
    assert abs(vals.mean()) <= 4 * math.sqrt(0.25 / len(vals))


def test_bmre_constant_potential_gauge():
    # V == c: Z(t) = e^{-c} W(e^{2c} t) is again a standard Brownian motion
    cap = 20
    xi = np.zeros(cap + 1)
    prof = build_potential(2, 10.0, xi=xi)
    prof = PotentialProfile(prof.n, prof.cap, xi, np.full(cap + 1, 0.7))
    rng = np.random.default_rng(2)
    vals = np.array([simulate_bmre(prof, np.array([0.5]), rng, du=2e-3)[0]
                     for _ in range(300)])
    var = vals.var(ddof=1)
    se = 0.5 * math.sqrt(2.0 / (len(vals) - 1))
    assert abs(var - 0.5) <= 4 * se


def test_simulate_bmre_validates():
    p = flat_profile(2, 1.0)
    with pytest.raises(ValueError):
        simulate_bmre(p, np.array([-1.0]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate_bmre(p, np.array([1.0]), np.random.default_rng(0), du=-1.0)


# ---------------------------------------------------------------- embedding

def test_embedding_steps_are_unit():
    rng = np.random.default_rng(3)
    profs = [build_potential(5, 1.0, rng) for _ in range(8)]
    out = embed_rwre(profs, 60, rng)
    d = np.diff(out["walks"], axis=1)
    assert np.all(np.abs(d) == 1)
    assert np.all(np.diff(out["sigma"], axis=1) > 0)


def test_embedding_flat_up_probability():
    rng = np.random.default_rng(4)
    profs = [flat_profile(5, 1.0) for _ in range(64)]
    out = embed_rwre(profs, 400, rng)
    d = np.diff(out["walks"], axis=1)
    ups = (d == 1).mean()
    m = d.size
    assert abs(ups - 0.5) <= 4 * math.sqrt(0.25 / m)


def test_embedding_rejects_coarse_resolution():
    profs = [flat_profile(5, 1.0)]
    with pytest.raises(ValueError):
        embed_rwre(profs, 10, np.random.default_rng(0), du=1.0)


def test_passage_durations_match_unit_exit_law():
    # n^2 * sigma increments have the exit-time law (mean 1) in any environment
    rng = np.random.default_rng(5)
    profs = [build_potential(10, 1.0, rng) for _ in range(200)]
    out = embed_rwre(profs, 100, rng)
    th = 100 * np.diff(out["sigma"], axis=1).ravel()
    se = th.std(ddof=1) / math.sqrt(th.size)
    assert abs(th.mean() - 1.0) <= 5 * se + 0.02  # du bias allowance


def test_embedded_vs_exact_kernel_same_law():
    from brsnake.harness import ks_two_sample

    rng = np.random.default_rng(6)
    n, k1, m = 10, 1.0, 100
    profs = [build_potential(n, k1, rng) for _ in range(600)]
    emb = embed_rwre(profs, m, rng)
    V = np.stack([p.cumulative for p in profs])
    ex = exact_embedded_ensemble(V, n, n, m, rng)
    _, p = ks_two_sample(emb["walks"][:, m].astype(float), ex.astype(float))
    assert p > 0.005


def test_direct_vs_exact_kernel_same_law():
    from brsnake.harness import ks_two_sample

    rng = np.random.default_rng(7)
    n, cap, m = 10, 10, 150
    xi = rng.standard_normal((800, cap + 1))
    np.clip(xi, -math.sqrt(n) / 2, math.sqrt(n) / 2, out=xi)
    xi[:, 0] = 0.0
    u = xi / (4 * math.sqrt(n))
    V = np.concatenate(
        [np.zeros((800, 1)),
         np.cumsum(np.log(0.5 - u[:, 1:]) - np.log(0.5 + u[:, 1:]), axis=1)],
        axis=1)
    a = exact_embedded_ensemble(V, n, cap, m, rng)
    b = direct_rwre_ensemble(xi, n, cap, m, rng)["final"]
    _, p = ks_two_sample(a.astype(float), b.astype(float))
    assert p > 0.005


def test_reflected_direct_walk_forced_moves():
    xi = np.zeros((4, 6))
    out = direct_rwre_ensemble(xi, 4, 5, 3, np.random.default_rng(8),
                               reflected=True)
    assert np.all(out["final"] >= 0)


# --------------------------------------------------------------- exit times

def test_exit_time_statistics():
    res = exit_time_stats(4000, np.random.default_rng(9), du=5e-4)
    assert abs(res["mean"] - 1.0) <= 3.5 * res["se"] + 5e-3
    assert res["median"] < res["mean"]
    assert np.all(res["samples"] > 0)
    with pytest.raises(ValueError):
        exit_time_stats(10, np.random.default_rng(0))


def test_bmre_normality_ks():
    from scipy.stats import kstest

    # flat potential: the value at time t is N(0, t)
    rng = np.random.default_rng(10)
    prof = flat_profile(2, 8.0)
    zs = np.array([simulate_bmre(prof, np.array([0.5]), rng, du=2e-3)[0]
                   for _ in range(200)])
    stat = kstest(zs / math.sqrt(0.5), "norm")
    assert stat.pvalue > 0.01


# -------------------------------------------------------------- sigma table

def test_sigma_report_shapes_and_brute_force():
    rng = np.random.default_rng(11)
    rep = sigma_convergence_report([5, 10], 0.5, 8, rng)
    assert [r["n"] for r in rep["rows"]] == [5, 10]
    assert all(r["median_dev"] >= 0 for r in rep["rows"])
    # zero horizon
    rep0 = sigma_convergence_report([5], 0.0, 4, rng)
    assert rep0["rows"][0]["median_dev"] == 0.0
    # single-replicate brute force recomputation from the schedule
    profs = [flat_profile(10, 1.0)]
    out = embed_rwre(profs, 50, np.random.default_rng(12))
    grid = np.arange(51) / 100.0
    dev = np.max(np.abs(out["sigma"][0] - grid))
    assert np.isfinite(dev) and dev < 1.0
