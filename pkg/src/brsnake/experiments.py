"""Named experiments behind the CLI subcommands and the acceptance suite.

Each experiment consumes an ExperimentSpec and returns a result bundle
{"summaries": [SummaryStat...], "tables": {name: (header, rows)}}.  Default
parameters are the documented full-size runs; the CLI and tests can shrink
them through spec.params / spec.replicates.
"""

from __future__ import annotations

import math

import numpy as np

from . import branching, brox, functional, reversal, snake
from .harness import (
    ExperimentSpec,
    SummaryStat,
    ValidationError,
    check,
    info,
    batch_rng,
    ks_two_sample,
    mp_residual_test,
    run_batched,
)

H11 = 1.0 / (1.0 - math.exp(-1.0))


def _param(spec: ExperimentSpec, key, default):
    return spec.params.get(key, default)


# ---------------------------------------------------------------------------
# survival
# ---------------------------------------------------------------------------

def _batch_survival_chain(rng, count, n, gens, gamma, nu):
    out = branching.simulate_mass_chain(n, gens, count, rng, gamma=gamma, nu=nu)
    return (out["final"] > 0).astype(np.int8)


def exp_survival(spec: ExperimentSpec) -> dict:
    summaries = []
    # oracle self-agreement: iteration vs closed form
    worst = 0.0
    for b in (-1.0, 0.0, 1.0):
        for n in (10, 100, 1000):
            a = branching.exact_survival_geometric(b, n, n)
            c = branching.survival_closed_form(b, n, n)
            worst = max(worst, abs(a - c) / c)
    summaries.append(
        check("survival_oracle_agreement", worst, worst <= 1e-12,
              target=0.0, tolerance="rel<=1e-12",
              note="iterated pgf vs closed form, b in {-1,0,1}, k=n in {10,100,1000}")
    )
    # critical case: survival(k) = 1/(k+1)
    kmax = int(_param(spec, "critical_kmax", 10_000))
    prof = branching.survival_profile(0.0, 100, kmax)
    ks = np.arange(kmax + 1)
    worst_crit = float(np.max(np.abs(prof * (ks + 1) - 1.0)))
    summaries.append(
        check("critical_survival_exact", worst_crit, worst_crit <= 1e-12,
              target=0.0, tolerance="rel<=1e-12", note=f"1/(k+1) law up to k={kmax}")
    )
    # rescaled survival approaches the limit rate at speed < 2/n
    for n in (100, 1000, 10_000):
        s = branching.exact_survival_geometric(1.0, n, n)
        gap = abs(n * s - H11)
        summaries.append(
            check(f"survival_rate_limit_n{n}", n * s, gap <= 2.0 / n,
                  target=H11, tolerance=f"|.-target|<=2/{n}")
        )
    # Monte Carlo equality in the degenerate environment
    n_mc = int(_param(spec, "n_mc", 200))
    delta = float(_param(spec, "delta", 1.0))
    R = spec.replicates
    gens = int(n_mc * delta)
    for b in (-1.0, 0.0, 1.0):
        flags = run_batched(
            _batch_survival_chain, R, spec.seed + int(10 * (b + 2)),
            workers=spec.workers, n=n_mc, gens=gens, gamma=0.0, nu=b,
        )
        phat = float(flags.mean())
        se = math.sqrt(max(phat * (1 - phat), 1e-300) / R)
        ex = branching.exact_survival_geometric(b, n_mc, gens)
        summaries.append(
            check(
                f"mc_survival_degenerate_b{b:+.0f}", n_mc * phat,
                abs(phat - ex) <= 3 * se,
                stderr=n_mc * se, target=n_mc * ex, tolerance="<=3SE",
                note=f"zero kernel, nu={b}, R={R}",
            )
        )
    # annealed upper bound for the constant kernel
    flags = run_batched(
        _batch_survival_chain, R, spec.seed + 77, workers=spec.workers,
        n=n_mc, gens=gens, gamma=1.0, nu=0.0,
    )
    phat = float(flags.mean())
    se = math.sqrt(max(phat * (1 - phat), 1e-300) / R)
    hbound = branching.limit_survival_rate(0.5, delta)
    limit = hbound * (1.0 + 3.0 * se / max(phat, 1e-300))
    summaries.append(
        check("mc_survival_upper_bound", n_mc * phat, n_mc * phat <= limit,
              stderr=n_mc * se, target=hbound,
              tolerance="n*p <= h(growth,delta)*(1+3relSE)",
              note=f"constant kernel gamma=1, growth=nu+gamma/2=0.5, R={R}")
    )
    return {"summaries": summaries, "tables": {}}


# ---------------------------------------------------------------------------
# branching-mp: mass bounds, semigroup bound, MP residuals
# ---------------------------------------------------------------------------

def _batch_mass_history(rng, count, n, gens, gamma, nu):
    out = branching.simulate_mass_chain(
        n, gens, count, rng, gamma=gamma, nu=nu, record_every=1
    )
    return out["history"].astype(np.float64)


def exp_branching_mp(spec: ExperimentSpec) -> dict:
    summaries = []
    n = spec.n or 100
    R = spec.replicates
    delta = float(_param(spec, "delta", 1.0))
    rng = batch_rng(spec.seed, 1)

    rep = branching.mass_moment_report(n, delta, R, rng, gamma=0.0, nu=0.0)
    summaries.append(
        check("mass_mean_bound", rep["mean_mass"], rep["mean_pass"],
              stderr=rep["mean_se"], target=rep["mean_bound"],
              tolerance="mean <= bound + 3SE", note="zero kernel, critical")
    )
    summaries.append(
        check("mass_mean_exact_oracle", rep["mean_mass"], rep["exact_mean_pass"],
              stderr=rep["mean_se"], target=rep["exact_mean"],
              tolerance="<=3SE", note="per-generation exact mean, iterated")
    )
    for row in rep["sup_rows"]:
        summaries.append(
            check(f"mass_sup_tail_a{row['a']}", row["empirical"], row["pass"],
                  stderr=row["se"], target=row["bound"],
                  tolerance="P(sup>=a) <= bound + 3SE")
        )
    rep2 = branching.mass_moment_report(
        n, delta, R, batch_rng(spec.seed, 2), gamma=1.0, nu=-0.5
    )
    summaries.append(
        check("mass_mean_bound_mixed", rep2["mean_mass"], rep2["mean_pass"],
              stderr=rep2["mean_se"], target=rep2["mean_bound"],
              tolerance="mean <= bound + 3SE", note="gamma=1, nu=-0.5")
    )

    sg = branching.semigroup_bound_check(
        n, delta, min(R, 20_000), batch_rng(spec.seed, 3), bump_center=0.5,
        bump_width=1.0, gamma=0.0, nu=0.0,
    )
    summaries.append(
        check("semigroup_bump_bound", sg["lhs_mean"], sg["pass"],
              stderr=sg["lhs_se"], target=sg["rhs_bound"],
              tolerance="E X(f) <= growth * X_0(S f) + 3SE",
              note="Gaussian bump, closed-form heat evolution")
    )

    # MP residuals, critical spatially-flat case
    gens = int(n * delta)
    hist = run_batched(
        _batch_mass_history, R, spec.seed + 5, workers=spec.workers,
        n=n, gens=gens, gamma=0.0, nu=0.0,
    )
    masses = hist / n
    rep_mp = mp_residual_test(
        {"phi": masses, "phi2": masses, "lap": np.zeros_like(masses)},
        dt=1.0 / n, growth_rate=0.0,
    )
    z = rep_mp["final_zero_mean_z"]
    summaries.append(
        check("mp_zero_mean", rep_mp["mean"][-1], abs(z) <= 4.0,
              stderr=rep_mp["se"][-1], target=0.0, tolerance="|z|<=4",
              note="phi=1, zero kernel (critical branching diffusion limit)")
    )
    qv_gap = abs(rep_mp["rqv_mean"] - rep_mp["qv_target_mean"])
    qv_tol = 0.10 * rep_mp["qv_target_mean"] + 3.0 * rep_mp["rqv_se"]
    summaries.append(
        check("mp_quadratic_variation", rep_mp["rqv_mean"], qv_gap <= qv_tol,
              stderr=rep_mp["rqv_se"], target=rep_mp["qv_target_mean"],
              tolerance="|rqv-target| <= 10% + 3SE",
              note="target 2*int <X,phi^2> ds")
    )
    summaries.append(
        check("mp_increment_autocorr", rep_mp["autocorr"],
              abs(rep_mp["autocorr"]) <= 4 * rep_mp["autocorr_se"],
              stderr=rep_mp["autocorr_se"], target=0.0, tolerance="|.|<=4SE")
    )

    # drift half-factor adjudication on a growing population (informational)
    hist_g = run_batched(
        _batch_mass_history, R, spec.seed + 6, workers=spec.workers,
        n=n, gens=gens, gamma=1.0, nu=0.0,
    )
    mg = hist_g / n
    traj = {"phi": mg, "phi2": mg, "lap": np.zeros_like(mg)}
    growth = 0.5  # nu + gamma/2
    with_half = mp_residual_test(traj, 1.0 / n, growth, drift_half_factor=True)
    without_half = mp_residual_test(traj, 1.0 / n, growth, drift_half_factor=False)
    za, zb = with_half["final_zero_mean_z"], without_half["final_zero_mean_z"]
    winner = "without_half" if abs(zb) < abs(za) else "with_half"
    summaries.append(
        info("mp_drift_half_factor_z_with", za,
             note="residual z-score, drift (1/2)<X,(nu+g/2)phi>")
    )
    summaries.append(
        info("mp_drift_half_factor_z_without", zb,
             note="residual z-score, drift <X,(nu+g/2)phi>")
    )
    summaries.append(SummaryStat("mp_drift_adjudication", 0.0, note=winner))

    # sample trajectories for offline inspection
    keep = min(50, len(hist))
    rows = [
        (rep, k, hist[rep, k] / n)
        for rep in range(keep)
        for k in range(0, hist.shape[1], max(1, hist.shape[1] // 25))
    ]
    tables = {"mass_trajectories": (("replicate", "k", "total_mass"), rows)}
    return {"summaries": summaries, "tables": tables}


# ---------------------------------------------------------------------------
# snake: occupation identity and ledger consistency
# ---------------------------------------------------------------------------

def exp_snake(spec: ExperimentSpec) -> dict:
    summaries = []
    runs = int(_param(spec, "runs", 100))
    k1 = float(_param(spec, "k1", 1.0))
    n_list = spec.n_list or (10, 50, 100)

    for n in n_list:
        cap = int(round(n * k1))
        worst_ratio = 0.0
        balance_ok = True
        for r in range(runs):
            rng = batch_rng(spec.seed + n, r)
            levels = snake.contour_levels(n, cap, rng, stop_mass=1.0)
            record = snake.record_from_levels(n, cap, levels)
            ledger = snake.LocalTimeLedger(record)
            t = record.steps / n**2
            for yfrac in (0.3, 0.7, 1.0):
                rep = snake.occupation_identity_report(record, ledger, t, yfrac * k1)
                bound = 5.0 * (k1 + 1.0) / n * max(t, 1.0)
                worst_ratio = max(worst_ratio, rep["gap"] / bound)
            # on a run stopped at level 0 each level's up/down counts match
            d = np.diff(levels)
            for m in range(1, cap + 1):
                ups_m = int(np.sum((levels[:-1] == m - 1) & (d == 1)))
                downs_m = int(np.sum((levels[:-1] == m) & (d == -1)))
                if ups_m != downs_m:
                    balance_ok = False
        summaries.append(
            check(f"occupation_identity_n{n}", worst_ratio, worst_ratio <= 1.0,
                  target=1.0, tolerance="gap <= 5(K1+1)/n*(t v 1)",
                  note=f"worst gap/bound over {runs} runs x 3 levels")
        )
        summaries.append(
            check(f"crossing_balance_n{n}", 0.0 if balance_ok else 1.0, balance_ok,
                  target=0.0, tolerance="up/down crossings match per level")
        )
    return {"summaries": summaries, "tables": {}}


# ---------------------------------------------------------------------------
# occupation: window calculus exactness
# ---------------------------------------------------------------------------

def exp_occupation(spec: ExperimentSpec) -> dict:
    summaries = []
    n = spec.n or 20
    k1 = float(_param(spec, "k1", 1.0))
    c0 = float(_param(spec, "c0", 2.0))
    cap = int(round(n * k1))

    rng = batch_rng(spec.seed, 0)
    levels = snake.contour_levels(n, cap, rng, stop_mass=c0)
    record = snake.record_from_levels(n, cap, levels)
    ledger = snake.LocalTimeLedger(record)
    mass0 = snake.occupation_measure(record, ledger, 0.0, c0, 0.0, 0.0)
    summaries.append(
        check("occupation_window_mass", mass0, abs(mass0 - c0) < 1e-12,
              target=c0, tolerance="exact", note="phi=1, t=0 window mass")
    )
    # additivity over disjoint windows at an interior time
    t = 0.4 * k1
    whole = snake.occupation_measure(record, ledger, 0.0, c0, 0.0, t)
    halves = snake.occupation_measure(record, ledger, 0.0, c0 / 2, 0.0, t) + \
        snake.occupation_measure(record, ledger, c0 / 2, c0, 0.0, t)
    summaries.append(
        check("occupation_additivity", halves, abs(whole - halves) < 1e-12,
              target=whole, tolerance="exact")
    )
    # no upcrossings exist at the reflecting cap
    empty = snake.occupation_measure(record, ledger, 0.0, c0, 0.0, k1)
    summaries.append(
        check("occupation_at_cap", empty, empty == 0.0,
              target=0.0, tolerance="zero above every excursion")
    )
    return {"summaries": summaries, "tables": {}}


# ---------------------------------------------------------------------------
# reversal
# ---------------------------------------------------------------------------

def _half_occupation(levels: np.ndarray, n: int) -> float:
    half = (len(levels) - 1) // 2
    return float(levels[: half + 1].sum()) / n**2


def exp_reversal(spec: ExperimentSpec) -> dict:
    summaries = []
    runs = int(_param(spec, "runs", 100))
    grid = _param(spec, "grid", ((1, 1), (1, 2), (5, 1), (5, 2), (20, 1), (20, 2)))

    for n, k1 in grid:
        cap = n * k1
        mism = 0
        for r in range(runs):
            rng = batch_rng(spec.seed + 1000 * n + k1, r)
            levels = snake.contour_levels(n, cap, rng, stop_mass=1.0)
            record = snake.record_from_levels(n, cap, levels)
            rev = reversal.full_reversal(record)
            if not np.array_equal(rev.levels, record.levels[::-1]):
                mism += 1
        summaries.append(
            check(f"reversal_pathwise_n{n}_k{k1}", mism, mism == 0,
                  target=0.0, tolerance="zero mismatches",
                  note=f"{runs} runs, exact step-by-step equality")
        )

    # measure preservation per transform: KS on the first-half occupation
    n = int(_param(spec, "ks_n", 10))
    k1 = int(_param(spec, "ks_k1", 1))
    R = int(_param(spec, "ks_runs", spec.replicates))
    cap = n * k1

    def gen_levels(seed_off, count):
        out = []
        for r in range(count):
            rng = batch_rng(spec.seed + seed_off, r)
            out.append(snake.contour_levels(n, cap, rng, stop_mass=1.0))
        return out

    raw = gen_levels(31, R)
    other = gen_levels(37, R)
    stat_raw = np.array([_half_occupation(y, n) for y in raw])
    for z in range(n * k1):
        transformed = []
        for y in other:
            perm = reversal.reversal_permutation(y, z)
            transformed.append(_half_occupation(y[perm], n))
        ksd, p = ks_two_sample(stat_raw, np.array(transformed))
        summaries.append(
            check(f"reversal_measure_preserving_z{z}", p, p > 0.01,
                  target=0.01, tolerance="KS p > 0.01",
                  note=f"first-half occupation statistic, {R} runs/side, KS={ksd:.4f}")
        )
    return {"summaries": summaries, "tables": {}}


# ---------------------------------------------------------------------------
# theorem1: snake occupation vs forward branching
# ---------------------------------------------------------------------------

def _batch_snake_counts(rng, count, n, cap, stop_mass, gamma, nu, levels):
    out = snake.run_contour_ensemble(
        n, cap, count, rng, stop_mass=stop_mass, gamma=gamma, nu=nu,
        count_levels=tuple(levels), track_tips=False,
    )
    return out["counts"].astype(np.float64)


def _batch_forward_mass(rng, count, n, gens_list, initial, gamma, nu):
    gens = max(gens_list)
    out = branching.simulate_mass_chain(
        n, gens, count, rng, gamma=gamma, nu=nu, initial=initial, record_every=1
    )
    hist = out["history"]
    cols = [hist[:, g] for g in gens_list]
    return np.stack(cols, axis=1).astype(np.float64)


def theorem1_representation_check(
    n: int,
    r: float,
    t_list,
    replicates: int,
    seed: int,
    k1: float = 1.0,
    gamma: float = 0.0,
    nu: float = 0.0,
    forward_gamma=None,
    forward_nu=None,
    workers: int = 1,
) -> list[SummaryStat]:
    """Distribution of the window occupation mass vs the forward system mass.

    Both sides share the environment law (spatially constant kernels); the
    snake runs to its level-0 inverse local time at r and reads upcrossing
    counts at levels floor(t n); the forward chain starts from floor(r n)
    particles.  Two-sample KS per time point.
    """
    if forward_gamma is None:
        forward_gamma = gamma
    if forward_nu is None:
        forward_nu = nu
    if forward_gamma != gamma or forward_nu != nu:
        raise ValidationError("environment: snake and forward configs differ")
    for t in t_list:
        if t > k1:
            raise ValidationError(f"t={t} outside the window [0, K1={k1}]")
    cap = int(round(n * k1))
    levels = [int(math.floor(t * n + 1e-9)) for t in t_list]
    sn = run_batched(
        _batch_snake_counts, replicates, seed, workers=workers,
        n=n, cap=cap, stop_mass=r, gamma=gamma, nu=nu, levels=levels,
    )
    fw = run_batched(
        _batch_forward_mass, replicates, seed + 1, workers=workers,
        n=n, gens_list=levels, initial=int(math.floor(r * n)), gamma=gamma, nu=nu,
    )
    out = []
    envname = f"gamma={gamma}"
    for j, t in enumerate(t_list):
        if levels[j] == 0:
            a = sn[:, j] / n
            b = fw[:, j] / n
            ok = np.allclose(a, r) and np.allclose(b, r)
            out.append(
                check(f"theorem1_t0_{envname}", float(a.mean()), ok,
                      target=r, tolerance="exact lattice mass")
            )
            continue
        ksd, p = ks_two_sample(sn[:, j] / n, fw[:, j] / n)
        out.append(
            check(f"theorem1_ks_t{t}_{envname}", p, p > 0.01,
                  target=0.01, tolerance="KS p > 0.01",
                  note=f"KS={ksd:.4f}, n={n}, R={replicates}")
        )
    return out


def exp_theorem1(spec: ExperimentSpec) -> dict:
    n = spec.n or 50
    R = spec.replicates
    t_list = tuple(_param(spec, "t_list", (0.25, 0.5)))
    k1 = float(_param(spec, "k1", 1.0))
    r = float(_param(spec, "r", 1.0))
    summaries = []
    summaries += theorem1_representation_check(
        n, r, t_list, R, spec.seed, k1=k1, gamma=0.0, nu=0.0, workers=spec.workers
    )
    summaries += theorem1_representation_check(
        n, r, t_list, R, spec.seed + 101, k1=k1, gamma=1.0, nu=0.0,
        workers=spec.workers,
    )
    return {"summaries": summaries, "tables": {}}


# ---------------------------------------------------------------------------
# functional
# ---------------------------------------------------------------------------

def _b_sin(t, x):
    return t * np.sin(x)


def _b_sin_grad(t, x):
    return t * np.cos(x)


def _b_sin_lap(t, x):
    return -t * np.sin(x)


def _batch_functional(rng, count, n, cap, t_end, which):
    if which == "sin":
        out = functional.run_functional_ensemble(
            n, cap, t_end, count, rng, b_fn=_b_sin, grad_fn=_b_sin_grad,
            lap_fn=_b_sin_lap, snapshot_times=(0.25, 0.5),
        )
    else:
        out = functional.run_functional_ensemble(n, cap, t_end, count, rng)
    cols = {
        "F": out["F"], "M": out["M"], "A": out["A"], "bracket": out["bracket"],
        "rqv": out["rqv"], "lag1": out["lag1"], "int_e2b": out["int_e2b"],
        "drift": out["drift"], "ell0": out["ell0"], "capterm": out["capterm"],
    }
    for s, payload in out["snapshots"].items():
        cols[f"M@{s}"] = payload["M"]
    return {k: v for k, v in cols.items()}


def exp_functional(spec: ExperimentSpec) -> dict:
    summaries = []
    n = spec.n or 50
    R = spec.replicates
    t_end = float(_param(spec, "t_end", 1.0))
    k1 = float(_param(spec, "k1", 1.0))
    cap = int(round(n * k1))

    out = run_batched(
        _batch_functional, R, spec.seed, workers=spec.workers,
        n=n, cap=cap, t_end=t_end, which="sin",
    )
    recon = np.max(np.abs(out["F"] - out["M"] - out["A"]))
    summaries.append(
        check("functional_reconstruction", recon, recon <= 1e-10,
              target=0.0, tolerance="<=1e-10",
              note="max |F - M - A| over all runs (F starts at 0)")
    )
    for key, tlabel in (("M@0.25", 0.25), ("M@0.5", 0.5), ("M", t_end)):
        if key not in out:
            continue
        m = out[key]
        se = m.std(ddof=1) / math.sqrt(R)
        summaries.append(
            check(f"martingale_zero_mean_t{tlabel}", float(m.mean()),
                  abs(m.mean()) <= 4 * se, stderr=float(se), target=0.0,
                  tolerance="|mean|<=4SE", note=f"R={R}, field t*sin(x)")
        )
    # lag-1 increment orthogonality, pooled across lanes (unbiased zero test)
    den = float(out["rqv"].mean())
    corr = float(out["lag1"].mean()) / max(den, 1e-300)
    corr_se = float(out["lag1"].std(ddof=1) / math.sqrt(R)) / max(den, 1e-300)
    summaries.append(
        check("martingale_increment_autocorr", corr,
              abs(corr) <= 4 * corr_se, stderr=corr_se,
              target=0.0, tolerance="|mean|<=4SE")
    )
    ratio = out["bracket"] / np.maximum(out["int_e2b"], 1e-300)
    mean_ratio = float(ratio.mean())
    summaries.append(
        check("bracket_vs_integral", mean_ratio, abs(mean_ratio - 1.0) <= 0.10,
              target=1.0, tolerance="within 10%",
              note="per-path bracket over trapezoid of exp(-2B)")
    )
    var_m = float(out["M"].var(ddof=1))
    mean_q = float(out["bracket"].mean())
    q_se = float(out["bracket"].std(ddof=1) / math.sqrt(R))
    ok_var = abs(var_m - mean_q) <= 0.10 * mean_q + 3 * q_se * 2
    summaries.append(
        check("martingale_variance_vs_bracket", var_m, ok_var,
              stderr=q_se, target=mean_q, tolerance="within 10% + 3SE")
    )

    # compensator converging to the limit target as n grows; the drift term
    # enters with the derivation-consistent coefficient 1/2 (the per-step
    # conditional expectations sum to half the raw curvature integral), and
    # the raw-coefficient gap is reported alongside for comparison
    gaps = []
    gaps_raw = []
    for i, nn in enumerate(_param(spec, "n_sequence", (20, 50, 100))):
        capn = int(round(nn * k1))
        sub = run_batched(
            _batch_functional, int(_param(spec, "target_runs", 200)),
            spec.seed + 7 + i, workers=spec.workers,
            n=nn, cap=capn, t_end=t_end, which="sin",
        )
        target = 0.5 * sub["drift"] + sub["ell0"] - sub["capterm"]
        gaps.append(float(np.mean(np.abs(sub["A"] - target))))
        gaps_raw.append(float(np.mean(np.abs(sub["A"] - (sub["drift"] + sub["ell0"] - sub["capterm"])))))
    decreasing = all(gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1))
    nseq = ",".join(str(x) for x in _param(spec, "n_sequence", (20, 50, 100)))
    summaries.append(
        check("compensator_limit_gap_decreasing", gaps[-1], decreasing,
              target=0.0, tolerance="strictly decreasing in n",
              note=f"mean |A - target| at n={nseq}: "
              + " > ".join("%.4f" % g for g in gaps))
    )
    summaries.append(
        info("compensator_gap_raw_drift_coeff", gaps_raw[-1],
             note=f"same gaps with the unhalved drift term, n={nseq}: "
             + ", ".join("%.4f" % g for g in gaps_raw) + " (does not vanish)")
    )

    # flat-field reduction: Y - ell0 + capterm is a unit-rate martingale
    flat = run_batched(
        _batch_functional, int(_param(spec, "tanaka_runs", 200)),
        spec.seed + 23, workers=spec.workers, n=n, cap=cap, t_end=t_end,
        which="flat",
    )
    rqv = flat["rqv"]
    summaries.append(
        check("tanaka_flat_field_qv", float(rqv.mean()),
              abs(rqv.mean() - t_end) <= 0.10 * t_end,
              stderr=float(rqv.std(ddof=1) / math.sqrt(len(rqv))),
              target=t_end, tolerance="within 10%",
              note="realized QV of the reflected-lifetime martingale, B=0")
    )
    return {"summaries": summaries, "tables": {}}


# ---------------------------------------------------------------------------
# brox
# ---------------------------------------------------------------------------

def _batch_embedded_vs_direct(rng, count, n, k1, m_max, du_factor):
    cap = int(round(n * k1))
    profiles = [brox.build_potential(n, k1, rng) for _ in range(count)]
    emb = brox.embed_rwre(profiles, m_max, rng, du=du_factor / n**2)
    xi_lanes = np.stack([p.xi for p in profiles])
    direct = brox.direct_rwre_ensemble(xi_lanes, n, cap, m_max, rng)
    return {
        "embedded": emb["walks"][:, m_max].astype(np.float64),
        "direct": direct["final"].astype(np.float64),
    }


def _batch_corollary_walk(rng, count, n, k1, m_max):
    cap = int(round(n * k1))
    bound = math.sqrt(n) / 2.0
    xi = rng.standard_normal((count, cap + 1))
    np.clip(xi, -bound, bound, out=xi)
    xi[:, 0] = 0.0
    V = np.concatenate(
        [np.zeros((count, 1)),
         np.cumsum(np.log(0.5 - xi[:, 1:] / (4 * math.sqrt(n)))
                   - np.log(0.5 + xi[:, 1:] / (4 * math.sqrt(n))), axis=1)],
        axis=1,
    )
    pos = brox.exact_embedded_ensemble(V, n, cap, m_max, rng)
    return brox.tent_map(pos / n, k1)


def _batch_corollary_contour(rng, count, n, k1, m_max):
    cap = int(round(n * k1))
    out = snake.run_contour_ensemble(
        n, cap, count, rng, steps=m_max, gamma=1.0, nu=0.0, track_tips=False
    )
    return out["final_levels"].astype(np.float64) / n


def exp_brox(spec: ExperimentSpec) -> dict:
    summaries = []
    k1 = float(_param(spec, "k1", 1.0))
    R = spec.replicates

    th = brox.exit_time_stats(max(R, 1000), batch_rng(spec.seed, 0))
    summaries.append(
        check("exit_time_mean", th["mean"], abs(th["mean"] - 1.0) <= 3 * th["se"],
              stderr=th["se"], target=1.0, tolerance="<=3SE",
              note="two-sided unit exit time of Brownian motion")
    )
    summaries.append(
        check("exit_time_skew", th["median"], th["median"] < th["mean"],
              target=th["mean"], tolerance="median < mean")
    )

    sig = brox.sigma_convergence_report(
        list(_param(spec, "sigma_n", (10, 30, 100))),
        float(_param(spec, "sigma_t", 1.0)),
        int(_param(spec, "sigma_reps", 64)),
        batch_rng(spec.seed, 1),
        k1=k1,
    )
    devs = [row["median_dev"] for row in sig["rows"]]
    dec = all(devs[i + 1] < devs[i] for i in range(len(devs) - 1))
    summaries.append(
        check("sigma_deviation_decreasing", devs[-1], dec,
              target=0.0, tolerance="strictly decreasing in n",
              note="medians " + ", ".join(f"{d:.4f}" for d in devs))
    )

    for n in _param(spec, "embed_n", (10, 30)):
        m_max = n * n
        pair = run_batched(
            _batch_embedded_vs_direct, int(_param(spec, "embed_reps", R)),
            spec.seed + 17 + n, workers=spec.workers,
            batch_size=512, n=n, k1=k1, m_max=m_max, du_factor=1e-2,
        )
        ksd, p = ks_two_sample(pair["embedded"], pair["direct"])
        summaries.append(
            check(f"embedded_vs_direct_n{n}", p, p > 0.01,
                  target=0.01, tolerance="KS p > 0.01",
                  note=f"KS={ksd:.4f}, m={m_max}, shared frozen environments")
        )

    n = int(_param(spec, "corollary_n", 100))
    m_max = n * n
    walk = run_batched(
        _batch_corollary_walk, R, spec.seed + 300, workers=spec.workers,
        n=n, k1=k1, m_max=m_max,
    )
    contour = run_batched(
        _batch_corollary_contour, R, spec.seed + 301, workers=spec.workers,
        n=n, k1=k1, m_max=m_max,
    )
    ksd, _ = ks_two_sample(walk, contour)
    summaries.append(
        check("corollary_reflected_walk_vs_contour", ksd, ksd <= 0.10,
              target=0.10, tolerance="KS distance <= 0.1",
              note=f"n={n}, R={R}, constant-kernel environment, time 1")
    )
    return {"summaries": summaries, "tables": {}}


REGISTRY = {
    "survival": exp_survival,
    "branching-mp": exp_branching_mp,
    "snake": exp_snake,
    "occupation": exp_occupation,
    "reversal": exp_reversal,
    "functional": exp_functional,
    "brox": exp_brox,
    "theorem1": exp_theorem1,
}
