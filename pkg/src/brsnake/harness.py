"""Monte Carlo orchestration: seeded streams, estimators, KS tests, and the
martingale-problem residual checks.

Determinism contract: every replicate's draws are fully determined by
(seed, replicate index).  Replicates are grouped into fixed-size batches
whose RNG streams derive from SeedSequence(seed, spawn_key=(batch,)); worker
processes map batches, and results merge in batch order, so aggregates are
bit-identical for any worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
from scipy.stats import ks_2samp

__all__ = [
    "replicate_rng",
    "batch_rng",
    "run_batched",
    "SummaryStat",
    "ks_two_sample",
    "TestFunction",
    "constant_fn",
    "cosine_fn",
    "gaussian_bump_fn",
    "mp_residual_test",
    "pair_interaction_term",
    "ExperimentSpec",
    "run_experiment",
]

BATCH_SIZE = 2048


class ValidationError(ValueError):
    pass


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one replicate, determined by (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def batch_rng(seed: int, batch: int) -> np.random.Generator:
    """Stream for one fixed-size batch of replicates."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(0x5EED, batch))
    )


def _run_batch(args):
    fn, seed, batch, count, kwargs = args
    try:
        return batch, count, fn(batch_rng(seed, batch), count, **kwargs), None
    except Exception as exc:  # noqa: BLE001 - reported to the caller
        return batch, count, None, repr(exc)


def run_batched(
    fn: Callable,
    total: int,
    seed: int,
    workers: int = 1,
    batch_size: int = BATCH_SIZE,
    tolerate_failures: bool = False,
    failure_log: Optional[list] = None,
    **kwargs,
):
    """Run ``fn(rng, count, **kwargs)`` over fixed batches; merge in order.

    The batch partition depends only on (total, batch_size), never on the
    worker count, so outputs are reproducible across schedulers.  fn returns
    a list/array of per-replicate rows or a dict of arrays; merging
    concatenates along axis 0 in batch order.

    A batch that raises normally aborts the run; with tolerate_failures its
    replicates are dropped from the merge, the run continues, and the
    failure (batch index, replicate count, error) is appended to
    failure_log.
    """
    batches = [(b, min(batch_size, total - b * batch_size))
               for b in range((total + batch_size - 1) // batch_size)]
    jobs = [(fn, seed, b, c, kwargs) for b, c in batches if c > 0]
    if workers <= 1:
        results = [_run_batch(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_batch, jobs))
    results.sort(key=lambda r: r[0])
    parts = []
    for batch, count, payload, err in results:
        if err is not None:
            if not tolerate_failures:
                raise RuntimeError(f"batch {batch} failed: {err}")
            if failure_log is not None:
                failure_log.append((batch, count, err))
            continue
        parts.append(payload)
    if not parts:
        raise RuntimeError("every batch failed")
    if isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts], axis=0) for k in parts[0]}
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# summary records
# ---------------------------------------------------------------------------

@dataclass
class SummaryStat:
    """One verified statistic: estimate vs target under a tolerance rule."""

    name: str
    value: float
    stderr: float = float("nan")
    target: float = float("nan")
    tolerance: str = ""
    verdict: str = "informational"  # pass | fail | informational
    note: str = ""

    def as_row(self):
        return [self.name, self.value, self.stderr, self.target, self.tolerance,
                self.verdict, self.note]


def check(name, value, ok: bool, stderr=float("nan"), target=float("nan"),
          tolerance="", note="") -> SummaryStat:
    return SummaryStat(name, float(value), float(stderr), float(target),
                       tolerance, "pass" if ok else "fail", note)


def info(name, value, note="") -> SummaryStat:
    return SummaryStat(name, float(value), note=note)


# ---------------------------------------------------------------------------
# two-sample KS
# ---------------------------------------------------------------------------

def ks_two_sample(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value; needs >= 50 per side."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 50 or len(b) < 50:
        raise ValidationError("two-sample KS needs at least 50 points per sample")
    res = ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# test function library
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    name: str
    phi: Callable
    lap: Callable


def constant_fn(c: float = 1.0) -> TestFunction:
    return TestFunction(
        f"const[{c}]",
        lambda x: np.full_like(np.asarray(x, dtype=float), c),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def cosine_fn() -> TestFunction:
    return TestFunction("cos", np.cos, lambda x: -np.cos(np.asarray(x, dtype=float)))


def gaussian_bump_fn(center: float = 0.0, width: float = 1.0) -> TestFunction:
    def phi(x):
        return np.exp(-((np.asarray(x, dtype=float) - center) ** 2) / (2 * width**2))

    def lap(x):
        x = np.asarray(x, dtype=float)
        u = (x - center) / width**2
        return phi(x) * (u**2 - 1.0 / width**2)

    return TestFunction(f"bump[{center},{width}]", phi, lap)


# ---------------------------------------------------------------------------
# martingale-problem residuals
# ---------------------------------------------------------------------------

def pair_interaction_term(
    positions: np.ndarray,
    kernel,
    phi: Callable,
    n: int,
    rng: np.random.Generator,
    cap: int = 1000,
) -> float:
    """double integral of g(x,y) phi(x) phi(y) against the empirical measure
    squared; particle pairs are subsampled above the cap (unbiased, extra
    variance reported by the caller through replication)."""
    m = len(positions)
    if m == 0:
        return 0.0
    if m > cap:
        idx = rng.choice(m, size=cap, replace=False)
        sub = positions[idx]
        scale = m / cap
    else:
        sub = positions
        scale = 1.0
    pts = sub.reshape(len(sub), -1)
    gmat = kernel.gram(pts)
    vals = phi(sub)
    tot = float(vals @ gmat @ vals) * scale**2
    return tot / n**2


def mp_residual_test(
    masses: dict,
    dt: float,
    growth_rate: float,
    env_qv: Optional[np.ndarray] = None,
    drift_half_factor: bool = True,
) -> dict:
    """Residual tests for the measure-process martingale problem.

    masses: {"phi": [R, T+1], "phi2": [R, T+1], "lap": [R, T+1]} trajectories
    of <X, phi>, <X, phi^2>, <X, Lap phi> on a uniform grid of spacing dt.
    The candidate martingale is

        M_t = <X_t,phi> - <X_0,phi>
              - 1/2 int (<X_s,Lap phi> + c * growth_rate * <X_s,phi>) ds

    with c = 1 under the half-factor drift variant and c = 2 without it
    (i.e. the drift term enters as growth_rate*<X,phi> outside the 1/2).
    Integrals use the trapezoid rule on the grid.  The quadratic variation
    target is 2 int <X_s, phi^2> ds plus the supplied environment pair term.

    Returns per-time means/SEs of M, the lag-1 increment autocorrelation,
    and the realized-vs-target quadratic variation comparison at the horizon.
    """
    phi_t = np.asarray(masses["phi"], dtype=float)
    phi2_t = np.asarray(masses["phi2"], dtype=float)
    lap_t = np.asarray(masses["lap"], dtype=float)
    R, T1 = phi_t.shape
    c = 1.0 if drift_half_factor else 2.0
    integrand = lap_t + c * growth_rate * phi_t
    # running trapezoid of the drift integrand
    cum = np.zeros_like(phi_t)
    cum[:, 1:] = np.cumsum(0.5 * (integrand[:, 1:] + integrand[:, :-1]) * dt, axis=1)
    M = phi_t - phi_t[:, [0]] - 0.5 * cum
    mean_m = M.mean(axis=0)
    se_m = M.std(axis=0, ddof=1) / math.sqrt(R)
    dm = np.diff(M, axis=1)
    # pooled increment orthogonality: each summand has exact zero mean for a
    # martingale-difference array, so the test carries no ratio bias (the
    # per-replicate normalized autocorrelation is biased ~ -1/T)
    num = np.sum(dm[:, 1:] * dm[:, :-1], axis=1)
    den_mean = float(np.mean(np.sum(dm * dm, axis=1)))
    ac_mean = float(num.mean() / max(den_mean, 1e-300))
    ac_se = float(num.std(ddof=1) / math.sqrt(R) / max(den_mean, 1e-300))
    rqv = np.sum(dm * dm, axis=1)
    qv_target = np.trapezoid(2.0 * phi2_t, dx=dt, axis=1)
    if env_qv is not None:
        qv_target = qv_target + env_qv
    return {
        "mean": mean_m,
        "se": se_m,
        "final_zero_mean_z": float(mean_m[-1] / se_m[-1]) if se_m[-1] > 0 else 0.0,
        "autocorr": ac_mean,
        "autocorr_se": ac_se,
        "rqv_mean": float(rqv.mean()),
        "rqv_se": float(rqv.std(ddof=1) / math.sqrt(R)),
        "qv_target_mean": float(qv_target.mean()),
        "drift_half_factor": drift_half_factor,
    }


# ---------------------------------------------------------------------------
# experiment plumbing
# ---------------------------------------------------------------------------

KNOWN_EXPERIMENTS = (
    "survival",
    "branching-mp",
    "snake",
    "reversal",
    "occupation",
    "functional",
    "brox",
    "theorem1",
)


@dataclass
class ExperimentSpec:
    experiment: str
    seed: int = 1
    replicates: int = 1000
    n: Optional[int] = None
    n_list: tuple = ()
    workers: int = 1
    params: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in KNOWN_EXPERIMENTS and self.experiment != "all":
            raise ValidationError(f"experiment: unknown id {self.experiment!r}")
        if self.replicates < 1:
            raise ValidationError("replicates: must be >= 1")
        if self.n is not None and self.n < 1:
            raise ValidationError("n: must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers: must be >= 1")
        return self


def run_experiment(spec: ExperimentSpec) -> dict:
    """Dispatch to the named experiment; returns the result bundle
    {"summaries": [SummaryStat...], "tables": {name: rows}}."""
    from . import experiments  # local import to avoid a cycle

    spec.validate()
    fn = experiments.REGISTRY.get(spec.experiment)
    if fn is None:
        raise ValidationError(f"experiment: unknown id {spec.experiment!r}")
    return fn(spec)


def _san(x):
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return None
    if isinstance(x, dict):
        return {k: _san(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_san(v) for v in x]
    return x


def bundle_to_json(bundle: dict) -> str:
    payload = _san(
        {
            "summaries": [asdict(s) for s in bundle["summaries"]],
            "all_pass": all(s.verdict != "fail" for s in bundle["summaries"]),
        }
    )
    return json.dumps(payload, indent=2, sort_keys=True)
