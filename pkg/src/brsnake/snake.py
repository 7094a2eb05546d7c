"""Discrete snake in a random environment.

The contour (lifetime) level walks on {0, 1/n, ..., K1} in steps of 1/n every
1/n^2 of time, reflected at both ends; at an interior level m it moves up
with probability 1/2 + xi_m(tip)/(4 sqrt n).  Up-moves append a fresh
N(0, I/n) endpoint to the tip path, down-moves erase the last entry.  The
environment slice index equals the level, so the walk revisiting a level sees
the same field slice.

Conventions fixed here and used everywhere:
  * transition i is the step from state i to state i+1 and is counted at time
    i/n^2 (its departure step);
  * the local time at integer level m after step k is 1/n times the number of
    recorded up-transitions of level m with index <= k;
  * the inverse local time at level a and mass r is the departure index of
    the (floor(r n)+1)-th up-transition of level floor(a n), divided by n^2.
    On a run stopped by the level-0 local-time rule the stopping step itself
    is that departure index and is stored explicitly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SnakeConfig",
    "SnakeState",
    "ContourRecord",
    "LocalTimeLedger",
    "snake_step",
    "run_snake",
    "occupation_measure",
    "occupation_identity_report",
    "displacement_count",
    "contour_levels",
    "record_from_levels",
    "run_contour_ensemble",
]


class WindowError(ValueError):
    pass


@dataclass
class SnakeConfig:
    n: int
    height_cap: float = 1.0  # K1
    root: float = 0.0
    dim: int = 1

    @property
    def cap_steps(self) -> int:
        cap = int(round(self.n * self.height_cap))
        if cap < 1:
            raise ValueError("height cap must allow at least one lattice level")
        return cap


@dataclass
class SnakeState:
    """Level plus the tip path at lattice ages 0, 1/n, ..., m/n."""

    k: int
    level: int
    path: np.ndarray  # (m+1, d); entry 0 is the root
    n: int

    @property
    def tip(self) -> np.ndarray:
        return self.path[self.level]

    @property
    def lifetime(self) -> float:
        return self.level / self.n


class ContourRecord:
    """Level sequence y[0..T] with the tip recorded after every step.

    tips[i] is the snake tip after step i (tips[0] is the root).  For a run
    stopped by the level-0 local-time rule, ``stopped_at_tau`` is True and
    the final state has level 0; the (not recorded) next transition is then a
    level-0 upcrossing by construction.
    """

    def __init__(
        self,
        n: int,
        cap: int,
        levels: np.ndarray,
        tips: Optional[np.ndarray] = None,
        stopped_at_tau: bool = False,
        truncated: bool = False,
        root=0.0,
    ):
        self.n = n
        self.cap = cap
        self.levels = np.asarray(levels, dtype=np.int64)
        self.tips = None if tips is None else np.asarray(tips, dtype=float)
        self.stopped_at_tau = stopped_at_tau
        self.truncated = truncated
        self.root = np.atleast_1d(np.asarray(root, dtype=float))
        self.validate()

    @property
    def steps(self) -> int:
        return len(self.levels) - 1

    def validate(self):
        y = self.levels
        if y[0] != 0:
            raise ValueError("contour must start at level 0")
        d = np.diff(y)
        if not np.all(np.abs(d) == 1):
            raise ValueError("consecutive levels must differ by exactly one")
        if y.min() < 0 or y.max() > self.cap:
            raise ValueError("levels escape [0, cap]")
        # reflection: level 0 is always followed by up, cap by down
        at0 = np.where(y[:-1] == 0)[0]
        if at0.size and not np.all(d[at0] == 1):
            raise ValueError("level 0 must be followed by an up-move")
        atc = np.where(y[:-1] == self.cap)[0]
        if atc.size and not np.all(d[atc] == -1):
            raise ValueError("cap level must be followed by a down-move")

    def directions(self) -> np.ndarray:
        return np.diff(self.levels)

    def upcross_indices(self, m: int) -> np.ndarray:
        """Departure indices of up-transitions from integer level m."""
        y = self.levels
        return np.where((y[:-1] == m) & (y[1:] == m + 1))[0]

    def path_at(self, step: int) -> np.ndarray:
        """Reconstruct the full tip path (ages 0..level) at a given step by replay."""
        if self.tips is None:
            raise ValueError("record carries no tip data")
        d = self.tips.shape[1]
        stack = np.empty((self.cap + 1, d))
        stack[0] = self.tips[0]
        lev = 0
        for i in range(step):
            if self.levels[i + 1] > self.levels[i]:
                lev += 1
                stack[lev] = self.tips[i + 1]
            else:
                lev -= 1
        return stack[: lev + 1].copy()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = 0 if self.tips is None else self.tips.shape[1]
            w.writerow(["step", "level"] + [f"tip{a}" for a in range(d)])
            for i, lev in enumerate(self.levels):
                row = [i, int(lev)]
                if d:
                    row += [f"{c:.12g}" for c in np.atleast_1d(self.tips[i])]
                w.writerow(row)


class LocalTimeLedger:
    """Per-level upcrossing departure indices, plus the stopping step if any."""

    def __init__(self, record: ContourRecord):
        self.n = record.n
        self.cap = record.cap
        self.record = record
        y = record.levels
        d = np.diff(y)
        ups = np.where(d == 1)[0]
        self.up_indices = {}
        lv = y[ups]
        for m in range(record.cap):
            self.up_indices[m] = ups[lv == m]
        self.up_indices[record.cap] = np.empty(0, dtype=np.int64)
        self.stop_step = record.steps if record.stopped_at_tau else None

    def _level(self, a: float) -> int:
        m = int(math.floor(a * self.n + 1e-9))
        if m < 0 or m > self.cap:
            raise ValueError("level outside [0, K1]")
        return m

    def upcross_count(self, m: int, k: Optional[int] = None) -> int:
        idx = self.up_indices.get(m)
        if idx is None:
            return 0
        if k is None:
            return len(idx)
        return int(np.searchsorted(idx, k, side="right"))

    def local_time(self, a: float, s: float) -> float:
        """1/n times the number of upcrossings of floor(a n) by step floor(s n^2)."""
        k = int(math.floor(s * self.n**2 + 1e-9))
        return self.upcross_count(self._level(a), k) / self.n

    def terminal_local_time(self, a: float) -> float:
        return self.upcross_count(self._level(a)) / self.n

    def inverse_local_time(self, a: float, r: float) -> float:
        """Smallest time whose local time exceeds r; r = 0 allowed."""
        m = self._level(a)
        needed = int(math.floor(r * self.n + 1e-9)) + 1
        idx = self.up_indices[m]
        if needed <= len(idx):
            return float(idx[needed - 1]) / self.n**2
        if m == 0 and self.stop_step is not None and needed == len(idx) + 1:
            # the stopping step is the departure of the next level-0 upcrossing
            return float(self.stop_step) / self.n**2
        raise WindowError(f"local time at level {m} never exceeds r={r}")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "upcross_step_indices"])
            for m in range(self.cap + 1):
                w.writerow([m, " ".join(map(str, self.up_indices[m]))])


def snake_step(state: SnakeState, env, rng: np.random.Generator, cap: int) -> SnakeState:
    """One transition of the coupled (contour, tip-path) chain.

    Forced moves at the boundaries do not consult the RNG.  Up-moves draw the
    appended endpoint; the environment is queried at the current tip with the
    slice index equal to the current level.
    """
    n = state.n
    m = state.level
    if m == 0:
        up = True
    elif m == cap:
        up = False
    else:
        xi = env.xi(m, state.tip)
        p_up = 0.5 + xi / (4.0 * math.sqrt(n))
        up = rng.random() < p_up
    if up:
        new_tip = state.tip + rng.standard_normal(state.path.shape[1]) / math.sqrt(n)
        path = np.vstack([state.path, new_tip[None, :]])
        return SnakeState(state.k + 1, m + 1, path, n)
    return SnakeState(state.k + 1, m - 1, state.path[:-1], n)


def run_snake(
    config: SnakeConfig,
    rng: np.random.Generator,
    env=None,
    steps: Optional[int] = None,
    local_time_target: Optional[float] = None,
    step_budget: int = 50_000_000,
    keep_tips: bool = True,
) -> tuple[ContourRecord, LocalTimeLedger]:
    """Run until a fixed step count or until the level-0 local time exceeds c0.

    With ``local_time_target=c0`` the run stops at the departure step of the
    (c0*n+1)-th level-0 upcrossing, i.e. exactly at the inverse local time;
    that step is not taken.  If the budget runs out first the record is
    flagged truncated.
    """
    if steps is None and local_time_target is None:
        raise ValueError("need a step count or a local-time stopping rule")
    n = config.n
    cap = config.cap_steps
    state = SnakeState(
        0, 0, np.atleast_1d(np.asarray(config.root, dtype=float))[None, :], n
    )
    levels = [0]
    tips = [state.tip.copy()] if keep_tips else None
    need = None
    if local_time_target is not None:
        if local_time_target <= 0:
            raise ValueError("c0 must be positive")
        need = int(math.floor(local_time_target * n + 1e-9)) + 1
    ups0 = 0
    stopped = False
    truncated = False
    k = 0
    while True:
        if steps is not None and k >= steps:
            break
        if k >= step_budget:
            truncated = True
            break
        if need is not None and state.level == 0:
            ups0 += 1
            if ups0 >= need:
                stopped = True
                break
        state = snake_step(state, env, rng, cap)
        levels.append(state.level)
        if keep_tips:
            tips.append(state.tip.copy())
        k += 1
    record = ContourRecord(
        n,
        cap,
        np.array(levels),
        None if tips is None else np.array(tips),
        stopped_at_tau=stopped,
        truncated=truncated,
        root=config.root,
    )
    return record, LocalTimeLedger(record)


# ---------------------------------------------------------------------------
# occupation calculus
# ---------------------------------------------------------------------------

def occupation_measure(
    record: ContourRecord,
    ledger: LocalTimeLedger,
    r1: float,
    r2: float,
    a: float,
    t: float,
    phi: Callable = None,
) -> float:
    """Integral of phi(tip) against the level-floor(t n) local time over the
    inverse-local-time window (tau^{a}_{r1}, tau^{a}_{r2}].

    phi defaults to 1.  Events are up-transition departures; the tip is the
    one at the departure step.  When the right endpoint is the stopping step
    of a tau-stopped run, the (virtual) level-0 event there contributes
    phi(root).
    """
    if not (r1 < r2):
        raise WindowError("need r1 < r2")
    n = record.n
    lo = int(round(ledger.inverse_local_time(a, r1) * n**2))
    hi = int(round(ledger.inverse_local_time(a, r2) * n**2))
    m = int(math.floor(t * n + 1e-9))
    if t < a:
        raise WindowError("need t >= a")
    idx = ledger.up_indices.get(m, np.empty(0, dtype=np.int64))
    sel = idx[(idx > lo) & (idx <= hi)]
    if phi is None:
        total = len(sel) / n
    else:
        if record.tips is None:
            raise ValueError("record carries no tip data")
        # tip at the departure step i (before the move)
        vals = record.tips[sel] if record.tips.ndim > 1 else record.tips[sel][:, None]
        total = float(np.sum(phi(vals[:, 0] if vals.shape[1] == 1 else vals))) / n
    if (
        m == 0
        and ledger.stop_step is not None
        and hi == ledger.stop_step
        and lo < ledger.stop_step
    ):
        total += (1.0 if phi is None else float(phi(record.root[0] if len(record.root) == 1 else record.root))) / n
    return total


def occupation_identity_report(
    record: ContourRecord, ledger: LocalTimeLedger, t: float, y: float
) -> dict:
    """Compare the doubled upcrossing level-sum with the raw occupation count.

    lhs = (2/n) sum_{m <= floor(y n)} l^{m/n}_t    (ledger route)
    rhs = n^{-2} #{steps i <= t n^2 : level_i <= y} (path route)

    On complete-excursion runs the two differ only through boundary matching,
    so the gap is O((K1+1)/n).
    """
    n = record.n
    k = min(int(math.floor(t * n**2 + 1e-9)), record.steps)
    mtop = min(int(math.floor(y * n + 1e-9)), record.cap)
    lhs = 0.0
    for m in range(mtop + 1):
        lhs += ledger.upcross_count(m, k)
    lhs = 2.0 * lhs / n**2
    rhs = float(np.sum(record.levels[: k + 1] <= mtop)) / n**2
    return {"lhs": lhs, "rhs": rhs, "gap": abs(lhs - rhs)}


def displacement_count(
    record: ContourRecord, a: float, delta: float, eta: float
) -> int:
    """Count upcrossings of level floor((a+delta) n) whose tip strayed more
    than delta^{1/2-eta} from the same path's position at lattice age
    floor(a n)/n.  Diagnostic only.
    """
    n = record.n
    if record.tips is None:
        raise ValueError("record carries no tip data")
    lev_lo = int(math.floor(a * n + 1e-9))
    lev_hi = int(math.floor((a + delta) * n + 1e-9))
    if lev_hi > record.cap or lev_hi <= lev_lo:
        return 0
    thresh = delta ** (0.5 - eta)
    d = record.tips.shape[1]
    stack = np.empty((record.cap + 1, d))
    stack[0] = record.tips[0]
    lev = 0
    count = 0
    y = record.levels
    for i in range(record.steps):
        if y[i] == lev_hi and y[i + 1] == lev_hi + 1:
            disp = np.linalg.norm(stack[lev_hi] - stack[lev_lo])
            if disp > thresh:
                count += 1
        if y[i + 1] > y[i]:
            lev += 1
            stack[lev] = record.tips[i + 1]
        else:
            lev -= 1
    return count


def contour_levels(
    n: int,
    cap: int,
    rng: np.random.Generator,
    stop_mass: float,
    xi_by_level: Optional[np.ndarray] = None,
    max_steps: int = 20_000_000,
) -> np.ndarray:
    """Level path of a single run under a spatially constant environment.

    Same law as ``run_snake`` marginalized to the contour (no tip draws); used
    by experiments that only consume levels.  ``xi_by_level`` gives the field
    value per lattice level (zeros by default).
    """
    sqn = math.sqrt(n)
    need = int(math.floor(stop_mass * n + 1e-9)) + 1
    if xi_by_level is None:
        p_up = np.full(cap + 1, 0.5)
    else:
        p_up = 0.5 + np.asarray(xi_by_level, dtype=float) / (4.0 * sqn)
    y = [0]
    m = 0
    ups0 = 0
    for _ in range(max_steps):
        if m == 0:
            ups0 += 1
            if ups0 >= need:
                return np.array(y, dtype=np.int64)
            m += 1
        elif m == cap:
            m -= 1
        else:
            m += 1 if rng.random() < p_up[m] else -1
        y.append(m)
    raise RuntimeError("contour run exceeded the step budget")


def record_from_levels(n: int, cap: int, levels: np.ndarray) -> "ContourRecord":
    return ContourRecord(n, cap, levels, None, stopped_at_tau=True)


# ---------------------------------------------------------------------------
# vectorized contour ensembles
# ---------------------------------------------------------------------------

def run_contour_ensemble(
    n: int,
    cap: int,
    lanes: int,
    rng: np.random.Generator,
    stop_mass: Optional[float] = None,
    steps: Optional[int] = None,
    gamma: float = 0.0,
    nu: float = 0.0,
    count_levels: tuple = (),
    phis: tuple = (),
    root: float = 0.0,
    track_tips: bool = None,
    clip_bound: Optional[float] = None,
    snapshot_steps: tuple = (),
    max_iterations: int = 200_000_000,
) -> dict:
    """Many independent snakes in lockstep, spatially constant environments.

    Each lane owns i.i.d. field values per level, xi ~ N(nu/sqrt n, gamma)
    clipped.  Either run a fixed number of steps per lane or stop each lane at
    the departure of the (stop_mass*n+1)-th level-0 upcrossing.  Per lane and
    target level the number of window upcrossings (transitions >= 1 up to and
    including the stopping step) and, when phis are given, the sums of
    phi(tip) over those events are accumulated.

    Returns per-lane counts [lanes, len(count_levels)], phi sums
    [len(phis), lanes, len(count_levels)], final levels, and level snapshots.
    """
    if (stop_mass is None) == (steps is None):
        raise ValueError("exactly one of stop_mass / steps")
    sqn = math.sqrt(n)
    bound = clip_bound if clip_bound is not None else sqn / 2.0
    if gamma > 0.0:
        xi = nu / sqn + math.sqrt(gamma) * rng.standard_normal((lanes, cap + 1))
        np.clip(xi, -bound, bound, out=xi)
    else:
        xi = np.full((lanes, cap + 1), nu / sqn)
    p_up = 0.5 + xi / (4.0 * sqn)

    track_tips = bool(phis) if track_tips is None else track_tips
    levels = np.asarray(count_levels, dtype=np.int64)
    m = np.zeros(lanes, dtype=np.int64)
    counts = np.zeros((lanes, len(levels)), dtype=np.int64)
    phisums = np.zeros((len(phis), lanes, len(levels)))
    count0 = np.zeros(lanes, dtype=np.int64)
    tips = np.full((lanes, cap + 1), float(root)) if track_tips else None
    snapshots = {}
    need = None
    if stop_mass is not None:
        need = int(math.floor(stop_mass * n + 1e-9))
        if need < 1:
            raise ValueError("stop mass below lattice resolution")
    active = np.arange(lanes)
    final_levels = np.zeros(lanes, dtype=np.int64)
    step = 0
    while active.size:
        if step > max_iterations:
            raise RuntimeError("contour ensemble exceeded the iteration budget")
        ml = m[active]
        up = ml == 0
        interior = ~up & (ml != cap)
        ii = np.where(interior)[0]
        if ii.size:
            ia = active[ii]
            u = rng.random(ii.size)
            up[ii] = u < p_up[ia, m[ia]]
        if step >= 1 and levels.size:
            for j, lev in enumerate(levels):
                hit = up & (ml == lev)
                if hit.any():
                    lanesel = active[hit]
                    counts[lanesel, j] += 1
                    if phis:
                        tv = tips[lanesel, lev]
                        for q, phi in enumerate(phis):
                            phisums[q, lanesel, j] += phi(tv)
        if need is not None and step >= 1:
            z = up & (ml == 0)
            count0[active[z]] += 1
        if track_tips:
            iu = np.where(up)[0]
            if iu.size:
                ia = active[iu]
                newt = tips[ia, m[ia]] + rng.standard_normal(iu.size) / sqn
                tips[ia, m[ia] + 1] = newt
        m[active] += np.where(up, 1, -1)
        step += 1
        if need is not None:
            done = count0[active] >= need
            if done.any():
                idxdone = active[done]
                final_levels[idxdone] = m[idxdone]
                active = active[~done]
        elif steps is not None:
            if step in snapshot_steps:
                snapshots[step] = m.copy() if active.size == lanes else None
            if step >= steps:
                final_levels[active] = m[active]
                active = np.empty(0, dtype=np.int64)
    return {
        "counts": counts,
        "phisums": phisums,
        "final_levels": final_levels,
        "snapshots": snapshots,
        "xi": xi,
    }
