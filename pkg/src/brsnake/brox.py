"""Diffusion in a random potential, its reflected version, and the walk
embedded at 1/n first passages.

The potential is piecewise constant on unit sites with increments
log((1/2 - xi(i)/(4 sqrt n)) / (1/2 + xi(i)/(4 sqrt n))); the reflected
version periodizes it through the tent map with period 2*K1.  The diffusion
is realized by the explicit scale/time-change representation
Z(t) = A^{-1}(W(T^{-1}(t))): A is piecewise linear with slope e^{potential}
per segment, the clock integrand is e^{-2 potential} along the driving
Brownian path.  First passages to +-1/n extract a nearest-neighbour walk
whose transition law at site i is 1/2 +- xi(reflected i)/(4 sqrt n); the
passage durations, rescaled by n^2, have the law of the exit time of a
standard Brownian motion from [-1, 1] regardless of the environment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "tent_map",
    "reflected_segment_site",
    "PotentialProfile",
    "build_potential",
    "simulate_bmre",
    "embed_rwre",
    "direct_rwre_ensemble",
    "exact_embedded_ensemble",
    "exit_time_stats",
    "sigma_convergence_report",
]


def tent_map(x, k1: float):
    """Periodic (period 2*K1) even map with tent_map(x) = |x| for |x| <= K1."""
    x = np.asarray(x, dtype=float)
    p = np.mod(x, 2.0 * k1)
    out = np.where(p <= k1, p, 2.0 * k1 - p)
    return out if out.ndim else float(out)


def reflected_segment_site(j, cap: int):
    """Site index of the periodized potential on lattice segment [j, j+1)."""
    j = np.asarray(j)
    p = np.mod(j, 2 * cap)
    out = np.where(p < cap, p, 2 * cap - p - 1)
    return out if out.ndim else int(out)


@dataclass
class PotentialProfile:
    """Cumulative potential on sites 0..cap (V[0] = 0), plus the raw field."""

    n: int
    cap: int  # n * K1
    xi: np.ndarray  # site values, index 0 unused
    cumulative: np.ndarray  # V[i], i = 0..cap

    @property
    def k1(self) -> float:
        return self.cap / self.n

    def vhat_segment(self, j) -> np.ndarray:
        """Periodized potential value on lattice segment [j, j+1), any j."""
        return self.cumulative[reflected_segment_site(j, self.cap)]

    def scale_slopes(self, j) -> np.ndarray:
        """d(scale)/dz on segment j of width 1/n: e^{vhat}."""
        return np.exp(self.vhat_segment(j))

    def scale_function(self, z: float) -> float:
        """A(z) = integral_0^z e^{vhat(n y)} dy for the n-rescaled diffusion
        (lattice segments of width 1/n); exact piecewise-linear evaluation."""
        n = self.n
        zz = z * n
        j = int(math.floor(zz))
        if z >= 0:
            full_segs = np.arange(0, j)
            full = float(np.sum(np.exp(self.vhat_segment(full_segs))))
            frac = (zz - j) * math.exp(float(self.vhat_segment(j)))
            return (full + frac) / n
        full_segs = np.arange(j + 1, 0)
        full = float(np.sum(np.exp(self.vhat_segment(full_segs))))
        frac = (j + 1 - zz) * math.exp(float(self.vhat_segment(j)))
        return -(full + frac) / n


def build_potential(
    n: int,
    k1: float,
    rng: Optional[np.random.Generator] = None,
    xi: Optional[np.ndarray] = None,
    clip_bound: Optional[float] = None,
) -> PotentialProfile:
    """Potential from site variables xi(1..cap); xi sampled N(0,1) clipped to
    +-sqrt(n)/2 by default, or supplied explicitly."""
    cap = int(round(n * k1))
    if cap < 1:
        raise ValueError("need at least one lattice site")
    bound = clip_bound if clip_bound is not None else math.sqrt(n) / 2.0
    if xi is None:
        xi = rng.standard_normal(cap + 1)
        np.clip(xi, -bound, bound, out=xi)
        xi[0] = 0.0
    else:
        xi = np.asarray(xi, dtype=float)
        if len(xi) != cap + 1:
            raise ValueError("need cap+1 site values (index 0 unused)")
        if np.max(np.abs(xi[1:])) > bound + 1e-12:
            raise ValueError("site value exceeds the bound")
    u = xi / (4.0 * math.sqrt(n))
    inc = np.log(0.5 - u) - np.log(0.5 + u)
    V = np.concatenate([[0.0], np.cumsum(inc[1:])])
    return PotentialProfile(n=n, cap=cap, xi=xi, cumulative=V)


# ---------------------------------------------------------------------------
# lane-parallel diffusion driver
# ---------------------------------------------------------------------------

class _DiffusionLanes:
    """Lockstep Euler driver for the n-rescaled diffusion in lane potentials.

    Per lane: integer walk position (units 1/n), the driving Brownian offset
    x relative to the scale value at the current position, and the clock.
    Between embedded stops the path stays inside (pos-1, pos+1), so only the
    two adjacent segments matter; crossings are detected with the endpoint
    test plus a Brownian-bridge correction, and the walk restarts exactly at
    the boundary.
    """

    def __init__(self, profiles: np.ndarray, n: int, cap: int, du: float):
        # profiles: [lanes, cap+1] cumulative potentials
        self.V = profiles
        self.n = n
        self.cap = cap
        self.du = du
        self.lanes = len(profiles)
        self.pos = np.zeros(self.lanes, dtype=np.int64)
        self.x = np.zeros(self.lanes)
        self.clock = np.zeros(self.lanes)
        self._lane_idx = np.arange(self.lanes)
        self._refresh_widths()

    def _seg_value(self, j):
        site = reflected_segment_site(j, self.cap)
        return self.V[self._lane_idx, site]

    def _refresh_widths(self):
        n = self.n
        self.w_hi = np.exp(self._seg_value(self.pos)) / n
        self.w_lo = np.exp(self._seg_value(self.pos - 1)) / n
        self.e2_hi = np.exp(-2.0 * self._seg_value(self.pos))
        self.e2_lo = np.exp(-2.0 * self._seg_value(self.pos - 1))

    def micro_steps(self, rng: np.random.Generator, active: np.ndarray):
        """Advance active lanes; returns (moved_mask_over_active, direction)."""
        du = self.du
        sdu = math.sqrt(du)
        x = self.x[active]
        z = rng.standard_normal(active.size)
        x2 = x + sdu * z
        wh = self.w_hi[active]
        wl = self.w_lo[active]
        # clock accrues with the left-endpoint integrand of e^{-2 vhat}
        integ = np.where(x >= 0.0, self.e2_hi[active], self.e2_lo[active])
        self.clock[active] += integ * du
        up_hit = x2 >= wh
        dn_hit = x2 <= -wl
        open_mask = ~up_hit & ~dn_hit
        if open_mask.any():
            xo, x2o = x[open_mask], x2[open_mask]
            who, wlo = wh[open_mask], wl[open_mask]
            p_hi = np.exp(-2.0 * np.maximum(who - xo, 0) * np.maximum(who - x2o, 0) / du)
            p_lo = np.exp(-2.0 * np.maximum(xo + wlo, 0) * np.maximum(x2o + wlo, 0) / du)
            u = rng.random(open_mask.sum())
            bridge_hi = u < p_hi
            bridge_lo = (u >= p_hi) & (u < p_hi + p_lo)
            tmp_up = up_hit[open_mask]
            tmp_dn = dn_hit[open_mask]
            tmp_up |= bridge_hi
            tmp_dn |= bridge_lo
            up_hit[open_mask] = tmp_up
            dn_hit[open_mask] = tmp_dn
        moved = up_hit | dn_hit
        self.x[active] = np.where(moved, 0.0, x2)
        lanes_moved = active[moved]
        if lanes_moved.size:
            self.pos[lanes_moved] += np.where(up_hit[moved], 1, -1)
            n = self.n
            site_hi = reflected_segment_site(self.pos[lanes_moved], self.cap)
            site_lo = reflected_segment_site(self.pos[lanes_moved] - 1, self.cap)
            vh = self.V[lanes_moved, site_hi]
            vl = self.V[lanes_moved, site_lo]
            self.w_hi[lanes_moved] = np.exp(vh) / n
            self.w_lo[lanes_moved] = np.exp(vl) / n
            self.e2_hi[lanes_moved] = np.exp(-2.0 * vh)
            self.e2_lo[lanes_moved] = np.exp(-2.0 * vl)
        return moved, up_hit


try:
    import warnings

    # older TBB builds make numba fall back to another threading layer; the
    # kernel is correct (and fast) either way, so silence that one warning
    warnings.filterwarnings("ignore", message=".*TBB.*")
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*a, **k):  # type: ignore
        def wrap(f):
            return f

        return wrap

    prange = range  # type: ignore


@njit(cache=True, parallel=True)
def _embed_chunk(V, n, cap, du_arr, m_max, pos, x, clock, mdone, walks, sigma,
                 z_block, u_block, active):
    chunk = z_block.shape[1]
    period = 2 * cap
    for a in prange(len(active)):
        l = active[a]
        if mdone[l] >= m_max:
            continue
        du = du_arr[l]
        sdu = math.sqrt(du)
        p = pos[l]
        xx = x[l]
        ck = clock[l]
        md = mdone[l]
        # segment potentials around the current position
        ph = p % period
        sh = ph if ph < cap else period - ph - 1
        pl = (p - 1) % period
        sl = pl if pl < cap else period - pl - 1
        vh = V[l, sh]
        vl = V[l, sl]
        wh = math.exp(vh) / n
        wl = math.exp(vl) / n
        e2h = math.exp(-2.0 * vh)
        e2l = math.exp(-2.0 * vl)
        for j in range(chunk):
            if xx >= 0.0:
                ck += e2h * du
            else:
                ck += e2l * du
            x2 = xx + sdu * z_block[a, j]
            up = x2 >= wh
            dn = x2 <= -wl
            if not up and not dn:
                # Brownian-bridge crossing probabilities for both barriers
                a_hi = (wh - xx) * (wh - x2)
                a_lo = (xx + wl) * (x2 + wl)
                p_hi = math.exp(-2.0 * a_hi / du) if a_hi < 15.0 * du else 0.0
                p_lo = math.exp(-2.0 * a_lo / du) if a_lo < 15.0 * du else 0.0
                if p_hi > 0.0 or p_lo > 0.0:
                    uu = u_block[a, j]
                    if uu < p_hi:
                        up = True
                    elif uu < p_hi + p_lo:
                        dn = True
            if up or dn:
                p = p + 1 if up else p - 1
                md += 1
                walks[l, md] = p
                sigma[l, md] = ck
                xx = 0.0
                if md >= m_max:
                    break
                ph = p % period
                sh = ph if ph < cap else period - ph - 1
                pl2 = (p - 1) % period
                sl = pl2 if pl2 < cap else period - pl2 - 1
                vh = V[l, sh]
                vl = V[l, sl]
                wh = math.exp(vh) / n
                wl = math.exp(vl) / n
                e2h = math.exp(-2.0 * vh)
                e2l = math.exp(-2.0 * vl)
            else:
                xx = x2
        pos[l] = p
        x[l] = xx
        clock[l] = ck
        mdone[l] = md


def embed_rwre(
    profiles: list[PotentialProfile],
    m_max: int,
    rng: np.random.Generator,
    du: Optional[float] = None,
    chunk: int = 2048,
    width_guard: float = 0.2,
) -> dict:
    """Embedded walks from lane-parallel diffusion simulations.

    One lane per profile; returns walks [lanes, m_max+1] (positions in units
    1/n) and the passage times sigma [lanes, m_max+1] read off the clock.
    The base resolution defaults to 2e-3/n^2 (must stay <= 1e-2/n^2), and a
    lane whose narrowest scale segment approaches sqrt(du) gets a finer
    per-lane du so that width/sqrt(du) >= 1/width_guard everywhere (the
    one-sided bridge-crossing corrections assume the other barrier is far).
    Randomness is pre-drawn in fixed-size blocks (one normal and one uniform
    per lane and microstep), so results depend only on the stream, not on the
    thread count.
    """
    n = profiles[0].n
    cap = profiles[0].cap
    if du is None:
        du = 2e-3 / n**2
    if du <= 0:
        raise ValueError("du must be positive")
    if du > 1e-2 / n**2 + 1e-18:
        raise ValueError("du too coarse to resolve 1/n passages")
    V = np.stack([p.cumulative for p in profiles])
    lanes = len(profiles)
    min_width = np.exp(V[:, :cap].min(axis=1)) / n
    du_arr = np.minimum(du, (width_guard * min_width) ** 2)
    walks = np.zeros((lanes, m_max + 1), dtype=np.int64)
    sigma = np.zeros((lanes, m_max + 1))
    pos = np.zeros(lanes, dtype=np.int64)
    x = np.zeros(lanes)
    clock = np.zeros(lanes)
    mdone = np.zeros(lanes, dtype=np.int64)
    drawn = 0
    active = np.arange(lanes)
    while active.size:
        # keep roughly a fixed number of draws per call so the slow tail
        # runs long chunks instead of many tiny ones
        chunk_eff = min(max(chunk, int(4e6 / active.size)), 1 << 20)
        z_block = rng.standard_normal((active.size, chunk_eff))
        u_block = rng.random((active.size, chunk_eff))
        _embed_chunk(V, n, cap, du_arr, m_max, pos, x, clock, mdone, walks,
                     sigma, z_block, u_block, active)
        drawn += active.size * chunk_eff
        active = active[mdone[active] < m_max]
        if drawn > 6e10:
            raise RuntimeError("embedding exceeded the microstep budget")
    return {"walks": walks, "sigma": sigma, "du": du}


def simulate_bmre(
    profile: PotentialProfile,
    times: np.ndarray,
    rng: np.random.Generator,
    du: Optional[float] = None,
) -> np.ndarray:
    """Sample the n-rescaled diffusion at the requested times (one replicate).

    The left-endpoint clock rule over a driving path of step du; positions
    are interpolated linearly inside the current lattice segment through the
    scale function.  du defaults to 1e-3/n^2.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    n = profile.n
    if du is None:
        du = 1e-3 / n**2
    if du <= 0:
        raise ValueError("du must be positive")
    order = np.argsort(times)
    drv = _DiffusionLanes(profile.cumulative[None, :], n, profile.cap, du)
    active = np.arange(1)
    out = np.empty_like(times)
    for idx in order:
        target = times[idx]
        while drv.clock[0] < target:
            drv.micro_steps(rng, active)
        # position inside the current lattice segment via the local scale slope
        base = drv.pos[0] / n
        width = drv.w_hi[0] if drv.x[0] >= 0 else drv.w_lo[0]
        out[idx] = base + (drv.x[0] / width) / n
    return out


def direct_rwre_ensemble(
    xi_lanes: np.ndarray,
    n: int,
    cap: int,
    m_max: int,
    rng: np.random.Generator,
    reflected: bool = False,
    snapshot_steps: tuple = (),
) -> dict:
    """Walks with the site transition law 1/2 +- xi(site)/(4 sqrt n).

    Unreflected walks live on all of Z and read the environment through the
    tent-periodized site; reflected walks live on {0..cap} with forced moves
    at the ends (the contour's law under a spatially constant field).
    """
    lanes = len(xi_lanes)
    sqn = math.sqrt(n)
    pos = np.zeros(lanes, dtype=np.int64)
    lane_idx = np.arange(lanes)
    snaps = {}
    for mstep in range(m_max):
        if reflected:
            site = pos
            pu = 0.5 + xi_lanes[lane_idx, site] / (4.0 * sqn)
            pu = np.where(pos == 0, 1.0, pu)
            pu = np.where(pos == cap, 0.0, pu)
        else:
            p = np.mod(pos, 2 * cap)
            site = np.where(p <= cap, p, 2 * cap - p)
            # the tilt points away from the nearest fold center on descending
            # tent branches (the periodized potential is even), and the
            # diffusion exits symmetrically at the centers themselves
            sign = np.where(p < cap, 1.0, -1.0)
            pu = 0.5 + sign * xi_lanes[lane_idx, site] / (4.0 * sqn)
            pu = np.where((site == 0) | (site == cap), 0.5, pu)
        u = rng.random(lanes)
        pos = pos + np.where(u < pu, 1, -1)
        if (mstep + 1) in snapshot_steps:
            snaps[mstep + 1] = pos.copy()
    return {"final": pos, "snapshots": snaps}


def exact_embedded_ensemble(
    profiles_V: np.ndarray,
    n: int,
    cap: int,
    m_max: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Embedded walk sampled through the exact exit-side kernel of the scale
    function: from position i the diffusion exits at i+1 with probability
    e^{vhat(i-1)} / (e^{vhat(i-1)} + e^{vhat(i)}).  Equal in law to the
    Euler-embedded walk with the passage times marginalized out."""
    lanes = len(profiles_V)
    pos = np.zeros(lanes, dtype=np.int64)
    lane_idx = np.arange(lanes)
    for _ in range(m_max):
        v_lo = profiles_V[lane_idx, reflected_segment_site(pos - 1, cap)]
        v_hi = profiles_V[lane_idx, reflected_segment_site(pos, cap)]
        pu = 1.0 / (1.0 + np.exp(v_hi - v_lo))
        pos = pos + np.where(rng.random(lanes) < pu, 1, -1)
    return pos


def exit_time_stats(replicates: int, rng: np.random.Generator, du: float = 5e-4) -> dict:
    """Exit time of |W| = 1 by the Euler walk with bridge-crossing correction."""
    if replicates < 1000:
        raise ValueError("need at least 1e3 replicates")
    w = np.zeros(replicates)
    t = np.zeros(replicates)
    out = np.empty(replicates)
    active = np.arange(replicates)
    sdu = math.sqrt(du)
    while active.size:
        z = rng.standard_normal(active.size)
        wa = w[active]
        w2 = wa + sdu * z
        t[active] += du
        crossed = np.abs(w2) >= 1.0
        open_mask = ~crossed
        if open_mask.any():
            wo, w2o = wa[open_mask], w2[open_mask]
            p_hi = np.exp(-2.0 * (1.0 - wo) * (1.0 - w2o) / du)
            p_lo = np.exp(-2.0 * (1.0 + wo) * (1.0 + w2o) / du)
            u = rng.random(open_mask.sum())
            tmp = crossed[open_mask]
            tmp |= u < np.clip(p_hi + p_lo, 0.0, 1.0)
            crossed[open_mask] = tmp
        done_lanes = active[crossed]
        out[done_lanes] = t[done_lanes]
        w[active[~crossed]] = w2[~crossed]
        active = active[~crossed]
    mean = float(out.mean())
    se = float(out.std(ddof=1) / math.sqrt(replicates))
    return {"mean": mean, "se": se, "median": float(np.median(out)), "samples": out}


def sigma_convergence_report(
    n_list: list[int],
    t: float,
    replicates: int,
    rng: np.random.Generator,
    k1: float = 1.0,
    du_factor: float = 1e-2,
) -> dict:
    """Median over replicates of sup_{s<=t} |sigma_{floor(n^2 s)} - s| per n."""
    if not n_list:
        raise ValueError("empty n list")
    rows = []
    for n in n_list:
        m_max = int(round(n * n * t))
        if m_max == 0:
            rows.append({"n": n, "median_dev": 0.0})
            continue
        profiles = [build_potential(n, k1, rng) for _ in range(replicates)]
        emb = embed_rwre(profiles, m_max, rng, du=du_factor / n**2)
        grid = np.arange(m_max + 1) / n**2
        devs = np.max(np.abs(emb["sigma"] - grid[None, :]), axis=1)
        rows.append({"n": n, "median_dev": float(np.median(devs))})
    return {"rows": rows, "t": t, "replicates": replicates}


def dump_schedule_csv(path, n: int, walks: np.ndarray, sigma: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "replicate", "m", "sigma", "walk"])
        for r in range(len(walks)):
            for m in range(walks.shape[1]):
                w.writerow([n, r, m, f"{sigma[r, m]:.9g}", int(walks[r, m])])
