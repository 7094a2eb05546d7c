"""Diffusion in a random potential and its embedded walk.

Builds the site potential from the branching tilt, runs the diffusion through
its scale/time-change representation, extracts the +-1/n first-passage walk,
and compares it with the direct site-kernel walk under the same frozen
environment.  The passage durations, times n^2, follow the unit two-sided
exit law of Brownian motion; the reflected walk at time 1 matches the snake
contour's law under the constant-covariance environment.
"""

import numpy as np

from brsnake import brox
from brsnake.harness import ks_two_sample
from brsnake.snake import run_contour_ensemble

rng = np.random.default_rng(8)
n, k1, m_max = 20, 1.0, 400

profiles = [brox.build_potential(n, k1, rng) for _ in range(800)]
emb = brox.embed_rwre(profiles, m_max, rng)
theta = n**2 * np.diff(emb["sigma"], axis=1)
print(f"passage durations x n^2: mean {theta.mean():.4f} (exit-time law, E = 1)")

xi = np.stack([p.xi for p in profiles])
direct = brox.direct_rwre_ensemble(xi, n, n, m_max, rng)
ksd, p = ks_two_sample(emb["walks"][:, m_max].astype(float),
                       direct["final"].astype(float))
print(f"embedded vs direct walk at m={m_max}: KS = {ksd:.4f}, p = {p:.3f}")

th = brox.exit_time_stats(10_000, rng)
print(f"unit exit time: mean {th['mean']:.4f} +- {3*th['se']:.4f}, "
      f"median {th['median']:.3f}")

# reflected embedded walk vs the snake contour, shared environment law
nn = 60
walk = brox.exact_embedded_ensemble(
    np.stack([brox.build_potential(nn, 1.0, rng).cumulative for _ in range(4000)]),
    nn, nn, nn * nn, rng)
refl = brox.tent_map(walk / nn, 1.0)
cont = run_contour_ensemble(nn, nn, 4000, rng, steps=nn * nn, gamma=1.0,
                            track_tips=False)["final_levels"] / nn
ksd, p = ks_two_sample(refl, cont)
print(f"reflected walk vs contour at time 1 (n={nn}): KS distance = {ksd:.4f}")
