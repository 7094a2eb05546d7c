"""Survival probability of the near-critical branching chain.

The chain with geometric offspring (success 1/2 - b/(4n)) dies out almost
surely near criticality; the survival probability at generation n*delta,
rescaled by n, approaches b / (1 - e^{-b delta}).  This script iterates the
generating function exactly, compares with the closed form, and overlays a
Monte Carlo run in the degenerate environment (zero kernel, mean drift b),
which realizes the same chain through the particle machinery.
"""

import numpy as np

from brsnake.branching import (
    estimate_survival_mc,
    exact_survival_geometric,
    limit_survival_rate,
    survival_closed_form,
)

delta = 1.0
for b in (-1.0, 0.0, 1.0):
    print(f"drift b = {b:+.0f}   limit rate h(b,1) = {limit_survival_rate(b, delta):.6f}")
    for n in (10, 100, 1000, 10_000):
        k = int(n * delta)
        s_iter = exact_survival_geometric(b, n, k)
        s_closed = survival_closed_form(b, n, k)
        print(f"  n={n:>6}: n*survival = {n * s_iter:.6f}"
              f"   (closed-form agreement {abs(s_iter - s_closed) / s_closed:.1e})")
    n = 200
    phat, se = estimate_survival_mc(n, delta, 50_000, np.random.default_rng(1), nu=b)
    ex = exact_survival_geometric(b, n, n)
    print(f"  MC at n={n}: n*p = {n * phat:.4f} +- {3 * n * se:.4f}"
          f"   exact {n * ex:.4f}")
    print()
