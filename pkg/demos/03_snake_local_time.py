"""A single snake run: contour, local times, occupation measure.

Runs the snake until its level-0 local time reaches c0 = 2 (i.e. 2n complete
excursions), prints the local-time profile across levels, round-trips the
inverse local time, and reads off the occupation-measure process, whose t=0
mass is exactly c0 by construction.
"""

import numpy as np

from brsnake.snake import (
    SnakeConfig,
    occupation_identity_report,
    occupation_measure,
    run_snake,
)


class FlatEnv:
    def xi(self, level, y):
        return 0.0


n, c0 = 20, 2.0
cfg = SnakeConfig(n=n, height_cap=1.0)
record, ledger = run_snake(cfg, np.random.default_rng(3), env=FlatEnv(),
                           local_time_target=c0)
t_end = record.steps / n**2
print(f"run length {record.steps} steps = {t_end:.3f} time units, "
      f"max level {record.levels.max()}/{record.cap}")

print("\nlevel   upcrossings   local time")
for m in range(0, record.cap + 1, 4):
    ups = ledger.upcross_count(m)
    print(f"{m:>5}   {ups:>11}   {ups / n:.3f}")

r = c0 / 2
tau = ledger.inverse_local_time(0.0, r)
print(f"\ninverse local time at mass {r}: tau = {tau:.4f},"
      f" local time there = {ledger.local_time(0.0, tau):.3f} (> {r}, <= {r} + 1/n)")

print("\noccupation masses over the window (0, tau_{c0}]:")
for t in (0.0, 0.25, 0.5, 0.75):
    mass = occupation_measure(record, ledger, 0.0, c0, 0.0, t)
    print(f"  t={t:.2f}: X(1) = {mass:.3f}")

rep = occupation_identity_report(record, ledger, t_end, 1.0)
print(f"\noccupation identity: level-sum {rep['lhs']:.4f} vs occupation count "
      f"{rep['rhs']:.4f}, gap {rep['gap']:.4f} (bound {5 * 2 / n * max(t_end, 1):.4f})")
