"""Branching particles and discrete snakes in random environments.

Library layout:
  environment  -- covariance kernels, field slices, cumulative/smooth fields
  branching    -- particle system, geometric offspring, survival oracle
  snake        -- contour + tip-path process, local times, occupation calculus
  reversal     -- excursion-order-reversing transforms
  functional   -- exponential path functional and its Doob decomposition
  brox         -- diffusion in a random potential, embedded walks
  harness      -- seeded replication, estimators, KS, MP residual checks
  experiments  -- named experiment bundles behind the CLI subcommands
  cli          -- argparse front end (``brsnake`` entry point)
"""

__version__ = "0.1.0"

from . import branching, brox, environment, functional, harness, reversal, snake  # noqa: F401
