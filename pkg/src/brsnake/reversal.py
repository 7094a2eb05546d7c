"""Excursion-order-reversing path transforms.

For a contour stopped at the level-0 inverse local time, T_z reverses the
order of the excursion pieces above level z inside every sojourn block at z,
keeping each piece's internal time orientation.  Each T_z preserves the law
of the run, the stopping time, and every per-level crossing count; composing
T_{cap-1} о ... о T_0 reverses the whole path in time, exactly.
"""

from __future__ import annotations

import numpy as np

from .snake import ContourRecord, LocalTimeLedger

__all__ = ["level_blocks", "reversal_permutation", "reverse_transform", "full_reversal"]


def level_blocks(y: np.ndarray, z: int) -> list[np.ndarray]:
    """Visit-index lists of the sojourn blocks of level z.

    A block starts at an arrival at z and collects the successive visits to z
    up to (and including) the visit followed by a down-step to z-1; for z = 0
    the single block spans the whole run (the path never goes below 0) and
    closes at the final state.  Only blocks with at least two visits produce
    reorderable pieces.
    """
    y = np.asarray(y)
    T = len(y) - 1
    hits = np.where(y == z)[0]
    if hits.size == 0:
        return []
    if z == 0:
        return [hits]
    # a visit closes its block when the next step goes below z (or the path ends)
    closes = np.empty(hits.size, dtype=bool)
    inner = hits < T
    closes[~inner] = True
    closes[inner] = y[hits[inner] + 1] == z - 1
    cut = np.where(closes)[0] + 1
    return [b for b in np.split(hits, cut) if b.size]


def reversal_permutation(y: np.ndarray, z: int) -> np.ndarray:
    """State-index permutation realizing T_z on a record with levels y."""
    T = len(y) - 1
    perm = np.arange(T + 1)
    for visits in level_blocks(y, z):
        # block end: last visit followed by a down-step (or the path end)
        end = visits[-1]
        if end < T and y[end + 1] != z - 1 and z > 0:
            continue  # unfinished block (possible on step-count horizons)
        if len(visits) < 3:
            continue  # one piece or none: nothing to reorder
        pieces = [np.arange(visits[l] + 1, visits[l + 1] + 1) for l in range(len(visits) - 1)]
        new = np.concatenate(pieces[::-1])
        old = np.arange(visits[0] + 1, visits[-1] + 1)
        perm[old] = new
    return perm


def reverse_transform(record: ContourRecord, z: int) -> ContourRecord:
    """Apply T_z; requires a run ending at level 0 with complete excursions."""
    if record.levels[-1] != 0:
        raise ValueError("reversal transforms need a record ending at level 0")
    if not (0 <= z < record.cap):
        raise ValueError("z must be an integer level in [0, cap)")
    perm = reversal_permutation(record.levels, z)
    return ContourRecord(
        record.n,
        record.cap,
        record.levels[perm],
        None if record.tips is None else record.tips[perm],
        stopped_at_tau=record.stopped_at_tau,
        truncated=record.truncated,
        root=record.root,
    )


def full_reversal(record: ContourRecord) -> ContourRecord:
    """T_{cap-1} о ... о T_0; equals exact time reversal, state by state."""
    out = record
    for z in range(record.cap):
        out = reverse_transform(out, z)
    return out


def crossing_profile(record: ContourRecord) -> np.ndarray:
    """Per-level upcrossing totals (reversal invariant, used by tests)."""
    ledger = LocalTimeLedger(record)
    return np.array([ledger.upcross_count(m) for m in range(record.cap + 1)])
