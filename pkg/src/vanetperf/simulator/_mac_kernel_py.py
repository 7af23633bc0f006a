"""Pure-numpy MAC kernel: one control-channel interval of slotted CSMA/CA.

Reference implementation of the slot loop; the compiled extension mirrors
it operation for operation, and both must produce identical outputs for
identical inputs (all randomness is drawn by the caller).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def simulate_cch(
    positions: np.ndarray,
    counters: np.ndarray,
    tx_slots: int,
    cch_slots: int,
    int_range: float,
) -> np.ndarray:
    """Run one CCH and return each car's transmission start slot (-1 if unsent).

    `positions` must be sorted ascending. Every car holds one beacon and an
    initial backoff counter. Per physical slot: a car freezes while any
    transmitter inside its interference range is audible (transmissions
    that started strictly earlier); a counter-zero car starts transmitting
    into a slot it sensed idle (simultaneous starters collide); otherwise
    the counter decrements unless the slot went busy mid-air nearby.
    """
    n = len(positions)
    start = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return start
    counters = counters.astype(np.int64).copy()

    lo = np.searchsorted(positions, positions - int_range, side="left")
    hi = np.searchsorted(positions, positions + int_range, side="right")

    def neighbor_count(active: np.ndarray) -> np.ndarray:
        csum = np.concatenate(([0], np.cumsum(active)))
        return csum[hi] - csum[lo] - active

    s = 0
    pending = np.ones(n, dtype=bool)
    while s < cch_slots and pending.any():
        ongoing = (start >= 0) & (start < s) & (s < start + tx_slots)
        if not ongoing.any():
            ready = pending & (counters == 0)
            if not ready.any():
                # Fully idle channel: fast-forward the shared countdown.
                skip = int(counters[pending].min())
                skip = min(skip, cch_slots - s)
                if skip > 0:
                    counters[pending] -= skip
                    s += skip
                    continue
            sensed = np.zeros(n, dtype=bool)
        else:
            sensed = neighbor_count(ongoing.astype(np.int64)) > 0

        starters = pending & (counters == 0) & ~sensed
        if starters.any():
            start[starters] = s
            pending &= ~starters

        transmitting = ongoing | starters
        if transmitting.any():
            blocked = neighbor_count(transmitting.astype(np.int64)) > 0
        else:
            blocked = sensed
        tick = pending & (counters > 0) & ~sensed & ~blocked
        counters[tick] -= 1
        s += 1
    return start
