# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MAC kernel: one control-channel interval of slotted CSMA/CA.

Mirrors ``_mac_kernel_py.simulate_cch`` operation for operation; both
backends must return identical outputs for identical inputs.
"""

import numpy as np

cimport cython

BACKEND = "cython"


def simulate_cch(positions, counters, int tx_slots, int cch_slots, double int_range):
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef long long n = pos.shape[0]
    start_arr = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return start_arr
    cnt_arr = np.ascontiguousarray(counters, dtype=np.int64).copy()
    lo_arr = np.searchsorted(pos, pos - int_range, side="left").astype(np.int64)
    hi_arr = np.searchsorted(pos, pos + int_range, side="right").astype(np.int64)

    cdef long long[::1] start = start_arr
    cdef long long[::1] cnt = cnt_arr
    cdef long long[::1] lo = lo_arr
    cdef long long[::1] hi = hi_arr

    ind_arr = np.zeros(n, dtype=np.int64)
    csum_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] ind = ind_arr
    cdef long long[::1] csum = csum_arr

    cdef long long s = 0, i, skip, n_pending = n, n_ongoing, n_transmitting
    cdef long long sensed_cnt, blocked_cnt
    cdef bint any_ready

    while s < cch_slots and n_pending > 0:
        # Transmissions audible at the start of slot s (started strictly earlier).
        n_ongoing = 0
        for i in range(n):
            if start[i] >= 0 and start[i] < s and s < start[i] + tx_slots:
                ind[i] = 1
                n_ongoing += 1
            else:
                ind[i] = 0

        if n_ongoing == 0:
            any_ready = False
            skip = -1
            for i in range(n):
                if start[i] < 0:
                    if cnt[i] == 0:
                        any_ready = True
                        break
                    if skip < 0 or cnt[i] < skip:
                        skip = cnt[i]
            if not any_ready:
                # Fully idle channel: fast-forward the shared countdown.
                if skip > cch_slots - s:
                    skip = cch_slots - s
                if skip > 0:
                    for i in range(n):
                        if start[i] < 0:
                            cnt[i] -= skip
                    s += skip
                    continue

        for i in range(n):
            csum[i + 1] = csum[i] + ind[i]

        # Counter-zero cars that sensed an idle slot start transmitting now.
        n_transmitting = n_ongoing
        for i in range(n):
            if start[i] < 0 and cnt[i] == 0:
                sensed_cnt = csum[hi[i]] - csum[lo[i]] - ind[i]
                if sensed_cnt == 0:
                    start[i] = s
                    n_pending -= 1
                    n_transmitting += 1

        if n_transmitting > n_ongoing:
            for i in range(n):
                if start[i] == s:
                    ind[i] = 1
            for i in range(n):
                csum[i + 1] = csum[i] + ind[i]

        # Remaining contenders count down through a slot nobody occupied nearby.
        for i in range(n):
            if start[i] < 0 and cnt[i] > 0:
                blocked_cnt = csum[hi[i]] - csum[lo[i]] - ind[i]
                if blocked_cnt == 0:
                    cnt[i] -= 1
        s += 1

    return start_arr
