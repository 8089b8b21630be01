"""Compiled inner loops for the particle dynamics.

State layout: ``occ[i, s]`` is 1 when site ``s`` of the ``i``-th stored line
is occupied, where site ``s`` has doubled position ``lo[i] + 2 s`` and
``0 <= s < nsite[i]``.  Particles never leave the stored range, so the label
of an occupied site is ``label_offset[i]`` plus the number of occupied sites
up to and including it.  Monitored dual points are kept per line in
``mon_dz[i, :mon_cnt[i]]`` (sorted doubled positions) with ids in ``mon_id``.
"""

import numpy as np
from numba import njit

# outcome codes, shared with the Python layer
OCCUPIED = 0
JUMP = 1
BLOCKED = 2
UNDERFLOW = 3
FROZEN = 4

# counter slots
C_JUMPS = 0
C_BLOCKED = 1
C_UNDERFLOW = 2
C_OCCUPIED = 3
C_FROZEN = 4
N_COUNTERS = 5

MODE_STANDARD = 0
MODE_IGNORE_UPPER = 1  # negative control: skip the line-above blocker


@njit(cache=True, inline="always")
def _first_geq(row, n, value):
    a, b = 0, n
    while a < b:
        m = (a + b) >> 1
        if row[m] < value:
            a = m + 1
        else:
            b = m
    return a


@njit(cache=True, inline="always")
def _first_gt(row, n, value):
    a, b = 0, n
    while a < b:
        m = (a + b) >> 1
        if row[m] <= value:
            a = m + 1
        else:
            b = m
    return a


@njit(cache=True, inline="always")
def _neighbour_blocks(occ, lo, hi, nl, dz, zp, nlines):
    """0: free, 1: blocked, 2: unknown (interval not stored)."""
    if nl < 0 or nl >= nlines:
        return 2
    if lo[nl] > dz + 1 or hi[nl] < zp - 1:
        return 2
    a = (dz + 1 - lo[nl]) >> 1
    b = (zp - 1 - lo[nl]) >> 1
    for s in range(a, b + 1):
        if occ[nl, s]:
            return 1
    return 0


@njit(cache=True, nogil=True)
def process_events(
    occ, lo, hi, nsite, active,
    ev_line, ev_dz, ev_time, start, stop,
    mon_dz, mon_cnt, mon_id,
    rec_mon, rec_time, rec_n,
    counters, mode, last,
):
    """Apply events ``start..stop-1``; returns the index of the first unprocessed event.

    ``ev_line`` holds line indices relative to the stored array.  Processing
    stops early when the record buffer cannot hold the crossings of the next
    jump; ``rec_n[0]`` is the number of filled records.  ``last`` receives
    ``(outcome, old_dz)`` of the final processed event.
    """
    nlines = occ.shape[0]
    cap = rec_mon.shape[0]
    for e in range(start, stop):
        li = ev_line[e]
        dz = ev_dz[e]
        if li < 0 or li >= nlines or not active[li] or dz < lo[li] or dz > hi[li]:
            counters[C_FROZEN] += 1
            last[0] = FROZEN
            last[1] = 0
            continue
        s = (dz - lo[li]) >> 1
        if occ[li, s]:
            counters[C_OCCUPIED] += 1
            last[0] = OCCUPIED
            last[1] = dz
            continue
        n = nsite[li]
        sp = s + 1
        while sp < n and not occ[li, sp]:
            sp += 1
        if sp >= n:
            counters[C_UNDERFLOW] += 1
            last[0] = UNDERFLOW
            last[1] = 0
            continue
        zp = lo[li] + 2 * sp
        below = _neighbour_blocks(occ, lo, hi, li - 1, dz, zp, nlines)
        above = 0
        if mode != MODE_IGNORE_UPPER:
            above = _neighbour_blocks(occ, lo, hi, li + 1, dz, zp, nlines)
        if below == 2 or above == 2:
            counters[C_UNDERFLOW] += 1
            last[0] = UNDERFLOW
            last[1] = zp
            continue
        if below == 1 or above == 1:
            counters[C_BLOCKED] += 1
            last[0] = BLOCKED
            last[1] = zp
            continue
        m = mon_cnt[li]
        if m > 0:
            k0 = _first_gt(mon_dz[li], m, dz)
            k1 = _first_geq(mon_dz[li], m, zp)
            if rec_n[0] + (k1 - k0) > cap:
                return e
            for k in range(k0, k1):
                rec_mon[rec_n[0]] = mon_id[li, k]
                rec_time[rec_n[0]] = ev_time[e]
                rec_n[0] += 1
        occ[li, sp] = 0
        occ[li, s] = 1
        counters[C_JUMPS] += 1
        last[0] = JUMP
        last[1] = zp
    return stop


@njit(cache=True, nogil=True)
def heights_at(occ, lo, hi, label_offset, x1, x2, l0, out):
    """``out[k] = x1 - p(x)``; returns the first uncovered index or -1.

    Queries are answered from per-line prefix counts built on first use.
    """
    nlines = occ.shape[0]
    nmax = occ.shape[1]
    prefix = np.full((nlines, nmax + 1), -1, dtype=np.int64)
    for k in range(x1.shape[0]):
        li = x2[k] - x1[k] - l0
        d = x1[k] + x2[k] - 1
        if li < 0 or li >= nlines or d < lo[li] - 1 or d > hi[li] + 1:
            return k
        if prefix[li, 0] < 0:
            prefix[li, 0] = 0
            for s in range(nmax):
                prefix[li, s + 1] = prefix[li, s] + occ[li, s]
        # sites strictly left of d: lo + 2s < d
        ns = (d - lo[li] + 1) >> 1
        if ns < 0:
            ns = 0
        out[k] = x1[k] - (label_offset[li] + prefix[li, ns])
    return -1

