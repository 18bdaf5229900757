"""Compiled inner loops for the shared medium and the position field.

Every kernel mutates the arrays it is handed and mirrors the arithmetic of
the scalar reference code operation for operation, so results do not depend
on whether a frame touched 2 receivers or 600.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NEVER = np.iinfo(np.int64).max


@njit(cache=True)
def advance_positions(ts, t0, x0, y0, vx, vy, tarr, moving, cursor, last, out_x, out_y):
    for i in range(cursor.size):
        c = cursor[i]
        while c < last[i] and t0[c + 1] <= ts:
            c += 1
        cursor[i] = c
        if moving[c]:
            dt = min(ts, tarr[c]) - t0[c]
            out_x[i] = x0[c] + vx[c] * dt
            out_y[i] = y0[c] + vy[c] * dt
        else:
            out_x[i] = x0[c]
            out_y[i] = y0[c]


@njit(cache=True)
def reach(x, y, src, reach2, out_idx, out_d):
    """Nodes within ``sqrt(reach2)`` of ``src`` (excluding it), ascending ids."""
    xs = x[src]
    ys = y[src]
    k = 0
    for i in range(x.size):
        if i == src:
            continue
        dx = x[i] - xs
        dy = y[i] - ys
        d2 = dx * dx + dy * dy
        if d2 <= reach2:
            out_idx[k] = i
            out_d[k] = np.sqrt(d2)
            k += 1
    return k


@njit(cache=True)
def power_filter(idx, d, k, friis_num, friis_den, two_ray_num, system_loss, crossover, sens,
                 out_p):
    """Compact the first ``k`` candidates to those received at or above ``sens``."""
    m = 0
    for j in range(k):
        dj = max(d[j], 1e-3)
        if dj < crossover:
            p = friis_num / (friis_den * dj * dj * system_loss)
        else:
            p = two_ray_num / (dj ** 4 * system_loss)
        if p >= sens:
            idx[m] = idx[j]
            d[m] = d[j]
            out_p[m] = p
            m += 1
    return m


@njit(cache=True)
def _freeze_one(i, now, own, contending, idle_since, access_at, backoff, idle_slots, difs, slot):
    if not contending[i] or idle_since[i] < 0:
        return
    if not own and access_at[i] <= now:
        return
    elapsed = now - idle_since[i] - difs
    if elapsed < 0:
        elapsed = 0
    used = min(elapsed // slot, backoff[i])
    backoff[i] -= used
    idle_slots[i] += used
    idle_since[i] = -1
    access_at[i] = NEVER


@njit(cache=True)
def freeze(nodes, now, own, contending, idle_since, access_at, backoff, idle_slots, difs, slot):
    for i in nodes:
        _freeze_one(i, now, own, contending, idle_since, access_at, backoff, idle_slots, difs, slot)


@njit(cache=True)
def tx_start(rx, p, fid, now, lock, lock_power, lock_interf, active_sum, busy_count, transmitting,
             contending, idle_since, access_at, backoff, idle_slots, difs, slot):
    for j in range(rx.size):
        i = rx[j]
        if lock[i] >= 0:
            lock_interf[i] += p[j]
        elif not transmitting[i]:
            lock[i] = fid
            lock_power[i] = p[j]
            lock_interf[i] = active_sum[i]
        active_sum[i] += p[j]
        if busy_count[i] == 0:
            _freeze_one(i, now, False, contending, idle_since, access_at, backoff, idle_slots,
                        difs, slot)
        busy_count[i] += 1


@njit(cache=True)
def tx_end(rx, p, fid, capture, lock, lock_power, lock_interf, active_sum, busy_count, status, quiet):
    """Release ``fid`` at its receivers.

    ``status`` becomes 0 (not locked on this frame), 1 (decoded) or 2 (lost to
    interference); ``quiet`` marks receivers whose medium is now idle.
    """
    for j in range(rx.size):
        i = rx[j]
        active_sum[i] -= p[j]
        busy_count[i] -= 1
        q = busy_count[i] == 0
        if q:
            active_sum[i] = 0.0
        quiet[j] = q
        if lock[i] == fid:
            interf = lock_interf[i]
            status[j] = 1 if interf <= 0.0 or lock_power[i] >= capture * interf else 2
            lock[i] = -1
        else:
            status[j] = 0


@njit(cache=True)
def unfreeze(rx, quiet, now, contending, idle_since, transmitting, busy_count, backoff, access_at,
             difs, slot):
    """Resume idle contenders among the quiet receivers; returns the earliest access time."""
    m = NEVER
    for j in range(rx.size):
        if not quiet[j]:
            continue
        i = rx[j]
        if contending[i] and idle_since[i] < 0 and not transmitting[i] and busy_count[i] == 0:
            idle_since[i] = now
            t = now + difs + backoff[i] * slot
            access_at[i] = t
            if t < m:
                m = t
    return m


@njit(cache=True)
def due_and_next(access_at, now, out_due):
    """Indices whose access time is ``now`` and the smallest access time overall."""
    k = 0
    m = NEVER
    for i in range(access_at.size):
        a = access_at[i]
        if a == now:
            out_due[k] = i
            k += 1
        if a < m:
            m = a
    return k, m


@njit(cache=True)
def earliest(access_at):
    m = NEVER
    for i in range(access_at.size):
        if access_at[i] < m:
            m = access_at[i]
    return m
