"""Compiled per-block hot loop.

One call advances a single trial through up to one chunk of pre-sampled
blocks. All randomness (channel gains, activity uniforms, tie-break uniforms)
is drawn by the caller and consumed positionally, so results never depend on
how blocks are grouped into chunks or on execution order across trials.

The loop mirrors wptsim.engine._step_core step for step; an equivalence test
keeps the two from drifting apart.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# allocation / tally codes duplicated from policy.py (numba wants plain ints)
ALLOC_UNIFORM, ALLOC_SINGLE, ALLOC_PROPORTIONAL = 0, 1, 2


@njit(cache=True, fastmath=False)
def advance_chunk(gains, active_u, tie_u, limit,
                  x, in_outage,
                  cum_arrived, cum_consumed, cum_wasted, cum_forgiven,
                  thresholds, weight_table, votes_per_state,
                  p0, n_per_en, harvest_factor, base_energy, p_active,
                  fb_energy, capacity,
                  prioritized, alloc_code, quorum, exact_mode,
                  n_out,
                  record, rec_states, rec_votes, rec_arrived, rec_consumed,
                  rec_level, rec_alloc):
    """Advance up to ``limit`` blocks or until the outage quorum is met.

    Returns (blocks_processed, outage_count, network_dead). State arrays are
    updated in place. When ``record`` is set, the per-block record arrays are
    filled for the processed range. ``limit`` may be smaller than the sampled
    chunk; the pre-drawn arrays are always full-sized so that the random
    stream position never depends on the caller's block budget.
    """
    B = limit
    K = gains.shape[1]
    MN = gains.shape[2]
    M = MN // n_per_en
    I = votes_per_state.shape[0]
    Jmax = weight_table.shape[1]

    votes = np.empty((K, Jmax), np.int64)
    n_votes = np.zeros(K, np.int64)
    state = np.ones(K, np.int64)
    v = np.zeros(MN, np.float64)
    P = np.empty(MN, np.float64)
    buf = np.empty(MN, np.float64)
    p_min = np.empty(M, np.int64)
    uniform_p = p0 / n_per_en

    if alloc_code == ALLOC_UNIFORM:
        for j in range(MN):
            P[j] = uniform_p

    for b in range(B):
        if alloc_code != ALLOC_UNIFORM:
            # --- battery states at the block boundary, then ranked votes
            for j in range(MN):
                v[j] = 0.0
            for k in range(K):
                if in_outage[k]:
                    n_votes[k] = 0
                    continue
                xk = x[k]
                r = I
                for t in range(1, I + 1):
                    if xk <= thresholds[t]:
                        r = t
                        break
                state[k] = r
                nv = votes_per_state[r - 1]
                n_votes[k] = nv
                if nv > 0:
                    for j in range(MN):
                        buf[j] = gains[b, k, j]
                    for t in range(nv):
                        best = 0
                        bg = -1.0
                        for j in range(MN):
                            if buf[j] > bg:
                                bg = buf[j]
                                best = j
                        votes[k, t] = best
                        buf[best] = -1.0

            # --- tally (optionally restricted to each EN's neediest voters)
            if prioritized:
                for i in range(M):
                    p_min[i] = I + 1
                for k in range(K):
                    if in_outage[k]:
                        continue
                    for t in range(n_votes[k]):
                        i = votes[k, t] // n_per_en
                        if state[k] < p_min[i]:
                            p_min[i] = state[k]
                for k in range(K):
                    if in_outage[k]:
                        continue
                    r = state[k]
                    for t in range(n_votes[k]):
                        j = votes[k, t]
                        if r == p_min[j // n_per_en]:
                            v[j] += weight_table[r - 1, t]
            else:
                for k in range(K):
                    if in_outage[k]:
                        continue
                    r = state[k]
                    for t in range(n_votes[k]):
                        v[votes[k, t]] += weight_table[r - 1, t]

            # --- per-EN allocation
            for i in range(M):
                lo = i * n_per_en
                hi = lo + n_per_en
                vsum = 0.0
                vmax = 0.0
                for j in range(lo, hi):
                    vsum += v[j]
                    if v[j] > vmax:
                        vmax = v[j]
                if vsum <= 0.0:
                    for j in range(lo, hi):
                        P[j] = uniform_p
                elif alloc_code == ALLOC_SINGLE:
                    ties = 0
                    for j in range(lo, hi):
                        P[j] = 0.0
                        if v[j] == vmax:
                            ties += 1
                    pick = int(tie_u[b, i] * ties)
                    if pick >= ties:
                        pick = ties - 1
                    c = 0
                    for j in range(lo, hi):
                        if v[j] == vmax:
                            if c == pick:
                                P[j] = p0
                                break
                            c += 1
                else:
                    for j in range(lo, hi):
                        P[j] = p0 * v[j] / vsum
        else:
            for k in range(K):
                n_votes[k] = 0

        # --- harvest, consumption, battery update
        for k in range(K):
            if in_outage[k]:
                if record:
                    rec_states[b, k] = 0
                    rec_votes[b, k] = 0
                    rec_arrived[b, k] = 0.0
                    rec_consumed[b, k] = 0.0
                    rec_level[b, k] = x[k]
                continue
            q = 0.0
            for j in range(MN):
                q += P[j] * gains[b, k, j]
            q *= harvest_factor
            e = fb_energy * n_votes[k]
            if active_u[b, k] < p_active:
                e += base_energy
            cum_arrived[k] += q
            cum_consumed[k] += e
            if exact_mode:
                raw = x[k] - e + q
                if raw <= 0.0:
                    cum_forgiven[k] += -raw
                    x[k] = 0.0
                    in_outage[k] = True
                    n_out += 1
                elif raw > capacity:
                    cum_wasted[k] += raw - capacity
                    x[k] = capacity
                else:
                    x[k] = raw
            else:
                if x[k] >= capacity:       # harvest blocked this block
                    cum_wasted[k] += q
                    raw = x[k] - e
                else:
                    raw = x[k] - e + q
                x[k] = raw
                if raw <= 0.0:
                    in_outage[k] = True
                    n_out += 1
            if record:
                rec_states[b, k] = state[k] if alloc_code != ALLOC_UNIFORM else 0
                rec_votes[b, k] = n_votes[k]
                rec_arrived[b, k] = q
                rec_consumed[b, k] = e
                rec_level[b, k] = x[k]
        if record:
            for j in range(MN):
                rec_alloc[b, j] = P[j]

        if n_out >= quorum:
            return b + 1, n_out, True

    return B, n_out, False
