"""Compiled inner loop of the polling simulator.

The kernel walks the timeline cycle by cycle and node by node. Per node
visit: clear the granted packets, record the report, admit up to the
window limit, advance the guard gap. It never draws randomness itself;
arrival instants and service times are consumed from per-node buffers
the driver refills. All exits happen at a checkpoint before any state
for the visit is touched, so the driver can refill or grow buffers and
re-enter with nothing half-done.

Return codes: DONE when all cycles ran, otherwise which resource ran
short (always together with the node index that needs it).
"""

import numpy as np
from numba import njit

DONE = 0
NEED_SERVICE = 1
NEED_ARRIVALS = 2
NEED_RING = 3

# Effective "no cap" for gated nodes; far above any reachable backlog.
GATED_SENTINEL = np.int64(2) ** 62


@njit(cache=True)
def run_cycles(
    n_cycles,
    warmup,
    n_onus,
    guard,
    m_limit,
    state_i,
    state_f,
    ring,
    head,
    count,
    gate_k,
    last_report,
    arr_buf,
    arr_ptr,
    arr_len,
    arr_horizon,
    svc_buf,
    svc_ptr,
    svc_len,
    n_batches,
    wait_sum,
    wait_count,
    inside_sum,
    outside_sum,
    bp_count,
    bp_sum,
    bp_sumsq,
    hist,
    tail_count,
    report_count,
    served,
    arrived,
    cyc_stats,
):
    cap = ring.shape[1]
    hist_cap = hist.shape[1]
    measured = n_cycles - warmup

    c = state_i[0]
    i = state_i[1]
    t = state_f[0]
    cycle_start = state_f[1]

    while c < n_cycles:
        while i < n_onus:
            k = gate_k[i]

            # Checkpoint: make sure the whole visit can commit.
            if svc_len[i] - svc_ptr[i] < k:
                state_i[0] = c
                state_i[1] = i
                state_f[0] = t
                state_f[1] = cycle_start
                return NEED_SERVICE, i
            dur = 0.0
            for j in range(k):
                dur += svc_buf[i, svc_ptr[i] + j]
            t_report = t + dur
            if arr_horizon[i] < t_report:
                state_i[0] = c
                state_i[1] = i
                state_f[0] = t
                state_f[1] = cycle_start
                return NEED_ARRIVALS, i
            n_new = 0
            p = arr_ptr[i]
            while p < arr_len[i] and arr_buf[i, p] <= t_report:
                n_new += 1
                p += 1
            if count[i] - k + n_new > cap:
                state_i[0] = c
                state_i[1] = i
                state_f[0] = t
                state_f[1] = cycle_start
                return NEED_RING, i

            # Commit: serve the granted burst.
            post = c >= warmup
            batch = 0
            if post:
                batch = (c - warmup) * n_batches // measured
            admit = last_report[i]
            s_acc = 0.0
            for j in range(k):
                a = ring[i, head[i]]
                head[i] = (head[i] + 1) % cap
                count[i] -= 1
                s = svc_buf[i, svc_ptr[i]]
                svc_ptr[i] += 1
                start = t + s_acc
                if post:
                    wait_sum[i, batch] += start - a
                    wait_count[i, batch] += 1
                    outside_sum[i] += admit - a
                    inside_sum[i] += start - admit
                served[i] += 1
                s_acc += s
            t = t_report
            if post:
                bp_count[i] += 1
                bp_sum[i] += dur
                bp_sumsq[i] += dur * dur

            # Report instant: flush arrivals, record, admit.
            while arr_ptr[i] < arr_len[i] and arr_buf[i, arr_ptr[i]] <= t_report:
                ring[i, (head[i] + count[i]) % cap] = arr_buf[i, arr_ptr[i]]
                count[i] += 1
                arr_ptr[i] += 1
                arrived[i] += 1
            backlog = count[i]
            if post:
                bin_idx = backlog
                if bin_idx > hist_cap - 1:
                    bin_idx = hist_cap - 1
                hist[i, bin_idx] += 1
                report_count[i] += 1
                if backlog >= m_limit[i]:
                    tail_count[i] += 1
            if backlog < m_limit[i]:
                gate_k[i] = backlog
            else:
                gate_k[i] = m_limit[i]
            last_report[i] = t_report
            t += guard
            i += 1

        if c >= warmup:
            dt = t - cycle_start
            cyc_stats[0] += 1.0
            cyc_stats[1] += dt
            cyc_stats[2] += dt * dt
        cycle_start = t
        c += 1
        i = 0

    state_i[0] = c
    state_i[1] = i
    state_f[0] = t
    state_f[1] = cycle_start
    return DONE, -1
