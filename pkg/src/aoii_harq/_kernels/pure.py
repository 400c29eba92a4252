"""Pure-Python/numpy fallback for the hot kernels.

This module mirrors the compiled extension exactly: the relative-value
sweeps produce the same backups and thresholds, and the simulation loops
consume the random stream draw-for-draw identically, so a trajectory is
bit-for-bit reproducible across backends for a given seed.

Value arrays have shape (N, N, cap+1, r_max+1) indexed [s, w, age, r] with
0-based s and w. Only matched entries [z, z, 0, 0] and mismatch entries
[s, w, age>=1, r] are meaningful; the solver masks everything else.
Simulation state collapses to sid = (s*N + w)*(r_max+1) + r plus the age,
which the transition tables never need (successor (s', w', r') does not
depend on it).
"""

from __future__ import annotations

import numpy as np

NAME = "pure"

_BIG = 2**62  # stands in for "never" inside integer threshold tables


def rvi_sweep_threshold(V, Vnew, P, succ, lam, n_out):
    """One Jacobi sweep of threshold-structured relative value iteration.

    For each (s, w, r) the age axis is scanned upward; the first age where
    the transmit backup is no worse than the wait backup sets the threshold
    and every higher age keeps the transmit backup. Matched states always
    take the wait backup. Writes backups to `Vnew` (mismatch entries and
    the matched plane) and thresholds to `n_out`; entries of `n_out` where
    no crossing happens within the cap are set to the cap.
    """
    n = P.shape[0]
    cap = V.shape[2] - 1
    n_r = V.shape[3]
    idx = np.arange(n)

    # A[w, s2, k]: continuation value after the source lands on s2 while the
    # receiver holds w and the next age index is k
    A = np.ascontiguousarray(np.transpose(V[:, :, :, 0], (1, 0, 2)))
    A[idx, idx, :] = V[idx, idx, 0, 0][:, None]
    G = np.einsum("ab,wbk->awk", P, A)  # receiver keeps w
    H = np.einsum("ab,abk->ak", P, A)  # receiver just decoded s

    Vnew[idx, idx, 0, 0] = G[idx, idx, 1]

    deltas = np.arange(1, cap + 1, dtype=np.float64)
    kp = np.minimum(np.arange(1, cap + 1) + 1, cap)
    g_kp = G[:, :, kp]
    w0 = deltas[None, None, :] + g_kp
    at_kp = np.transpose(A, (1, 0, 2))[:, :, kp]  # value if the receiver held s... see below
    # at_kp[s, w, j] = A[w, s, kp_j] = V[s, w, kp_j, 0] for s != w: the
    # failure branch must swap this r'=0 continuation for the r-accumulating one
    pss = np.diag(P)[:, None, None]
    h_kp = H[:, kp][:, None, :]

    for r in range(n_r):
        d = succ[r]
        r2 = min(r + 1, n_r - 1)
        v_keep = V[:, :, :, r2][:, :, kp]
        v1 = (
            deltas[None, None, :]
            + lam
            + (1.0 - d) * (g_kp - pss * at_kp + pss * v_keep)
            + d * h_kp
        )
        cross = v1 <= w0
        reached = np.logical_or.accumulate(cross, axis=2)
        Vnew[:, :, 1:, r] = np.where(reached, v1, w0)
        first = np.argmax(cross, axis=2)
        n_out[:, :, r] = np.where(cross.any(axis=2), first + 1, cap)


def rvi_sweep_plain(V, Vnew, P, succ, lam, act_out):
    """One Jacobi sweep of unrestricted relative value iteration.

    Full minimum over wait/transmit at every mismatch state, ties toward
    transmit; matched states wait (transmitting there repeats the same
    outcome distribution at extra cost). Writes greedy actions to `act_out`.
    """
    n = P.shape[0]
    cap = V.shape[2] - 1
    n_r = V.shape[3]
    idx = np.arange(n)

    A = np.ascontiguousarray(np.transpose(V[:, :, :, 0], (1, 0, 2)))
    A[idx, idx, :] = V[idx, idx, 0, 0][:, None]
    G = np.einsum("ab,wbk->awk", P, A)
    H = np.einsum("ab,abk->ak", P, A)

    Vnew[idx, idx, 0, 0] = G[idx, idx, 1]
    act_out[idx, idx, 0, 0] = 0

    deltas = np.arange(1, cap + 1, dtype=np.float64)
    kp = np.minimum(np.arange(1, cap + 1) + 1, cap)
    g_kp = G[:, :, kp]
    w0 = deltas[None, None, :] + g_kp
    at_kp = np.transpose(A, (1, 0, 2))[:, :, kp]
    pss = np.diag(P)[:, None, None]
    h_kp = H[:, kp][:, None, :]

    for r in range(n_r):
        d = succ[r]
        r2 = min(r + 1, n_r - 1)
        v_keep = V[:, :, :, r2][:, :, kp]
        v1 = (
            deltas[None, None, :]
            + lam
            + (1.0 - d) * (g_kp - pss * at_kp + pss * v_keep)
            + d * h_kp
        )
        act = v1 <= w0
        Vnew[:, :, 1:, r] = np.where(act, v1, w0)
        act_out[:, :, 1:, r] = act


def simulate_threshold(
    cdf,
    nxt,
    klen,
    match,
    zval,
    n_tab,
    horizon,
    burn_in,
    n_batches,
    batch_len,
    init_sid,
    init_delta,
    generator,
    aoii_batches,
    tx_batches,
    cyc_len,
    cyc_aoii,
    cyc_tx,
    cyc_z,
    cyc_comp,
):
    """Slot loop for a deterministic threshold policy. One uniform per slot."""
    rand = generator.random
    max_cycles = cyc_len.shape[0]
    sid = int(init_sid)
    delta = int(init_delta)
    aoii_sum = 0
    tx_sum = 0
    n_cycles = 0
    n_rec = 0
    cyc_open = False
    t_open = 0
    j_acc = 0
    c_acc = 0
    z_open = 0

    for t in range(horizon):
        if match[sid]:
            if cyc_open:
                if n_rec < max_cycles:
                    cyc_len[n_rec] = t - t_open
                    cyc_aoii[n_rec] = j_acc
                    cyc_tx[n_rec] = c_acc
                    cyc_z[n_rec] = z_open
                    cyc_comp[n_rec] = 0
                    n_rec += 1
                n_cycles += 1
            cyc_open = True
            t_open = t
            j_acc = 0
            c_acc = 0
            z_open = zval[sid]
        act = 1 if delta >= n_tab[sid] else 0
        if t >= burn_in:
            aoii_sum += delta
            tx_sum += act
            b = (t - burn_in) // batch_len
            if b < n_batches:
                aoii_batches[b] += delta
                tx_batches[b] += act
        j_acc += delta
        c_acc += act
        u = rand()
        k = 0
        last = klen[sid, act] - 1
        row = cdf[sid, act]
        while k < last and u >= row[k]:
            k += 1
        sid = int(nxt[sid, act, k])
        delta = 0 if match[sid] else delta + 1

    return aoii_sum, tx_sum, n_cycles, 0, sid, delta, n_rec


def simulate_mixture(
    cdf,
    nxt,
    klen,
    match,
    zval,
    n_minus,
    n_plus,
    rho,
    horizon,
    burn_in,
    n_batches,
    batch_len,
    init_sid,
    init_delta,
    generator,
    aoii_batches,
    tx_batches,
    cyc_len,
    cyc_aoii,
    cyc_tx,
    cyc_z,
    cyc_comp,
):
    """Slot loop for a two-component mixture.

    On every matched slot (entry to the regeneration set) one extra uniform
    picks the component driving the cycle that starts there: minus when the
    draw falls below rho. Draw order per slot: resample first (matched
    slots only), then the transition draw.
    """
    rand = generator.random
    max_cycles = cyc_len.shape[0]
    sid = int(init_sid)
    delta = int(init_delta)
    aoii_sum = 0
    tx_sum = 0
    n_cycles = 0
    minus_cycles = 0
    n_rec = 0
    cyc_open = False
    t_open = 0
    j_acc = 0
    c_acc = 0
    z_open = 0
    comp = 0
    n_tab = n_plus

    for t in range(horizon):
        if match[sid]:
            if cyc_open:
                if n_rec < max_cycles:
                    cyc_len[n_rec] = t - t_open
                    cyc_aoii[n_rec] = j_acc
                    cyc_tx[n_rec] = c_acc
                    cyc_z[n_rec] = z_open
                    cyc_comp[n_rec] = comp
                    n_rec += 1
                n_cycles += 1
                if comp:
                    minus_cycles += 1
            cyc_open = True
            t_open = t
            j_acc = 0
            c_acc = 0
            z_open = zval[sid]
            comp = 1 if rand() < rho else 0
            n_tab = n_minus if comp else n_plus
        act = 1 if delta >= n_tab[sid] else 0
        if t >= burn_in:
            aoii_sum += delta
            tx_sum += act
            b = (t - burn_in) // batch_len
            if b < n_batches:
                aoii_batches[b] += delta
                tx_batches[b] += act
        j_acc += delta
        c_acc += act
        u = rand()
        k = 0
        last = klen[sid, act] - 1
        row = cdf[sid, act]
        while k < last and u >= row[k]:
            k += 1
        sid = int(nxt[sid, act, k])
        delta = 0 if match[sid] else delta + 1

    return aoii_sum, tx_sum, n_cycles, minus_cycles, sid, delta, n_rec


def simulate_periodic(
    cdf,
    nxt,
    klen,
    match,
    zval,
    period,
    init_phase,
    horizon,
    burn_in,
    n_batches,
    batch_len,
    init_sid,
    init_delta,
    generator,
    aoii_batches,
    tx_batches,
    cyc_len,
    cyc_aoii,
    cyc_tx,
    cyc_z,
    cyc_comp,
):
    """Slot loop for the fixed schedule: transmit whenever the phase is 0."""
    rand = generator.random
    max_cycles = cyc_len.shape[0]
    sid = int(init_sid)
    delta = int(init_delta)
    phase = int(init_phase)
    aoii_sum = 0
    tx_sum = 0
    n_cycles = 0
    n_rec = 0
    cyc_open = False
    t_open = 0
    j_acc = 0
    c_acc = 0
    z_open = 0

    for t in range(horizon):
        if match[sid]:
            if cyc_open:
                if n_rec < max_cycles:
                    cyc_len[n_rec] = t - t_open
                    cyc_aoii[n_rec] = j_acc
                    cyc_tx[n_rec] = c_acc
                    cyc_z[n_rec] = z_open
                    cyc_comp[n_rec] = 0
                    n_rec += 1
                n_cycles += 1
            cyc_open = True
            t_open = t
            j_acc = 0
            c_acc = 0
            z_open = zval[sid]
        act = 1 if phase == 0 else 0
        if t >= burn_in:
            aoii_sum += delta
            tx_sum += act
            b = (t - burn_in) // batch_len
            if b < n_batches:
                aoii_batches[b] += delta
                tx_batches[b] += act
        j_acc += delta
        c_acc += act
        u = rand()
        k = 0
        last = klen[sid, act] - 1
        row = cdf[sid, act]
        while k < last and u >= row[k]:
            k += 1
        sid = int(nxt[sid, act, k])
        delta = 0 if match[sid] else delta + 1
        phase += 1
        if phase == period:
            phase = 0

    return aoii_sum, tx_sum, n_cycles, 0, sid, delta, n_rec
