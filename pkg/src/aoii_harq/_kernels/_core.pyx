# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: relative-value sweeps and slot-level simulation loops.

Semantics mirror `pure.py` exactly; the simulators consume the random
stream draw-for-draw identically, so trajectories are bit-reproducible
across the two backends.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from numpy.random cimport bitgen_t

NAME = "compiled"

cdef const char* _CAPSULE_NAME = "BitGenerator"


cdef bitgen_t* _bitgen(object generator) except NULL:
    capsule = generator.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, _CAPSULE_NAME):
        raise ValueError("generator does not expose a BitGenerator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, _CAPSULE_NAME)


def rvi_sweep_threshold(
    double[:, :, :, ::1] V,
    double[:, :, :, ::1] Vnew,
    const double[:, ::1] P,
    double[::1] succ,
    double lam,
    long long[:, :, ::1] n_out,
):
    """One Jacobi sweep of threshold-structured relative value iteration."""
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t cap = V.shape[2] - 1
    cdef Py_ssize_t n_r = V.shape[3]
    cdef Py_ssize_t s, w, s2, r, dt, k, r2
    cdef double acc, d, v0, v1, pss
    cdef bint found

    g_arr = np.empty((n, n, cap + 1), dtype=np.float64)
    h_arr = np.empty((n, cap + 1), dtype=np.float64)
    cdef double[:, :, ::1] G = g_arr
    cdef double[:, ::1] H = h_arr

    # G[s, w, k]: source steps from s while the receiver holds w and the next
    # age index is k; H[s, k]: same but the receiver just decoded s
    for s in range(n):
        for w in range(n):
            for k in range(cap + 1):
                acc = 0.0
                for s2 in range(n):
                    if s2 == w:
                        acc += P[s, s2] * V[w, w, 0, 0]
                    else:
                        acc += P[s, s2] * V[s2, w, k, 0]
                G[s, w, k] = acc
    for s in range(n):
        for k in range(cap + 1):
            acc = 0.0
            for s2 in range(n):
                if s2 == s:
                    acc += P[s, s2] * V[s, s, 0, 0]
                else:
                    acc += P[s, s2] * V[s2, s, k, 0]
            H[s, k] = acc

    for s in range(n):
        Vnew[s, s, 0, 0] = G[s, s, 1]

    for s in range(n):
        for w in range(n):
            if s == w:
                continue
            pss = P[s, s]
            for r in range(n_r):
                d = succ[r]
                r2 = r + 1
                if r2 > n_r - 1:
                    r2 = n_r - 1
                found = False
                n_out[s, w, r] = cap
                for dt in range(1, cap + 1):
                    k = dt + 1
                    if k > cap:
                        k = cap
                    v1 = dt + lam + (1.0 - d) * (G[s, w, k] - pss * V[s, w, k, 0] + pss * V[s, w, k, r2]) + d * H[s, k]
                    if found:
                        Vnew[s, w, dt, r] = v1
                        continue
                    v0 = dt + G[s, w, k]
                    if v1 <= v0:
                        found = True
                        n_out[s, w, r] = dt
                        Vnew[s, w, dt, r] = v1
                    else:
                        Vnew[s, w, dt, r] = v0


def rvi_sweep_plain(
    double[:, :, :, ::1] V,
    double[:, :, :, ::1] Vnew,
    const double[:, ::1] P,
    double[::1] succ,
    double lam,
    unsigned char[:, :, :, ::1] act_out,
):
    """One Jacobi sweep of unrestricted relative value iteration."""
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t cap = V.shape[2] - 1
    cdef Py_ssize_t n_r = V.shape[3]
    cdef Py_ssize_t s, w, s2, r, dt, k, r2
    cdef double acc, d, v0, v1, pss

    g_arr = np.empty((n, n, cap + 1), dtype=np.float64)
    h_arr = np.empty((n, cap + 1), dtype=np.float64)
    cdef double[:, :, ::1] G = g_arr
    cdef double[:, ::1] H = h_arr

    for s in range(n):
        for w in range(n):
            for k in range(cap + 1):
                acc = 0.0
                for s2 in range(n):
                    if s2 == w:
                        acc += P[s, s2] * V[w, w, 0, 0]
                    else:
                        acc += P[s, s2] * V[s2, w, k, 0]
                G[s, w, k] = acc
    for s in range(n):
        for k in range(cap + 1):
            acc = 0.0
            for s2 in range(n):
                if s2 == s:
                    acc += P[s, s2] * V[s, s, 0, 0]
                else:
                    acc += P[s, s2] * V[s2, s, k, 0]
            H[s, k] = acc

    for s in range(n):
        Vnew[s, s, 0, 0] = G[s, s, 1]
        act_out[s, s, 0, 0] = 0

    for s in range(n):
        for w in range(n):
            if s == w:
                continue
            pss = P[s, s]
            for r in range(n_r):
                d = succ[r]
                r2 = r + 1
                if r2 > n_r - 1:
                    r2 = n_r - 1
                for dt in range(1, cap + 1):
                    k = dt + 1
                    if k > cap:
                        k = cap
                    v0 = dt + G[s, w, k]
                    v1 = dt + lam + (1.0 - d) * (G[s, w, k] - pss * V[s, w, k, 0] + pss * V[s, w, k, r2]) + d * H[s, k]
                    if v1 <= v0:
                        Vnew[s, w, dt, r] = v1
                        act_out[s, w, dt, r] = 1
                    else:
                        Vnew[s, w, dt, r] = v0
                        act_out[s, w, dt, r] = 0


def simulate_threshold(
    double[:, :, ::1] cdf,
    int[:, :, ::1] nxt,
    int[:, ::1] klen,
    unsigned char[::1] match,
    long long[::1] zval,
    long long[::1] n_tab,
    long long horizon,
    long long burn_in,
    long long n_batches,
    long long batch_len,
    long long init_sid,
    long long init_delta,
    object generator,
    long long[::1] aoii_batches,
    long long[::1] tx_batches,
    long long[::1] cyc_len,
    long long[::1] cyc_aoii,
    long long[::1] cyc_tx,
    long long[::1] cyc_z,
    unsigned char[::1] cyc_comp,
):
    """Slot loop for a deterministic threshold policy. One uniform per slot."""
    cdef bitgen_t* rng = _bitgen(generator)
    cdef long long max_cycles = cyc_len.shape[0]
    cdef long long sid = init_sid
    cdef long long delta = init_delta
    cdef long long aoii_sum = 0, tx_sum = 0, n_cycles = 0, n_rec = 0
    cdef long long t_open = 0, j_acc = 0, c_acc = 0, z_open = 0
    cdef bint cyc_open = False
    cdef long long t, b
    cdef int act, k, last
    cdef double u

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
        u = rng.next_double(rng.state)
        k = 0
        last = klen[sid, act] - 1
        while k < last and u >= cdf[sid, act, k]:
            k += 1
        sid = nxt[sid, act, k]
        delta = 0 if match[sid] else delta + 1

    return aoii_sum, tx_sum, n_cycles, 0, sid, delta, n_rec


def simulate_mixture(
    double[:, :, ::1] cdf,
    int[:, :, ::1] nxt,
    int[:, ::1] klen,
    unsigned char[::1] match,
    long long[::1] zval,
    long long[::1] n_minus,
    long long[::1] n_plus,
    double rho,
    long long horizon,
    long long burn_in,
    long long n_batches,
    long long batch_len,
    long long init_sid,
    long long init_delta,
    object generator,
    long long[::1] aoii_batches,
    long long[::1] tx_batches,
    long long[::1] cyc_len,
    long long[::1] cyc_aoii,
    long long[::1] cyc_tx,
    long long[::1] cyc_z,
    unsigned char[::1] cyc_comp,
):
    """Mixture slot loop: an extra uniform per matched slot picks the component."""
    cdef bitgen_t* rng = _bitgen(generator)
    cdef long long max_cycles = cyc_len.shape[0]
    cdef long long sid = init_sid
    cdef long long delta = init_delta
    cdef long long aoii_sum = 0, tx_sum = 0, n_cycles = 0, minus_cycles = 0, n_rec = 0
    cdef long long t_open = 0, j_acc = 0, c_acc = 0, z_open = 0
    cdef bint cyc_open = False
    cdef int comp = 0
    cdef long long thr
    cdef long long t, b
    cdef int act, k, last
    cdef double u

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
            comp = 1 if rng.next_double(rng.state) < rho else 0
        thr = n_minus[sid] if comp else n_plus[sid]
        act = 1 if delta >= thr else 0
        if t >= burn_in:
            aoii_sum += delta
            tx_sum += act
            b = (t - burn_in) // batch_len
            if b < n_batches:
                aoii_batches[b] += delta
                tx_batches[b] += act
        j_acc += delta
        c_acc += act
        u = rng.next_double(rng.state)
        k = 0
        last = klen[sid, act] - 1
        while k < last and u >= cdf[sid, act, k]:
            k += 1
        sid = nxt[sid, act, k]
        delta = 0 if match[sid] else delta + 1

    return aoii_sum, tx_sum, n_cycles, minus_cycles, sid, delta, n_rec


def simulate_periodic(
    double[:, :, ::1] cdf,
    int[:, :, ::1] nxt,
    int[:, ::1] klen,
    unsigned char[::1] match,
    long long[::1] zval,
    long long period,
    long long init_phase,
    long long horizon,
    long long burn_in,
    long long n_batches,
    long long batch_len,
    long long init_sid,
    long long init_delta,
    object generator,
    long long[::1] aoii_batches,
    long long[::1] tx_batches,
    long long[::1] cyc_len,
    long long[::1] cyc_aoii,
    long long[::1] cyc_tx,
    long long[::1] cyc_z,
    unsigned char[::1] cyc_comp,
):
    """Slot loop for the fixed schedule: transmit whenever the phase is 0."""
    cdef bitgen_t* rng = _bitgen(generator)
    cdef long long max_cycles = cyc_len.shape[0]
    cdef long long sid = init_sid
    cdef long long delta = init_delta
    cdef long long phase = init_phase
    cdef long long aoii_sum = 0, tx_sum = 0, n_cycles = 0, n_rec = 0
    cdef long long t_open = 0, j_acc = 0, c_acc = 0, z_open = 0
    cdef bint cyc_open = False
    cdef long long t, b
    cdef int act, k, last
    cdef double u

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
        u = rng.next_double(rng.state)
        k = 0
        last = klen[sid, act] - 1
        while k < last and u >= cdf[sid, act, k]:
            k += 1
        sid = nxt[sid, act, k]
        delta = 0 if match[sid] else delta + 1
        phase += 1
        if phase == period:
            phase = 0

    return aoii_sum, tx_sum, n_cycles, 0, sid, delta, n_rec
