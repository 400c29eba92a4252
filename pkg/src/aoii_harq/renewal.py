"""Closed-form policy evaluation through regeneration-cycle analysis.

A trajectory splits into cycles at the slots where source and receiver
agree (the age is zero). Between two such slots the age ramps 0, 1, 2, ...,
so every long-run average of interest is a ratio of per-cycle expectations:

    avg_aoii = E[sum of age over a cycle] / E[cycle length]
    avg_rate = E[transmissions per cycle] / E[cycle length]

with expectations taken under the stationary law of the embedded chain of
cycle-start types. Per-cycle moments come from an absorbing Markov chain:
transient states are the truncated system states under the policy, and a
cycle ends when the chain hits a matched state. Everything reduces to a
handful of sparse linear solves against I - Q; no matrix is ever inverted
explicitly.

Truncating the age at the largest threshold n_max is lossless because the
policy's action depends only on whether the age clears its threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import Action, DecoderProfile, SourceChain, SystemState, transition_distribution
from .policies import (
    MultiThresholdPolicy,
    PeriodicPolicy,
    PolicyError,
    RandomizedMixturePolicy,
    SingleThresholdPolicy,
)

__all__ = [
    "AbsorbingModel",
    "AnalysisError",
    "CycleStatistics",
    "PolicyEvaluation",
    "build_absorbing_model",
    "build_periodic_absorbing_model",
    "cycle_moments",
    "cycle_statistics",
    "evaluate_policy",
    "evaluate_mixture",
    "mixture_statistics",
    "write_evaluation_report",
]

ROW_SUM_TOL = 1e-10

EVALUATION_SCHEMA = (
    "aoii-harq/evaluation v1: policy_id,R_target,rho,avg_aoii,avg_rate,"
    "cycle_type,e_length,e_cum_aoii,e_transmissions"
)


class AnalysisError(RuntimeError):
    """Numerical or structural failure inside the cycle analysis."""


@dataclass(frozen=True)
class AbsorbingModel:
    """Absorbing-chain view of one policy's regeneration cycles.

    `Q` maps transient states to transient states, `U` maps them to the
    absorbing cycle-end types. Cycle-start types are transient rows listed
    in `start_rows`, aligned with `type_labels` and with the columns of `U`.
    `transmit_mask` marks the transient rows in which the policy transmits.
    `layered` says the rows are ordered so that Q only reaches equal or
    earlier rows (the age layering below), letting I - Q factor without
    column reordering and with essentially no fill.
    """

    Q: sp.csr_matrix
    U: sp.csr_matrix
    start_rows: np.ndarray
    type_labels: tuple
    transmit_mask: np.ndarray
    row_index: dict = field(repr=False)
    delta_cap: int
    layered: bool = False

    @property
    def n_transient(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class CycleStatistics:
    """Per-cycle-type expectations plus the embedded start-type chain."""

    expected_length: np.ndarray
    expected_cum_aoii: np.ndarray
    expected_transmissions: np.ndarray
    embedded_transition: np.ndarray
    embedded_stationary: np.ndarray
    type_labels: tuple


@dataclass(frozen=True)
class PolicyEvaluation:
    """Long-run averages of a policy with the cycle statistics behind them."""

    avg_aoii: float
    avg_rate: float
    cycle_stats: CycleStatistics


def _threshold_value(policy, s: int, w: int, r: int) -> float:
    n = policy.threshold(s, w, r)
    if np.isfinite(n) and n < 1:
        raise PolicyError(f"threshold below 1 at ({s},{w},{r}): {n}")
    return n


def build_absorbing_model(
    chain: SourceChain,
    decoder: DecoderProfile,
    policy,
    truncation_pad: int = 0,
) -> AbsorbingModel:
    """Absorbing chain of a threshold policy with the age truncated losslessly.

    The age index is capped at ``policy.n_max + truncation_pad``; capping
    beyond n_max never changes the induced action, so any pad >= 0 yields
    the same downstream statistics (a property the tests exercise).

    Rows are laid out age-descending (all mismatch states of age cap first,
    then cap-1, ..., then age 1, then the N matched start states). The age
    only grows within a cycle, so every Q entry points at the same or an
    earlier age layer and I - Q is block lower triangular up to the
    self-coupled cap layer: its LU factorization needs no column
    permutation and causes no fill, which is what keeps large caps cheap.
    Hitting a matched state ends the cycle, so those arrivals land in the
    absorbing columns, one per source value.
    """
    if not isinstance(policy, (MultiThresholdPolicy, SingleThresholdPolicy)):
        raise PolicyError(f"cycle analysis needs a threshold policy, got {type(policy).__name__}")
    if truncation_pad < 0:
        raise PolicyError(f"truncation_pad must be >= 0, got {truncation_pad}")

    n = chain.n_states
    r_max = decoder.r_max
    n_r = r_max + 1
    cap = int(policy.n_max) + int(truncation_pad)

    pairs = [(s, w) for s in range(1, n + 1) for w in range(1, n + 1) if s != w]
    pair_pos = {sw: k for k, sw in enumerate(pairs)}
    layer = len(pairs) * n_r  # rows per age layer
    n_mismatch = layer * cap
    n_transient = n_mismatch + n

    def mismatch_row(s: int, w: int, dt: int, r: int) -> int:
        return (cap - dt) * layer + pair_pos[(s, w)] * n_r + r

    def start_row(z: int) -> int:
        return n_mismatch + z - 1

    row_index: dict[tuple[int, int, int, int], int] = {}
    for z in range(1, n + 1):
        row_index[(z, z, 0, 0)] = start_row(z)
    for s, w in pairs:
        for dt in range(1, cap + 1):
            for r in range(n_r):
                row_index[(s, w, dt, r)] = mismatch_row(s, w, dt, r)

    rows_q: list[np.ndarray] = []
    cols_q: list[np.ndarray] = []
    vals_q: list[np.ndarray] = []
    rows_u: list[np.ndarray] = []
    cols_u: list[np.ndarray] = []
    vals_u: list[np.ndarray] = []
    transmit_mask = np.zeros(n_transient, dtype=bool)

    # start rows: matched state, zero age, the policy waits (thresholds >= 1)
    for z in range(1, n + 1):
        dist = transition_distribution(SystemState(z, z, 0, 0), Action.WAIT, chain, decoder)
        row = np.array([start_row(z)], dtype=np.int64)
        for st, p2 in dist:
            if st.s == st.w:
                rows_u.append(row)
                cols_u.append(np.array([st.s - 1], dtype=np.int64))
                vals_u.append(np.array([p2]))
            else:
                rows_q.append(row)
                cols_q.append(np.array([mismatch_row(st.s, st.w, 1, st.r)], dtype=np.int64))
                vals_q.append(np.array([p2]))

    # mismatch rows: the action flips from wait to transmit at the threshold
    for s in range(1, n + 1):
        for w in range(1, n + 1):
            if s == w:
                continue
            for r in range(n_r):
                nv = _threshold_value(policy, s, w, r)
                n_eff = int(nv) if np.isfinite(nv) else cap + 1
                probe = SystemState(s, w, 1, r)
                if n_eff > 1:
                    hi = min(n_eff - 1, cap)
                    row_vec = np.array(
                        [mismatch_row(s, w, dt, r) for dt in range(1, hi + 1)], dtype=np.int64
                    )
                    dist = transition_distribution(probe, Action.WAIT, chain, decoder)
                    succ = [st.astuple() for st, _ in dist]
                    prob = [p2 for _, p2 in dist]
                    # successor age is min(dt + 1, cap), row by row
                    for (s2, w2, _d2, r2), p2 in zip(succ, prob):
                        if s2 == w2:
                            rows_u.append(row_vec)
                            cols_u.append(np.full(row_vec.shape, s2 - 1, dtype=np.int64))
                            vals_u.append(np.full(row_vec.shape, p2))
                        else:
                            dt2 = np.minimum(np.arange(1, hi + 1) + 1, cap)
                            cols = (cap - dt2) * layer + pair_pos[(s2, w2)] * n_r + r2
                            rows_q.append(row_vec)
                            cols_q.append(cols)
                            vals_q.append(np.full(row_vec.shape, p2))
                if n_eff <= cap:
                    row_vec = np.array(
                        [mismatch_row(s, w, dt, r) for dt in range(n_eff, cap + 1)], dtype=np.int64
                    )
                    transmit_mask[row_vec] = True
                    dist = transition_distribution(probe, Action.TRANSMIT, chain, decoder)
                    for st, p2 in dist:
                        s2, w2, _d2, r2 = st.astuple()
                        if s2 == w2:
                            rows_u.append(row_vec)
                            cols_u.append(np.full(row_vec.shape, s2 - 1, dtype=np.int64))
                            vals_u.append(np.full(row_vec.shape, p2))
                        else:
                            dt2 = np.minimum(np.arange(n_eff, cap + 1) + 1, cap)
                            cols = (cap - dt2) * layer + pair_pos[(s2, w2)] * n_r + r2
                            rows_q.append(row_vec)
                            cols_q.append(cols)
                            vals_q.append(np.full(row_vec.shape, p2))

    Q = sp.coo_matrix(
        (np.concatenate(vals_q), (np.concatenate(rows_q), np.concatenate(cols_q))),
        shape=(n_transient, n_transient),
    ).tocsr()
    U = sp.coo_matrix(
        (np.concatenate(vals_u), (np.concatenate(rows_u), np.concatenate(cols_u))),
        shape=(n_transient, n),
    ).tocsr()

    _check_row_sums(Q, U)
    labels = tuple(str(z) for z in range(1, n + 1))
    return AbsorbingModel(
        Q=Q,
        U=U,
        start_rows=np.arange(n_mismatch, n_transient, dtype=np.int64),
        type_labels=labels,
        transmit_mask=transmit_mask,
        row_index=row_index,
        delta_cap=cap,
        layered=True,
    )


def build_periodic_absorbing_model(
    chain: SourceChain,
    decoder: DecoderProfile,
    policy: PeriodicPolicy,
) -> AbsorbingModel:
    """Absorbing chain of the schedule-driven policy.

    The schedule ignores the age, so no age truncation is needed at all;
    the transient state is (s, w, r, phase) and cycles break at every
    matched slot. Because the schedule may transmit while already matched,
    a cycle can start with packets still buffered, so cycle types are
    (z, r, phase) triples rather than source values alone.
    """
    if not isinstance(policy, PeriodicPolicy):
        raise PolicyError(f"expected PeriodicPolicy, got {type(policy).__name__}")
    n = chain.n_states
    n_r = decoder.r_max + 1
    period = policy.period

    types = [(z, r, ph) for z in range(1, n + 1) for r in range(n_r) for ph in range(period)]
    type_pos = {t: k for k, t in enumerate(types)}

    row_index: dict = {}
    rows = []
    for z, r, ph in types:
        row_index[(z, z, r, ph)] = len(rows)
        rows.append((z, z, 0, r, ph))
    for s in range(1, n + 1):
        for w in range(1, n + 1):
            if s == w:
                continue
            for r in range(n_r):
                for ph in range(period):
                    row_index[(s, w, r, ph)] = len(rows)
                    rows.append((s, w, 1, r, ph))
    n_transient = len(rows)

    rq, cq, vq = [], [], []
    ru, cu, vu = [], [], []
    transmit_mask = np.zeros(n_transient, dtype=bool)
    for k, (s, w, delta, r, ph) in enumerate(rows):
        act = Action.TRANSMIT if ph == 0 else Action.WAIT
        transmit_mask[k] = act == Action.TRANSMIT
        ph2 = (ph + 1) % period
        for st, p2 in transition_distribution(SystemState(s, w, delta, r), act, chain, decoder):
            if st.s == st.w:
                ru.append(k)
                cu.append(type_pos[(st.s, st.r, ph2)])
                vu.append(p2)
            else:
                rq.append(k)
                cq.append(row_index[(st.s, st.w, st.r, ph2)])
                vq.append(p2)

    Q = sp.coo_matrix((vq, (rq, cq)), shape=(n_transient, n_transient)).tocsr()
    U = sp.coo_matrix((vu, (ru, cu)), shape=(n_transient, len(types))).tocsr()
    _check_row_sums(Q, U)
    labels = tuple(f"{z}/r{r}/ph{ph}" for z, r, ph in types)
    return AbsorbingModel(
        Q=Q,
        U=U,
        start_rows=np.arange(len(types), dtype=np.int64),
        type_labels=labels,
        transmit_mask=transmit_mask,
        row_index=row_index,
        delta_cap=1,
    )


def _check_row_sums(Q: sp.csr_matrix, U: sp.csr_matrix) -> None:
    sums = np.asarray(Q.sum(axis=1)).ravel() + np.asarray(U.sum(axis=1)).ravel()
    worst = np.abs(sums - 1.0).max() if sums.size else 0.0
    if worst > ROW_SUM_TOL:
        raise AnalysisError(f"[Q|U] rows must sum to 1; worst deviation {worst:.3e}")


def _factorize(model: AbsorbingModel):
    """LU of I - Q, exploiting the age layering when the model has it.

    Layered models are block lower triangular up to the self-coupled cap
    layer, so the natural ordering with diagonal pivots factors with no
    fill; I - Q is an M-matrix with a dominant diagonal, which keeps that
    pivoting stable. Other models go through the default reordering.
    """
    a = (sp.identity(model.n_transient, format="csc") - model.Q).tocsc()
    try:
        if model.layered:
            return splu(a, permc_spec="NATURAL", diag_pivot_thresh=0.0)
        return splu(a)
    except RuntimeError as exc:
        raise AnalysisError(f"I - Q is singular (policy cycles never end?): {exc}") from None


def cycle_moments(model: AbsorbingModel) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of the absorption time from each transient row.

    Solves (I-Q) m = 1 and (I-Q) u = 1 + 2 Q m. `m[h]` is the expected
    number of slots to absorption starting at row h, `u[h]` the expected
    square of that time.
    """
    T = model.n_transient
    lu = _factorize(model)
    ones = np.ones(T)
    m = lu.solve(ones)
    u = lu.solve(ones + 2.0 * model.Q.dot(m))
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(u))):
        raise AnalysisError("non-finite absorption moments; I - Q is effectively singular")
    return m, u


def cycle_statistics(model: AbsorbingModel) -> CycleStatistics:
    """Cycle-type expectations and the embedded chain of cycle starts.

    The expected transmissions per cycle sum the expected visit counts over
    the rows where the policy transmits. Visit counts from a start row are
    one row of the fundamental matrix, obtained by a transposed solve; the
    absorbing hit distribution of those rows forms the embedded transition
    matrix whose stationary law weights all cycle expectations.
    """
    T = model.n_transient
    lu = _factorize(model)
    ones = np.ones(T)
    m = lu.solve(ones)
    u = lu.solve(ones + 2.0 * model.Q.dot(m))

    starts = model.start_rows
    e_len = m[starts]
    e_aoii = (u - m)[starts] / 2.0

    rhs = np.zeros((T, starts.size))
    rhs[starts, np.arange(starts.size)] = 1.0
    visits = lu.solve(rhs, trans="T")  # column j = visit counts from start j
    e_tx = visits.T @ model.transmit_mask.astype(np.float64)

    embedded = np.asarray((model.U.T.dot(visits)).T)
    row_err = np.abs(embedded.sum(axis=1) - 1.0).max()
    if row_err > 1e-8:
        raise AnalysisError(f"embedded chain rows must sum to 1; worst deviation {row_err:.3e}")

    pi = _stationary(embedded)
    return CycleStatistics(
        expected_length=e_len,
        expected_cum_aoii=e_aoii,
        expected_transmissions=e_tx,
        embedded_transition=embedded,
        embedded_stationary=pi,
        type_labels=model.type_labels,
    )


def _stationary(p: np.ndarray) -> np.ndarray:
    """Stationary law of a row-stochastic matrix with one recurrent class."""
    k = p.shape[0]
    a = np.vstack([p.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    if np.any(pi < -1e-9):
        raise AnalysisError(f"embedded chain produced a negative stationary mass {pi.min():.3e}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _ratios(pi, e_len, e_aoii, e_tx) -> tuple[float, float]:
    den = float(pi @ e_len)
    if den <= 0.0:
        raise AnalysisError("expected cycle length must be positive")
    return float(pi @ e_aoii) / den, float(pi @ e_tx) / den


def evaluate_policy(
    chain: SourceChain,
    decoder: DecoderProfile,
    policy,
    truncation_pad: int = 0,
) -> PolicyEvaluation:
    """Closed-form long-run average AoII and transmission rate of a policy."""
    if isinstance(policy, RandomizedMixturePolicy):
        return evaluate_mixture(chain, decoder, policy)
    if isinstance(policy, PeriodicPolicy):
        model = build_periodic_absorbing_model(chain, decoder, policy)
    else:
        model = build_absorbing_model(chain, decoder, policy, truncation_pad)
    stats = cycle_statistics(model)
    if not isinstance(policy, PeriodicPolicy):
        # an irreducible source makes every start type recurrent
        if np.any(stats.embedded_stationary <= 0.0):
            raise AnalysisError("embedded start-type chain is not irreducible")
    avg_aoii, avg_rate = _ratios(
        stats.embedded_stationary,
        stats.expected_length,
        stats.expected_cum_aoii,
        stats.expected_transmissions,
    )
    return PolicyEvaluation(avg_aoii=avg_aoii, avg_rate=avg_rate, cycle_stats=stats)


def mixture_statistics(
    stats_minus: CycleStatistics, stats_plus: CycleStatistics, rho: float
) -> PolicyEvaluation:
    """Combine two components' cycle statistics under resampling weight rho.

    Each cycle independently runs the minus component with probability rho,
    so cycle-start types evolve by the rho-mixed embedded kernel; its
    stationary law weights the rho-mixed per-type cycle expectations.
    """
    if stats_minus.type_labels != stats_plus.type_labels:
        raise AnalysisError("mixture components must share the cycle-type space")
    p_mix = rho * stats_minus.embedded_transition + (1.0 - rho) * stats_plus.embedded_transition
    pi = _stationary(p_mix)
    e_len = rho * stats_minus.expected_length + (1.0 - rho) * stats_plus.expected_length
    e_aoii = rho * stats_minus.expected_cum_aoii + (1.0 - rho) * stats_plus.expected_cum_aoii
    e_tx = rho * stats_minus.expected_transmissions + (1.0 - rho) * stats_plus.expected_transmissions
    avg_aoii, avg_rate = _ratios(pi, e_len, e_aoii, e_tx)
    stats = CycleStatistics(
        expected_length=e_len,
        expected_cum_aoii=e_aoii,
        expected_transmissions=e_tx,
        embedded_transition=p_mix,
        embedded_stationary=pi,
        type_labels=stats_minus.type_labels,
    )
    return PolicyEvaluation(avg_aoii=avg_aoii, avg_rate=avg_rate, cycle_stats=stats)


def evaluate_mixture(
    chain: SourceChain,
    decoder: DecoderProfile,
    mixture: RandomizedMixturePolicy,
) -> PolicyEvaluation:
    """Closed-form averages of a two-component randomized mixture.

    Degenerate weights fall back to the single-component evaluation exactly.
    """
    if mixture.rho == 0.0:
        return evaluate_policy(chain, decoder, mixture.policy_plus)
    if mixture.rho == 1.0:
        return evaluate_policy(chain, decoder, mixture.policy_minus)
    stats_minus = evaluate_policy(chain, decoder, mixture.policy_minus).cycle_stats
    stats_plus = evaluate_policy(chain, decoder, mixture.policy_plus).cycle_stats
    return mixture_statistics(stats_minus, stats_plus, mixture.rho)


def write_evaluation_report(path, entries) -> None:
    """CSV report: one line per cycle type per evaluated policy.

    `entries` is an iterable of (policy_id, r_target, rho, PolicyEvaluation);
    pass None for a field that does not apply. Numbers carry 12 significant
    digits; the first line is the schema comment.
    """

    def fmt(x) -> str:
        return "" if x is None else f"{x:.12g}"

    lines = [f"# schema: {EVALUATION_SCHEMA}"]
    lines.append(
        "policy_id,R_target,rho,avg_aoii,avg_rate,cycle_type,e_length,e_cum_aoii,e_transmissions"
    )
    for policy_id, r_target, rho, ev in entries:
        st = ev.cycle_stats
        for k, label in enumerate(st.type_labels):
            lines.append(
                ",".join(
                    [
                        str(policy_id),
                        fmt(r_target),
                        fmt(rho),
                        fmt(ev.avg_aoii),
                        fmt(ev.avg_rate),
                        label,
                        fmt(st.expected_length[k]),
                        fmt(st.expected_cum_aoii[k]),
                        fmt(st.expected_transmissions[k]),
                    ]
                )
            )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
