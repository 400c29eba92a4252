"""Policy synthesis: relative value iteration and bisection searches.

For a fixed transmission penalty, `rvi_threshold` runs the threshold-
structured relative value iteration (scan the age upward per (s, w, r),
switch to transmit at the first age where it is no worse, keep the transmit
backup above it), while `rvi_plain` is the structure-free oracle used to
validate that restriction. On top of those, `lambda_bisection` searches the
penalty so the policy straddles a target transmission rate and returns the
two-component randomized mixture meeting it exactly; `n_bisection` does the
integer analogue over single-threshold policies without any value
iteration. `delta_cap_selection` picks an age-truncation depth by doubling
until the gain estimate stabilizes.

All rate evaluations inside the searches are closed-form (cycle analysis),
never simulation, so bracket comparisons are noise-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .model import DecoderProfile, SourceChain, SystemState
from .policies import (
    NEVER,
    MultiThresholdPolicy,
    RandomizedMixturePolicy,
    SingleThresholdPolicy,
    mixing_probability,
)
from .renewal import CycleStatistics, evaluate_policy, mixture_statistics

__all__ = [
    "BisectionTrace",
    "PlainRviSolution",
    "RviSolution",
    "SolverError",
    "TraceRow",
    "TruncatedMDP",
    "delta_cap_selection",
    "lambda_bisection",
    "n_bisection",
    "rvi_plain",
    "rvi_threshold",
    "save_trace_csv",
]

DELTA_CAP_START = 32
DELTA_CAP_LIMIT = 2**14
DEFAULT_RVI_TOL = 1e-9
DEFAULT_RVI_MAX_ITER = 100_000

# never-transmit classification: a threshold pinned to the age cap at two
# consecutive doublings, with the gain settled and every other threshold
# frozen, is read as an infinite threshold rather than a truncation artifact
NEVER_MIN_CAP = 128
NEVER_SETTLE_REL = 1e-8

TRACE_SCHEMA = "aoii-harq/solver-trace v1: iteration,parameter,gain,rate,bracket_lo,bracket_hi"


class SolverError(RuntimeError):
    """A solve failed: no convergence, infeasible bracket, or bad inputs."""


@dataclass(frozen=True)
class TruncatedMDP:
    """Age-truncated planning model.

    Ages above `delta_cap` are redirected to `delta_cap` with the rest of
    the state unchanged, which keeps the model finite while preserving the
    behavior of every threshold policy whose thresholds fit under the cap.
    """

    chain: SourceChain
    decoder: DecoderProfile
    delta_cap: int

    def __post_init__(self) -> None:
        if self.delta_cap < 1:
            raise SolverError(f"delta_cap must be >= 1, got {self.delta_cap}")

    def success_by_r(self) -> np.ndarray:
        """Decode probability when transmitting from each packet count r."""
        d = self.decoder
        return np.array(
            [d.success(min(r, d.r_max - 1)) for r in range(d.r_max + 1)], dtype=np.float64
        )

    def value_shape(self) -> tuple[int, int, int, int]:
        n = self.chain.n_states
        return (n, n, self.delta_cap + 1, self.decoder.r_max + 1)

    def valid_mask(self) -> np.ndarray:
        """Boolean mask of meaningful entries in a value array."""
        n, _, _, _ = self.value_shape()
        mask = np.zeros(self.value_shape(), dtype=bool)
        idx = np.arange(n)
        mask[idx, idx, 0, 0] = True
        offdiag = ~np.eye(n, dtype=bool)
        mask[offdiag, 1:, :] = True
        return mask


@dataclass(frozen=True)
class RviSolution:
    """Output of the threshold-structured relative value iteration."""

    value: np.ndarray
    gain: float
    thresholds: MultiThresholdPolicy
    iterations: int
    converged: bool
    span: float
    saturated: bool

    def value_of(self, state: SystemState) -> float:
        return float(self.value[state.s - 1, state.w - 1, state.delta, state.r])


@dataclass(frozen=True)
class PlainRviSolution:
    """Output of the structure-free relative value iteration oracle."""

    value: np.ndarray
    gain: float
    actions: np.ndarray
    iterations: int
    converged: bool
    span: float
    monotone: bool
    thresholds: MultiThresholdPolicy | None
    saturated: bool


def _run_rvi(mdp: TruncatedMDP, lam: float, tol: float, max_iter: int, v0, backend, plain: bool):
    if lam < 0:
        raise SolverError(f"lambda must be >= 0, got {lam}")
    if tol <= 0:
        raise SolverError(f"tol must be > 0, got {tol}")
    kern = _kernels.get_backend() if backend is None else backend
    shape = mdp.value_shape()
    n = shape[0]
    n_r = shape[3]
    cap = mdp.delta_cap

    if v0 is None:
        v = np.zeros(shape, dtype=np.float64)
    else:
        if v0.shape != shape:
            raise SolverError(f"warm start shape {v0.shape} does not match {shape}")
        v = np.array(v0, dtype=np.float64)
    v_new = np.zeros(shape, dtype=np.float64)

    p = np.ascontiguousarray(mdp.chain.transition)
    succ = mdp.success_by_r()
    mask = mdp.valid_mask()
    maskf = mask.astype(np.float64)
    v *= maskf

    if plain:
        act = np.zeros(shape, dtype=np.uint8)
    else:
        n_out = np.zeros((n, n, n_r), dtype=np.int64)

    span = math.inf
    gain = math.nan
    it = 0
    for it in range(1, max_iter + 1):
        if plain:
            kern.rvi_sweep_plain(v, v_new, p, succ, lam, act)
        else:
            kern.rvi_sweep_threshold(v, v_new, p, succ, lam, n_out)
        np.multiply(v_new, maskf, out=v_new)
        diff = v_new[mask] - v[mask]
        span = float(diff.max() - diff.min())
        gain = float(v_new[0, 0, 0, 0])
        np.subtract(v_new, gain, out=v_new)
        np.multiply(v_new, maskf, out=v_new)
        v, v_new = v_new, v
        if span < tol:
            break
    converged = span < tol

    if plain:
        monotone = True
        table = np.full((n, n, n_r), NEVER, dtype=np.float64)
        saturated = False
        for s in range(n):
            for w in range(n):
                if s == w:
                    continue
                for r in range(n_r):
                    col = act[s, w, 1:, r]
                    hits = np.nonzero(col)[0]
                    if hits.size == 0:
                        table[s, w, r] = cap
                        saturated = True
                    else:
                        first = int(hits[0])
                        if not col[first:].all():
                            monotone = False
                        table[s, w, r] = first + 1
                        if first + 1 == cap:
                            saturated = True
        thresholds = MultiThresholdPolicy(table) if monotone else None
        return PlainRviSolution(
            value=v,
            gain=gain,
            actions=act,
            iterations=it,
            converged=converged,
            span=span,
            monotone=monotone,
            thresholds=thresholds,
            saturated=saturated,
        )

    table = np.full((n, n, n_r), NEVER, dtype=np.float64)
    offdiag = ~np.eye(n, dtype=bool)
    table[offdiag, :] = n_out[offdiag, :].astype(np.float64)
    saturated = bool((n_out[offdiag, :] >= cap).any())
    return RviSolution(
        value=v,
        gain=gain,
        thresholds=MultiThresholdPolicy(table),
        iterations=it,
        converged=converged,
        span=span,
        saturated=saturated,
    )


def rvi_threshold(
    mdp: TruncatedMDP,
    lam: float,
    tol: float = DEFAULT_RVI_TOL,
    max_iter: int = DEFAULT_RVI_MAX_ITER,
    v0: np.ndarray | None = None,
    backend=None,
) -> RviSolution:
    """Relative value iteration restricted to threshold-structured policies.

    Jacobi sweeps: every backup reads the previous sweep's values. The
    value is re-anchored at the matched reference state (1,1,0,0) each
    sweep, and iteration stops when the span (max minus min) of successive
    value differences drops below `tol`. A result that hits `max_iter`
    first is returned with `converged=False`, never silently.
    """
    return _run_rvi(mdp, lam, tol, max_iter, v0, backend, plain=False)


def rvi_plain(
    mdp: TruncatedMDP,
    lam: float,
    tol: float = DEFAULT_RVI_TOL,
    max_iter: int = DEFAULT_RVI_MAX_ITER,
    v0: np.ndarray | None = None,
    backend=None,
) -> PlainRviSolution:
    """Structure-free relative value iteration (full min at every state).

    Greedy actions break ties toward transmit at mismatch states and always
    wait at matched states. If the greedy policy is monotone in the age for
    every (s, w, r) slice, `thresholds` carries the equivalent threshold
    policy; otherwise it is None and `monotone` is False. Non-monotone
    instances are real, not numerical: a source state with a strong drift
    into the receiver's current value makes waiting recover for free, and
    the transmit advantage can then shrink with age instead of growing.
    """
    return _run_rvi(mdp, lam, tol, max_iter, v0, backend, plain=True)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    parameter: float
    gain: float
    rate: float
    bracket_lo: float
    bracket_hi: float


@dataclass
class BisectionTrace:
    """Record of one bisection run, exportable as CSV."""

    kind: str
    rows: list[TraceRow] = field(default_factory=list)
    lambda_minus: float = math.nan
    lambda_plus: float = math.nan
    rate_minus: float = math.nan
    rate_plus: float = math.nan
    rho: float = math.nan
    constraint_inactive: bool = False
    warnings: list[str] = field(default_factory=list)

    def log(self, iteration, parameter, gain, rate, lo, hi) -> None:
        self.rows.append(TraceRow(iteration, parameter, gain, rate, lo, hi))


def save_trace_csv(trace: BisectionTrace, path) -> None:
    lines = [f"# schema: {TRACE_SCHEMA}"]
    lines.append("iteration,parameter,gain,rate,bracket_lo,bracket_hi")
    for row in trace.rows:
        lines.append(
            f"{row.iteration},{row.parameter:.12g},{row.gain:.12g},"
            f"{row.rate:.12g},{row.bracket_lo:.12g},{row.bracket_hi:.12g}"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _assert_rate_monotone(rows: list[TraceRow]) -> None:
    # rate(policy at lambda) must be non-increasing in lambda over all probes
    by_lambda = sorted((r.parameter, r.rate) for r in rows)
    for (l1, r1), (l2, r2) in zip(by_lambda, by_lambda[1:]):
        if r2 > r1 + 1e-12:
            raise SolverError(
                f"rate increased with the penalty: rate({l1})={r1!r} < rate({l2})={r2!r}"
            )


def _exact_mixture_rho(
    stats_minus: CycleStatistics,
    stats_plus: CycleStatistics,
    rate_minus: float,
    rate_plus: float,
    target: float,
) -> float:
    """Mixing weight whose closed-form mixture rate hits the target exactly.

    Starts from the two-point formula (exact when both components share one
    embedded cycle-type law) and polishes it against the mixed-chain rate,
    which the formula alone does not pin down in general.
    """
    rho = mixing_probability(rate_minus, rate_plus, target)
    if rho == 0.0 or rho == 1.0 or rate_minus == rate_plus:
        return rho

    def gap(x: float) -> float:
        return mixture_statistics(stats_minus, stats_plus, x).avg_rate - target

    g0 = rate_plus - target
    g1 = rate_minus - target
    if g0 == 0.0:
        return 0.0
    if g1 == 0.0:
        return 1.0
    rho = float(brentq(gap, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    residual = gap(rho)
    if abs(residual) > 1e-9:
        raise SolverError(f"mixture rate missed the target by {residual:.3e}")
    return rho


def _classify_never(sol_prev, cap_prev: int, sol_new, cap_new: int):
    """Read cap-tracking thresholds as infinite, if the doubling signature holds.

    Between the solves at `cap_prev` and `cap_new = 2 * cap_prev`, every
    off-diagonal slice must either keep the same finite threshold or sit
    exactly at the cap in both, and the gain must have stopped moving. When
    that holds, the pinned slices genuinely prefer waiting at every age (a
    strong drift back into the receiver's value makes recovery free), and
    the result is the confirmed table with those entries set to NEVER plus
    the pinned mask. Returns None when the signature does not hold, e.g.
    while a large finite threshold is still resolving.

    A true threshold landing exactly on `cap_new` is indistinguishable from
    never here; the settled gain bounds the cost of that misread by
    NEVER_SETTLE_REL relative.
    """
    if abs(sol_new.gain - sol_prev.gain) > NEVER_SETTLE_REL * max(1.0, abs(sol_prev.gain)):
        return None
    t1 = sol_prev.thresholds.table_array()
    t2 = sol_new.thresholds.table_array()
    off = np.isfinite(t1)
    pinned = off & (t1 == cap_prev) & (t2 == cap_new)
    stable = off & ~pinned & (t1 == t2)
    if not pinned.any() or not np.array_equal(off, pinned | stable):
        return None
    return MultiThresholdPolicy(np.where(pinned, NEVER, t1)), pinned


def _solve_for_rate(
    chain, decoder, lam, cap, cap_fixed, tol_rvi, max_iter, backend, plain, v0, never_hint=None
):
    """One penalty probe: solve, growing the cap while thresholds saturate.

    Saturation resolves one of three ways: the doubled cap uncovers the
    finite thresholds; the doubling signature classifies the pinned slices
    as never-transmit (see `_classify_never`); or the cap would pass
    DELTA_CAP_LIMIT without either, which is an error. `never_hint` is a
    per-search (N, N, r_max+1) mask of slices already classified at a lower
    penalty; since raising the penalty never makes transmitting more
    attractive, those slices skip the confirmation solve.
    """
    prev = None
    while True:
        mdp = TruncatedMDP(chain, decoder, cap)
        if v0 is not None and v0.shape != mdp.value_shape():
            v0 = None
        if plain:
            sol = rvi_plain(mdp, lam, tol_rvi, max_iter, v0=v0, backend=backend)
        else:
            sol = rvi_threshold(mdp, lam, tol_rvi, max_iter, v0=v0, backend=backend)
        if not sol.converged:
            raise SolverError(
                f"value iteration did not converge at lambda={lam} "
                f"(span {sol.span:.3e} after {sol.iterations} sweeps)"
            )
        if plain and not sol.monotone:
            raise SolverError(
                f"plain value iteration produced a non-monotone greedy policy at "
                f"lambda={lam}, cap={cap}; no threshold representation exists"
            )
        if not sol.saturated:
            return sol, cap, None
        if cap_fixed:
            return sol, cap, None
        if never_hint is not None:
            table = sol.thresholds.table_array()
            at_cap = np.isfinite(table) & (table == cap)
            if at_cap.any() and bool(np.all(never_hint[at_cap])):
                policy = MultiThresholdPolicy(np.where(at_cap, NEVER, table))
                return replace(sol, thresholds=policy), cap, None
        if prev is not None and prev[1] >= NEVER_MIN_CAP:
            classified = _classify_never(prev[0], prev[1], sol, cap)
            if classified is not None:
                policy, pinned = classified
                if never_hint is not None:
                    never_hint |= pinned
                # hand back the smaller confirmed solve; its value array
                # warm-starts the next probe at the same cap
                return replace(prev[0], thresholds=policy), prev[1], None
        if 2 * cap > DELTA_CAP_LIMIT:
            raise SolverError(
                f"threshold still at the age cap at {cap}; refusing to grow past "
                f"{DELTA_CAP_LIMIT} (review lambda={lam} and the model)"
            )
        prev = (sol, cap)
        v0 = None
        cap *= 2


def lambda_bisection(
    chain: SourceChain,
    decoder: DecoderProfile,
    target_rate: float,
    delta_cap: int | None = None,
    tol_lambda: float | None = None,
    tol_rvi: float = DEFAULT_RVI_TOL,
    max_iter: int = DEFAULT_RVI_MAX_ITER,
    backend=None,
    plain: bool = False,
) -> tuple[RandomizedMixturePolicy, BisectionTrace]:
    """Penalty search meeting a long-run transmission-rate budget.

    Doubles the penalty until its policy rate drops to the budget, bisects
    the bracket, then mixes the two endpoint policies with the weight that
    makes the closed-form mixture rate equal the budget. With `plain=True`
    the probes use the structure-free oracle instead of the threshold
    iteration (the global reference; requires each greedy policy to be
    threshold-representable, which is checked).

    Slices where waiting beats transmitting at every age (possible when the
    source drifts back into the receiver's value fast enough) come out with
    NEVER thresholds rather than cap-sized ones; see `_classify_never`.
    Slices classified at one penalty skip re-confirmation at higher ones.

    A zero budget is degenerate: the never-transmit policy is returned with
    a warning on the trace. Rates are evaluated in closed form only.
    """
    kind = "lambda-plain" if plain else "lambda"
    trace = BisectionTrace(kind=kind)
    if target_rate == 0.0:
        never = MultiThresholdPolicy.never_transmit(chain.n_states, decoder.r_max)
        trace.warnings.append("target rate 0: never-transmit policy, no search performed")
        trace.rho = 1.0
        trace.lambda_minus = trace.lambda_plus = math.inf
        trace.rate_minus = trace.rate_plus = 0.0
        return RandomizedMixturePolicy(never, never, 1.0), trace
    if not 0.0 < target_rate <= 1.0:
        raise SolverError(f"target rate must be in (0, 1], got {target_rate}")

    cap_fixed = delta_cap is not None
    cap = delta_cap if cap_fixed else DELTA_CAP_START
    iteration = 0
    evals: dict[float, tuple] = {}
    by_table: dict[bytes, object] = {}
    last_v = {"v": None}
    never_hint = np.zeros((chain.n_states, chain.n_states, decoder.r_max + 1), dtype=bool)

    def probe(lam: float, lo: float, hi: float):
        nonlocal cap, iteration
        if lam in evals:
            return evals[lam]
        sol, cap_now, _ = _solve_for_rate(
            chain, decoder, lam, cap, cap_fixed, tol_rvi, max_iter, backend, plain, last_v["v"],
            never_hint=never_hint,
        )
        cap = cap_now
        last_v["v"] = sol.value if sol.value.shape[2] - 1 == cap else None
        policy = sol.thresholds
        # thresholds are piecewise constant in the penalty, so nearby probes
        # often share a table; the cycle analysis is cached on it
        key = policy.table_array().tobytes()
        ev = by_table.get(key)
        if ev is None:
            ev = evaluate_policy(chain, decoder, policy)
            by_table[key] = ev
        iteration += 1
        trace.log(iteration, lam, sol.gain, ev.avg_rate, lo, hi)
        evals[lam] = (policy, ev, sol.gain)
        return evals[lam]

    lam_lo = 0.0
    pol_lo, ev_lo, _ = probe(lam_lo, 0.0, math.nan)
    if ev_lo.avg_rate <= target_rate:
        # the rate constraint never binds: the unpenalized policy is feasible
        trace.constraint_inactive = True
        trace.lambda_minus = trace.lambda_plus = 0.0
        trace.rate_minus = trace.rate_plus = ev_lo.avg_rate
        trace.rho = 1.0
        _assert_rate_monotone(trace.rows)
        return RandomizedMixturePolicy(pol_lo, pol_lo, 1.0), trace

    lam_hi = 1.0
    pol_hi, ev_hi, _ = probe(lam_hi, lam_lo, math.nan)
    while ev_hi.avg_rate > target_rate:
        lam_lo, pol_lo, ev_lo = lam_hi, pol_hi, ev_hi
        lam_hi *= 2.0
        if lam_hi > 1e12:
            raise SolverError("no finite penalty meets the rate budget (bracket blew up)")
        pol_hi, ev_hi, _ = probe(lam_hi, lam_lo, math.nan)

    while lam_hi - lam_lo >= (tol_lambda if tol_lambda is not None else 1e-6 * max(1.0, lam_hi)):
        if not (ev_lo.avg_rate > target_rate >= ev_hi.avg_rate):
            raise SolverError(
                f"bracket invariant broken: rate({lam_lo})={ev_lo.avg_rate}, "
                f"rate({lam_hi})={ev_hi.avg_rate}, target {target_rate}"
            )
        lam_mid = 0.5 * (lam_lo + lam_hi)
        pol_mid, ev_mid, _ = probe(lam_mid, lam_lo, lam_hi)
        if ev_mid.avg_rate > target_rate:
            lam_lo, pol_lo, ev_lo = lam_mid, pol_mid, ev_mid
        else:
            lam_hi, pol_hi, ev_hi = lam_mid, pol_mid, ev_mid

    rho = _exact_mixture_rho(
        ev_lo.cycle_stats, ev_hi.cycle_stats, ev_lo.avg_rate, ev_hi.avg_rate, target_rate
    )
    trace.lambda_minus, trace.lambda_plus = lam_lo, lam_hi
    trace.rate_minus, trace.rate_plus = ev_lo.avg_rate, ev_hi.avg_rate
    trace.rho = rho
    _assert_rate_monotone(trace.rows)
    return RandomizedMixturePolicy(pol_lo, pol_hi, rho), trace


def n_bisection(
    chain: SourceChain,
    decoder: DecoderProfile,
    target_rate: float,
) -> tuple[RandomizedMixturePolicy, BisectionTrace]:
    """Integer bisection over single-threshold policies meeting a rate budget.

    No value iteration: the rate of each candidate threshold comes straight
    from the cycle analysis, and the two neighboring thresholds straddling
    the budget are mixed exactly onto it.
    """
    trace = BisectionTrace(kind="n")
    if target_rate == 0.0:
        never = MultiThresholdPolicy.never_transmit(chain.n_states, decoder.r_max)
        trace.warnings.append("target rate 0: never-transmit policy, no search performed")
        trace.rho = 1.0
        trace.rate_minus = trace.rate_plus = 0.0
        return RandomizedMixturePolicy(never, never, 1.0), trace
    if not 0.0 < target_rate <= 1.0:
        raise SolverError(f"target rate must be in (0, 1], got {target_rate}")

    iteration = 0
    cache: dict[int, object] = {}

    def probe(n: int, lo: float, hi: float):
        nonlocal iteration
        if n not in cache:
            ev = evaluate_policy(chain, decoder, SingleThresholdPolicy(n))
            iteration += 1
            cache[n] = ev
            trace.log(iteration, float(n), math.nan, ev.avg_rate, lo, hi)
        return cache[n]

    n_lo = 1
    ev_lo = probe(n_lo, 1, math.nan)
    if ev_lo.avg_rate <= target_rate:
        trace.constraint_inactive = True
        trace.rate_minus = trace.rate_plus = ev_lo.avg_rate
        trace.rho = 1.0
        pol = SingleThresholdPolicy(1)
        return RandomizedMixturePolicy(pol, pol, 1.0), trace

    n_hi = 2
    ev_hi = probe(n_hi, n_lo, math.nan)
    while ev_hi.avg_rate > target_rate:
        n_lo, ev_lo = n_hi, ev_hi
        n_hi *= 2
        if n_hi > 2**20:
            raise SolverError("no finite threshold meets the rate budget")
        ev_hi = probe(n_hi, n_lo, math.nan)

    while n_hi - n_lo > 1:
        if not (ev_lo.avg_rate > target_rate >= ev_hi.avg_rate):
            raise SolverError(
                f"bracket invariant broken: rate({n_lo})={ev_lo.avg_rate}, "
                f"rate({n_hi})={ev_hi.avg_rate}, target {target_rate}"
            )
        n_mid = (n_lo + n_hi) // 2
        ev_mid = probe(n_mid, n_lo, n_hi)
        if ev_mid.avg_rate > target_rate:
            n_lo, ev_lo = n_mid, ev_mid
        else:
            n_hi, ev_hi = n_mid, ev_mid

    rho = _exact_mixture_rho(
        ev_lo.cycle_stats, ev_hi.cycle_stats, ev_lo.avg_rate, ev_hi.avg_rate, target_rate
    )
    trace.lambda_minus, trace.lambda_plus = float(n_lo), float(n_hi)
    trace.rate_minus, trace.rate_plus = ev_lo.avg_rate, ev_hi.avg_rate
    trace.rho = rho
    return (
        RandomizedMixturePolicy(SingleThresholdPolicy(n_lo), SingleThresholdPolicy(n_hi), rho),
        trace,
    )


def delta_cap_selection(
    chain: SourceChain,
    decoder: DecoderProfile,
    lam: float,
    epsilon: float = 1e-6,
    tol_rvi: float = DEFAULT_RVI_TOL,
    max_iter: int = DEFAULT_RVI_MAX_ITER,
    backend=None,
) -> int:
    """Smallest power-of-two age cap (from 32) whose doubling is inert.

    Doubles the cap until the gain moves by less than
    ``epsilon * max(1, |gain|)`` and no threshold entry changes. Entries
    sitting exactly at the cap in both solves track it rather than change
    with it; they are never-transmit slices (compare `_classify_never`) and
    count as unchanged. Gives up past 2**14.
    """
    if epsilon <= 0:
        raise SolverError(f"epsilon must be > 0, got {epsilon}")
    cap = DELTA_CAP_START
    sol = rvi_threshold(TruncatedMDP(chain, decoder, cap), lam, tol_rvi, max_iter, backend=backend)
    if not sol.converged:
        raise SolverError(f"value iteration did not converge at cap {cap}")
    while True:
        if 2 * cap > DELTA_CAP_LIMIT:
            raise SolverError(
                f"age cap exceeded {DELTA_CAP_LIMIT} without the gain settling; "
                f"review lambda={lam} and the model"
            )
        sol2 = rvi_threshold(
            TruncatedMDP(chain, decoder, 2 * cap), lam, tol_rvi, max_iter, backend=backend
        )
        if not sol2.converged:
            raise SolverError(f"value iteration did not converge at cap {2 * cap}")
        t1 = sol.thresholds.table_array()
        t2 = sol2.thresholds.table_array()
        gain_settled = abs(sol2.gain - sol.gain) < epsilon * max(1.0, abs(sol.gain))
        same_thresholds = np.array_equal(
            np.where(t1 == cap, NEVER, t1), np.where(t2 == 2 * cap, NEVER, t2)
        )
        if gain_settled and same_thresholds:
            return cap
        cap *= 2
        sol = sol2
