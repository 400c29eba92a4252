"""Monte Carlo simulation of transmission policies on the joint chain.

The hot loop lives in the kernels package (compiled extension when
available, numpy/Python fallback otherwise); this module builds the
transition tables both backends share, seeds one independent Philox stream
per replication, and turns raw slot counters into point estimates with
batch-means standard errors.

The simulator tracks the pair state (s, w, r) plus the age. Successor
distributions do not depend on the age, so each (pair state, action) gets
one CDF row, built once per run with plain running sums so that every
backend scans the exact same float values. Cycle boundaries are the slots
where the source and the receiver estimate agree; per-cycle length, age
mass, and transmission counts are recorded up to a configurable budget.

`trace_run` is a slow readable reference that replays the identical random
stream step by step; tests compare it and both kernel backends slot by
slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import (
    Action,
    DecoderProfile,
    SourceChain,
    SystemState,
    transition_distribution,
)
from .policies import (
    MultiThresholdPolicy,
    PeriodicPolicy,
    RandomizedMixturePolicy,
    SingleThresholdPolicy,
)

__all__ = [
    "CycleRecords",
    "SimulationConfig",
    "SimulationError",
    "SimulationResult",
    "SimulationTables",
    "TraceStep",
    "TrajectoryStats",
    "build_tables",
    "replication_generator",
    "run",
    "step",
    "trace_run",
    "write_trace_csv",
]

_BIG = 2**62  # matches the kernels' stand-in for "never transmit"

FEW_CYCLES = 30

TRACE_SCHEMA = "aoii-harq/trajectory v1: t,s,w,delta,r,action"


class SimulationError(RuntimeError):
    """Simulation could not be set up or produced inconsistent output."""


@dataclass(frozen=True)
class SimulationConfig:
    """Run length, seeding and estimator knobs.

    `burn_in=None` discards the first 1% of the horizon. Batch-means
    standard errors use `n_batches` equal slices of the measured window;
    leftover slots still count toward the point estimates.
    """

    horizon: int
    seed: int = 0
    burn_in: int | None = None
    replications: int = 1
    n_batches: int = 50
    max_recorded_cycles: int = 100_000

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise SimulationError(f"horizon must be >= 1, got {self.horizon}")
        if self.replications < 1:
            raise SimulationError(f"replications must be >= 1, got {self.replications}")
        if self.n_batches < 2:
            raise SimulationError(f"n_batches must be >= 2, got {self.n_batches}")
        if self.max_recorded_cycles < 0:
            raise SimulationError("max_recorded_cycles must be >= 0")
        if self.burn_in is not None and not 0 <= self.burn_in < self.horizon:
            raise SimulationError(
                f"burn_in must be in [0, horizon), got {self.burn_in} for horizon {self.horizon}"
            )

    @property
    def resolved_burn_in(self) -> int:
        return self.horizon // 100 if self.burn_in is None else self.burn_in


@dataclass(frozen=True)
class SimulationTables:
    """Per-(pair state, action) successor CDFs shared by every backend."""

    n_states: int
    r_max: int
    cdf: np.ndarray  # (n_sids, 2, k_max) float64, running sums, last entry 1
    nxt: np.ndarray  # (n_sids, 2, k_max) int32 successor pair-state ids
    klen: np.ndarray  # (n_sids, 2) int32 successor counts
    match: np.ndarray  # (n_sids,) uint8, 1 where s == w
    zval: np.ndarray  # (n_sids,) int64, 0-based source index of matched ids

    def sid(self, s: int, w: int, r: int) -> int:
        return ((s - 1) * self.n_states + (w - 1)) * (self.r_max + 1) + r

    @property
    def n_sids(self) -> int:
        return self.n_states * self.n_states * (self.r_max + 1)


def build_tables(chain: SourceChain, decoder: DecoderProfile) -> SimulationTables:
    """Flatten the one-slot kernel into CDF rows over pair states.

    Successor order inside each row follows `transition_distribution`, and
    the running sums are accumulated left to right in plain Python floats
    with the final entry forced to 1, so the compiled and the pure backend
    read byte-identical tables.
    """
    n = chain.n_states
    n_r = decoder.r_max + 1
    n_sids = n * n * n_r

    rows: list[list[list[tuple[int, float]]]] = []
    k_max = 1
    for s in range(1, n + 1):
        for w in range(1, n + 1):
            for r in range(n_r):
                delta = 0 if s == w else 1
                state = SystemState(s, w, delta, r)
                per_action = []
                for action in (Action.WAIT, Action.TRANSMIT):
                    pairs = transition_distribution(state, action, chain, decoder)
                    row = [
                        (((st.s - 1) * n + (st.w - 1)) * n_r + st.r, prob) for st, prob in pairs
                    ]
                    k_max = max(k_max, len(row))
                    per_action.append(row)
                rows.append(per_action)

    cdf = np.ones((n_sids, 2, k_max), dtype=np.float64)
    nxt = np.zeros((n_sids, 2, k_max), dtype=np.int32)
    klen = np.zeros((n_sids, 2), dtype=np.int32)
    for sid, per_action in enumerate(rows):
        for a, row in enumerate(per_action):
            acc = 0.0
            for k, (sid2, prob) in enumerate(row):
                acc += prob
                cdf[sid, a, k] = acc
                nxt[sid, a, k] = sid2
            klen[sid, a] = len(row)
            cdf[sid, a, len(row) - 1] = 1.0

    match = np.zeros(n_sids, dtype=np.uint8)
    zval = np.zeros(n_sids, dtype=np.int64)
    for s in range(1, n + 1):
        for w in range(1, n + 1):
            for r in range(n_r):
                sid = ((s - 1) * n + (w - 1)) * n_r + r
                match[sid] = 1 if s == w else 0
                zval[sid] = s - 1
    return SimulationTables(
        n_states=n, r_max=decoder.r_max, cdf=cdf, nxt=nxt, klen=klen, match=match, zval=zval
    )


def _threshold_sid_table(policy, tables: SimulationTables) -> np.ndarray:
    if isinstance(policy, MultiThresholdPolicy):
        shape = policy.table_array().shape
        want = (tables.n_states, tables.n_states, tables.r_max + 1)
        if shape != want:
            raise SimulationError(f"policy table shape {shape} does not match the model {want}")
    out = np.full(tables.n_sids, _BIG, dtype=np.int64)
    for s in range(1, tables.n_states + 1):
        for w in range(1, tables.n_states + 1):
            if s == w:
                continue
            for r in range(tables.r_max + 1):
                thr = policy.threshold(s, w, r)
                if not math.isinf(thr):
                    out[tables.sid(s, w, r)] = int(thr)
    return out


@dataclass(frozen=True)
class CycleRecords:
    """Per-cycle samples, possibly truncated to the recording budget."""

    length: np.ndarray
    cum_age: np.ndarray
    transmissions: np.ndarray
    start_source: np.ndarray  # 0-based source index at the cycle start
    component: np.ndarray  # 1 where the minus component drove the cycle
    truncated: bool

    def __len__(self) -> int:
        return int(self.length.shape[0])


@dataclass(frozen=True)
class TrajectoryStats:
    """One replication's estimates and diagnostics."""

    avg_aoii: float
    avg_rate: float
    se_aoii: float
    se_rate: float
    slots_measured: int
    batches_used: int
    batch_len: int
    n_cycles: int
    minus_cycles: int
    minus_fraction: float
    minus_fraction_se: float
    cycles: CycleRecords
    final_state: SystemState
    few_cycles: bool


@dataclass(frozen=True)
class SimulationResult:
    """Pooled estimates over replications.

    With one replication the pooled standard errors are that replication's
    batch-means errors; with several they come from the spread of the
    per-replication means.
    """

    replications: tuple[TrajectoryStats, ...]
    avg_aoii: float
    avg_rate: float
    se_aoii: float
    se_rate: float
    n_cycles: int
    minus_fraction: float
    minus_fraction_se: float
    warnings: tuple[str, ...]


def replication_generator(seed: int, rep: int) -> np.random.Generator:
    """Philox stream for one replication; streams never collide across reps."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


def _batch_se(batch_sums: np.ndarray, batches_used: int, batch_len: int) -> float:
    if batches_used < 2 or batch_len == 0:
        return math.nan
    means = batch_sums[:batches_used] / float(batch_len)
    return float(np.std(means, ddof=1) / math.sqrt(batches_used))


def _run_one(kern, tables, policy, config, rep, is_mixture):
    horizon = config.horizon
    burn_in = config.resolved_burn_in
    measured = horizon - burn_in
    batch_len = measured // config.n_batches
    batches_used = config.n_batches if batch_len > 0 else 0

    aoii_batches = np.zeros(config.n_batches, dtype=np.int64)
    tx_batches = np.zeros(config.n_batches, dtype=np.int64)
    m = config.max_recorded_cycles
    cyc_len = np.zeros(m, dtype=np.int64)
    cyc_aoii = np.zeros(m, dtype=np.int64)
    cyc_tx = np.zeros(m, dtype=np.int64)
    cyc_z = np.zeros(m, dtype=np.int64)
    cyc_comp = np.zeros(m, dtype=np.uint8)

    gen = replication_generator(config.seed, rep)
    init_sid = tables.sid(1, 1, 0)
    common = dict(
        horizon=horizon,
        burn_in=burn_in,
        n_batches=config.n_batches,
        batch_len=max(batch_len, 1),
        init_sid=init_sid,
        init_delta=0,
        generator=gen,
        aoii_batches=aoii_batches,
        tx_batches=tx_batches,
        cyc_len=cyc_len,
        cyc_aoii=cyc_aoii,
        cyc_tx=cyc_tx,
        cyc_z=cyc_z,
        cyc_comp=cyc_comp,
    )

    if isinstance(policy, RandomizedMixturePolicy):
        n_minus = _threshold_sid_table(policy.policy_minus, tables)
        n_plus = _threshold_sid_table(policy.policy_plus, tables)
        out = kern.simulate_mixture(
            tables.cdf, tables.nxt, tables.klen, tables.match, tables.zval,
            n_minus, n_plus, policy.rho, **common,
        )
    elif isinstance(policy, PeriodicPolicy):
        out = kern.simulate_periodic(
            tables.cdf, tables.nxt, tables.klen, tables.match, tables.zval,
            policy.period, policy.phase, **common,
        )
    elif isinstance(policy, (MultiThresholdPolicy, SingleThresholdPolicy)):
        n_tab = _threshold_sid_table(policy, tables)
        out = kern.simulate_threshold(
            tables.cdf, tables.nxt, tables.klen, tables.match, tables.zval,
            n_tab, **common,
        )
    else:
        raise SimulationError(f"cannot simulate policies of type {type(policy).__name__}")

    aoii_sum, tx_sum, n_cycles, minus_cycles, sid, delta, n_rec = out
    n_r = tables.r_max + 1
    s = int(sid) // (tables.n_states * n_r) + 1
    w = (int(sid) // n_r) % tables.n_states + 1
    r = int(sid) % n_r
    final_state = SystemState(s, w, int(delta), r)

    records = CycleRecords(
        length=cyc_len[:n_rec].copy(),
        cum_age=cyc_aoii[:n_rec].copy(),
        transmissions=cyc_tx[:n_rec].copy(),
        start_source=cyc_z[:n_rec].copy(),
        component=cyc_comp[:n_rec].copy(),
        truncated=n_rec < n_cycles,
    )
    if is_mixture and n_cycles > 0:
        frac = minus_cycles / n_cycles
        frac_se = math.sqrt(frac * (1.0 - frac) / n_cycles)
    else:
        frac = math.nan
        frac_se = math.nan
    return TrajectoryStats(
        avg_aoii=aoii_sum / measured,
        avg_rate=tx_sum / measured,
        se_aoii=_batch_se(aoii_batches, batches_used, batch_len),
        se_rate=_batch_se(tx_batches, batches_used, batch_len),
        slots_measured=measured,
        batches_used=batches_used,
        batch_len=batch_len,
        n_cycles=int(n_cycles),
        minus_cycles=int(minus_cycles),
        minus_fraction=frac,
        minus_fraction_se=frac_se,
        cycles=records,
        final_state=final_state,
        few_cycles=n_cycles < FEW_CYCLES,
    )


def run(
    chain: SourceChain,
    decoder: DecoderProfile,
    policy,
    config: SimulationConfig,
    backend=None,
) -> SimulationResult:
    """Simulate a policy from the matched start (1, 1, 0, 0).

    Accepts threshold policies (single or per-pair tables), fixed-period
    schedules, and two-component randomized mixtures of threshold policies.
    Every replication gets its own Philox stream derived from the seed, so
    results are reproducible and backend-independent bit for bit.
    """
    kern = _kernels.get_backend() if backend is None else backend
    tables = build_tables(chain, decoder)
    is_mixture = isinstance(policy, RandomizedMixturePolicy)

    reps = tuple(
        _run_one(kern, tables, policy, config, rep, is_mixture)
        for rep in range(config.replications)
    )

    warnings: list[str] = []
    if any(t.few_cycles for t in reps):
        warnings.append(
            f"fewer than {FEW_CYCLES} completed cycles in at least one replication; "
            "estimates may be unreliable"
        )
    if any(t.batches_used == 0 for t in reps):
        warnings.append("measured window shorter than the batch count; no standard errors")

    if len(reps) == 1:
        t = reps[0]
        avg_aoii, se_aoii = t.avg_aoii, t.se_aoii
        avg_rate, se_rate = t.avg_rate, t.se_rate
    else:
        a = np.array([t.avg_aoii for t in reps])
        r = np.array([t.avg_rate for t in reps])
        k = len(reps)
        avg_aoii = float(a.mean())
        avg_rate = float(r.mean())
        se_aoii = float(a.std(ddof=1) / math.sqrt(k))
        se_rate = float(r.std(ddof=1) / math.sqrt(k))

    total_cycles = sum(t.n_cycles for t in reps)
    if is_mixture and total_cycles > 0:
        total_minus = sum(t.minus_cycles for t in reps)
        frac = total_minus / total_cycles
        frac_se = math.sqrt(frac * (1.0 - frac) / total_cycles)
    else:
        frac = math.nan
        frac_se = math.nan

    return SimulationResult(
        replications=reps,
        avg_aoii=avg_aoii,
        avg_rate=avg_rate,
        se_aoii=se_aoii,
        se_rate=se_rate,
        n_cycles=total_cycles,
        minus_fraction=frac,
        minus_fraction_se=frac_se,
        warnings=tuple(warnings),
    )


def step(
    state: SystemState,
    action: Action,
    chain: SourceChain,
    decoder: DecoderProfile,
    u: float,
) -> SystemState:
    """Advance the joint state one slot using a single uniform draw.

    Inverse-CDF sampling over the successor distribution, scanning the same
    running sums the batch simulator uses, so feeding it the same uniforms
    reproduces a simulated trajectory exactly.
    """
    if not 0.0 <= u < 1.0:
        raise SimulationError(f"u must be in [0, 1), got {u}")
    pairs = transition_distribution(state, action, chain, decoder)
    acc = 0.0
    sums = []
    for _, prob in pairs:
        acc += prob
        sums.append(acc)
    sums[-1] = 1.0
    k = 0
    last = len(pairs) - 1
    while k < last and u >= sums[k]:
        k += 1
    return pairs[k][0]


@dataclass(frozen=True)
class TraceStep:
    t: int
    state: SystemState
    action: Action
    next_state: SystemState


def trace_run(
    chain: SourceChain,
    decoder: DecoderProfile,
    policy,
    horizon: int,
    seed: int = 0,
    rep: int = 0,
) -> list[TraceStep]:
    """Readable single-stream reference simulation.

    Replays exactly the random stream of `run` for the same seed and
    replication index: one uniform per slot, plus one more at each matched
    slot for mixtures (drawn before the slot's transition draw).
    """
    gen = replication_generator(seed, rep)
    state = SystemState(1, 1, 0, 0)
    is_mixture = isinstance(policy, RandomizedMixturePolicy)
    is_periodic = isinstance(policy, PeriodicPolicy)
    phase = policy.phase if is_periodic else 0
    active = policy.policy_plus if is_mixture else policy

    out: list[TraceStep] = []
    for t in range(horizon):
        if is_mixture and state.s == state.w:
            u_pick = float(gen.random())
            active = policy.policy_minus if u_pick < policy.rho else policy.policy_plus
        if is_periodic:
            action = Action.TRANSMIT if phase == 0 else Action.WAIT
            phase = (phase + 1) % policy.period
        else:
            thr = active.threshold(state.s, state.w, state.r)
            action = Action.TRANSMIT if state.delta >= thr else Action.WAIT
        nxt = step(state, action, chain, decoder, float(gen.random()))
        out.append(TraceStep(t=t, state=state, action=action, next_state=nxt))
        state = nxt
    return out


def write_trace_csv(steps: list[TraceStep], path) -> None:
    lines = [f"# schema: {TRACE_SCHEMA}", "t,s,w,delta,r,action"]
    for row in steps:
        st = row.state
        lines.append(f"{row.t},{st.s},{st.w},{st.delta},{st.r},{int(row.action)}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
