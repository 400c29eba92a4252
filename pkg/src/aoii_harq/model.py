"""Markov source, HARQ decoder profile, and the slotted system kernel.

The monitored system is a discrete-time Markov source observed through a
noisy channel with HARQ retransmissions. Its state is the tuple
``(s, w, delta, r)``: current source value, value held at the receiver, age
of incorrect information (AoII, the number of consecutive slots the two have
disagreed), and the number of packets the decoder has already accumulated
for the current sample. Every slot the scheduler waits or transmits, the
channel resolves, the receiver updates, and the source makes one Markov
step; the age resets to zero exactly when the new source value matches the
receiver.

This module owns the single transition-kernel implementation shared by the
planning, closed-form analysis, and simulation layers.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
import yaml

__all__ = [
    "Action",
    "DecoderProfile",
    "LagrangianCostParams",
    "ModelError",
    "SourceChain",
    "StateSpace",
    "SystemState",
    "check_state",
    "enumerate_states",
    "generate_random_source",
    "lagrangian_cost",
    "load_model",
    "parse_model_file",
    "save_model",
    "transition_distribution",
]

#: absolute tolerance for row stochasticity of an in-memory source chain
ROW_SUM_TOL = 1e-12

#: looser tolerance applied when parsing model files (text round-off)
FILE_ROW_SUM_TOL = 1e-9


class ModelError(ValueError):
    """A model object or model file violates its contract."""


class Action(IntEnum):
    WAIT = 0
    TRANSMIT = 1


class SourceChain:
    """An irreducible row-stochastic transition matrix for the source.

    Parameters
    ----------
    transition : array_like, shape (N, N)
        Per-slot transition probabilities ``p[i, j] = P(next=j+1 | cur=i+1)``.
        Rows must sum to 1 within ``1e-12``, entries must lie in [0, 1], and
        the chain must be irreducible (every value reachable from every
        value through positive entries).
    """

    def __init__(self, transition) -> None:
        p = np.array(transition, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise ModelError(f"transition matrix must be square, got shape {p.shape}")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ModelError("transition entries must lie in [0, 1]")
        row_sums = p.sum(axis=1)
        bad = np.nonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL)[0]
        if bad.size:
            raise ModelError(
                f"row {bad[0] + 1} sums to {row_sums[bad[0]]!r}, not 1 within {ROW_SUM_TOL}"
            )
        if not _is_irreducible(p):
            raise ModelError("source chain is not irreducible")
        p.setflags(write=False)
        self._p = p

    @property
    def transition(self) -> np.ndarray:
        return self._p

    @property
    def n_states(self) -> int:
        return self._p.shape[0]

    def __repr__(self) -> str:
        return f"SourceChain(n_states={self.n_states})"


def _is_irreducible(p: np.ndarray) -> bool:
    # reachability closure over positive entries by repeated squaring
    n = p.shape[0]
    reach = (p > 0.0) | np.eye(n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(n))) + 1)):
        reach = (reach.astype(np.uint8) @ reach.astype(np.uint8)) > 0
    return bool(reach.all())


@dataclass(frozen=True)
class DecoderProfile:
    """HARQ decoder: decode probability as a function of packets held.

    ``success(r) = 1 - p_e * c**r`` for ``r`` packets already accumulated,
    so the first transmission of a sample succeeds with ``1 - p_e`` and
    later ones improve geometrically with decay constant ``c``.
    """

    p_e: float
    c: float
    r_max: int

    def __post_init__(self) -> None:
        if not (0.0 < self.p_e < 1.0):
            raise ModelError(f"p_e must be in (0, 1), got {self.p_e}")
        if not (0.0 < self.c <= 1.0):
            raise ModelError(f"c must be in (0, 1], got {self.c}")
        if self.r_max < 1:
            raise ModelError(f"r_max must be >= 1, got {self.r_max}")

    def success(self, r: int) -> float:
        """Decode probability of a transmission made with r packets held."""
        if not 0 <= r <= self.r_max - 1:
            raise ModelError(f"success(r) is defined for 0 <= r <= {self.r_max - 1}, got {r}")
        return 1.0 - self.p_e * self.c**r


@dataclass(frozen=True, order=True)
class SystemState:
    """Joint state (s, w, delta, r); s and w are 1-based source values."""

    s: int
    w: int
    delta: int
    r: int

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.s, self.w, self.delta, self.r)


@dataclass(frozen=True)
class LagrangianCostParams:
    """Transmission penalty added to the per-slot AoII cost."""

    lam: float

    def __post_init__(self) -> None:
        if self.lam < 0.0:
            raise ModelError(f"lambda must be >= 0, got {self.lam}")


def check_state(state: SystemState, n_states: int, r_max: int) -> None:
    """Raise ModelError unless `state` is a valid system state."""
    s, w, delta, r = state.astuple()
    if not (1 <= s <= n_states and 1 <= w <= n_states):
        raise ModelError(f"state {state} has source indices outside 1..{n_states}")
    if not 0 <= r <= r_max:
        raise ModelError(f"state {state} has packet count outside 0..{r_max}")
    if delta < 0:
        raise ModelError(f"state {state} has negative AoII")
    if (s == w) != (delta == 0):
        raise ModelError(f"state {state} violates: AoII is zero exactly when s = w")


def transition_distribution(
    state: SystemState,
    action: Action,
    chain: SourceChain,
    decoder: DecoderProfile,
) -> list[tuple[SystemState, float]]:
    """One-slot successor distribution of the joint (s, w, delta, r) state.

    Wait keeps the receiver value and flushes the decoder buffer. Transmit
    decodes with probability ``decoder.success(min(r, r_max - 1))``; on
    success the receiver adopts the current sample and the buffer empties,
    on failure the buffer grows by one packet, which stays relevant only if
    the source does not move. In all cases the source then makes one Markov
    step and the age increments, or resets to zero if the new source value
    equals the new receiver value.

    Returns
    -------
    list of (SystemState, float)
        All successors with positive probability, merged by identity and
        sorted lexicographically by (s, w, delta, r). Probabilities sum
        to 1 within 1e-12.
    """
    check_state(state, chain.n_states, decoder.r_max)
    s, w, delta, r = state.astuple()
    p = chain.transition
    row = p[s - 1]
    n = chain.n_states
    r_max = decoder.r_max

    out: dict[tuple[int, int, int, int], float] = defaultdict(float)

    def add(s2: int, w2: int, prob: float, r2: int) -> None:
        if prob <= 0.0:
            return
        d2 = 0 if s2 == w2 else delta + 1
        out[(s2, w2, d2, r2)] += prob

    if action == Action.WAIT:
        for s2 in range(1, n + 1):
            add(s2, w, row[s2 - 1], 0)
    elif action == Action.TRANSMIT:
        d = decoder.success(min(r, r_max - 1))
        for s2 in range(1, n + 1):
            # decode success: receiver now holds the transmitted sample s
            add(s2, s, row[s2 - 1] * d, 0)
            # decode failure: receiver keeps w; packets stay relevant only
            # while the source value is unchanged
            r2 = min(r + 1, r_max) if s2 == s else 0
            add(s2, w, row[s2 - 1] * (1.0 - d), r2)
    else:
        raise ModelError(f"unknown action {action!r}")

    return [(SystemState(*key), prob) for key, prob in sorted(out.items())]


def lagrangian_cost(state: SystemState, action: Action, params: LagrangianCostParams) -> float:
    """Per-slot cost: current AoII plus the transmission penalty if used."""
    return float(state.delta) + params.lam * float(int(action))


def generate_random_source(n_states: int, seed: int) -> SourceChain:
    """Random source with the diagonal biased to be the row maximum.

    Each row draws ``n_states`` i.i.d. uniform(0,1) values, normalizes them
    to sum 1, then swaps the largest entry into the diagonal position.
    Deterministic for a given seed.
    """
    if n_states < 2:
        raise ModelError(f"n_states must be >= 2, got {n_states}")
    rng = np.random.default_rng(seed)
    p = rng.random((n_states, n_states))
    p /= p.sum(axis=1, keepdims=True)
    for i in range(n_states):
        j = int(np.argmax(p[i]))
        p[i, i], p[i, j] = p[i, j], p[i, i]
    return SourceChain(p)


@dataclass(frozen=True)
class StateSpace:
    """Stable enumeration of the valid truncated states.

    States are ordered lexicographically by (s, w, delta, r). Matched
    states appear only as (z, z, 0, 0): these are the only zero-AoII states
    reachable under policies that wait whenever source and receiver agree.
    """

    states: tuple[SystemState, ...]
    delta_cap: int
    r_max: int
    n_sources: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {st: k for k, st in enumerate(self.states)})

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def index_of(self, state: SystemState) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise ModelError(f"state {state} is not in the enumerated space") from None

    def state_at(self, k: int) -> SystemState:
        return self.states[k]


def enumerate_states(chain: SourceChain, decoder: DecoderProfile, delta_cap: int) -> StateSpace:
    """Enumerate all valid states with AoII at most `delta_cap`."""
    if delta_cap < 1:
        raise ModelError(f"delta_cap must be >= 1, got {delta_cap}")
    n, r_max = chain.n_states, decoder.r_max
    states = []
    for s in range(1, n + 1):
        for w in range(1, n + 1):
            if s == w:
                states.append(SystemState(s, s, 0, 0))
            else:
                for delta in range(1, delta_cap + 1):
                    for r in range(0, r_max + 1):
                        states.append(SystemState(s, w, delta, r))
    return StateSpace(tuple(states), delta_cap, r_max, n)


# ---------------------------------------------------------------------------
# model files


def parse_model_file(path) -> dict:
    """Parse a model file into a raw dict without validating the numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ModelError(f"{path}: model file must contain a mapping")
    missing = [k for k in ("n_states", "transition", "p_e", "c", "r_max") if k not in raw]
    if missing:
        raise ModelError(f"{path}: missing keys {missing}")
    return raw


def _transition_from_raw(raw: dict, path) -> np.ndarray:
    n = int(raw["n_states"])
    try:
        t = np.array(raw["transition"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{path}: transition matrix is not numeric: {exc}") from None
    if t.ndim == 1:
        if t.size != n * n:
            raise ModelError(f"{path}: flat transition needs {n * n} entries, got {t.size}")
        t = t.reshape(n, n)
    if t.shape != (n, n):
        raise ModelError(f"{path}: transition shape {t.shape} does not match n_states={n}")
    return t


def load_model(path) -> tuple[SourceChain, DecoderProfile]:
    """Load and validate a model file.

    Rows that do not sum to 1 within 1e-9 are rejected unless the file sets
    ``normalize: true``, in which case each row is rescaled to sum exactly 1.
    """
    raw = parse_model_file(path)
    t = _transition_from_raw(raw, path)
    row_sums = t.sum(axis=1)
    if raw.get("normalize", False):
        if np.any(row_sums <= 0.0):
            raise ModelError(f"{path}: cannot normalize a row with non-positive sum")
        t = t / row_sums[:, None]
    else:
        bad = np.nonzero(np.abs(row_sums - 1.0) > FILE_ROW_SUM_TOL)[0]
        if bad.size:
            raise ModelError(
                f"{path}: transition row {bad[0] + 1} sums to {row_sums[bad[0]]!r} "
                f"(off by more than {FILE_ROW_SUM_TOL}); set 'normalize: true' to rescale"
            )
        # remove harmless text round-off so the in-memory tolerance holds
        t = t / row_sums[:, None]
    chain = SourceChain(t)
    decoder = DecoderProfile(p_e=float(raw["p_e"]), c=float(raw["c"]), r_max=int(raw["r_max"]))
    return chain, decoder


def save_model(path, chain: SourceChain, decoder: DecoderProfile) -> None:
    """Write a model file readable by `load_model`."""
    doc = {
        "n_states": chain.n_states,
        "transition": [[float(x) for x in row] for row in chain.transition],
        "p_e": decoder.p_e,
        "c": decoder.c,
        "r_max": decoder.r_max,
    }
    text = yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
    Path(path).write_text(text, encoding="utf-8")
