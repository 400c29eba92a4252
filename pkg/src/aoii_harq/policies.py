"""Transmission policies over the joint (s, w, delta, r) state.

Four families:

* `MultiThresholdPolicy`: transmit once the AoII reaches a threshold that
  may depend on the full (s, w, r) context.
* `SingleThresholdPolicy`: one scalar AoII threshold.
* `RandomizedMixturePolicy`: two stationary components; on every entry to
  the regeneration set (source and receiver agree, nothing buffered) the
  active component is redrawn, with probability `rho` for the minus side.
* `PeriodicPolicy`: transmit on a fixed schedule, blind to the state.

Threshold tables use `NEVER` (infinity) as the marker for "do not transmit
in this context"; matched contexts (s = w) always carry it, since the age
is zero there and all real thresholds are at least 1.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .model import Action, SystemState

__all__ = [
    "NEVER",
    "MultiThresholdPolicy",
    "PeriodicPolicy",
    "PolicyError",
    "RandomizedMixturePolicy",
    "SingleThresholdPolicy",
    "load_policy",
    "mixing_probability",
    "save_policy",
]

#: threshold marker meaning "never transmit in this (s, w, r) context"
NEVER = math.inf

_FORMAT = "aoii-harq-policy"
_VERSION = 1


class PolicyError(ValueError):
    """A policy object, file, or call violates its contract."""


class MultiThresholdPolicy:
    """AoII thresholds n(s, w, r): transmit iff delta >= n(s, w, r).

    Parameters
    ----------
    table : nested sequence, shape (N, N, r_max+1)
        Entry [s-1][w-1][r] is a positive integer threshold, or `NEVER`
        (None is accepted on input) meaning the policy never transmits in
        that context. Diagonal entries (s = w) must be `NEVER`: the age is
        zero there, below every admissible threshold.
    """

    def __init__(self, table) -> None:
        arr = np.array(
            [
                [
                    [NEVER if v is None else float(v) for v in cell]
                    for cell in row
                ]
                for row in table
            ],
            dtype=np.float64,
        )
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] < 1:
            raise PolicyError(f"threshold table must have shape (N, N, r_max+1), got {arr.shape}")
        finite = np.isfinite(arr)
        if finite[np.arange(arr.shape[0]), np.arange(arr.shape[0]), :].any():
            raise PolicyError("diagonal thresholds must be NEVER (the age is zero when s = w)")
        vals = arr[finite]
        if vals.size and (np.any(vals < 1.0) or np.any(vals != np.round(vals))):
            raise PolicyError("finite thresholds must be integers >= 1")
        arr.setflags(write=False)
        self._table = arr

    @property
    def n_sources(self) -> int:
        return self._table.shape[0]

    @property
    def r_max(self) -> int:
        return self._table.shape[2] - 1

    @property
    def n_max(self) -> int:
        """Largest finite threshold; 1 when the policy never transmits."""
        finite = self._table[np.isfinite(self._table)]
        return int(finite.max()) if finite.size else 1

    @classmethod
    def never_transmit(cls, n_sources: int, r_max: int) -> "MultiThresholdPolicy":
        table = [[[None] * (r_max + 1)] * n_sources] * n_sources
        return cls(table)

    def threshold(self, s: int, w: int, r: int) -> float:
        """Threshold for context (s, w, r); NEVER on the diagonal."""
        if not (1 <= s <= self.n_sources and 1 <= w <= self.n_sources and 0 <= r <= self.r_max):
            raise PolicyError(f"context ({s},{w},{r}) outside table bounds")
        return float(self._table[s - 1, w - 1, r])

    def action(self, state: SystemState) -> Action:
        n = self.threshold(state.s, state.w, state.r)
        return Action.TRANSMIT if state.delta >= n else Action.WAIT

    def table_array(self) -> np.ndarray:
        """Read-only (N, N, r_max+1) float array; NEVER entries are inf."""
        return self._table

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiThresholdPolicy) and np.array_equal(
            self._table, other._table
        )

    def __repr__(self) -> str:
        return f"MultiThresholdPolicy(n_sources={self.n_sources}, r_max={self.r_max}, n_max={self.n_max})"


class SingleThresholdPolicy:
    """One scalar AoII threshold: transmit iff delta >= n."""

    def __init__(self, n: int) -> None:
        if not (isinstance(n, (int, np.integer)) and n >= 1):
            raise PolicyError(f"threshold must be an integer >= 1, got {n!r}")
        self.n = int(n)

    @property
    def n_max(self) -> int:
        return self.n

    def threshold(self, s: int, w: int, r: int) -> float:
        return NEVER if s == w else float(self.n)

    def action(self, state: SystemState) -> Action:
        return Action.TRANSMIT if state.delta >= self.n else Action.WAIT

    def __eq__(self, other) -> bool:
        return isinstance(other, SingleThresholdPolicy) and self.n == other.n

    def __repr__(self) -> str:
        return f"SingleThresholdPolicy(n={self.n})"


def _in_regeneration_set(state: SystemState) -> bool:
    return state.s == state.w and state.delta == 0 and state.r == 0


class RandomizedMixturePolicy:
    """Random mixture of two stationary policies, redrawn at regeneration.

    The `active` component drives actions between regenerations; it carries
    per-trajectory state, so never share one instance across concurrent
    trajectories. A fresh instance starts on the plus component; simulations
    starting inside the regeneration set resample immediately anyway.
    """

    def __init__(self, policy_minus, policy_plus, rho: float) -> None:
        if not 0.0 <= rho <= 1.0:
            raise PolicyError(f"rho must be in [0, 1], got {rho}")
        self.policy_minus = policy_minus
        self.policy_plus = policy_plus
        self.rho = float(rho)
        self.active = policy_plus

    def action(self, state: SystemState) -> Action:
        return self.active.action(state)

    def resample(self, state: SystemState, uniform_draw: float):
        """Redraw the active component; only legal inside the regeneration set."""
        if not _in_regeneration_set(state):
            raise PolicyError(f"resample called outside the regeneration set: {state}")
        if not 0.0 <= uniform_draw < 1.0:
            raise PolicyError(f"uniform draw must be in [0, 1), got {uniform_draw}")
        self.active = self.policy_minus if uniform_draw < self.rho else self.policy_plus
        return self.active

    def __repr__(self) -> str:
        return (
            f"RandomizedMixturePolicy(rho={self.rho}, minus={self.policy_minus!r}, "
            f"plus={self.policy_plus!r})"
        )


class PeriodicPolicy:
    """Transmit every `period` slots regardless of the state.

    The phase advances once per slot (the simulator drives it); a phase of
    zero means "scheduled to transmit this slot".
    """

    def __init__(self, period: int, phase: int = 0) -> None:
        if period < 1:
            raise PolicyError(f"period must be >= 1, got {period}")
        if not 0 <= phase < period:
            raise PolicyError(f"phase must be in 0..{period - 1}, got {phase}")
        self.period = int(period)
        self.phase = int(phase)

    @classmethod
    def from_rate(cls, rate: float) -> "PeriodicPolicy":
        if not 0.0 < rate <= 1.0:
            raise PolicyError(f"rate must be in (0, 1], got {rate}")
        return cls(math.ceil(1.0 / rate))

    def action(self, state: SystemState) -> Action:
        return Action.TRANSMIT if self.phase == 0 else Action.WAIT

    def advance(self) -> None:
        self.phase = (self.phase + 1) % self.period

    def __eq__(self, other) -> bool:
        return isinstance(other, PeriodicPolicy) and self.period == other.period

    def __repr__(self) -> str:
        return f"PeriodicPolicy(period={self.period})"


def mixing_probability(rate_minus: float, rate_plus: float, target_rate: float) -> float:
    """Probability of picking the minus component so the mixture meets the rate.

    Requires rate_plus <= target <= rate_minus. Returns
    (target - rate_plus) / (rate_minus - rate_plus) clamped to [0, 1]; when
    the two component rates coincide, either policy alone is feasible and
    the convention is 1 (always the minus component).
    """
    if rate_plus > target_rate or rate_minus < target_rate:
        raise PolicyError(
            f"infeasible bracket: need rate_plus <= target <= rate_minus, got "
            f"({rate_minus}, {rate_plus}, target {target_rate})"
        )
    if rate_minus == rate_plus:
        return 1.0
    rho = (target_rate - rate_plus) / (rate_minus - rate_plus)
    return min(1.0, max(0.0, rho))


# ---------------------------------------------------------------------------
# serialization


def _policy_to_doc(policy) -> dict:
    if isinstance(policy, MultiThresholdPolicy):
        table = [
            [
                [None if math.isinf(v) else int(v) for v in cell]
                for cell in row
            ]
            for row in policy.table_array().tolist()
        ]
        return {
            "class": "multi",
            "n_sources": policy.n_sources,
            "r_max": policy.r_max,
            "thresholds": table,
        }
    if isinstance(policy, SingleThresholdPolicy):
        return {"class": "single", "threshold": policy.n}
    if isinstance(policy, PeriodicPolicy):
        return {"class": "periodic", "period": policy.period}
    if isinstance(policy, RandomizedMixturePolicy):
        return {
            "class": "mixture",
            "rho": policy.rho,
            "policy_minus": _policy_to_doc(policy.policy_minus),
            "policy_plus": _policy_to_doc(policy.policy_plus),
        }
    raise PolicyError(f"cannot serialize policy of type {type(policy).__name__}")


def _policy_from_doc(doc: dict):
    try:
        cls = doc["class"]
        if cls == "multi":
            return MultiThresholdPolicy(doc["thresholds"])
        if cls == "single":
            return SingleThresholdPolicy(doc["threshold"])
        if cls == "periodic":
            return PeriodicPolicy(doc["period"])
        if cls == "mixture":
            return RandomizedMixturePolicy(
                _policy_from_doc(doc["policy_minus"]),
                _policy_from_doc(doc["policy_plus"]),
                doc["rho"],
            )
    except KeyError as exc:
        raise PolicyError(f"policy document missing key {exc}") from None
    raise PolicyError(f"unknown policy class {cls!r}")


def save_policy(policy, path) -> None:
    """Serialize a policy to JSON; `load_policy` restores it exactly."""
    doc = {"format": _FORMAT, "version": _VERSION}
    doc.update(_policy_to_doc(policy))
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_policy(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise PolicyError(f"{path}: not a policy file")
    if doc.get("version") != _VERSION:
        raise PolicyError(f"{path}: unsupported version {doc.get('version')!r}")
    return _policy_from_doc(doc)
