"""Synthesis, analysis and simulation of age-aware transmission policies.

A finite Markov source is tracked over an unreliable channel with decoder
combining; the cost of being wrong grows linearly with how long the
receiver's estimate has disagreed with the source. This package computes
rate-constrained transmission policies (threshold tables via relative
value iteration plus penalty bisection, or single-threshold and periodic
baselines), evaluates any of them in closed form through regenerative
cycle analysis, and cross-checks everything with a Monte Carlo simulator
whose hot loops run in a compiled extension when available.
"""

from ._kernels import HAVE_COMPILED, backend_name
from .model import (
    Action,
    DecoderProfile,
    LagrangianCostParams,
    ModelError,
    SourceChain,
    StateSpace,
    SystemState,
    check_state,
    enumerate_states,
    generate_random_source,
    lagrangian_cost,
    load_model,
    save_model,
    transition_distribution,
)
from .policies import (
    NEVER,
    MultiThresholdPolicy,
    PeriodicPolicy,
    PolicyError,
    RandomizedMixturePolicy,
    SingleThresholdPolicy,
    load_policy,
    mixing_probability,
    save_policy,
)
from .renewal import (
    AnalysisError,
    CycleStatistics,
    PolicyEvaluation,
    build_absorbing_model,
    build_periodic_absorbing_model,
    cycle_statistics,
    evaluate_mixture,
    evaluate_policy,
    mixture_statistics,
    write_evaluation_report,
)
from .simulate import (
    SimulationConfig,
    SimulationError,
    SimulationResult,
    build_tables,
    run,
    step,
    trace_run,
)
from .solver import (
    BisectionTrace,
    PlainRviSolution,
    RviSolution,
    SolverError,
    TruncatedMDP,
    delta_cap_selection,
    lambda_bisection,
    n_bisection,
    rvi_plain,
    rvi_threshold,
    save_trace_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AnalysisError",
    "BisectionTrace",
    "CycleStatistics",
    "DecoderProfile",
    "HAVE_COMPILED",
    "LagrangianCostParams",
    "ModelError",
    "MultiThresholdPolicy",
    "NEVER",
    "PeriodicPolicy",
    "PlainRviSolution",
    "PolicyError",
    "PolicyEvaluation",
    "RandomizedMixturePolicy",
    "RviSolution",
    "SimulationConfig",
    "SimulationError",
    "SimulationResult",
    "SingleThresholdPolicy",
    "SolverError",
    "SourceChain",
    "StateSpace",
    "SystemState",
    "TruncatedMDP",
    "backend_name",
    "build_absorbing_model",
    "build_periodic_absorbing_model",
    "build_tables",
    "check_state",
    "cycle_statistics",
    "delta_cap_selection",
    "enumerate_states",
    "evaluate_mixture",
    "evaluate_policy",
    "generate_random_source",
    "lagrangian_cost",
    "lambda_bisection",
    "load_model",
    "load_policy",
    "mixing_probability",
    "mixture_statistics",
    "n_bisection",
    "rvi_plain",
    "rvi_threshold",
    "run",
    "save_model",
    "save_policy",
    "save_trace_csv",
    "step",
    "trace_run",
    "transition_distribution",
    "write_evaluation_report",
    "__version__",
]
