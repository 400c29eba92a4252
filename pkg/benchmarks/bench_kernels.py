"""Benchmark the compiled kernels against the pure-Python fallback.

Times one batch of value-iteration sweeps and one simulation run per
backend on the same inputs, and prints the speedup. Run from anywhere:

    python3 benchmarks/bench_kernels.py [--n 8] [--cap 64] [--slots 2000000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from aoii_harq import (
    DecoderProfile,
    SimulationConfig,
    SingleThresholdPolicy,
    TruncatedMDP,
    generate_random_source,
)
from aoii_harq import _kernels
from aoii_harq.simulate import run as simulate_run


def time_sweeps(backend, mdp, sweeps: int) -> float:
    shape = mdp.value_shape()
    v = np.zeros(shape)
    v_new = np.zeros(shape)
    p = np.ascontiguousarray(mdp.chain.transition)
    succ = mdp.success_by_r()
    n_out = np.zeros((shape[0], shape[1], shape[3]), dtype=np.int64)
    backend.rvi_sweep_threshold(v, v_new, p, succ, 1.0, n_out)  # warm up
    t0 = time.perf_counter()
    for _ in range(sweeps):
        backend.rvi_sweep_threshold(v, v_new, p, succ, 1.0, n_out)
        v, v_new = v_new, v
    return time.perf_counter() - t0


def time_simulation(backend, chain, decoder, slots: int) -> float:
    policy = SingleThresholdPolicy(3)
    config = SimulationConfig(horizon=slots, seed=7, max_recorded_cycles=0)
    t0 = time.perf_counter()
    simulate_run(chain, decoder, policy, config, backend=backend)
    return time.perf_counter() - t0


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8, help="source states")
    ap.add_argument("--cap", type=int, default=64, help="age truncation")
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--slots", type=int, default=2_000_000)
    args = ap.parse_args()

    chain = generate_random_source(args.n, seed=1)
    decoder = DecoderProfile(p_e=0.5, c=0.5, r_max=3)
    mdp = TruncatedMDP(chain, decoder, args.cap)

    backends = [("pure", _kernels.pure)]
    if _kernels.HAVE_COMPILED:
        backends.append(("compiled", _kernels.compiled))
    else:
        print("compiled extension not available; timing the fallback only")

    sweep_times = {}
    sim_times = {}
    for name, backend in backends:
        sweep_times[name] = time_sweeps(backend, mdp, args.sweeps)
        sim_times[name] = time_simulation(backend, chain, decoder, args.slots)
        print(
            f"{name:>8}: {args.sweeps} sweeps (n={args.n}, cap={args.cap}) in "
            f"{sweep_times[name]:.3f}s | {args.slots:,} slots in {sim_times[name]:.3f}s"
        )

    if len(backends) == 2:
        print(
            f"speedup: sweeps x{sweep_times['pure'] / sweep_times['compiled']:.1f}, "
            f"simulation x{sim_times['pure'] / sim_times['compiled']:.1f}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
