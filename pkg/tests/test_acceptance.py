"""Whole-toolkit acceptance checks over the reference scenarios.

Each test asserts one numbered end-to-end requirement and prints a single
`CRITERION k: PASS/FAIL (...)` line with the measured numbers. Shared
bundles (bisection solves, closed-form evaluations, long simulations) are
built once per session, and the runtime budgets are asserted where stated.
"""

import time

import numpy as np
import pytest

from aoii_harq import (
    NEVER,
    DecoderProfile,
    MultiThresholdPolicy,
    PeriodicPolicy,
    SimulationConfig,
    SingleThresholdPolicy,
    SourceChain,
    TruncatedMDP,
    delta_cap_selection,
    evaluate_policy,
    generate_random_source,
    lambda_bisection,
    n_bisection,
    run,
    rvi_plain,
    rvi_threshold,
)

from conftest import REFERENCE_MATRIX, symmetric_two_state

DECODER = DecoderProfile(p_e=0.5, c=0.5, r_max=2)

# expected first-transmission thresholds for the reference source at R=0.1
# (off-diagonal cells; diagonal entries are placeholders)
EXPECTED_FIRST_ROUND = np.array(
    [
        [0, 6, 9, 8],
        [7, 0, 8, 6],
        [3, 3, 0, 5],
        [7, 5, 8, 0],
    ],
    dtype=float,
)

# analyzer-vs-simulator instances: (n_states, generator seed)
C3_SOURCES = (
    (4, 101),
    (4, 102),
    (4, 103),
    (4, 104),
    (4, 105),
    (8, 201),
    (8, 202),
    (8, 203),
    (8, 204),
    (8, 205),
)
# penalties kept small so every induced policy transmits at a rate the
# Monte-Carlo horizon can resolve; a starved policy (rate ~1e-4 and below)
# makes the relative agreement bound unmeasurable at this horizon
C3_LAMBDAS = (0.1, 0.5)
C3_HORIZON = 10_000_000

# dominance-curve instances: one source per size, rates across the band
C6_SEEDS = {4: 11, 8: 21, 16: 31}
C6_RATES = (0.05, 0.1, 0.2, 0.35, 0.5)


def _report(k: int, ok: bool, detail: str) -> str:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    return line


def _rvi_policy(chain, lam):
    """Solve at the auto-selected cap and read cap-pinned slices as never."""
    cap = delta_cap_selection(chain, DECODER, lam)
    sol = rvi_threshold(TruncatedMDP(chain, DECODER, cap), lam=lam)
    table = sol.thresholds.table_array()
    policy = MultiThresholdPolicy(np.where(table == cap, NEVER, table))
    return policy, cap, sol.gain


@pytest.fixture(scope="session")
def c1_results():
    chain = SourceChain(REFERENCE_MATRIX)
    t0 = time.monotonic()
    multi = lambda_bisection(chain, DECODER, 0.1)
    single = n_bisection(chain, DECODER, 0.1)
    duration = time.monotonic() - t0
    return {"chain": chain, "multi": multi, "single": single, "duration": duration}


@pytest.fixture(scope="session")
def c2_results():
    chain = SourceChain(REFERENCE_MATRIX)
    t0 = time.monotonic()
    cap = delta_cap_selection(chain, DECODER, 8.0)
    mdp = TruncatedMDP(chain, DECODER, cap)
    restricted = rvi_threshold(mdp, lam=8.0)
    plain = rvi_plain(mdp, lam=8.0)
    duration = time.monotonic() - t0
    return {
        "chain": chain,
        "cap": cap,
        "restricted": restricted,
        "plain": plain,
        "duration": duration,
    }


@pytest.fixture(scope="session")
def c3_bundle():
    t0 = time.monotonic()
    entries = []
    for n, seed in C3_SOURCES:
        chain = generate_random_source(n, seed=seed)
        policies = [(f"single-{k}", SingleThresholdPolicy(k)) for k in (1, 3, 8)]
        rvi = {}
        for lam in C3_LAMBDAS:
            policy, cap, gain = _rvi_policy(chain, lam)
            rvi[lam] = {"policy": policy, "cap": cap, "gain": gain}
            policies.append((f"rvi-lam-{lam:g}", policy))
        rows = []
        for k, (label, policy) in enumerate(policies):
            closed = evaluate_policy(chain, DECODER, policy)
            config = SimulationConfig(horizon=C3_HORIZON, seed=9000 + 10 * seed + k)
            sim = run(chain, DECODER, policy, config)
            rows.append({"label": label, "policy": policy, "closed": closed, "sim": sim})
        entries.append({"n": n, "seed": seed, "chain": chain, "rvi": rvi, "rows": rows})
    return {"entries": entries, "duration": time.monotonic() - t0}


@pytest.fixture(scope="session")
def c6_bundle():
    t0 = time.monotonic()
    cells = []
    for n in sorted(C6_SEEDS):
        chain = generate_random_source(n, seed=C6_SEEDS[n])
        for rate in C6_RATES:
            multi = lambda_bisection(chain, DECODER, rate)
            single = n_bisection(chain, DECODER, rate)
            plain = lambda_bisection(chain, DECODER, rate, plain=True)
            periodic = PeriodicPolicy.from_rate(rate)
            aoii = {
                "multi": evaluate_policy(chain, DECODER, multi[0]).avg_aoii,
                "single": evaluate_policy(chain, DECODER, single[0]).avg_aoii,
                "plain": evaluate_policy(chain, DECODER, plain[0]).avg_aoii,
                "periodic": evaluate_policy(chain, DECODER, periodic).avg_aoii,
            }
            cells.append(
                {
                    "n": n,
                    "rate": rate,
                    "chain": chain,
                    "multi": multi,
                    "single": single,
                    "plain": plain,
                    "aoii": aoii,
                }
            )
    return {"cells": cells, "duration": time.monotonic() - t0}


def _mixture_registry(c1_results, c6_bundle):
    """Every rate-constrained solve produced by the other criteria."""
    entries = [
        ("reference-multi", c1_results["chain"], 0.1) + c1_results["multi"],
        ("reference-single", c1_results["chain"], 0.1) + c1_results["single"],
    ]
    for cell in c6_bundle["cells"]:
        for family in ("multi", "single", "plain"):
            mix, trace = cell[family]
            label = f"{family}-N{cell['n']}-R{cell['rate']:g}"
            entries.append((label, cell["chain"], cell["rate"], mix, trace))
    return entries


def test_criterion_01(c1_results):
    multi_mix, _ = c1_results["multi"]
    single_mix, _ = c1_results["single"]
    table = multi_mix.policy_plus.table_array()[:, :, 0]
    off = ~np.eye(4, dtype=bool)
    deviations = np.abs(table - EXPECTED_FIRST_ROUND)
    bad = [
        f"({s + 1},{w + 1})={table[s, w]:g} vs {EXPECTED_FIRST_ROUND[s, w]:g}"
        for s in range(4)
        for w in range(4)
        if s != w and deviations[s, w] > 1.0
    ]
    n_plus = single_mix.policy_plus.n
    duration = c1_results["duration"]
    ok = not bad and abs(n_plus - 8) <= 1 and duration < 60.0
    detail = (
        f"{len(bad)} cells off by >1: {'; '.join(bad) if bad else 'none'}; "
        f"single n+={n_plus} (want 8 +/- 1); {duration:.1f}s"
    )
    _report(1, ok, detail)
    assert ok, detail


def test_criterion_02(c2_results):
    restricted = c2_results["restricted"]
    plain = c2_results["plain"]
    cap = c2_results["cap"]
    n = c2_results["chain"].n_states
    tables_equal = plain.thresholds is not None and np.array_equal(
        restricted.thresholds.table_array(), plain.thresholds.table_array()
    )
    ages = np.arange(cap + 1, dtype=float)
    derived = ages[None, None, :, None] >= restricted.thresholds.table_array()[:, :, None, :]
    off = ~np.eye(n, dtype=bool)
    agree = bool(
        np.array_equal(derived[off][:, 1:, :], plain.actions[off][:, 1:, :] == 1)
    )
    duration = c2_results["duration"]
    ok = plain.monotone and tables_equal and agree and duration < 60.0
    detail = (
        f"plain monotone={plain.monotone}, tables equal={tables_equal}, "
        f"actions agree={agree}; {duration:.1f}s"
    )
    _report(2, ok, detail)
    assert ok, detail


def test_criterion_03(c3_bundle):
    worst_z = 0.0
    worst_rel = 0.0
    failures = []
    for entry in c3_bundle["entries"]:
        for row in entry["rows"]:
            closed, sim = row["closed"], row["sim"]
            pairs = (
                ("aoii", closed.avg_aoii, sim.avg_aoii, sim.se_aoii),
                ("rate", closed.avg_rate, sim.avg_rate, sim.se_rate),
            )
            for metric, ref, est, se in pairs:
                diff = abs(est - ref)
                z = diff / se if se > 0.0 else np.inf if diff > 0.0 else 0.0
                rel = diff / abs(ref)
                worst_z = max(worst_z, z)
                worst_rel = max(worst_rel, rel)
                if z > 3.0 or rel > 0.01:
                    failures.append(
                        f"N{entry['n']} seed {entry['seed']} {row['label']} "
                        f"{metric}: z={z:.2f} rel={rel:.4f}"
                    )
    duration = c3_bundle["duration"]
    ok = not failures and duration < 600.0
    detail = (
        f"50 policy evaluations, worst z={worst_z:.2f} (limit 3), "
        f"worst rel={worst_rel * 100:.3f}% (limit 1%); {duration:.1f}s"
        + (f"; failures: {'; '.join(failures)}" if failures else "")
    )
    _report(3, ok, detail)
    assert ok, detail


def test_criterion_04():
    worst = 0.0
    for q in (0.1, 0.25, 0.5):
        chain = symmetric_two_state(q)
        policy = MultiThresholdPolicy.never_transmit(2, DECODER.r_max)
        ev = evaluate_policy(chain, DECODER, policy)
        stats = ev.cycle_stats
        e_len = float(stats.embedded_stationary @ stats.expected_length)
        worst = max(
            worst,
            abs(e_len - 2.0),
            abs(ev.avg_aoii - 1.0 / (2.0 * q)),
            abs(ev.avg_rate),
        )
    ok = worst <= 1e-10
    detail = f"max |analyzer - closed form| = {worst:.2e} over q in (0.1, 0.25, 0.5)"
    _report(4, ok, detail)
    assert ok, detail


def test_criterion_05(c1_results, c6_bundle):
    checked = 0
    worst_rate_err = 0.0
    worst_z = 0.0
    failures = []
    for i, (label, chain, target, mix, trace) in enumerate(
        _mixture_registry(c1_results, c6_bundle)
    ):
        if trace.constraint_inactive or not 0.0 < trace.rho < 1.0:
            continue
        checked += 1
        rate_err = abs(evaluate_policy(chain, DECODER, mix).avg_rate - target)
        worst_rate_err = max(worst_rate_err, rate_err)
        if rate_err > 1e-9:
            failures.append(f"{label}: closed-form rate off by {rate_err:.2e}")
        config = SimulationConfig(horizon=4_000_000, seed=31_000 + i)
        sim = run(chain, DECODER, mix, config)
        z_rate = abs(sim.avg_rate - target) / sim.se_rate
        z_rho = abs(sim.minus_fraction - trace.rho) / sim.minus_fraction_se
        worst_z = max(worst_z, z_rate, z_rho)
        if z_rate > 3.0 or z_rho > 3.0:
            failures.append(f"{label}: z_rate={z_rate:.2f} z_rho={z_rho:.2f}")
    ok = checked > 0 and not failures
    detail = (
        f"{checked} mixtures with rho in (0,1); worst closed-form rate error "
        f"{worst_rate_err:.2e} (limit 1e-9); worst simulation z={worst_z:.2f} (limit 3)"
        + (f"; failures: {'; '.join(failures)}" if failures else "")
    )
    _report(5, ok, detail)
    assert ok, detail


def test_criterion_06(c6_bundle):
    worst_gap = 0.0
    failures = []
    for cell in c6_bundle["cells"]:
        a = cell["aoii"]
        where = f"N{cell['n']} R{cell['rate']:g}"
        if a["multi"] > a["single"] + 1e-9:
            failures.append(f"{where}: multi {a['multi']:.6f} > single {a['single']:.6f}")
        if a["single"] > a["periodic"] + 1e-9:
            failures.append(
                f"{where}: single {a['single']:.6f} > periodic {a['periodic']:.6f}"
            )
        gap = abs(a["multi"] - a["plain"]) / a["plain"]
        worst_gap = max(worst_gap, gap)
        if gap > 0.02:
            failures.append(f"{where}: gap to plain oracle {gap * 100:.2f}%")
    duration = c6_bundle["duration"]
    ok = not failures and duration < 1800.0
    detail = (
        f"{len(c6_bundle['cells'])} cells, dominance multi <= single <= periodic; "
        f"worst oracle gap {worst_gap * 100:.3f}% (limit 2%); {duration:.1f}s"
        + (f"; failures: {'; '.join(failures)}" if failures else "")
    )
    _report(6, ok, detail)
    assert ok, detail


def test_criterion_07(c1_results, c2_results, c3_bundle, c6_bundle):
    tables = []
    single_ns = []
    multi_c1, _ = c1_results["multi"]
    single_c1, _ = c1_results["single"]
    tables += [multi_c1.policy_minus, multi_c1.policy_plus]
    single_ns += [single_c1.policy_minus.n, single_c1.policy_plus.n]
    tables.append(c2_results["restricted"].thresholds)
    for entry in c3_bundle["entries"]:
        for row in entry["rows"]:
            policy = row["policy"]
            if isinstance(policy, SingleThresholdPolicy):
                single_ns.append(policy.n)
            else:
                tables.append(policy)
    for cell in c6_bundle["cells"]:
        for family in ("multi", "plain"):
            mix, _ = cell[family]
            tables += [mix.policy_minus, mix.policy_plus]
        mix, _ = cell["single"]
        single_ns += [mix.policy_minus.n, mix.policy_plus.n]
    bad = 0
    for policy in tables:
        table = policy.table_array()
        n = table.shape[0]
        diag = table[np.arange(n), np.arange(n), :]
        finite = table[np.isfinite(table)]
        if not np.isinf(diag).all() or (finite < 1.0).any():
            bad += 1
    bad += sum(1 for n in single_ns if n < 1)
    plain = c2_results["plain"]
    z = np.arange(c2_results["chain"].n_states)
    zero_age_ok = bool((plain.actions[z, z, 0, :] == 0).all())
    ok = bad == 0 and zero_age_ok
    detail = (
        f"{len(tables)} threshold tables and {len(single_ns)} single thresholds "
        f"checked, {bad} violations; plain solver waits at zero age: {zero_age_ok}"
    )
    _report(7, ok, detail)
    assert ok, detail


def test_criterion_08(c1_results, c3_bundle, c6_bundle):
    multi_c1, _ = c1_results["multi"]
    entry_101 = c3_bundle["entries"][0]
    entry_201 = next(e for e in c3_bundle["entries"] if e["seed"] == 201)
    cell_16 = next(
        c for c in c6_bundle["cells"] if c["n"] == 16 and c["rate"] == 0.2
    )
    cases = [
        ("reference plus", c1_results["chain"], multi_c1.policy_plus),
        ("reference minus", c1_results["chain"], multi_c1.policy_minus),
        ("N4 seed 101 rvi lam=0.5", entry_101["chain"], entry_101["rvi"][0.5]["policy"]),
        ("N8 seed 201 single 3", entry_201["chain"], SingleThresholdPolicy(3)),
        ("two-state never", symmetric_two_state(0.25), MultiThresholdPolicy.never_transmit(2, DECODER.r_max)),
        ("N16 multi plus R0.2", cell_16["chain"], cell_16["multi"][0].policy_plus),
    ]
    worst = 0.0
    failures = []
    for label, chain, policy in cases:
        base = evaluate_policy(chain, DECODER, policy, truncation_pad=0)
        for pad in (1, 5, 20):
            padded = evaluate_policy(chain, DECODER, policy, truncation_pad=pad)
            dev = max(
                abs(padded.avg_aoii - base.avg_aoii),
                abs(padded.avg_rate - base.avg_rate),
            )
            worst = max(worst, dev)
            if dev > 1e-10:
                failures.append(f"{label} pad +{pad}: {dev:.2e}")
    ok = not failures
    detail = (
        f"{len(cases)} policies x pads (1, 5, 20), max drift {worst:.2e} (limit 1e-10)"
        + (f"; failures: {'; '.join(failures)}" if failures else "")
    )
    _report(8, ok, detail)
    assert ok, detail


def test_criterion_09(c3_bundle):
    worst_gain = 0.0
    failures = []
    checked = 0
    for entry in c3_bundle["entries"]:
        if entry["n"] != 4:
            continue
        for lam, info in entry["rvi"].items():
            checked += 1
            cap, gain, policy = info["cap"], info["gain"], info["policy"]
            sol2 = rvi_threshold(TruncatedMDP(entry["chain"], DECODER, 2 * cap), lam=lam)
            t2 = sol2.thresholds.table_array()
            t2 = np.where(t2 == 2 * cap, NEVER, t2)
            rel = abs(sol2.gain - gain) / max(1.0, abs(gain))
            worst_gain = max(worst_gain, rel)
            where = f"seed {entry['seed']} lam={lam:g} cap {cap}->{2 * cap}"
            if rel >= 1e-6:
                failures.append(f"{where}: gain moved {rel:.2e}")
            if not np.array_equal(policy.table_array(), t2):
                failures.append(f"{where}: thresholds changed")
    ok = checked == 10 and not failures
    detail = (
        f"{checked} (source, lambda) pairs, worst gain drift {worst_gain:.2e} "
        f"(limit 1e-6), thresholds stable"
        + (f"; failures: {'; '.join(failures)}" if failures else "")
    )
    _report(9, ok, detail)
    assert ok, detail
