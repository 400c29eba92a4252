"""Command line front end.

Subcommands cover the full workflow: generate or validate a model file,
solve for a rate-constrained policy (threshold table, single threshold,
periodic schedule, or the unrestricted oracle), evaluate any saved policy
in closed form, simulate it, and sweep rate budgets across policy families
with a CSV and an SVG comparison plot.

Exit codes: 0 success, 1 failed checks or solver/analysis errors, 2
malformed inputs (bad files, bad flags).

All file outputs are deterministic: CSVs open with a schema comment and
the SVG writer emits byte-identical markup for identical inputs.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np
import yaml

from ._kernels import backend_name
from .model import (
    Action,
    DecoderProfile,
    ModelError,
    SystemState,
    generate_random_source,
    load_model,
    parse_model_file,
    save_model,
    transition_distribution,
)
from .policies import (
    PeriodicPolicy,
    PolicyError,
    RandomizedMixturePolicy,
    load_policy,
    save_policy,
)
from .renewal import AnalysisError, evaluate_policy, write_evaluation_report
from .simulate import SimulationConfig, SimulationError
from .simulate import run as simulate_run
from .solver import SolverError, lambda_bisection, n_bisection, save_trace_csv

__all__ = ["main"]

FAMILIES = ("multi", "single", "periodic", "plain")

SWEEP_SCHEMA = "aoii-harq/sweep v1: family,target_rate,avg_aoii,avg_rate,rho"
SIM_SCHEMA = (
    "aoii-harq/simulation v1: replication,avg_aoii,se_aoii,avg_rate,se_rate,"
    "n_cycles,minus_fraction"
)

DEFAULTS = {
    "solve": {
        "family": "multi",
        "delta_cap": None,
        "tol_rvi": 1e-9,
        "tol_lambda": None,
    },
    "simulate": {
        "horizon": 1_000_000,
        "seed": 0,
        "burn_in": None,
        "replications": 1,
        "batches": 50,
    },
    "sweep": {
        "families": ["multi", "single", "periodic"],
        "delta_cap": None,
    },
    "gen-source": {"p_e": 0.5, "c": 0.5, "r_max": 3},
}

PALETTE = ("#1965b0", "#dc050c", "#4eb265", "#f7a600", "#882e72", "#777777")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.12g}"


def _solve_family(chain, decoder, family, rate, delta_cap, tol_rvi, tol_lambda):
    """Returns (policy, trace_or_None, rho_or_None)."""
    if family == "multi":
        policy, trace = lambda_bisection(
            chain, decoder, rate, delta_cap=delta_cap, tol_lambda=tol_lambda, tol_rvi=tol_rvi
        )
        return policy, trace, policy.rho
    if family == "plain":
        policy, trace = lambda_bisection(
            chain,
            decoder,
            rate,
            delta_cap=delta_cap,
            tol_lambda=tol_lambda,
            tol_rvi=tol_rvi,
            plain=True,
        )
        return policy, trace, policy.rho
    if family == "single":
        policy, trace = n_bisection(chain, decoder, rate)
        return policy, trace, policy.rho
    if family == "periodic":
        return PeriodicPolicy.from_rate(rate), None, None
    raise SolverError(f"unknown policy family {family!r} (choose from {', '.join(FAMILIES)})")


def _cmd_gen_source(args) -> int:
    chain = generate_random_source(args.n, args.seed)
    decoder = DecoderProfile(p_e=args.p_e, c=args.c, r_max=args.r_max)
    save_model(args.out, chain, decoder)
    print(f"wrote {args.n}-state model to {args.out} (seed {args.seed})")
    return 0


def _cmd_validate(args) -> int:
    failures = 0

    def report(name: str, ok: bool, detail: str) -> None:
        nonlocal failures
        if not ok:
            failures += 1
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    raw = parse_model_file(args.model)  # malformed file raises ModelError -> exit 2
    n = int(raw["n_states"])
    report("shape", True, f"{n} source states, r_max {raw['r_max']}")

    try:
        t = np.array(raw["transition"], dtype=np.float64)
        if t.ndim == 1:
            t = t.reshape(n, n)
        numeric = t.shape == (n, n) and bool(np.isfinite(t).all())
    except (TypeError, ValueError):
        numeric = False
        t = None
    report("matrix-numeric", numeric, "transition parses to a finite n x n matrix")
    if not numeric:
        print("invalid")
        return 1

    sums = t.sum(axis=1)
    worst = int(np.argmax(np.abs(sums - 1.0)))
    row_ok = bool(np.all(np.abs(sums - 1.0) <= 1e-9)) or bool(raw.get("normalize", False))
    report(
        "row-sums",
        row_ok,
        f"worst row {worst + 1} sums to {sums[worst]!r}"
        + (" (normalize: true)" if raw.get("normalize", False) else ""),
    )
    neg_ok = bool((t >= 0.0).all()) and bool((t <= 1.0).all())
    report("entry-range", neg_ok, "all entries within [0, 1]")

    chain = decoder = None
    try:
        chain, decoder = load_model(args.model)
        report("loadable", True, "model loads under the strict checks")
    except ModelError as exc:
        report("loadable", False, str(exc))

    if chain is not None:
        succ = [decoder.success(r) for r in range(decoder.r_max)]
        report(
            "decoder-monotone",
            all(b >= a for a, b in zip(succ, succ[1:])),
            f"success probabilities {', '.join(f'{x:.6g}' for x in succ)}",
        )
        state = SystemState(1, 2, 1, 0) if chain.n_states >= 2 else SystemState(1, 1, 0, 0)
        probs = [sum(p for _, p in transition_distribution(state, a, chain, decoder))
                 for a in (Action.WAIT, Action.TRANSMIT)]
        report(
            "kernel-stochastic",
            all(abs(p - 1.0) <= 1e-12 for p in probs),
            f"one-slot successor mass {probs[0]:.12f} (wait), {probs[1]:.12f} (transmit)",
        )

    print("ok" if failures == 0 else "invalid")
    return 0 if failures == 0 else 1


def _cmd_solve(args) -> int:
    chain, decoder = load_model(args.model)
    policy, trace, rho = _solve_family(
        chain, decoder, args.family, args.rate, args.delta_cap, args.tol, args.tol_lambda
    )
    ev = evaluate_policy(chain, decoder, policy)
    print(f"family: {args.family}")
    print(f"target rate: {_fmt(args.rate)}")
    if trace is not None and trace.rows:
        print(f"search probes: {len(trace.rows)}")
        if not trace.constraint_inactive and not math.isnan(trace.lambda_minus):
            print(f"bracket: [{_fmt(trace.lambda_minus)}, {_fmt(trace.lambda_plus)}]")
            print(
                f"component rates: minus={_fmt(trace.rate_minus)} plus={_fmt(trace.rate_plus)}"
            )
        if trace.constraint_inactive:
            print("constraint inactive: unpenalized policy already meets the budget")
        for w in trace.warnings:
            print(f"warning: {w}")
    if rho is not None:
        print(f"rho: {_fmt(rho)}")
    print(f"avg AoII: {_fmt(ev.avg_aoii)}")
    print(f"avg rate: {_fmt(ev.avg_rate)}")
    if args.out:
        save_policy(policy, args.out)
        print(f"policy written to {args.out}")
    if args.trace and trace is not None:
        save_trace_csv(trace, args.trace)
        print(f"trace written to {args.trace}")
    return 0


def _cmd_evaluate(args) -> int:
    chain, decoder = load_model(args.model)
    policy = load_policy(args.policy)
    ev = evaluate_policy(chain, decoder, policy, truncation_pad=args.pad)
    rho = policy.rho if isinstance(policy, RandomizedMixturePolicy) else None
    print(f"avg AoII: {_fmt(ev.avg_aoii)}")
    print(f"avg rate: {_fmt(ev.avg_rate)}")
    print(f"cycle types: {len(ev.cycle_stats.type_labels)}")
    if args.out:
        write_evaluation_report(args.out, [(args.policy, None, rho, ev)])
        print(f"report written to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    chain, decoder = load_model(args.model)
    policy = load_policy(args.policy)
    config = SimulationConfig(
        horizon=args.horizon,
        seed=args.seed,
        burn_in=args.burn_in,
        replications=args.replications,
        n_batches=args.batches,
    )
    res = simulate_run(chain, decoder, policy, config)
    print(f"backend: {backend_name()}")
    print(f"avg AoII: {_fmt(res.avg_aoii)} (se {_fmt(res.se_aoii)})")
    print(f"avg rate: {_fmt(res.avg_rate)} (se {_fmt(res.se_rate)})")
    print(f"completed cycles: {res.n_cycles}")
    if not math.isnan(res.minus_fraction):
        print(
            f"minus-component cycle fraction: {_fmt(res.minus_fraction)} "
            f"(se {_fmt(res.minus_fraction_se)})"
        )
    for w in res.warnings:
        print(f"warning: {w}")
    if args.out:
        lines = [f"# schema: {SIM_SCHEMA}"]
        lines.append("replication,avg_aoii,se_aoii,avg_rate,se_rate,n_cycles,minus_fraction")
        for i, t in enumerate(res.replications):
            lines.append(
                f"{i},{_fmt(t.avg_aoii)},{_fmt(t.se_aoii)},{_fmt(t.avg_rate)},"
                f"{_fmt(t.se_rate)},{t.n_cycles},{_fmt(t.minus_fraction)}"
            )
        lines.append(
            f"pooled,{_fmt(res.avg_aoii)},{_fmt(res.se_aoii)},{_fmt(res.avg_rate)},"
            f"{_fmt(res.se_rate)},{res.n_cycles},{_fmt(res.minus_fraction)}"
        )
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"statistics written to {args.out}")
    return 0


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0, 1.0]
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg_plot(series, title: str, x_label: str, y_label: str) -> str:
    """Line plot as a standalone SVG string; identical inputs, identical bytes.

    `series` is a list of (label, xs, ys) triples. Each polyline carries a
    <title> child naming its series.
    """
    width, height = 720.0, 480.0
    ml, mr, mt, mb = 72.0, 24.0, 40.0, 56.0
    pw, ph = width - ml - mr, height - mt - mb

    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi <= x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    y_pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def px(x: float) -> float:
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">'
    )
    out.append(f'<rect width="{width:.0f}" height="{height:.0f}" fill="#ffffff"/>')
    out.append(
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>'
    )
    axis = 'stroke="#333333" stroke-width="1"'
    out.append(f'<line x1="{ml:.1f}" y1="{mt + ph:.1f}" x2="{ml + pw:.1f}" y2="{mt + ph:.1f}" {axis}/>')
    out.append(f'<line x1="{ml:.1f}" y1="{mt:.1f}" x2="{ml:.1f}" y2="{mt + ph:.1f}" {axis}/>')
    for tx in _ticks(x_lo, x_hi):
        out.append(
            f'<line x1="{px(tx):.1f}" y1="{mt + ph:.1f}" x2="{px(tx):.1f}" y2="{mt + ph + 5:.1f}" {axis}/>'
        )
        out.append(
            f'<text x="{px(tx):.1f}" y="{mt + ph + 20:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{tx:.3g}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        out.append(
            f'<line x1="{ml - 5:.1f}" y1="{py(ty):.1f}" x2="{ml:.1f}" y2="{py(ty):.1f}" {axis}/>'
        )
        out.append(
            f'<text x="{ml - 8:.1f}" y="{py(ty) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{ty:.3g}</text>'
        )
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    out.append(
        f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 18 {mt + ph / 2:.1f})">{y_label}</text>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}">'
            f"<title>{label}</title></polyline>"
        )
        ly = mt + 16.0 + 18.0 * i
        out.append(
            f'<line x1="{ml + pw - 150:.1f}" y1="{ly:.1f}" x2="{ml + pw - 126:.1f}" y2="{ly:.1f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{ml + pw - 120:.1f}" y="{ly + 4:.1f}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _cmd_sweep(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ModelError(f"{args.config}: sweep config must be a mapping")
        cfg = raw
    model = args.model or cfg.get("model")
    if not model:
        raise ModelError("sweep needs --model or a 'model' key in the config")
    if args.rates:
        rates = [float(x) for x in args.rates.split(",") if x.strip()]
    else:
        rates = [float(x) for x in cfg.get("rates", [])]
    if not rates:
        raise ModelError("sweep needs --rates or a 'rates' list in the config")
    if args.families:
        families = [f.strip() for f in args.families.split(",") if f.strip()]
    else:
        families = list(cfg.get("families", DEFAULTS["sweep"]["families"]))
    bad = [f for f in families if f not in FAMILIES]
    if bad:
        raise ModelError(f"unknown families {bad}; choose from {', '.join(FAMILIES)}")
    delta_cap = args.delta_cap if args.delta_cap is not None else cfg.get("delta_cap")
    out_csv = args.out or cfg.get("out")
    out_svg = args.svg or cfg.get("svg")
    if not out_csv:
        raise ModelError("sweep needs --out or an 'out' key in the config")

    chain, decoder = load_model(model)
    rates = sorted(rates)
    lines = [f"# schema: {SWEEP_SCHEMA}", "family,target_rate,avg_aoii,avg_rate,rho"]
    series = []
    for family in families:
        ys = []
        for rate in rates:
            policy, _, rho = _solve_family(chain, decoder, family, rate, delta_cap, 1e-9, None)
            ev = evaluate_policy(chain, decoder, policy)
            lines.append(
                f"{family},{_fmt(rate)},{_fmt(ev.avg_aoii)},{_fmt(ev.avg_rate)},{_fmt(rho)}"
            )
            ys.append(ev.avg_aoii)
            print(f"{family} R={rate:g}: avg AoII {ev.avg_aoii:.6g}, rate {ev.avg_rate:.6g}")
        series.append((family, list(rates), ys))
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"sweep written to {out_csv}")
    if out_svg:
        svg = render_svg_plot(
            series,
            title="Average age of incorrect information vs rate budget",
            x_label="transmission rate budget",
            y_label="average AoII",
        )
        with open(out_svg, "w", encoding="utf-8", newline="") as fh:
            fh.write(svg)
        print(f"plot written to {out_svg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aoii-harq",
        description="Rate-constrained transmission policies minimizing the age of "
        "incorrect information over an unreliable channel.",
    )
    parser.add_argument(
        "--print-defaults",
        action="store_true",
        help="print the default parameters as YAML and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-source", help="generate a random source model file")
    p.add_argument("--n", type=int, required=True, help="number of source states")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-e", type=float, default=DEFAULTS["gen-source"]["p_e"], dest="p_e")
    p.add_argument("--c", type=float, default=DEFAULTS["gen-source"]["c"])
    p.add_argument("--r-max", type=int, default=DEFAULTS["gen-source"]["r_max"], dest="r_max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_source)

    p = sub.add_parser("validate", help="check a model file and report each invariant")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("solve", help="solve for a policy meeting a rate budget")
    p.add_argument("--model", required=True)
    p.add_argument("--rate", type=float, required=True, help="long-run transmission budget")
    p.add_argument("--family", choices=FAMILIES, default=DEFAULTS["solve"]["family"])
    p.add_argument("--delta-cap", type=int, default=None, dest="delta_cap",
                   help="fixed age truncation (default: grown automatically)")
    p.add_argument("--tol", type=float, default=DEFAULTS["solve"]["tol_rvi"],
                   help="value-iteration span tolerance")
    p.add_argument("--tol-lambda", type=float, default=None, dest="tol_lambda",
                   help="penalty bracket tolerance (default: 1e-6 scaled)")
    p.add_argument("--out", help="write the policy as JSON")
    p.add_argument("--trace", help="write the bisection trace as CSV")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("evaluate", help="closed-form averages of a saved policy")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--pad", type=int, default=0,
                   help="extra age-truncation padding (results must not change)")
    p.add_argument("--out", help="write the per-cycle-type report as CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="Monte Carlo check of a saved policy")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--horizon", type=int, default=DEFAULTS["simulate"]["horizon"])
    p.add_argument("--seed", type=int, default=DEFAULTS["simulate"]["seed"])
    p.add_argument("--burn-in", type=int, default=None, dest="burn_in")
    p.add_argument("--replications", type=int, default=DEFAULTS["simulate"]["replications"])
    p.add_argument("--batches", type=int, default=DEFAULTS["simulate"]["batches"])
    p.add_argument("--out", help="write per-replication statistics as CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="compare policy families across rate budgets")
    p.add_argument("--config", help="YAML config; flags override its keys")
    p.add_argument("--model")
    p.add_argument("--rates", help="comma-separated rate budgets")
    p.add_argument("--families", help=f"comma-separated subset of {','.join(FAMILIES)}")
    p.add_argument("--delta-cap", type=int, default=None, dest="delta_cap")
    p.add_argument("--out", help="sweep CSV path")
    p.add_argument("--svg", help="comparison plot path")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(yaml.safe_dump(DEFAULTS, sort_keys=True))
        return 0
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ModelError, PolicyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, AnalysisError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
