"""Command line entry point: ``qgexpand <subcommand> ...``.

Exit codes: 0 success, 1 a check failed (or a run aborted), 2 bad configuration
or arguments.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from qgexpand.dynamics import SimulationError
from qgexpand.harness.acceptance import AcceptanceSettings, AcceptanceSuite, CriterionResult
from qgexpand.harness.config import ConfigError, load_config
from qgexpand.harness.experiments import fit_rows, run_experiment
from qgexpand.harness.fitting import FloorError
from qgexpand.harness.io import fmt, read_residuals, write_residuals, write_snapshot, write_steps
from qgexpand.profiles import (
    gauss,
    j1_cd,
    j1_fr,
    logshift_term,
    moment_term,
    subordination_check,
)
from qgexpand.spectral import make_grid

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

TERMS = ("leading", "moment", "logshift", "j1_cd", "j1_cd2", "j1_fr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple:
    parts = [float(p) for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {text!r}")
    return tuple(parts)


def _q(text: str) -> float:
    q = math.inf if text.lower() in ("inf", "infinity") else float(text)
    if not q >= 1:
        raise argparse.ArgumentTypeError("q must lie in [1, inf]")
    return q


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    plan = cfg.plan()
    try:
        exp = run_experiment(plan)
    except SimulationError as exc:
        print(f"FAIL simulate: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_residuals(exp.rows, out / "diagnostics.csv")
    write_steps(exp.run.diagnostics, out / "steps.csv")
    if cfg.report.write_snapshots:
        for i, (t, snap) in enumerate(zip(plan.config.snapshot_times, exp.run.snapshots)):
            write_snapshot(snap, t, plan.config.model.kind.value, out / f"snapshot_{i:03d}.txt")
    p = exp.params
    print(f"{cfg.name}: {plan.config.model.kind.value} N={plan.config.N} L={plan.config.L:g} "
          f"t_end={plan.config.t_end:g} steps={len(exp.run.diagnostics) - 1}")
    print(f"  M0={p.M0:.10g} M1=({p.M1[0]:.6g}, {p.M1[1]:.6g}) time_shift={p.time_shift:.6g}")
    if p.ambiguous is not None:
        amb = ", ".join(f"{v:.8g}" for v in p.ambiguous.value)
        exps = ", ".join(f"{v:.4g}" for v in p.ambiguous.exponent)
        print(f"  ambiguous M1 correction=({amb}) tail exponent=({exps})")
    for level in plan.levels:
        for q in plan.q_list:
            try:
                f = exp.fit(level, q)
                print(f"  fit level={level:7s} q={q:<4g} slope={f.slope:+.4f} ± {f.stderr:.4f}")
            except (FloorError, ValueError) as exc:
                print(f"  fit level={level} q={q:g}: {exc}")
    print(f"  wrote {out / 'diagnostics.csv'} and {out / 'steps.csv'}")
    return EXIT_OK


def cmd_profile_eval(args) -> int:
    g = make_grid(args.N, args.L)
    X, Y = g.mesh()
    x = np.stack([X, Y])
    t = args.t
    if args.term == "leading":
        vals = args.M0 * gauss(t, x)
    elif args.term == "moment":
        vals = moment_term(t, x, args.M1)
    elif args.term == "logshift":
        vals = logshift_term(t, x, args.M0, args.a)
    elif args.term in ("j1_cd", "j1_cd2"):
        vals = j1_cd(t, x, args.M0, args.a, K=args.K, square=args.term == "j1_cd2")
    else:
        vals = j1_fr(t, x, args.M0, K=args.K)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("x,y,value\n")
        for xi, yi, v in zip(X.ravel(), Y.ravel(), vals.ravel()):
            fh.write(f"{fmt(xi)},{fmt(yi)},{fmt(v)}\n")
    print(f"{args.term} at t={t:g} on N={args.N}, L={args.L:g}: max|value|={np.max(np.abs(vals)):.6e} -> {out}")
    return EXIT_OK


def _subordination_suite() -> CriterionResult:
    res = CriterionResult(0, "subordination identity for e^{-r}")
    res.at_most("max error over r in {0.1, 1, 10}", subordination_check([0.1, 1.0, 10.0]), 1e-8)
    return res


def cmd_verify(args) -> int:
    suite = AcceptanceSuite()
    suites = {
        "subordination": lambda: [_subordination_suite()],
        "identities": lambda: [suite.identities()],
        "riesz": lambda: [suite.riesz_oracle()],
        "series": lambda: [suite.series_oracle()],
        "parity": lambda: [suite.parity()],
    }
    names = list(suites) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        for res in suites[name]():
            print(res.report())
            ok &= res.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_fit(args) -> int:
    try:
        rows = read_residuals(args.input)
    except (OSError, ValueError) as exc:
        print(f"cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        f = fit_rows(rows, args.level, args.q, tuple(args.window))
    except FloorError as exc:
        print(f"PASS level={args.level} q={args.q:g}: {exc} (below the quadrature floor)")
        return EXIT_OK
    except ValueError as exc:
        print(f"FAIL level={args.level} q={args.q:g}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    gamma = 1.0 if math.isinf(args.q) else 1.0 - 1.0 / args.q
    msg = (f"level={args.level} q={args.q:g} points={f.n_points} slope={f.slope:+.6f} "
           f"stderr={f.stderr:.2e} slope+gamma={f.slope + gamma:+.6f}")
    if args.expect is None:
        print(msg)
        return EXIT_OK
    ok = f.within(args.expect, args.tol)
    print(f"{'PASS' if ok else 'FAIL'} {msg} (expected {args.expect:+g} ± {args.tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_accept(args) -> int:
    suite = AcceptanceSuite(AcceptanceSettings())
    table = {
        1: suite.identities, 2: suite.riesz_oracle, 3: suite.qg_null, 4: suite.series_oracle,
        5: suite.rate_fits, 6: suite.visibility, 7: suite.parity, 8: suite.hygiene,
    }
    wanted = args.criteria or sorted(table)
    bad = [c for c in wanted if c not in table]
    if bad:
        print(f"unknown criteria {bad}", file=sys.stderr)
        return EXIT_CONFIG
    ok = True
    for c in wanted:
        res = table[c]()
        print(res.report() if args.verbose else res.summary(), flush=True)
        ok &= res.passed
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qgexpand", description="Large-time expansions of drift-diffusion models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a configuration and write CSV diagnostics")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("profile-eval", help="sample one expansion term on a grid")
    s.add_argument("--term", choices=TERMS, required=True)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--N", type=int, default=128)
    s.add_argument("--L", type=float, default=40.0)
    s.add_argument("--M0", type=float, default=1.0)
    s.add_argument("--M1", type=_pair, default=(0.0, 0.0))
    s.add_argument("--a", type=_pair, default=(1.0, 0.0))
    s.add_argument("--K", type=int, default=None)
    s.add_argument("--out", default="profile.csv")
    s.set_defaults(func=cmd_profile_eval)

    s = sub.add_parser("verify", help="operator and identity checks")
    s.add_argument("--suite", choices=("subordination", "identities", "riesz", "series", "parity", "all"),
                   default="all")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("fit", help="power-law fit of a residual CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--level", default="0")
    s.add_argument("--q", type=_q, default=math.inf)
    s.add_argument("--window", type=float, nargs=2, default=(10.0, 100.0))
    s.add_argument("--expect", type=float, default=None)
    s.add_argument("--tol", type=float, default=0.1)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("accept", help="run the acceptance matrix")
    s.add_argument("--criteria", type=int, nargs="*")
    s.set_defaults(func=cmd_accept)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
