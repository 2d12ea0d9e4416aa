"""Command-line front end: ``run``, ``check`` and ``dump-problem``.

Exit codes: 0 success, 1 invariant violations or failed trials, 2 errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import harness
from .channel import build_ensemble, draw_scenario
from .schemes import SCHEMES, SchemeConfig, initial_solution, optimize
from .subproblem import build
from .rates import build_layers
from .wmmse import step1_coefficients

EXIT_OK, EXIT_VIOLATION, EXIT_FAILURE = 0, 1, 2


def _config_args(p):
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--preset", default="desk", choices=sorted(harness.PRESETS))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config, args.preset, args.overrides)
    rows = harness.run_sweep(cfg, args.workers)
    harness.emit_csv(rows, args.out, timing=args.timing)
    if args.dat:
        harness.emit_dat(rows, args.dat)
    for (v, s, c), (m, se, n) in harness.summarize(rows).items():
        print(f"{cfg.sweep_axis}={v:g} {s:13s} {c:9s} mean min rate {m:.4f} +- {se:.4f} (n={n})")
    bad = [r for r in rows if r.failed]
    for r in bad:
        print(f"trial {r.trial} {r.scheme} at {r.sweep_value:g}: {r.status}", file=sys.stderr)
    for msg in harness.sweep_monotonicity(rows):
        logging.getLogger("mdprsma").warning("sweep not monotone: %s", msg)
    return EXIT_VIOLATION if bad else EXIT_OK


def _cmd_check(args) -> int:
    from .checks import run_checks
    results = run_checks(seed=args.seed, quick=not args.full)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VIOLATION


def _cmd_dump(args) -> int:
    cfg = harness.load_config(args.config, args.preset, args.overrides)
    g_rng, o_rng, _ = harness.trial_streams(cfg.seed, args.trial)
    scen = draw_scenario(cfg.params(), g_rng)
    ens = build_ensemble(scen, cfg.s, o_rng)
    scheme = SCHEMES[args.scheme]
    budgets = cfg.budgets()
    if args.iteration <= 1:
        sol = initial_solution(ens, budgets, scheme, cfg.init)
    else:
        scfg = SchemeConfig(max_outer_iters=args.iteration - 1, epsilon=1e-300, init=cfg.init)
        sol = optimize(args.scheme, ens, budgets, scfg).solution
    coeffs = step1_coefficients(build_layers(ens, scheme), sol)
    prog, _ = build(coeffs, budgets, scheme, (ens.ns2, ens.nt2, ens.ks, ens.kt))
    prog.dump(args.out)
    print(f"wrote {args.out}: {prog.n} variables, {prog.G.shape[0]} cone rows, {len(prog.cones)} cones")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdprsma", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="Monte Carlo sweep")
    _config_args(p)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--dat", help="also write gnuplot columns here")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default: ${harness.THREADS_ENV} or 1)")
    p.add_argument("--timing", action="store_true", help="include wall time in the CSV")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check", help="run the invariant suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true", help="larger instance counts")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("dump-problem", help="write the cone program of one outer iteration")
    _config_args(p)
    p.add_argument("--scheme", default="mdp-rsma", choices=sorted(SCHEMES))
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--iteration", type=int, default=1, help="1 = first subproblem")
    p.add_argument("--out", default="problem.txt")
    p.set_defaults(func=_cmd_dump)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="warn")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
