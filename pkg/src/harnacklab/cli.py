"""Command-line entry point: ``harnacklab {run,accept,oracle,operators}``.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 usage or
configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracles
from .config import PRESETS, ConfigError, ExperimentConfig, build_problem, parse_config, preset
from .experiments import (
    EXIT_CONFIG,
    EXIT_PASS,
    EXIT_SOLVER,
    EXIT_VERDICT,
    GROUPS,
    operator_selftest,
    run_acceptance_suite,
    run_experiment,
)
from .geometry import GeometryError, build_torus
from .solver import SolverError, solve

log = logging.getLogger("harnacklab")


class UsageError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    if bool(args.config) == bool(args.preset):
        raise UsageError("give exactly one of --config PATH or --preset NAME")
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        cfg = parse_config(text)
    else:
        try:
            cfg = preset(args.preset)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from exc
    if args.seed is not None:
        if cfg.u0.preset != "random":
            raise UsageError("--seed only applies to the random initial datum")
        cfg = replace(cfg, u0=cfg.u0.with_param("seed", args.seed))
    if args.t_min is not None:
        if not args.t_min > 0:
            raise UsageError("--t-min must be positive")
        cfg = replace(cfg, tolerances=replace(cfg.tolerances, t_min=args.t_min))
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    res = run_experiment(cfg, args.out)
    if res.report is None:
        print(f"solver failure: {res.error['message']}", file=sys.stderr)
        return EXIT_SOLVER
    for w in res.report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for name, v in sorted(res.report.verdicts.items()):
        op = "<=" if v.kind == "max" else ">="
        print(f"{'PASS' if v.passed else 'FAIL'}  {name:<20} {v.worst: .6e} {op} {v.tolerance:.1e}  at {v.where}")
    print(f"{cfg.name}: {'pass' if res.report.passed else 'FAIL'} ({res.seconds:.1f} s)")
    return res.exit_code


def _parse_tol(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--tol expects ID=VALUE, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError as exc:
            raise UsageError(f"--tol {item!r}: {exc}") from exc
    return out


def cmd_accept(args) -> int:
    try:
        summary = run_acceptance_suite(
            only=args.only,
            tolerances=_parse_tol(args.tol),
            seed=args.seed or 0,
            t_min=args.t_min or 0.05,
            out_dir=args.out,
            echo=print if args.verbose else None,
        )
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    print(summary.table())
    return EXIT_PASS if summary.passed else EXIT_VERDICT


def cmd_oracle(args) -> int:
    """Evaluate a closed form, or compare a configured run with the fine-grid reference."""
    out = sys.stdout
    if args.kind == "homogeneous":
        u = oracles.homogeneous_solution(args.q0, args.a, args.V, args.t)
        print(format(u, ".17g"), file=out)
        return EXIT_PASS
    if args.kind == "gaussian":
        p, q = oracles.gaussian_selfsimilar(args.p0, args.a, args.t, args.n, args.q0)
        print(f"p,q\n{p:.17g},{q:.17g}", file=out)
        return EXIT_PASS
    if args.kind == "heat-kernel":
        if not args.t > 0:
            raise UsageError("the heat kernel needs --t > 0")
        g = build_torus(args.n, [args.points] * args.n, [args.period] * args.n)
        k = oracles.heat_kernel_field(g, args.t)
        cols = [f"x{i}" for i in range(g.n)] + ["K"]
        print(",".join(cols), file=out)
        for idx in np.ndindex(*g.shape):
            row = [g.coords[i][idx] for i in range(g.n)] + [k[idx]]
            print(",".join(format(float(v), ".17g") for v in row), file=out)
        return EXIT_PASS
    # reference: sup distance between the solver and the fine-grid oracle
    cfg = _load_config(args)
    p = build_problem(cfg)
    try:
        traj = solve(p)
        ref = oracles.fine_grid_reference(p, refine=args.refine)
    except (SolverError, oracles.OracleBudgetError, ArithmeticError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    d = np.max(np.abs(traj.states - ref.states), axis=tuple(range(1, traj.states.ndim)))
    print("t,sup_distance", file=out)
    for t, v in zip(traj.times, d):
        print(f"{t:.17g},{v:.17g}", file=out)
    return EXIT_PASS


def cmd_operators(args) -> int:
    rows = operator_selftest(args.points)
    for r in rows:
        print(r.line())
    return EXIT_PASS if all(r.passed for r in rows) else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="harnacklab", description="Solve heat flows and certify differential Harnack estimates.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", metavar="PATH")
            p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--t-min", type=float, metavar="X", dest="t_min")

    p = sub.add_parser("run", help="solve and certify one configuration")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("accept", help="run the acceptance suite")
    common(p, config=False)
    p.add_argument("--only", nargs="+", metavar="ID", help=f"groups ({', '.join(GROUPS)}) or criterion ids")
    p.add_argument("--tol", nargs="+", metavar="ID=VALUE", help="override a criterion tolerance")
    p.set_defaults(func=cmd_accept)

    p = sub.add_parser("oracle", help="evaluate a closed form or the fine-grid reference")
    p.add_argument("kind", choices=["homogeneous", "heat-kernel", "gaussian", "reference"])
    common(p)
    p.add_argument("--refine", type=int, default=4, metavar="K")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--q0", type=float, default=0.0)
    p.add_argument("--V", type=float, default=0.0)
    p.add_argument("--p0", type=float, default=1.0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--period", type=float, default=2 * math.pi)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("operators", help="operator self-test")
    p.add_argument("--points", type=int, default=64)
    p.set_defaults(func=cmd_operators)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, GeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
