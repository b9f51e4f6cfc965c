"""Command-line runner: solve | trace | run | sample | verify.

Exit codes: 0 pass, 1 verification failure, 2 usage/config error,
3 numerical rejection.  MK_THREADS caps BLAS/FFT parallelism.
"""

import os
import sys

_mk_threads = os.environ.get("MK_THREADS")
if _mk_threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _mk_threads)

import argparse
import warnings

import numpy as np

from .config import (
    CLOSURE_ALIASES,
    CLOSURE_KINDS,
    ScenarioConfig,
    config_from_dict,
    load_config,
    preset_config,
)
from .errors import ConfigError, Rejection

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="scenario config file")
    p.add_argument("--scenario", metavar="NAME", help="scenario preset name")
    p.add_argument("--grid-n", type=int, metavar="N", help="nodes per axis")
    p.add_argument("--dt", type=float, metavar="DT", help="field-solver time step")
    p.add_argument("--particles", type=int, metavar="N", help="ensemble size")
    p.add_argument("--seed", type=int, metavar="S", help="RNG seed (omit for entropy)")
    p.add_argument("--closure", metavar="KIND", help="maxwellian | raw | positional")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory")
    p.add_argument("--snapshots", type=int, metavar="K", help="solver steps per snapshot")


def _build_config(args) -> ScenarioConfig:
    inline_flags = [
        name for name, val in (
            ("--scenario", args.scenario), ("--grid-n", args.grid_n), ("--dt", args.dt),
            ("--particles", args.particles), ("--seed", args.seed),
            ("--closure", args.closure), ("--snapshots", args.snapshots),
        ) if val is not None
    ]
    if args.config:
        cfg = load_config(args.config)
        if inline_flags:
            warnings.warn(
                f"inline flags {inline_flags} override --config values", stacklevel=2
            )
    elif args.scenario:
        cfg = preset_config(args.scenario)
    else:
        cfg = config_from_dict()
    if args.scenario:
        if args.config:
            cfg.scenario["kind"] = args.scenario
        # preset path already applied the scenario
    if args.grid_n is not None:
        cfg.grid["n"] = [args.grid_n] * int(cfg.grid["dim"])
    if args.dt is not None:
        cfg.run["dt_field"] = args.dt
        cfg.run["dt_particle"] = min(cfg.run["dt_particle"], args.dt)
    if args.particles is not None:
        cfg.ensemble["n_particles"] = args.particles
    if args.seed is not None:
        cfg.ensemble["seed"] = args.seed
    if args.closure is not None:
        kind = CLOSURE_ALIASES.get(args.closure, args.closure)
        if kind not in CLOSURE_KINDS:
            raise ConfigError(
                f"unknown closure {args.closure!r}; valid: "
                + ", ".join(sorted(set(CLOSURE_KINDS) | set(CLOSURE_ALIASES)))
            )
        cfg.closure["kind"] = kind
    cfg.validate()
    return cfg


def _cmd_solve(args) -> int:
    from .pipeline import solve

    cfg = _build_config(args)
    result = solve(cfg, args.out)
    print(f"wrote {len(result.states)} field snapshots to {args.out}/fields (t_end={result.t_end:g})")
    return EXIT_OK


def _cmd_trace(args) -> int:
    from .pipeline import trace

    cfg = _build_config(args)
    report, _ = trace(cfg, args.out)
    print(report.table())
    return EXIT_VERIFY if report.hard_failure() else EXIT_OK


def _cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _build_config(args)
    report, code = run_pipeline(cfg, args.out)
    print(report.table())
    print(f"report: {os.path.join(args.out, 'report.json')}")
    return code


def _cmd_sample(args) -> int:
    from . import madelung as md
    from . import tracer as tr
    from .pipeline import build_problem, initial_psi

    cfg = _build_config(args)
    grid, constants, potential = build_problem(cfg)
    psi = initial_psi(cfg, grid, constants)
    state = md.extract_fluid_state(psi, potential, constants)
    seed = cfg.resolve_seed()
    ens = tr.sample_maxwellian(state, int(cfg.ensemble["n_particles"]), seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ensemble_initial.mkens")
    tr.write_ensemble(path, ens)
    print(f"wrote {ens.n} particles (seed {seed}) to {path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import VerificationReport

    if not os.path.exists(args.report):
        raise ConfigError(f"report not found: {args.report}")
    report = VerificationReport.from_json(args.report)
    mismatched = [r.name for r in report.records if r.re_evaluate() != r.passed]
    if mismatched:
        raise ConfigError(f"stored pass/fail flags are inconsistent: {mismatched}")
    print(report.table())
    return EXIT_VERIFY if report.hard_failure() else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mkin",
        description="Madelung fields, inverse kinetic closures, phase-space tracing",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("run", _cmd_run, "full pipeline: solve, trace, verify, report"),
        ("solve", _cmd_solve, "reference solve and field extraction only"),
        ("trace", _cmd_trace, "particle run against saved field snapshots"),
        ("sample", _cmd_sample, "emit an initial ensemble only"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        p.set_defaults(fn=fn)
    pv = sub.add_parser("verify", help="re-evaluate a saved verification report")
    pv.add_argument("--report", required=True, metavar="FILE")
    pv.set_defaults(fn=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0,) else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Rejection as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
