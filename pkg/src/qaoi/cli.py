"""Command-line front end: ``qaoi {solve,simulate,sweep,validate}``.

Exit codes: 0 success, 1 config error, 2 solver failure, 3 partial sweep failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import policy_io
from .experiments import ConfigError, emit_csv, format_csv, lint, load_config, load_document, run_experiment
from .lp import SolverFailure
from .model import StateSpaceTooLarge
from .occupancy import evaluate_policy_exact, solve_joint
from .simulator import run, write_traces
from .weakly_coupled import solve_decomposed

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("qaoi")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--out", help="output path")
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.add_argument("--threads", type=int, help="worker threads for sweeps")
    p.add_argument("--allow-large-joint", action="store_true",
                   help="solve the joint LP even above 10^6 states")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qaoi", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance; write a policy file, print metrics")
    _common(p)
    p.add_argument("--policy", choices=("optimal", "truncated"), default="optimal")

    p = sub.add_parser("simulate", help="simulate a policy on the config's system")
    _common(p)
    p.add_argument("--policy", default="baseline",
                   help="policy file, or one of 'baseline', 'idle'")
    p.add_argument("--traces", help="write per-slot traces (CSV) here")

    p = sub.add_parser("sweep", help="run the config's sweep and write the CSV table")
    _common(p)

    p = sub.add_parser("validate", help="lint a config")
    p.add_argument("--config", required=True)
    return ap


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def cmd_solve(args) -> int:
    cfg = load_config(args.config, seed=args.seed, allow_large_joint=args.allow_large_joint)
    spec = cfg.base
    if args.policy == "optimal":
        sol, _, policy = solve_joint(spec)
        qaoi, tr, sm = evaluate_policy_exact(spec, policy)
        metrics = {"lp_objective": sol.objective_value, "policy_qaoi": qaoi,
                   "policy_tr": tr, "policy_sm": sm}
    else:
        sol, policy, lb = solve_decomposed(spec)
        metrics = {"lower_bound": lb}
    metrics.update(kind=args.policy, spec_hash=spec.spec_hash(),
                   max_eq_residual=sol.max_eq_residual,
                   max_ineq_violation=sol.max_ineq_violation, solver=sol.message)
    out = args.out or f"policy-{spec.spec_hash()}.txt"
    policy_io.save(policy, out)
    metrics["policy_file"] = out
    _emit(metrics, None)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    spec = cfg.base
    if args.policy in ("baseline", "idle"):
        policy = args.policy
    else:
        try:
            policy = policy_io.load(args.policy, spec)
        except (OSError, policy_io.PolicyFormatError) as e:
            raise ConfigError(f"cannot use policy file: {e}") from None
    sim = replace(cfg.sim, record_traces=bool(args.traces))
    m = run(policy, spec, sim)
    if args.traces:
        write_traces(spec, m, args.traces)
    _emit(m.summary(), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, seed=args.seed, threads=args.threads,
                      allow_large_joint=args.allow_large_joint, output=args.out)
    rows = run_experiment(cfg)
    if cfg.output:
        emit_csv(rows, cfg.output, cfg.report_wall_time)
    else:
        sys.stdout.write(format_csv(rows, cfg.report_wall_time))
    bad = [r for r in rows if r.status != "ok"]
    for r in bad:
        log.error("sweep value %s, policy %s: %s", r.sweep_param, r.policy, r.status)
    return EXIT_PARTIAL if bad else EXIT_OK


def cmd_validate(args) -> int:
    try:
        doc = load_document(args.config)
    except Exception as e:
        print(f"{args.config}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    errors = lint(doc)
    if not errors:
        try:
            load_config(args.config)
        except ConfigError as e:
            errors = str(e).splitlines()
    for e in errors:
        print(f"{args.config}: {e}", file=sys.stderr)
    if not errors:
        print(f"{args.config}: ok")
    return EXIT_CONFIG if errors else EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, StateSpaceTooLarge) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
