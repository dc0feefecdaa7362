"""Command-line entry point: ``mfoc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import control_opt, dynamics, harness
from .core_model import SamplingError, Scenario, estimate_growth_constant, validate_scenario
from .transport import load_measure, w1_distance

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _levels(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfoc", description="Sparse mean-field optimal control workbench")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("simulate", help="integrate a scenario under its control")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("optimize", help="solve the finite-dimensional control problem")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--budget", type=int, default=2000)

    sp = sub.add_parser("limit", help="mean-field limit study under the scenario's control")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--levels", type=_levels, required=True)
    sp.add_argument("--ref", type=int, required=True)
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--stride", type=int, default=1, help="W1 on every STRIDE-th node")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("gamma", help="Gamma-convergence study of optimal costs")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--levels", type=_levels, required=True)
    sp.add_argument("--ref", type=int, required=True)
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--budget", type=int, default=2000)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("w1", help="W1 distance between two measure files")
    sp.add_argument("a")
    sp.add_argument("b")

    sp = sub.add_parser("validate", help="check a scenario file")
    sp.add_argument("--scenario", required=True)
    return p


def _load_valid(path) -> Scenario:
    s = Scenario.load(path)
    problems = validate_scenario(s)
    if problems:
        raise _Invalid(problems)
    return s


class _Invalid(Exception):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = problems


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _simulate(args):
    s = _load_valid(args.scenario)
    traj = dynamics.integrate(s, s.control)
    cost = control_opt.evaluate_cost(traj, s, s.control)
    traj.to_csv(f"{args.out}.traj.csv")
    meta = {
        "scenario": s.digest(), "control": s.control.digest(),
        "growth_constant": s.kernel.growth_constant,
        "sampled_growth_constant": estimate_growth_constant(s.kernel, 2 * traj.support_radius),
        "support_radius": traj.support_radius,
        "max_state_radius": traj.max_radius(),
    }
    _write(f"{args.out}.report.json", json.dumps({"cost": cost.to_dict(), "metadata": meta}, indent=2))


def _optimize(args):
    s = _load_valid(args.scenario)
    rep = control_opt.optimize(s, budget=args.budget)
    rep.to_json(f"{args.out}.report.json")
    rep.trajectory.to_csv(f"{args.out}.traj.csv")


def _limit(args):
    s = _load_valid(args.scenario)
    res = harness.limit_study(s, args.levels, s.control, list(range(args.seeds)), args.ref,
                              node_stride=args.stride)
    _write(f"{args.out}.report.json", json.dumps(res.to_dict(), indent=2))
    _write(f"{args.out}.curves.csv", res.curves_csv())


def _gamma(args):
    s = _load_valid(args.scenario)
    res = harness.gamma_study(s, args.levels, args.ref, list(range(args.seeds)), budget=args.budget)
    _write(f"{args.out}.report.json", json.dumps(res.to_dict(), indent=2))
    _write(f"{args.out}.curves.csv", res.curves_csv())


def _w1(args):
    d = w1_distance(load_measure(args.a), load_measure(args.b))
    print(f"{d:.17g}")


def _validate(args):
    s = Scenario.load(args.scenario)
    problems = validate_scenario(s)
    if problems:
        raise _Invalid(problems)
    print("ok")


COMMANDS = {"simulate": _simulate, "optimize": _optimize, "limit": _limit, "gamma": _gamma,
            "w1": _w1, "validate": _validate}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"mfoc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except _Invalid as exc:
        for line in exc.problems:
            print(line)
        return EXIT_INVALID
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"mfoc: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (dynamics.IntegrationError, SamplingError, RuntimeError) as exc:
        print(f"mfoc: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def main():
    logging.basicConfig(level=logging.WARNING)
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
