"""Command-line entry point: ``run``, ``gen-data`` and ``validate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from .algorithms import RunConfig, run, validate_config
from .errors import DataError, InvalidConfiguration, InvalidParameter, SubsolverError, UnsupportedOperation
from .estimators import BatchSchedule
from .io import load_libsvm, load_returns, write_libsvm, write_returns, write_trace_csv
from .problems import (
    bootstrap_resample,
    gen_synthetic_classification,
    gen_synthetic_returns,
    make_cvar_problem,
    make_nlse_problem,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", choices=("gn", "sgn", "sgn2"), required=True)
    p.add_argument("--problem", choices=("nlse", "cvar"), required=True)
    p.add_argument("--phi", choices=("l2", "l1", "huber", "hinge"), default="l2",
                   help="outer function for nlse (cvar always uses hinge)")
    p.add_argument("--data", required=True, help="LIBSVM file (nlse) or returns CSV (cvar)")
    p.add_argument("--bF", type=int, default=None, help="function batch size (default: n)")
    p.add_argument("--bJ", type=int, default=None, help="Jacobian batch size (default: n)")
    p.add_argument("--snapF", type=int, default=None, help="sgn2 snapshot function batch (default: n)")
    p.add_argument("--snapJ", type=int, default=None, help="sgn2 snapshot Jacobian batch (default: n)")
    p.add_argument("--inner", type=int, default=0, help="sgn2 inner loop length")
    p.add_argument("--M", type=float, default=None, help="prox parameter (default 1 nlse, 5 cvar)")
    p.add_argument("--rho", type=float, default=None, help="outer scale (default 1 nlse, 5 cvar)")
    p.add_argument("--delta", type=float, default=1.0, help="huber threshold")
    p.add_argument("--beta", type=float, default=0.1, help="cvar level")
    p.add_argument("--gamma", type=float, default=1e-3, help="cvar smoothing")
    p.add_argument("--iters", type=int, default=100, help="outer steps (epochs for sgn2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsolver", choices=("adpg", "pd"), default=None,
                   help="default adpg for nlse, pd for cvar")
    p.add_argument("--tol", type=float, default=None, help="subsolver tolerance")
    p.add_argument("--kmax", type=int, default=10_000, help="subsolver iteration cap")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochgn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pr = sub.add_parser("run", help="run a solver and write a CSV trace")
    _add_problem_args(pr)
    pr.add_argument("--out", required=True, help="output CSV path")
    pr.add_argument("--psi-star", type=float, default=None, help="reference optimum for rel_residual")
    pr.add_argument("--record-time", action="store_true", help="fill wall_ms (breaks byte reproducibility)")

    pv = sub.add_parser("validate", help="check a configuration without running it")
    _add_problem_args(pv)

    pg = sub.add_parser("gen-data", help="write a synthetic or bootstrapped dataset")
    pg.add_argument("--problem", choices=("nlse", "cvar"), required=True)
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--p", type=int, default=None, help="dimension (synthetic only)")
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--bootstrap-from", default=None, help="resample rows of this file instead")
    pg.add_argument("--out", required=True)
    return parser


def _load(args):
    try:
        return load_libsvm(args.data) if args.problem == "nlse" else load_returns(args.data)
    except FileNotFoundError:
        raise DataError(f"no such dataset: {args.data}") from None


def _setup(args):
    if args.problem == "cvar" and args.subsolver == "adpg":
        raise UsageError("cvar has a regularizer; use --subsolver pd")
    if args.problem == "cvar" and args.phi != "l2" and args.phi != "hinge":
        raise UsageError("cvar uses the hinge penalty; --phi does not apply")
    data = _load(args)
    if args.problem == "nlse":
        rho = 1.0 if args.rho is None else args.rho
        problem = make_nlse_problem(data, args.phi, rho=rho, delta=args.delta)
        x0 = np.zeros(problem.p)
        M = 1.0 if args.M is None else args.M
        subsolver = args.subsolver or "adpg"
    else:
        rho = 5.0 if args.rho is None else args.rho
        problem = make_cvar_problem(data, beta=args.beta, gamma=args.gamma, rho=rho)
        x0 = problem.initial_point()
        M = 5.0 if args.M is None else args.M
        subsolver = "pd"
    sched = BatchSchedule(b=args.bF, b_hat=args.bJ, b_snap=args.snapF, b_hat_snap=args.snapJ)
    cfg = RunConfig(args.algo, M=M, iters=args.iters, inner=args.inner, schedule=sched,
                    subsolver=subsolver, tol=args.tol, k_max=args.kmax, seed=args.seed,
                    record_time=getattr(args, "record_time", False))
    return problem, x0, cfg


def _cmd_run(args) -> int:
    problem, x0, cfg = _setup(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        trace = run(problem, x0, cfg)
    write_trace_csv(trace, args.out, psi_star=args.psi_star)
    return EXIT_OK


def _cmd_validate(args) -> int:
    problem, _, cfg = _setup(args)
    notes = validate_config(problem, cfg)
    for note in notes:
        print(note)
    print(f"ok: {cfg.algorithm} on n={problem.n}, p={problem.p}, "
          f"{'clamped' if notes else 'no clamping'}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    if args.bootstrap_from:
        try:
            src = load_libsvm(args.bootstrap_from) if args.problem == "nlse" else load_returns(args.bootstrap_from)
        except FileNotFoundError:
            raise DataError(f"no such dataset: {args.bootstrap_from}") from None
        data = bootstrap_resample(src, args.n, args.seed)
    else:
        if args.p is None:
            raise UsageError("--p is required for synthetic data")
        gen = gen_synthetic_classification if args.problem == "nlse" else gen_synthetic_returns
        data = gen(args.n, args.p, seed=args.seed)
    (write_libsvm if args.problem == "nlse" else write_returns)(data, args.out)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "gen-data": _cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidConfiguration, InvalidParameter, UnsupportedOperation) as exc:
        print(f"stochgn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"stochgn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SubsolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"stochgn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"stochgn: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
