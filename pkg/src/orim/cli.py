"""Command-line interface.

    orim compute    --forward A.csv --eta 0.1 --rank 3 --method closed_form --out DIR
    orim update     --forward A.mtx --initial P.csv --eta 0.1 --max-rank 10 --out DIR
    orim experiment {heat,deblur,tomo} [--config FILE] [--seed N] [--out DIR]

Exit codes: 0 success, 1 usage error or malformed input, 2 numerical failure.
Nothing is written unless the computation succeeds.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, FactorizationError, PreconditionError
from .experiments import ALIASES, ExperimentConfig, run_experiment
from .io import read_matrix, read_vector, write_config, write_csv
from .model import (
    InverseProblem,
    PriorModel,
    identity_prior,
    prior_from_mean_cov,
    prior_from_mean_diag,
)
from .problems import HeatParams, heat_problem
from .rank_update import UpdateConfig, orim_update
from .regularizers import (
    orim0_inverse,
    orim_closed_form,
    tikhonov_inverse,
    truncated_tikhonov,
    tsvd_inverse,
)
from .risk import bayes_risk

METHODS = ("closed_form", "rank_update", "tsvd", "tikhonov", "ttik", "orim0")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_problem_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--forward", help="forward matrix (.csv dense or .mtx MatrixMarket)")
    src.add_argument("--problem", help="built-in problem, e.g. heat:n=200,kappa=1")
    p.add_argument("--eta", type=float, required=True, help="noise standard deviation")
    p.add_argument("--mean", help="prior mean vector (CSV)")
    cov = p.add_mutually_exclusive_group()
    cov.add_argument("--cov", help="prior covariance matrix (CSV)")
    cov.add_argument("--cov-diag", help="prior covariance diagonal (CSV)")
    p.add_argument("--initial", help="initial inverse P (CSV or .mtx); default zero")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orim", description="Optimal regularized inverse matrices.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compute", help="rank-r regularized inverse by a chosen method")
    _add_problem_args(c)
    c.add_argument("--rank", type=int, help="target rank r (not used by tikhonov)")
    c.add_argument("--method", choices=METHODS, default="closed_form")
    c.add_argument("--tol", type=float, default=1e-6, help="outer tolerance for rank_update")
    c.add_argument("--seed", type=int, default=0)

    u = sub.add_parser("update", help="low-rank update of an initial inverse by rank-1 steps")
    _add_problem_args(u)
    u.add_argument("--max-rank", type=int, default=20)
    u.add_argument("--tol", type=float, default=1e-6)
    u.add_argument("--inner-tol", type=float, default=1e-6)
    u.add_argument("--y-solver", choices=("lsqr", "dense"), default="lsqr")
    u.add_argument("--init", choices=("random_orthogonal", "ones"), default="random_orthogonal")
    u.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("experiment", help="run one of the reconstruction experiments")
    e.add_argument("name", choices=sorted(ALIASES))
    e.add_argument("--config", help="key=value config file")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="output directory (overrides output_dir)")
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config parameter")
    return parser


def _builtin_problem(spec: str):
    name, _, rest = spec.partition(":")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise PreconditionError(f"bad problem parameter {item!r}")
        kwargs[key.strip()] = value.strip()
    if name == "heat":
        try:
            params = HeatParams(int(kwargs.pop("n", 200)), float(kwargs.pop("kappa", 1.0)))
        except ValueError as exc:
            raise PreconditionError(f"bad heat parameters: {exc}") from exc
        if kwargs:
            raise PreconditionError(f"unknown heat parameters {sorted(kwargs)}")
        return heat_problem(params)
    raise PreconditionError(f"unknown built-in problem {name!r}")


def _load_problem(args) -> InverseProblem:
    A = read_matrix(args.forward) if args.forward else _builtin_problem(args.problem)
    m, n = A.shape
    mean = read_vector(args.mean) if args.mean else np.zeros(n)
    if mean.size != n:
        raise PreconditionError(f"mean has length {mean.size}, expected {n}")
    if args.cov:
        cov = read_matrix(args.cov)
        prior = prior_from_mean_cov(mean, cov.toarray() if sp.issparse(cov) else cov)
    elif args.cov_diag:
        prior = prior_from_mean_diag(mean, read_vector(args.cov_diag))
    elif args.mean:
        prior = prior_from_mean_diag(mean, np.ones(n))
    else:
        prior = identity_prior(n)
    P = read_matrix(args.initial) if args.initial else None
    return InverseProblem(A, args.eta, prior, P)


def _prior_factor(prior: PriorModel) -> np.ndarray:
    return prior.factor_operator.to_dense()


def _compute(args):
    problem = _load_problem(args)
    method = args.method
    if method != "tikhonov" and args.rank is None:
        raise PreconditionError(f"--rank is required for method {method}")
    files, info = {}, {"method": method}
    if method in ("closed_form", "rank_update"):
        if method == "closed_form":
            Z, inter = orim_closed_form(problem, args.rank)
            unique = inter.unique
        else:
            Z, trace = orim_update(problem, UpdateConfig(outer_tol=args.tol,
                                                         outer_max_rank=args.rank,
                                                         seed=args.seed))
            unique, info["termination"] = True, trace.termination
        files = {"X.csv": Z.X, "Y.csv": Z.Y}
        f = bayes_risk(problem, Z)
        rank = Z.rank
    else:
        if not problem.has_zero_initial:
            raise PreconditionError(f"method {method} does not take an initial inverse")
        A = problem.forward_dense
        if method == "tsvd":
            R = tsvd_inverse(A, args.rank)
        elif method == "ttik":
            R = truncated_tikhonov(A, args.rank, args.eta)
        elif method == "tikhonov":
            R = tikhonov_inverse(A, args.eta)
        else:
            R = orim0_inverse(A, _prior_factor(PriorModel(np.zeros(problem.n),
                                                          problem.prior.covariance_dense())),
                              args.eta, args.rank)
        Zd = R.to_dense()
        files = {"Z.csv": Zd}
        f = bayes_risk(problem, Zd)
        unique = R.unique
        rank = int(np.linalg.matrix_rank(Zd)) if Zd.size else 0
    info.update({"f": repr(float(f)), "unique": str(bool(unique)).lower(), "rank": str(rank)})
    return files, info


def _update(args):
    problem = _load_problem(args)
    cfg = UpdateConfig(outer_tol=args.tol, outer_max_rank=args.max_rank,
                       inner_tol=args.inner_tol, y_solver=args.y_solver,
                       init_strategy=args.init, seed=args.seed)
    Z, trace = orim_update(problem, cfg)
    info = {"method": "rank_update", "f": repr(float(trace.final_f)), "f0": repr(float(trace.f0)),
            "rank": str(Z.rank), "termination": trace.termination, "unique": "true"}
    trace_rows = np.array([[r.rank, r.f, r.inner_iterations] for r in trace.records]) \
        if trace.records else np.zeros((0, 3))
    return {"X.csv": Z.X, "Y.csv": Z.Y, "trace.csv": trace_rows}, info


def _write_outputs(out: Path, files: dict, info: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, M in files.items():
        write_csv(out / name, M)
    write_config(out / "result.txt", info)


def _experiment(args):
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise PreconditionError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
        if cfg.experiment != ALIASES[args.name]:
            raise PreconditionError(f"config is for {cfg.experiment}, not {ALIASES[args.name]}")
    else:
        cfg = ExperimentConfig.from_dict({"experiment": args.name, **overrides})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    if not cfg.output_dir:
        cfg.output_dir = f"orim-{cfg.experiment}"
    report = run_experiment(cfg)
    report.write(cfg.output_dir)
    for key, value in sorted(report.metrics.items()):
        print(f"{key} = {value}")
    for key, value in sorted(report.timing_metrics.items()):
        print(f"{key} = {value}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"orim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            if args.command == "experiment":
                _experiment(args)
                return EXIT_OK
            files, info = _compute(args) if args.command == "compute" else _update(args)
        _write_outputs(Path(args.out), files, info)
        for key, value in info.items():
            print(f"{key} = {value}")
        return EXIT_OK
    except PreconditionError as exc:
        print(f"orim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FactorizationError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"orim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
