"""Command-line interface.

Exit codes: ``0`` success (for ``solve``: converged), ``2`` iteration cap
reached without meeting the tolerance, ``1`` any error.
"""

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import mmio
from .calibration import gaussian_z, t_z
from .exceptions import BayesCGError
from .experiments import ExperimentConfig, PRIOR_LABELS, run_experiment
from .priors import FAMILIES, PriorSpec, build_prior
from .serialize import dumps, posterior_to_dict
from .solver import SolveConfig, bayescg, hierarchical_posterior, termination_sigma
from .testgen import ProblemFamily, write_problem

EXIT_OK, EXIT_ERROR, EXIT_CAP = 0, 1, 2
MODE_ALIASES = {"seq": "sequential", "sequential": "sequential", "batch": "batch",
                "optimal": "optimal", "provided": "provided"}

logger = logging.getLogger("bayescg")


class CLIError(Exception):
    """User-facing failure with a short message."""


def _load_prior_spec(arg):
    if arg is None:
        return PriorSpec("identity")
    if arg in FAMILIES:
        return PriorSpec(arg)
    try:
        with open(arg, encoding="utf-8") as fh:
            return PriorSpec.from_dict(json.load(fh))
    except OSError as err:
        raise CLIError(f"cannot read prior file {arg}: {err}") from err
    except (ValueError, KeyError, TypeError) as err:
        raise CLIError(f"invalid prior file {arg}: {err}") from err


def _read(path, what, vector=False):
    if not os.path.isfile(path):
        raise CLIError(f"cannot read {what} {path}: no such file")
    try:
        return mmio.read_vector(path) if vector else mmio.read_matrix(path)
    except OSError as err:
        raise CLIError(f"cannot read {what} {path}: {err}") from err
    except ValueError as err:
        raise CLIError(f"cannot parse {what} {path}: {err}") from err


def cmd_solve(args):
    A = _read(args.matrix, "matrix")
    b = _read(args.rhs, "right-hand side", vector=True)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise CLIError(f"dimension mismatch: A is {A.shape}, b has length {b.shape[0]}")
    spec = _load_prior_spec(args.prior)
    prior = build_prior(spec, A, b)
    mode = MODE_ALIASES[args.mode]
    directions = None
    if mode == "provided":
        if not args.directions:
            raise CLIError("--mode provided needs --directions")
        directions = _read(args.directions, "directions")
        directions = directions.toarray() if hasattr(directions, "toarray") else directions
    config = SolveConfig(max_iter=args.max_iter, tol=args.tol, mode=mode, directions=directions,
                         hierarchical=args.hierarchical)
    post = bayescg(A, b, prior, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = posterior_to_dict(post)
    summary = {"m": post.m, "converged": post.converged, "residual": float(post.residual_history[-1]),
               "nu": post.nu}
    if post.m >= 1 and post.m <= post.d:
        summary["termination_sigma"] = termination_sigma(post)
    if args.x_star:
        x_star = _read(args.x_star, "true solution", vector=True)
        if post.m < post.d:
            summary["gaussian_z"] = gaussian_z(post, x_star)
            if args.hierarchical and post.m >= 1 and post.nu > 0:
                summary["t_z"] = t_z(hierarchical_posterior(post), x_star)
        else:
            # past d iterations the directions are no longer independent
            summary["gaussian_z"] = None
            logger.warning("m = %d >= d: calibration statistics are undefined", post.m)
    if args.hierarchical and post.m >= 1:
        doc["hierarchical"] = {"dof": post.m, "ig_shape": post.m / 2.0, "ig_scale": post.m * post.nu / 2.0}
    with open(out / "posterior.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc))
    with open(out / "residuals.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# schema: bayescg.residuals/1\nm,residual\n")
        for m, r in enumerate(post.residual_history):
            fh.write(f"{m},{float(r)!r}\n")
    print(json.dumps(summary, sort_keys=True))
    if not post.converged:
        print(f"iteration cap reached: residual {post.residual_history[-1]:.6e} after {post.m} iterations",
              file=sys.stderr)
        return EXIT_CAP
    return EXIT_OK


def cmd_generate(args):
    fam = ProblemFamily(d=args.d, density=args.density, eig_rate=args.gamma, seed=args.seed,
                        family=args.family)
    paths = write_problem(fam, args.out, rhs_seed=args.rhs_seed)
    print(json.dumps(paths, sort_keys=True))
    return EXIT_OK


def _experiment_config(args, experiment):
    base = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, ValueError) as err:
            raise CLIError(f"cannot read config {args.config}: {err}") from err
    base["experiment"] = experiment
    problem = dict(base.get("problem", {}))
    for key, attr in (("d", "d"), ("density", "density"), ("eig_rate", "gamma"), ("family", "family")):
        v = getattr(args, attr)
        if v is not None:
            problem[key] = v
    if args.seed is not None:
        problem["seed"] = args.seed
        base["seed"] = args.seed
    base["problem"] = problem
    for key, attr in (("replicates", "replicates"), ("max_iter", "max_iter"), ("tol", "tol"),
                      ("workers", "workers"), ("out", "out"), ("m_uq", "m_uq")):
        v = getattr(args, attr)
        if v is not None:
            base[key] = v
    if args.priors:
        base["priors"] = args.priors.split(",")
    if args.mode:
        base["modes"] = [MODE_ALIASES[m] for m in args.mode.split(",")]
    try:
        return ExperimentConfig.from_dict(base)
    except (TypeError, ValueError) as err:
        raise CLIError(f"invalid experiment configuration: {err}") from err


def cmd_experiment(args):
    cfg = _experiment_config(args, args.command)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if not os.access(cfg.out, os.W_OK):
        raise CLIError(f"output directory {cfg.out} is not writable")
    result = run_experiment(cfg)
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bayescg", description="Bayesian conjugate gradient solver and experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a system given in Matrix Market files")
    s.add_argument("--matrix", required=True)
    s.add_argument("--rhs", required=True)
    s.add_argument("--prior", help=f"prior JSON file or family name ({', '.join(FAMILIES)})")
    s.add_argument("--mode", choices=sorted(MODE_ALIASES), default="seq")
    s.add_argument("--directions", help="Matrix Market file of directions for --mode provided")
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--hierarchical", action="store_true")
    s.add_argument("--x-star", help="true solution, to report calibration statistics")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("generate", help="write a random test problem")
    g.add_argument("--family", choices=["sparse_spd", "poisson2d"], default="sparse_spd")
    g.add_argument("--d", type=int, default=100)
    g.add_argument("--density", type=float, default=0.2)
    g.add_argument("--gamma", type=float, default=10.0, help="rate of the exponential eigenvalue law")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rhs-seed", type=int, help="also write b and x*")
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_generate)

    for name, helptext in (("convergence", "error and covariance-trace traces"),
                           ("uq", "calibration statistics"),
                           ("compare", "BayesCG versus the matrix-based solver")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--config", help="JSON experiment configuration")
        e.add_argument("--family", choices=["sparse_spd", "poisson2d"])
        e.add_argument("--d", type=int)
        e.add_argument("--density", type=float)
        e.add_argument("--gamma", type=float)
        e.add_argument("--priors", help=f"comma-separated subset of {','.join(PRIOR_LABELS)}")
        e.add_argument("--mode", help="comma-separated direction modes (convergence)")
        e.add_argument("--replicates", type=int)
        e.add_argument("--seed", type=int)
        e.add_argument("--max-iter", type=int)
        e.add_argument("--m-uq", type=int)
        e.add_argument("--tol", type=float)
        e.add_argument("--hierarchical", action="store_true", help="accepted for symmetry; t statistics are always reported")
        e.add_argument("--workers", type=int)
        e.add_argument("--out")
        e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as err:
        print(f"error: {err}", file=sys.stderr)
    except BayesCGError as err:
        print(f"solver error: {err}", file=sys.stderr)
    except (ValueError, np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
