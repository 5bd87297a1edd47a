"""Command line entry point.

``geospline solve <config.json> [--out DIR] [--check-stationarity] [--scheme euler|rk4] [--h FLOAT]``

Writes ``trajectory.csv`` and ``diagnostics.json`` into ``--out``. Exit codes:
0 on success, 1 on invalid input, 2 when Newton does not converge (the best
iterate's diagnostics are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, load_problem, write_trajectory_csv
from .lie_groups import LogBranchError, get_group, inverse_matrix
from .potentials import InsideObstacle
from .shooting import NoConvergence, ValidationError, solve
from .variational_oracle import functional_J, stationarity_test

logger = logging.getLogger("geospline")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NO_CONVERGENCE = 2


def shipped_problems() -> list:
    """Names of the problem files bundled with the package."""
    root = resources.files("geospline") / "problems"
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".json"))


def resolve_config(name) -> Path:
    """Use ``name`` as a path if it exists, else look it up among the bundled problems."""
    path = Path(name)
    if path.exists():
        return path
    bundled = Path(str(resources.files("geospline") / "problems" / f"{path.stem}.json"))
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"{name}: no such file or bundled problem (bundled: {', '.join(shipped_problems())})")


def knot_errors(sol) -> list:
    """Norm of ``log(x_i^-1 x(T_i))`` at every knot, endpoints included."""
    G = get_group(sol.problem.group)
    errs = []
    for i, (_, g) in enumerate(sol.problem.knots):
        x = sol.segments[0].x[0] if i == 0 else sol.segments[i - 1].x[-1]
        errs.append(float(np.linalg.norm(G.log(inverse_matrix(G, g.matrix) @ x))))
    return errs


def diagnostics(sol, stationarity=None) -> dict:
    p = sol.problem
    out = {"problem": p.name, "group": p.group, **sol.diagnostics()}
    out["knot_pose_errors"] = knot_errors(sol)
    try:
        out["J"] = float(functional_J(sol.trajectory, p.sigma, p.obstacles, breaks=p.times))
    except (InsideObstacle, FloatingPointError, ValueError) as e:
        out["J"] = None
        logger.warning("functional not evaluated: %s", e)
    out["orthogonality_drift"] = sol.trajectory.orthogonality_drift
    if stationarity is not None:
        out["stationarity"] = float(stationarity)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, allow_nan=True) + "\n")


def run(args) -> int:
    out = Path(args.out)
    try:
        p = load_problem(resolve_config(args.config))
        overrides = {}
        if args.scheme:
            overrides["scheme"] = args.scheme
        if args.h is not None:
            overrides["h"] = args.h
        if overrides:
            p = p.with_solver(**overrides)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as e:
        print(f"error: invalid problem file ({e})", file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, LogBranchError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID

    out.mkdir(parents=True, exist_ok=True)
    logger.info("solving %s on %s with %d segments", p.name or args.config, p.group, p.n_segments)
    try:
        sol = solve(p, callback=lambda k, r: logger.info("iteration %d: residual %.3e", k, r))
    except LogBranchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NoConvergence as e:
        print(f"error: {e}", file=sys.stderr)
        if e.solution is not None:
            write_trajectory_csv(e.solution.trajectory, p.obstacles, out / "trajectory.csv")
            _write_json(out / "diagnostics.json", diagnostics(e.solution))
        return EXIT_NO_CONVERGENCE
    except InsideObstacle as e:
        print(f"error: {e}", file=sys.stderr)
        _write_json(out / "diagnostics.json", {"problem": p.name, "converged": False, "error": str(e)})
        return EXIT_NO_CONVERGENCE

    score = None
    if args.check_stationarity:
        score = stationarity_test(sol, p)
        logger.info("stationarity %.3e", score)
    write_trajectory_csv(sol.trajectory, p.obstacles, out / "trajectory.csv")
    _write_json(out / "diagnostics.json", diagnostics(sol, score))
    print(f"converged in {sol.newton_iters} iterations, residual {sol.residual_norm:.3e}; wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geospline", description="Obstacle-avoiding splines in tension on Lie groups.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log Newton progress")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve an interpolation problem")
    s.add_argument("config", help="problem JSON file or the name of a bundled problem")
    s.add_argument("--out", default=".", help="output directory (default: current directory)")
    s.add_argument("--check-stationarity", action="store_true", help="run the first-variation check")
    s.add_argument("--scheme", choices=["euler", "rk4"], help="override the integrator")
    s.add_argument("--h", type=float, help="override the step size")
    sub.add_parser("list", help="list bundled problems")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "list":
        print("\n".join(shipped_problems()))
        return EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        return run(args)


if __name__ == "__main__":
    sys.exit(main())
