"""Command-line interface.

Subcommands: ``estimate`` (counterfactual mean on a CSV dataset),
``simulate`` (Monte Carlo coverage study with CSV + figure output),
``lowerbound`` (numerical verification of a worst-case construction), and
``plm`` (partially linear logistic fit).  Exit codes: 0 on success, 2 for
input/validation problems, 3 for computation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .core import crossfit_nuisances, load_dataset_csv, make_folds
from .errors import DrustatError, ValidationError
from .estimators import METHODS, estimate
from .lowerbounds import VARIANTS, build_pair, make_bump_basis, verify_pair
from .plm_logit import load_plm_csv, solve_theta
from .simulation import (
    SIM_METHODS,
    SimulationConfig,
    run_monte_carlo,
    write_coverage_csv,
    write_errors_csv,
)

THREADS_ENV = "DRUSTAT_THREADS"


def _parse_h(value: Optional[str]):
    if value is None or value == "cv":
        return value
    try:
        h = float(value)
    except ValueError:
        raise ValidationError("BAD_INPUT", f"--h must be a positive number or 'cv', got {value!r}")
    if h <= 0:
        raise ValidationError("BAD_INPUT", f"--h must be positive, got {h}")
    return h


def _resolve_threads(value: Optional[int]) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError("BAD_INPUT", f"{THREADS_ENV} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _emit_json(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_estimate(args) -> int:
    data, nuis = load_dataset_csv(args.input)
    if nuis is None:
        folds = make_folds(data.n, args.folds, args.seed)
        fit = crossfit_nuisances(data, folds)
        nuis = fit.nuisances
        source = "crossfit"
        extra = {"pi_clamp_count": fit.pi_clamp_count}
    else:
        source = "supplied"
        extra = {}
    report = estimate(
        args.method, data, nuis, h=_parse_h(args.h), alpha=args.alpha, family=args.kernel
    )
    payload = report.to_dict()
    payload["nuisance_source"] = source
    payload.update(extra)
    _emit_json(payload, args.out)
    return 0


def _cmd_simulate(args) -> int:
    h = _parse_h(args.h)
    config = SimulationConfig(
        n_values=tuple(args.n),
        reps=args.reps,
        r_pi=args.r_pi,
        r_mu=args.r_mu,
        alpha=args.alpha,
        seed=args.seed,
        methods=tuple(args.methods),
        bandwidth="cv" if h is None else h,
        family=args.kernel,
        threads=_resolve_threads(args.threads),
    )
    results = run_monte_carlo(config)
    os.makedirs(args.out, exist_ok=True)
    errors_path = os.path.join(args.out, "errors.csv")
    coverage_path = os.path.join(args.out, "coverage.csv")
    write_errors_csv(results, errors_path)
    write_coverage_csv(results, coverage_path)
    written = [errors_path, coverage_path]
    if not args.no_figures:
        from .figures import render_simulation_figures

        written += render_simulation_figures(results, args.out)
    for path in written:
        print(path)
    if any(s.n_success == 0 for s in results.summaries):
        print("at least one (method, n) cell failed on every replicate", file=sys.stderr)
        return 3
    return 0


def _cmd_lowerbound(args) -> int:
    basis = make_bump_basis(args.k, args.d)
    pair = build_pair(args.variant, args.eps, args.delta, basis)
    report = verify_pair(pair, points_per_axis=args.points_per_axis)
    _emit_json(report.to_dict(), args.out)
    return 0


def _cmd_plm(args) -> int:
    data = load_plm_csv(args.input)
    report = solve_theta(data, h=_parse_h(args.h), alpha=args.alpha, family=args.kernel)
    _emit_json(report.to_dict(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drustat",
        description="Doubly-robust counterfactual-mean estimation with kernel "
        "U-statistic bias corrections.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate the counterfactual mean from a CSV")
    p_est.add_argument("--input", required=True, help="CSV with columns y,a,x1..xd[,omega_hat,mu_hat|,pi_hat,mu_hat]")
    p_est.add_argument("--method", choices=METHODS, default="main")
    p_est.add_argument("--h", default=None, help="bandwidth value, 'cv', or omit for the rate default")
    p_est.add_argument("--alpha", type=float, default=0.05)
    p_est.add_argument("--folds", type=int, default=2, help="cross-fitting folds when nuisances are absent")
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--kernel", choices=("box", "epanechnikov"), default="box")
    p_est.add_argument("--threads", type=int, default=None)
    p_est.add_argument("--out", default=None, help="write the JSON report here (default stdout)")
    p_est.set_defaults(func=_cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run the Monte Carlo coverage study")
    p_sim.add_argument("--n", type=int, nargs="+", default=[500, 1000, 1500, 2000])
    p_sim.add_argument("--reps", type=int, default=500)
    p_sim.add_argument("--r-pi", type=float, default=0.3, dest="r_pi")
    p_sim.add_argument("--r-mu", type=float, default=0.3, dest="r_mu")
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--methods", nargs="+", choices=SIM_METHODS, default=["aipw", "omega", "mu", "main"])
    p_sim.add_argument("--h", default=None, help="shared bandwidth; default is the CV selector")
    p_sim.add_argument("--kernel", choices=("box", "epanechnikov"), default="box")
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p_sim.add_argument("--out", default="sim_out", help="output directory for CSVs and figures")
    p_sim.set_defaults(func=_cmd_simulate)

    p_lb = sub.add_parser("lowerbound", help="verify a worst-case construction pair")
    p_lb.add_argument("--variant", choices=VARIANTS, required=True)
    p_lb.add_argument("--eps", type=float, required=True)
    p_lb.add_argument("--delta", type=float, required=True)
    p_lb.add_argument("--k", type=int, default=2, help="number of bump cubes")
    p_lb.add_argument("--d", type=int, default=1, help="covariate dimension")
    p_lb.add_argument("--points-per-axis", type=int, default=256)
    p_lb.add_argument("--out", default=None)
    p_lb.set_defaults(func=_cmd_lowerbound)

    p_plm = sub.add_parser("plm", help="fit the partially linear logistic model")
    p_plm.add_argument("--input", required=True, help="CSV with columns y,a,x1..xd[,v_hat][,m_hat]")
    p_plm.add_argument("--h", default=None, help="bandwidth value, 'cv', or omit for the rate default")
    p_plm.add_argument("--alpha", type=float, default=0.05)
    p_plm.add_argument("--seed", type=int, default=0)
    p_plm.add_argument("--kernel", choices=("box", "epanechnikov"), default="box")
    p_plm.add_argument("--out", default=None)
    p_plm.set_defaults(func=_cmd_plm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DrustatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
