"""Command-line interface.

Subcommands: simulate, fit, pc, montecarlo, eval. Exit codes: 0 success,
2 validation error, 3 numerical failure, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as dfm_io
from .em import AscentViolationError, EmConfig, EmError, em_fit
from .extensions import RidgeConfig, ecm_fit, ridge_fit
from .kalman import FilterNumericalError
from .metrics import common_mse, trace_statistic
from .model import ModelDims, Panel, ShapeError
from .montecarlo import CellAbortError, McGrid, run_grid, write_report
from .pca import IdentificationError, pc_estimate
from .simulate import DgpConfig, draw_dgp

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4

PARALLEL_ENV = "DFM_EM_PARALLEL"


def _default_parallelism() -> int:
    try:
        return max(1, int(os.environ.get(PARALLEL_ENV, "1")))
    except ValueError:
        return 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dfm-em",
        description="Dynamic factor model estimation by EM with Kalman smoothing",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic panel")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--T", type=int, required=True)
    sim.add_argument("--r", type=int, required=True)
    sim.add_argument("--q", type=int, required=True)
    sim.add_argument("--tau", type=float, default=0.0)
    sim.add_argument("--delta", type=float, default=0.0)
    sim.add_argument("--theta", type=float, default=0.5)
    sim.add_argument("--mu", type=float, default=0.5)
    sim.add_argument("--innovation", choices=["gaussian", "student_t4"],
                     default="gaussian")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--overwrite", action="store_true")

    fit = sub.add_parser("fit", help="fit the model to a panel CSV")
    fit.add_argument("--panel", required=True)
    fit.add_argument("--r", type=int, required=True)
    fit.add_argument("--q", type=int, required=True)
    fit.add_argument("--epsilon", type=float, default=1e-4)
    fit.add_argument("--max-iter", type=int, default=500)
    fit.add_argument("--standardize", action="store_true",
                     help="center and scale each series to unit variance "
                          "before fitting")
    fit.add_argument("--idio-cov", choices=["diag", "ridge"], default="diag")
    fit.add_argument("--ridge-mu", default="auto",
                     help="'auto' for the n^2/T rule or a fixed value")
    fit.add_argument("--idio-ar", choices=["off", "ecm"], default="off")
    fit.add_argument("--out", required=True)
    fit.add_argument("--overwrite", action="store_true")

    pc = sub.add_parser("pc", help="principal-components estimation only")
    pc.add_argument("--panel", required=True)
    pc.add_argument("--r", type=int, required=True)
    pc.add_argument("--q", type=int, required=True)
    pc.add_argument("--out", required=True)
    pc.add_argument("--overwrite", action="store_true")

    mc = sub.add_parser("montecarlo", help="run a Monte Carlo experiment file")
    mc.add_argument("experiment",
                    help="experiment JSON path, or the name of a bundled file "
                         "(e.g. 'table4_small')")
    mc.add_argument("--out", required=True)
    mc.add_argument("--parallel", type=int, default=_default_parallelism())
    mc.add_argument("--overwrite", action="store_true")

    ev = sub.add_parser("eval", help="compare a fit against a simulated truth")
    ev.add_argument("--truth", required=True, help="directory from 'simulate'")
    ev.add_argument("--fit", required=True, help="directory from 'fit' or 'pc'")
    ev.add_argument("--out", default=None, help="optional JSON output path")
    ev.add_argument("--overwrite", action="store_true")
    return p


def _cmd_simulate(args) -> int:
    config = DgpConfig(
        dims=ModelDims(n=args.n, T=args.T, r=args.r, q=args.q),
        tau=args.tau, delta=args.delta, theta=args.theta, mu=args.mu,
        innovation=args.innovation, seed=args.seed,
    )
    draw = draw_dgp(config)
    dfm_io.write_dgp_draw(draw, args.out, overwrite=args.overwrite)
    print(f"wrote draw (n={args.n}, T={args.T}) to {args.out}")
    return EXIT_OK


def _ridge_config(text: str) -> RidgeConfig:
    if text == "auto":
        return RidgeConfig(policy="auto")
    try:
        return RidgeConfig(policy="fixed", mu=float(text))
    except ValueError as exc:
        raise ValueError(f"--ridge-mu must be 'auto' or a number, got {text!r}") from exc


def _cmd_fit(args) -> int:
    panel = dfm_io.read_panel_csv(args.panel)
    if args.standardize:
        X = panel.X - panel.X.mean(axis=1, keepdims=True)
        X /= X.std(axis=1, keepdims=True)
        panel = Panel(X=X, names=panel.names)
    dims = ModelDims(n=panel.n, T=panel.T, r=args.r, q=args.q)
    config = EmConfig(epsilon=args.epsilon, max_iter=args.max_iter)
    if args.idio_cov == "ridge" and args.idio_ar == "ecm":
        raise ValueError("--idio-cov ridge and --idio-ar ecm are mutually exclusive")
    if args.idio_cov == "ridge":
        result = ridge_fit(panel, dims, config, _ridge_config(args.ridge_mu))
    elif args.idio_ar == "ecm":
        result = ecm_fit(panel, dims, config)
    else:
        result = em_fit(panel, dims, config)
    dfm_io.write_em_result(result, args.out, overwrite=args.overwrite)
    print(f"iterations: {result.iters}")
    print(f"final loglik: {result.loglik_trace[-1]!r}")
    print(f"converged: {result.converged}")
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def _cmd_pc(args) -> int:
    panel = dfm_io.read_panel_csv(args.panel)
    est = pc_estimate(panel, args.r, args.q)
    os.makedirs(args.out, exist_ok=True)
    targets = ["params.json", "factors.csv"]
    if not args.overwrite:
        for name in targets:
            path = os.path.join(args.out, name)
            if os.path.exists(path):
                raise FileExistsError(f"{path} exists; pass --overwrite to replace")
    from .model import DfmParams

    params = DfmParams(Lambda=est.Lambda0, A=est.A0, H=est.H0,
                       gamma_e=est.GammaE0, rho=np.zeros(panel.n))
    dfm_io.write_params_json(params, os.path.join(args.out, "params.json"))
    dfm_io.write_matrix_csv(est.Ftilde.T, os.path.join(args.out, "factors.csv"),
                            header=[f"F{j+1}" for j in range(args.r)])
    print(f"leading eigenvalues: {', '.join(repr(float(v)) for v in est.eigvals)}")
    return EXIT_OK


def _cmd_montecarlo(args) -> int:
    path = args.experiment
    if not os.path.exists(path):
        bundled = os.path.join(os.path.dirname(__file__), "experiments",
                               f"{path}.json")
        if os.path.exists(bundled):
            path = bundled
        else:
            raise ValueError(f"experiment file not found: {args.experiment}")
    grid = McGrid.from_json(path)
    report = run_grid(grid, parallelism=args.parallel)
    write_report(report, args.out, overwrite=args.overwrite)
    print(f"wrote {len(report.cells)} cell rows to {args.out} "
          f"in {report.seconds:.1f}s")
    return EXIT_OK


def _cmd_eval(args) -> int:
    chi_true = dfm_io.read_matrix_csv(
        os.path.join(args.truth, "chi.csv"), has_header=True).T
    F_true = dfm_io.read_matrix_csv(
        os.path.join(args.truth, "factors.csv"), has_header=True).T
    true_params = dfm_io.read_params_json(os.path.join(args.truth, "params.json"))
    fit_params = dfm_io.read_params_json(os.path.join(args.fit, "params.json"))
    F_hat = dfm_io.read_matrix_csv(
        os.path.join(args.fit, "factors.csv"), has_header=True).T
    chi_hat = fit_params.Lambda @ F_hat

    out = {
        "tr_f": trace_statistic(F_true, F_hat).value,
        "tr_lambda": trace_statistic(true_params.Lambda, fit_params.Lambda).value,
        "mse_chi": common_mse(chi_true, chi_hat),
    }
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        if os.path.exists(args.out) and not args.overwrite:
            raise FileExistsError(f"{args.out} exists; pass --overwrite to replace")
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "pc": _cmd_pc,
    "montecarlo": _cmd_montecarlo,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, ShapeError, FileExistsError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FilterNumericalError, IdentificationError, AscentViolationError,
            CellAbortError, EmError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
