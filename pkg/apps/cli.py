"""
コマンドラインから問題の一覧、感度の検証、サブフロント、膝解、近傍の比較表を実行する。

    python -m apps list-problems
    python -m apps subfront --problem ZLT1 --kind ellipsoid --size 0.1 \
        --center 0.8,0.1,0.1
    python -m apps knee --problem VFM1 --method nm --start 0.4,0.2,0.4
    python -m apps table1 --out ./outputs

終了コードは成功で 0、ソルバーや感度の失敗で 1、設定の誤りで 2。
"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from apps.config import Command, OutputFormat, RunConfig
from apps.outputs import (
    knee_summary,
    knee_trace_frame,
    subfront_frame,
    subfront_summary,
    to_jsonable,
    write_frame,
    write_json,
)
from apps.snee.config import (
    DIRECT_OPTIONS,
    NELDER_MEAD_OPTIONS,
    SOLVER_OPTIONS,
    DirectOptions,
    NelderMeadOptions,
    SolverOptions,
)
from apps.snee.errors import SneeError
from apps.snee.inner_solvers import SolutionCache
from apps.snee.knee import default_start, find_knee
from apps.snee.neighborhoods import (
    NeighborhoodSpec,
    compute_mcm,
    compute_subfront,
    ideal_nadir,
)
from apps.snee.problems import list_problems, make_problem
from apps.snee.scalarization import simplex_grid
from apps.snee.sensitivity import check_gradient
from apps.table1 import compute_table1

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", help="Problem name (see list-problems).")
    common.add_argument("--grid-step", type=float, help="Spacing of the weight grid.")
    common.add_argument("--kind", choices=["ball", "ellipsoid", "cassini"])
    common.add_argument("--size", type=float, help="r, alpha or beta.")
    common.add_argument("--alpha-mode", choices=["fixed", "adaptive"])
    common.add_argument("--adaptive-factor", type=float)
    common.add_argument("--center", help="Comma separated weights.")
    common.add_argument(
        "--method", "--dfo", dest="method", choices=["nm", "direct"], default="nm"
    )
    common.add_argument("--start", help="Comma separated weights for Nelder-Mead.")
    common.add_argument(
        "--seedless",
        action="store_true",
        help="Start from the registered default weights instead of --start.",
    )
    common.add_argument("--budget", type=int, help="Maximum objective evaluations.")
    common.add_argument("--h", type=float, help="Finite difference step of check-grad.")
    common.add_argument("--out", dest="output_dir", help="Output directory.")
    common.add_argument("--format", choices=[f.value for f in OutputFormat])
    common.add_argument("--inner-tol", type=float)
    common.add_argument("--inner-maxiter", type=int)
    common.add_argument(
        "--warm-start", action=argparse.BooleanOptionalAction, default=None
    )
    common.add_argument("--workers", type=int)
    common.add_argument("--r", type=float, help="DO2DK parameter r.")
    common.add_argument("--nbar", type=int, help="Decision dimension of ZLT1q/GRV2.")
    common.add_argument("--qbar", type=int, help="Number of objectives of ZLT1q.")
    common.add_argument("--verbose", "-v", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="python -m apps",
        description="Pareto sensitivity, sub-fronts and knee solutions.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        commands.add_parser(command.value, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    ## Description:
        コマンドライン引数を RunConfig に変換する。
    ## Raises:
        pydantic.ValidationError: 設定が不正
    """
    params = {
        key: getattr(args, key)
        for key in ("r", "nbar", "qbar")
        if getattr(args, key) is not None
    }
    neighborhood = None
    if args.kind is not None:
        spec = {"kind": args.kind, "size": args.size}
        if args.alpha_mode is not None:
            spec["alpha_mode"] = args.alpha_mode
        if args.adaptive_factor is not None:
            spec["adaptive_factor"] = args.adaptive_factor
        neighborhood = NeighborhoodSpec(**spec)
    data = {
        "command": args.command,
        "problem": args.problem,
        "params": params,
        "grid_step": args.grid_step,
        "neighborhood": neighborhood,
        "center": args.center,
        "method": args.method,
        "start": args.start,
        "seedless": args.seedless,
        "budget": args.budget,
        "format": args.format,
        "output_dir": args.output_dir,
        "workers": args.workers,
        "inner_tol": args.inner_tol,
        "inner_maxiter": args.inner_maxiter,
        "warm_start": args.warm_start,
        "h": args.h,
    }
    return RunConfig(**{k: v for k, v in data.items() if v is not None})


def solver_options(config: RunConfig) -> SolverOptions:
    update = {
        "tol_stat": config.inner_tol,
        "tol_kkt": config.inner_tol,
        "max_iter": config.inner_maxiter,
        "warm_start": config.warm_start,
        "workers": config.workers,
    }
    return SOLVER_OPTIONS.model_copy(
        update={k: v for k, v in update.items() if v is not None}
    )


def _budgets(config: RunConfig) -> tuple[NelderMeadOptions, DirectOptions]:
    if config.budget is None:
        return NELDER_MEAD_OPTIONS, DIRECT_OPTIONS
    update = {"budget": config.budget}
    return (
        NELDER_MEAD_OPTIONS.model_copy(update=update),
        DIRECT_OPTIONS.model_copy(update=update),
    )


def _run_list_problems(config: RunConfig) -> None:
    records = list_problems()
    write_json(records, config.output_dir, "problems")
    print(json.dumps(to_jsonable(records), indent=4, ensure_ascii=False))


def _run_check_grad(config: RunConfig, opts: SolverOptions) -> None:
    problem = make_problem(config.problem, config.params)
    lam = config.center or config.start or default_start(problem)
    report = check_gradient(problem, lam, config.h, solver_opts=opts)
    write_json(report.to_dict(), config.output_dir, f"check_grad_{problem.name}")


def _run_subfront(config: RunConfig, opts: SolverOptions) -> None:
    problem = make_problem(config.problem, config.params)
    center = config.center or default_start(problem)
    grid = simplex_grid(problem.q, config.step_for(problem.q))
    cache = SolutionCache()
    bounds = ideal_nadir(problem, grid, cache, opts, config.workers)
    spec = config.neighborhood
    subfront = compute_subfront(
        problem, spec, center, grid, cache=cache, solver_opts=opts, workers=config.workers
    )
    mcm = compute_mcm(problem, subfront, bounds)
    name = f"subfront_{problem.name}_{spec.label}"
    write_frame(subfront_frame(subfront), config.output_dir, name, config.format)
    summary = subfront_summary(problem.record(), subfront, mcm, spec)
    write_json(summary, config.output_dir, f"{name}_summary")


def _run_knee(config: RunConfig, opts: SolverOptions) -> None:
    problem = make_problem(config.problem, config.params)
    nm_opts, direct_opts = _budgets(config)
    alpha_mode = config.neighborhood.alpha_mode if config.neighborhood else None
    result = find_knee(
        problem,
        config.method,
        config.start,
        grid=simplex_grid(problem.q, config.step_for(problem.q)),
        alpha_mode=alpha_mode,
        nm_opts=nm_opts,
        direct_opts=direct_opts,
        solver_opts=opts,
    )
    name = f"knee_{problem.name}_{config.method}"
    trace = knee_trace_frame(result)
    write_frame(trace, config.output_dir, f"{name}_trace", config.format)
    write_json(knee_summary(problem.record(), result), config.output_dir, name)


def _run_table1(config: RunConfig, opts: SolverOptions) -> None:
    report = compute_table1(
        grid_step=config.grid_step, solver_opts=opts, workers=config.workers
    )
    write_frame(report.table, config.output_dir, "table1", config.format)
    write_json(report.summary(), config.output_dir, "table1_summary")


def run(config: RunConfig) -> int:
    """
    ## Description:
        設定に従ってコマンドを 1 つ実行し、結果を config.output_dir に書き出す。
    ## Returns:
        int: 終了コード（0: 成功、1: ソルバーや感度の失敗、2: 設定の誤り）
    """
    opts = solver_options(config)
    try:
        if config.command == Command.list_problems:
            _run_list_problems(config)
        elif config.command == Command.check_grad:
            _run_check_grad(config, opts)
        elif config.command == Command.subfront:
            _run_subfront(config, opts)
        elif config.command == Command.knee:
            _run_knee(config, opts)
        else:
            _run_table1(config, opts)
    except SneeError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = config_from_args(args)
    except (ValidationError, ValueError) as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)
