"""
最大変化関数 MCF(λ) を単体上で最小化して膝解を求める。

    MCF(λ) = max_{i≠j} ||∇f̄_i(λ)|| / max(||∇f̄_j(λ)||, eps)

(i, j) は順序付きの組なので、列ノルムがすべて eps を超えていれば MCF >= 1。
最小値は列ノルムがそろう点で、そこでの λ が膝解になる。
"""

import logging
import warnings
from enum import Enum
from typing import Literal, NamedTuple, Optional

import numpy as np

from apps.snee.config import (
    GRID_OPTIONS,
    KNEE_OPTIONS,
    DirectOptions,
    KneeOptions,
    NelderMeadOptions,
    SensitivityOptions,
    SolverOptions,
)
from apps.snee.dfo import direct_optimize, nelder_mead
from apps.snee.errors import DegenerateSensitivityWarning, SneeError
from apps.snee.formatter import type_checker_weights, weights_formatter
from apps.snee.inner_solvers import SolutionCache, solve_weighted_sum
from apps.snee.neighborhoods import (
    IdealNadir,
    NeighborhoodSpec,
    compute_mcm,
    compute_subfront,
    ideal_nadir,
)
from apps.snee.problems import MooProblem
from apps.snee.scalarization import SimplexGrid, project_simplex, simplex_grid
from apps.snee.sensitivity import SensitivityResult, compute_sensitivity

logger = logging.getLogger(__name__)


class KneeMethod(Enum):
    nm: str = "nm"
    direct: str = "direct"


class KneeTracePoint(NamedTuple):
    """最良値が更新された評価ごとの記録"""

    iteration: int
    lam: np.ndarray
    mcf: float
    mcm: float
    alpha_used: float


class KneeResult(NamedTuple):
    """
    Args:
        lambda_star(np.ndarray): 膝解の重み
        x_star(np.ndarray): x(λ*)
        f_star(np.ndarray): F(x(λ*))
        mcf_star(float): MCF(λ*)
        trace(list[KneeTracePoint]): 最良値の更新履歴
        method(KneeMethod): nm または direct
        start(np.ndarray | None): Nelder-Mead の初期点
        evaluations(int): MCF の評価回数
        converged(bool): 最適化が収束判定を満たしたか
    """

    lambda_star: np.ndarray
    x_star: np.ndarray
    f_star: np.ndarray
    mcf_star: float
    trace: list[KneeTracePoint]
    method: KneeMethod
    start: Optional[np.ndarray]
    evaluations: int
    converged: bool


def mcf_from_sensitivity(sens: SensitivityResult) -> float:
    """
    ## Description:
        既に求めた ∇F̄(λ) から MCF を計算する。列がすべて 0 なら 0 を返して警告する。
    ## Examples:
        >>> sens = compute_sensitivity(zlt1, solve_weighted_sum(zlt1, [1/3, 1/3, 1/3]))
        >>> round(mcf_from_sensitivity(sens), 6)
        1.0
    """
    eps = np.finfo(float).eps
    norms = sens.column_norms
    if np.all(norms <= eps):
        warnings.warn(
            f"All columns of the sensitivity matrix vanish at lambda={sens.lam.tolist()}",
            DegenerateSensitivityWarning,
            stacklevel=2,
        )
        return 0.0
    ratios = norms[:, None] / np.maximum(norms[None, :], eps)
    np.fill_diagonal(ratios, -np.inf)
    return float(ratios.max())


@type_checker_weights(arg_index=1, kward="lam", size_attr="q")
def mcf_value(
    problem: MooProblem,
    lam: np.ndarray,
    cache: Optional[SolutionCache] = None,
    solver_opts: Optional[SolverOptions] = None,
    sens_opts: Optional[SensitivityOptions] = None,
) -> float:
    """
    ## Description:
        x(λ) を解き、感度から MCF(λ) を求める。制約の有無で感度の計算方法を選ぶ。
        キャッシュを渡すと、最も近い既知の解から解き始める。
    ## Args:
        problem (MooProblem): 問題
        lam (np.ndarray): 重みベクトル
        cache (SolutionCache | None): 解のキャッシュ
    ## Returns:
        float: MCF(λ)
    """
    x0 = None
    if cache is not None:
        neighbour = cache.nearest(problem, lam)
        x0 = neighbour.x if neighbour is not None else None
    sol = solve_weighted_sum(problem, lam, x0, solver_opts, cache)
    return mcf_from_sensitivity(compute_sensitivity(problem, sol, sens_opts))


def default_start(problem: MooProblem, opts: Optional[KneeOptions] = None) -> np.ndarray:
    """問題ごとの既定の初期点。登録がないか長さが合わなければ単体の重心"""
    opts = opts or KNEE_OPTIONS
    start = opts.starts.get(problem.name)
    if start is None or len(start) != problem.q:
        logger.info(
            "%s: no registered start for q=%d, using the centroid",
            problem.name,
            problem.q,
        )
        return np.full(problem.q, 1.0 / problem.q)
    return np.array(start, dtype=float)


def uses_adaptive_alpha(problem: MooProblem, opts: Optional[KneeOptions] = None) -> bool:
    """固定の α では近傍が退化しやすい問題か"""
    opts = opts or KNEE_OPTIONS
    return problem.name in opts.adaptive_problems


def knee_neighborhood(
    problem: MooProblem,
    alpha_mode: Optional[Literal["fixed", "adaptive"]] = None,
    opts: Optional[KneeOptions] = None,
) -> NeighborhoodSpec:
    """膝解の探索中に MCM を測る E_α 近傍"""
    opts = opts or KNEE_OPTIONS
    if alpha_mode is None:
        alpha_mode = "adaptive" if uses_adaptive_alpha(problem, opts) else "fixed"
    if alpha_mode == "adaptive":
        return NeighborhoodSpec(
            kind="ellipsoid", alpha_mode="adaptive", adaptive_factor=opts.adaptive_factor
        )
    return NeighborhoodSpec(kind="ellipsoid", size=opts.fixed_alpha)


def _incumbent_mcm(
    problem: MooProblem,
    spec: NeighborhoodSpec,
    lam: np.ndarray,
    grid: SimplexGrid,
    bounds: IdealNadir,
    cache: SolutionCache,
    solver_opts: Optional[SolverOptions],
    sens_opts: Optional[SensitivityOptions],
) -> tuple[float, float]:
    try:
        subfront = compute_subfront(
            problem, spec, lam, grid, None, cache, solver_opts, sens_opts
        )
        return compute_mcm(problem, subfront, bounds), subfront.size_used
    except SneeError as e:
        logger.info("%s: MCM unavailable at lambda=%s: %s", problem.name, lam.tolist(), e)
        return float("nan"), float("nan")


def find_knee(
    problem: MooProblem,
    method="nm",
    start=None,
    grid: Optional[SimplexGrid] = None,
    alpha_mode: Optional[Literal["fixed", "adaptive"]] = None,
    cache: Optional[SolutionCache] = None,
    with_mcm: bool = True,
    nm_opts: Optional[NelderMeadOptions] = None,
    direct_opts: Optional[DirectOptions] = None,
    solver_opts: Optional[SolverOptions] = None,
    sens_opts: Optional[SensitivityOptions] = None,
    knee_opts: Optional[KneeOptions] = None,
) -> KneeResult:
    """
    ## Description:
        単体への射影を挟んだ MCF を Nelder-Mead または DIRECT（箱 [0, 1]^q）で最小化する。
        感度が求まらない点の MCF は +inf として扱う。
        最良値が更新されるたびに、その点を中心とする E_α 近傍の MCM も記録する。
        MCM は記録のためだけに使い、最小化の対象にはしない。
    ## Args:
        problem (MooProblem): 問題
        method (str | KneeMethod): "nm" または "direct"
        start (array-like | None): Nelder-Mead の初期点。None なら default_start。
            direct では使わない
        grid (SimplexGrid | None): MCM に使う Λ_m。None なら q に応じた既定の刻み幅
        alpha_mode (str | None): "fixed" / "adaptive"。None なら問題ごとの既定値
        cache (SolutionCache | None): 解のキャッシュ
        with_mcm (bool): MCM を記録するか
    ## Returns:
        KneeResult
    ## Examples:
        >>> result = find_knee(make_problem("ZLT1"), "nm", [0.8, 0.1, 0.1])
        >>> np.round(result.lambda_star, 2)
        array([0.33, 0.33, 0.33])
    """
    method = KneeMethod(method)
    knee_opts = knee_opts or KNEE_OPTIONS
    cache = cache if cache is not None else SolutionCache()

    def objective(lam: np.ndarray) -> float:
        try:
            return mcf_value(problem, lam, cache, solver_opts, sens_opts)
        except SneeError as e:
            logger.debug("%s: MCF failed at lambda=%s: %s", problem.name, lam.tolist(), e)
            return float("inf")

    if method == KneeMethod.nm:
        start = default_start(problem, knee_opts) if start is None else start
        start = weights_formatter(start, "start")
        if start.size != problem.q:
            raise ValueError(f"Argument 'start' must have length {problem.q}")
        dfo_trace = nelder_mead(objective, start, nm_opts, transform=project_simplex)
    else:
        start = None
        dfo_trace = direct_optimize(
            objective,
            np.zeros(problem.q),
            np.ones(problem.q),
            direct_opts,
            project_simplex,
        )
    logger.info(
        "%s: %s finished after %d evaluations, MCF=%.6g",
        problem.name,
        method.value,
        dfo_trace.evaluations,
        dfo_trace.best_value,
    )

    trace = []
    if with_mcm:
        grid = grid or simplex_grid(problem.q, GRID_OPTIONS.step_for(problem.q))
        bounds = ideal_nadir(problem, grid, cache, solver_opts)
        spec = knee_neighborhood(problem, alpha_mode, knee_opts)
    for incumbent in dfo_trace.incumbents:
        mcm, alpha = float("nan"), float("nan")
        if with_mcm and np.isfinite(incumbent.value):
            mcm, alpha = _incumbent_mcm(
                problem,
                spec,
                incumbent.point,
                grid,
                bounds,
                cache,
                solver_opts,
                sens_opts,
            )
        trace.append(
            KneeTracePoint(
                incumbent.evaluation, incumbent.point, incumbent.value, mcm, alpha
            )
        )

    lambda_star = dfo_trace.best_point
    sol = solve_weighted_sum(problem, lambda_star, opts=solver_opts, cache=cache)
    return KneeResult(
        lambda_star=lambda_star,
        x_star=sol.x,
        f_star=sol.f_values,
        mcf_star=dfo_trace.best_value,
        trace=trace,
        method=method,
        start=start,
        evaluations=dfo_trace.evaluations,
        converged=dfo_trace.converged,
    )
