"""
重み空間の近傍（球 B_r、楕円体 E_α、カッシーニの卵形線 E_β）とサブフロント、
最も変化する指標 MCM。

近傍はすべて中心 λ_c からの差 d = λ - λ_c で判定する。
    ball:      ||d|| <= r
    ellipsoid: ||∇F̄(λ_c)† d|| <= α
    cassini:   ||∇F̄(λ_c) d|| >= β ||d||²
"""

import logging
import warnings
from enum import Enum
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from apps.snee.config import (
    GRID_OPTIONS,
    SENSITIVITY_OPTIONS,
    GridOptions,
    SensitivityOptions,
    SolverOptions,
)
from apps.snee.errors import (
    DegenerateNeighborhoodError,
    UnreliableSubFrontWarning,
    ZeroFullRangeError,
)
from apps.snee.formatter import weights_formatter
from apps.snee.inner_solvers import SolutionCache, solve_grid, solve_weighted_sum
from apps.snee.problems import MooProblem
from apps.snee.scalarization import SimplexGrid
from apps.snee.sensitivity import SensitivityResult, build_result, compute_sensitivity

logger = logging.getLogger(__name__)

# 格子点が境界にちょうど乗る場合に丸め誤差で判定が揺れないための相対的な余裕
BOUNDARY_TOL = 1e-12


class NeighborhoodKind(Enum):
    ball: str = "ball"
    ellipsoid: str = "ellipsoid"
    cassini: str = "cassini"


class UnionMode(Enum):
    centroid_weights: str = "centroid_weights"
    centroid_jacobian: str = "centroid_jacobian"
    union: str = "union"


class NeighborhoodSpec(BaseModel):
    """
    近傍の種類と大きさ。

    Args:
        kind(NeighborhoodKind): ball, ellipsoid, cassini
        size(float | None): r, α, β のいずれか。固定モードでは必須
        alpha_mode(str): "fixed" または "adaptive"（ellipsoid のみ）
        adaptive_factor(float): 適応的な α の係数
    """

    model_config = ConfigDict(frozen=True)

    kind: NeighborhoodKind
    size: Optional[float] = Field(default=None, gt=0)
    alpha_mode: Literal["fixed", "adaptive"] = "fixed"
    adaptive_factor: float = Field(default=0.4, gt=0)

    @model_validator(mode="after")
    def check_mode(self):
        if self.alpha_mode == "fixed" and self.size is None:
            raise ValueError("A fixed-size neighborhood needs 'size'")
        if self.alpha_mode == "adaptive" and self.kind != NeighborhoodKind.ellipsoid:
            raise ValueError("The adaptive rule applies to the ellipsoid only")
        return self

    @property
    def label(self) -> str:
        symbols = {
            NeighborhoodKind.ball: "B_r",
            NeighborhoodKind.ellipsoid: "E_alpha",
            NeighborhoodKind.cassini: "E_beta",
        }
        return symbols[self.kind]


class IdealNadir(NamedTuple):
    ideal: np.ndarray
    nadir: np.ndarray

    @property
    def ranges(self) -> np.ndarray:
        return self.nadir - self.ideal


class SubFront(NamedTuple):
    """
    近傍に入る格子点の解の集まり

    Args:
        center(np.ndarray): 中心 λ_c
        indices(np.ndarray): メンバーの格子点のインデックス
        lambdas(np.ndarray): メンバーの重みベクトル
        xs(np.ndarray): メンバーの x(λ)
        fs(np.ndarray): メンバーの F(x(λ))
        fraction_of_grid(float): メンバー数 / m
        degenerate(bool): メンバーが 2 未満
        mask(np.ndarray): 近傍の判定結果（格子点ごと）
        size_used(float): 判定に使った r, α, β
        dropped(tuple[int]): 近傍に入ったが求解に失敗した格子点
        unreliable(bool): 失敗した点の割合が max_dropped を超えた
    """

    center: np.ndarray
    indices: np.ndarray
    lambdas: np.ndarray
    xs: np.ndarray
    fs: np.ndarray
    fraction_of_grid: float
    degenerate: bool
    mask: np.ndarray
    size_used: float
    dropped: tuple[int, ...] = ()
    unreliable: bool = False

    @property
    def members(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        return list(zip(self.lambdas, self.xs, self.fs, strict=True))

    @property
    def count(self) -> int:
        return int(self.indices.size)


def _resolve_fixed(spec: NeighborhoodSpec, size: Optional[float]) -> float:
    if size is not None:
        return float(size)
    if spec.size is None:
        raise ValueError("Adaptive neighborhoods need a resolved size; call resolve_size")
    return float(spec.size)


def membership_mask(
    spec: NeighborhoodSpec,
    center: np.ndarray,
    sens: Optional[SensitivityResult],
    points: np.ndarray,
    size: Optional[float] = None,
) -> np.ndarray:
    """
    ## Description:
        重みベクトルを行に持つ points の各行が近傍に入るかを判定する。
    ## Args:
        spec (NeighborhoodSpec): 近傍
        center (np.ndarray): 中心 λ_c
        sens (SensitivityResult | None): λ_c での感度。ball では使わない
        points (np.ndarray): 判定する重みベクトル (k, q)
        size (float | None): r, α, β。None なら spec.size
    ## Returns:
        np.ndarray: bool の配列 (k,)
    """
    size = _resolve_fixed(spec, size)
    d = np.atleast_2d(points) - center
    distance = np.linalg.norm(d, axis=1)
    if spec.kind == NeighborhoodKind.ball:
        return distance <= size * (1.0 + BOUNDARY_TOL)
    if sens is None:
        raise ValueError(
            f"The {spec.kind.value} neighborhood needs the sensitivity at the center"
        )
    if spec.kind == NeighborhoodKind.ellipsoid:
        return np.linalg.norm(d @ sens.pinv_dF.T, axis=1) <= size * (1.0 + BOUNDARY_TOL)
    change = np.linalg.norm(d @ sens.dF_dlambda.T, axis=1)
    return change >= size * distance**2 * (1.0 - BOUNDARY_TOL)


def neighborhood_contains(
    spec: NeighborhoodSpec,
    center,
    sens: Optional[SensitivityResult],
    lam,
    size: Optional[float] = None,
) -> bool:
    """
    ## Description:
        重みベクトル λ が λ_c の近傍に入るか。λ = λ_c はどの種類でも入る。
    ## Examples:
        >>> spec = NeighborhoodSpec(kind="ball", size=0.4)
        >>> neighborhood_contains(spec, [0.8, 0.1, 0.1], None, [0.8, 0.1, 0.1])
        True
    """
    center = weights_formatter(center, "center")
    lam = weights_formatter(lam, "lam")
    return bool(membership_mask(spec, center, sens, lam[None, :], size)[0])


def adaptive_alpha(
    sens: SensitivityResult, center, grid: SimplexGrid, factor: float
) -> float:
    """
    ## Description:
        α = factor · (1/m) Σ_i ||∇F̄(λ_c)† (λ_i - λ_c)|| を求める。
    ## Args:
        sens (SensitivityResult): λ_c での感度
        center (array-like): 中心 λ_c
        grid (SimplexGrid): Λ_m
        factor (float): 係数（正）
    ## Returns:
        float: α
    ## Raises:
        DegenerateNeighborhoodError: ∇F̄† がすべての差を 0 に写す
    """
    if not factor > 0:
        raise ValueError(f"Argument 'factor' must be positive, got {factor}")
    if grid.m == 0:
        raise ValueError("The grid is empty")
    center = weights_formatter(center, "center")
    offsets = (grid.points - center) @ sens.pinv_dF.T
    alpha = factor * float(np.mean(np.linalg.norm(offsets, axis=1)))
    if not alpha > 0:
        raise DegenerateNeighborhoodError(
            f"The pseudo-inverse maps every grid offset from {center.tolist()} to zero"
        )
    return alpha


def resolve_size(
    spec: NeighborhoodSpec,
    sens: Optional[SensitivityResult],
    center,
    grid: SimplexGrid,
) -> float:
    """固定モードなら spec.size、適応モードなら adaptive_alpha の値"""
    if spec.alpha_mode == "adaptive":
        return adaptive_alpha(sens, center, grid, spec.adaptive_factor)
    return float(spec.size)


def ideal_nadir(
    problem: MooProblem,
    grid: SimplexGrid,
    cache: Optional[SolutionCache] = None,
    solver_opts: Optional[SolverOptions] = None,
    workers: Optional[int] = None,
) -> IdealNadir:
    """
    ## Description:
        Λ_m 上の解から理想点と最下点を近似する。
        ideal_i = min f_i(x(λ)), nadir_i = max f_i(x(λ))
        求解に失敗した点は除く。キャッシュを渡すと格子の解を使い回せる。
    ## Raises:
        GridSolveError: 成功した点の割合が下限を下回った
    """
    solved = solve_grid(problem, grid, solver_opts, cache, workers)
    values = np.array([s.f_values for s in solved.solutions if s is not None])
    return IdealNadir(values.min(axis=0), values.max(axis=0))


def _center_sensitivity(
    problem: MooProblem,
    center: np.ndarray,
    cache: Optional[SolutionCache],
    solver_opts: Optional[SolverOptions],
    sens_opts: Optional[SensitivityOptions],
) -> SensitivityResult:
    sol = solve_weighted_sum(problem, center, opts=solver_opts, cache=cache)
    return compute_sensitivity(problem, sol, sens_opts)


def _collect(
    problem: MooProblem,
    grid: SimplexGrid,
    center: np.ndarray,
    mask: np.ndarray,
    size_used: float,
    cache: Optional[SolutionCache],
    solver_opts: Optional[SolverOptions],
    workers: Optional[int],
    grid_opts: GridOptions,
) -> SubFront:
    inside = np.flatnonzero(mask)
    solved = solve_grid(
        problem,
        grid.points[inside],
        solver_opts,
        cache,
        workers,
        grid_opts,
        min_success=0.0,
    )
    ok = [k for k, s in enumerate(solved.solutions) if s is not None]
    dropped = tuple(int(inside[k]) for k in solved.failures)
    indices = inside[ok]
    n, q = problem.n, problem.q
    xs = np.array([solved.solutions[k].x for k in ok]).reshape(len(ok), n)
    fs = np.array([solved.solutions[k].f_values for k in ok]).reshape(len(ok), q)
    unreliable = bool(inside.size) and len(dropped) / inside.size > grid_opts.max_dropped
    if unreliable:
        warnings.warn(
            f"{problem.name}: {len(dropped)} of {inside.size} sub-front points "
            "failed to solve",
            UnreliableSubFrontWarning,
            stacklevel=3,
        )
    return SubFront(
        center=center,
        indices=indices,
        lambdas=grid.points[indices],
        xs=xs,
        fs=fs,
        fraction_of_grid=indices.size / grid.m,
        degenerate=indices.size < 2,
        mask=mask,
        size_used=size_used,
        dropped=dropped,
        unreliable=unreliable,
    )


def compute_subfront(
    problem: MooProblem,
    spec: NeighborhoodSpec,
    center,
    grid: SimplexGrid,
    sens: Optional[SensitivityResult] = None,
    cache: Optional[SolutionCache] = None,
    solver_opts: Optional[SolverOptions] = None,
    sens_opts: Optional[SensitivityOptions] = None,
    grid_opts: Optional[GridOptions] = None,
    workers: Optional[int] = None,
) -> SubFront:
    """
    ## Description:
        近傍に入る格子点を選び、それぞれの x(λ), F(x(λ)) を求めてサブフロントにする。
        求解に失敗した点は除き、dropped に記録する。
    ## Args:
        problem (MooProblem): 問題
        spec (NeighborhoodSpec): 近傍
        center (array-like): 中心 λ_c
        grid (SimplexGrid): Λ_m
        sens (SensitivityResult | None): λ_c での感度。None なら計算する（ball では不要）
        cache (SolutionCache | None): 解のキャッシュ
    ## Returns:
        SubFront
    ## Examples:
        >>> grid = simplex_grid(3, 0.02)
        >>> spec = NeighborhoodSpec(kind="ellipsoid", size=0.1)
        >>> sub = compute_subfront(make_problem("ZLT1"), spec, [0.8, 0.1, 0.1], grid)
        >>> round(sub.fraction_of_grid, 2)
        0.23
    """
    center = weights_formatter(center, "center")
    if center.size != problem.q:
        raise ValueError(
            f"Argument 'center' must have length {problem.q}, got {center.size}"
        )
    grid_opts = grid_opts or GRID_OPTIONS
    if sens is None and spec.kind != NeighborhoodKind.ball:
        sens = _center_sensitivity(problem, center, cache, solver_opts, sens_opts)
    size = resolve_size(spec, sens, center, grid)
    mask = membership_mask(spec, center, sens, grid.points, size)
    subfront = _collect(
        problem, grid, center, mask, size, cache, solver_opts, workers, grid_opts
    )
    logger.debug(
        "%s: %s(size=%.4g) at %s has %d members",
        problem.name,
        spec.kind.value,
        size,
        center.tolist(),
        subfront.count,
    )
    return subfront


def compute_mcm(problem: MooProblem, subfront: SubFront, bounds: IdealNadir) -> float:
    """
    ## Description:
        最も変化する指標 MCM = Π_i |max f_i - min f_i| / |nadir_i - ideal_i|。
        max, min はサブフロントのメンバーでとる。メンバーが 2 未満なら 0。
    ## Raises:
        ZeroFullRangeError: ある目的関数が Λ_m 全体で一定
    """
    ranges = np.abs(bounds.ranges)
    flat = ranges <= np.finfo(float).eps * np.maximum(1.0, np.abs(bounds.nadir))
    if np.any(flat):
        raise ZeroFullRangeError(
            f"{problem.name}: objectives {(np.flatnonzero(flat) + 1).tolist()} "
            "are constant over the grid"
        )
    if subfront.degenerate:
        return 0.0
    spans = np.ptp(subfront.fs, axis=0)
    return float(np.prod(spans / ranges))


def union_subfront(
    problem: MooProblem,
    spec: NeighborhoodSpec,
    centers: Sequence,
    grid: SimplexGrid,
    mode="union",
    cache: Optional[SolutionCache] = None,
    solver_opts: Optional[SolverOptions] = None,
    sens_opts: Optional[SensitivityOptions] = None,
    grid_opts: Optional[GridOptions] = None,
    workers: Optional[int] = None,
) -> SubFront:
    """
    ## Description:
        複数の中心からサブフロントを作る。
        - centroid_weights: 中心の平均を中心にする
        - centroid_jacobian: 中心の平均を中心にし、各中心での ∇F̄ の平均を使う
        - union: 各中心のサブフロントの和集合（size_used は最大値）
    """
    mode = UnionMode(mode)
    centers = [weights_formatter(c, "centers") for c in centers]
    if len(centers) < 2:
        raise ValueError(f"At least two centers are needed, got {len(centers)}")
    grid_opts = grid_opts or GRID_OPTIONS
    sens_opts = sens_opts or SENSITIVITY_OPTIONS
    centroid = np.mean(centers, axis=0)
    if mode == UnionMode.centroid_weights:
        return compute_subfront(
            problem,
            spec,
            centroid,
            grid,
            None,
            cache,
            solver_opts,
            sens_opts,
            grid_opts,
            workers,
        )
    if mode == UnionMode.centroid_jacobian:
        results = [
            _center_sensitivity(problem, c, cache, solver_opts, sens_opts)
            for c in centers
        ]
        averaged = build_result(
            centroid,
            np.mean([r.dx_dlambda for r in results], axis=0),
            np.mean([r.dF_dlambda for r in results], axis=0),
            sens_opts,
        )
        return compute_subfront(
            problem,
            spec,
            centroid,
            grid,
            averaged,
            cache,
            solver_opts,
            sens_opts,
            grid_opts,
            workers,
        )
    mask = np.zeros(grid.m, dtype=bool)
    sizes = []
    for c in centers:
        sens = None
        if spec.kind != NeighborhoodKind.ball:
            sens = _center_sensitivity(problem, c, cache, solver_opts, sens_opts)
        size = resolve_size(spec, sens, c, grid)
        sizes.append(size)
        mask |= membership_mask(spec, c, sens, grid.points, size)
    return _collect(
        problem, grid, centroid, mask, max(sizes), cache, solver_opts, workers, grid_opts
    )
