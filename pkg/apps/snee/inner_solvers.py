"""
重み付き和の部分問題 min Σλ_i f_i(x) を解いて x(λ) を求める。

制約のない問題は BFGS、制約付きの問題は SLSQP で解き、最後に解析的なヘッセ行列を
使ったニュートン法で仕上げる。制約付きの問題ではラグランジュ乗数も復元する。
"""

import logging
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional, Union

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from apps.snee.config import GRID_OPTIONS, SOLVER_OPTIONS, GridOptions, SolverOptions
from apps.snee.errors import (
    GridSolveError,
    MaxIterationsWarning,
    RankDeficientActiveJacobianError,
    SingularHessianModelError,
    SneeError,
    StrictComplementarityWarning,
)
from apps.snee.formatter import (
    type_checker_vector,
    type_checker_weights,
    vector_formatter,
)
from apps.snee.problems import MooProblem, evaluate, evaluate_constraints
from apps.snee.scalarization import SimplexGrid
from apps.snee.utils import LambdaKey, lambda_key

logger = logging.getLogger(__name__)


class ScalarizedSolution(NamedTuple):
    """
    重み λ に対する部分問題の解

    Args:
        lam(np.ndarray): 重みベクトル
        x(np.ndarray): 解 x(λ)
        f_values(np.ndarray): F(x(λ))
        z_I(np.ndarray): 不等式制約の乗数（非有効な制約は 0）
        z_E(np.ndarray): 等式制約の乗数
        grad_norm(float): 停留性の残差 ||Σλ_i∇f_i + ∇c z||
        converged(bool): 許容誤差を満たしたか
        iterations(int): 反復回数
        active_set(tuple[int]): 有効な不等式制約のインデックス
    """

    lam: np.ndarray
    x: np.ndarray
    f_values: np.ndarray
    z_I: np.ndarray
    z_E: np.ndarray
    grad_norm: float
    converged: bool
    iterations: int
    active_set: tuple[int, ...] = ()


class Multipliers(NamedTuple):
    z_I: np.ndarray
    z_E: np.ndarray
    active_set: tuple[int, ...]


class GridSolutions(NamedTuple):
    """
    solutions(list): 格子点ごとの解。失敗した点は None
    failures(dict[int, str]): 失敗した点のインデックスと理由
    """

    solutions: list[Optional[ScalarizedSolution]]
    failures: dict[int, str]

    @property
    def success_rate(self) -> float:
        if not self.solutions:
            return 0.0
        return 1.0 - len(self.failures) / len(self.solutions)


class SolutionCache(object):
    """
    (問題, λ) をキーに解を保持するキャッシュ。複数のスレッドから同時に使ってよい。
    キャッシュは計算を省くためだけのもので、無効にしても結果は変わらない。
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict[tuple, dict[LambdaKey, ScalarizedSolution]] = {}

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._store.values())

    def get(self, problem: MooProblem, lam: np.ndarray) -> Optional[ScalarizedSolution]:
        with self._lock:
            return self._store.get(problem.key, {}).get(lambda_key(lam))

    def put(self, problem: MooProblem, solution: ScalarizedSolution) -> None:
        with self._lock:
            self._store.setdefault(problem.key, {})[lambda_key(solution.lam)] = solution

    def nearest(
        self, problem: MooProblem, lam: np.ndarray
    ) -> Optional[ScalarizedSolution]:
        """λ に最も近い重みで解かれた解。距離が等しい場合は先に登録された方"""
        with self._lock:
            entries = list(self._store.get(problem.key, {}).values())
        if not entries:
            return None
        lambdas = np.array([s.lam for s in entries])
        return entries[int(np.argmin(np.linalg.norm(lambdas - lam, axis=1)))]

    def snapshot(self) -> "SolutionCache":
        copied = SolutionCache()
        with self._lock:
            copied._store = {k: dict(v) for k, v in self._store.items()}
        return copied


# ***********************************************************************
# ************************** 乗数の復元 *********************************
# ***********************************************************************
def _active_inequalities(
    c_I: np.ndarray, jac_I: np.ndarray, active_tol: float
) -> list[int]:
    scale = 1.0 + np.linalg.norm(jac_I, axis=0)
    return [j for j in range(c_I.size) if abs(c_I[j]) <= active_tol * scale[j]]


def _least_squares_multipliers(
    gradient: np.ndarray, jac_I: np.ndarray, jac_E: np.ndarray, active: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    """min ||gradient + J_A z_A + J_E z_E|| を解き、(z_I, z_E) を返す"""
    z_I = np.zeros(jac_I.shape[1])
    n_eq = jac_E.shape[1]
    A = np.hstack([jac_I[:, active], jac_E])
    if A.shape[1] == 0:
        return z_I, np.zeros(n_eq)
    singular_values = np.linalg.svd(A, compute_uv=False)
    dependent = singular_values[-1] <= 1e-10 * max(1.0, singular_values[0])
    if A.shape[1] > A.shape[0] or dependent:
        raise RankDeficientActiveJacobianError(
            f"Active constraint gradients are linearly dependent "
            f"(active inequalities {active}, {n_eq} equalities)"
        )
    z, *_ = np.linalg.lstsq(A, -gradient, rcond=None)
    z_I[active] = z[: len(active)]
    return z_I, z[len(active) :]


@type_checker_weights(arg_index=1, kward="lam", size_attr="q")
@type_checker_vector(arg_index=2, kward="x_star", size_attr="n")
def recover_multipliers(
    problem: MooProblem,
    lam: np.ndarray,
    x_star: np.ndarray,
    active_tol: Optional[float] = None,
) -> Multipliers:
    """
    ## Description:
        KKT 点の近くで、有効制約 A = {j ∈ I : |c_j| <= tol (1 + ||∇c_j||)} ∪ E に対する
        最小二乗問題 min ||Σλ_i∇f_i + ∇c_A z_A|| を解いて乗数を復元する。
        有効でない不等式制約の乗数は 0。
    ## Args:
        problem (MooProblem): 制約付きの問題
        lam (np.ndarray): 重みベクトル
        x_star (np.ndarray): ほぼ KKT 条件を満たす点
        active_tol (float | None): 有効制約の許容誤差。None なら既定値
    ## Returns:
        Multipliers: z_I, z_E, active_set
    ## Raises:
        RankDeficientActiveJacobianError: 有効制約の勾配が一次独立でない
    """
    if active_tol is None:
        active_tol = SOLVER_OPTIONS.active_tol
    gradient = evaluate(problem, x_star, order=1).gradients @ lam
    ce = evaluate_constraints(problem, x_star, order=1)
    active = _active_inequalities(ce.c_I, ce.jac_I, active_tol)
    z_I, z_E = _least_squares_multipliers(gradient, ce.jac_I, ce.jac_E, active)
    return Multipliers(z_I, z_E, tuple(active))


# ***********************************************************************
# ************************** 制約のない問題 *****************************
# ***********************************************************************
def _objective(problem: MooProblem, lam: np.ndarray):
    def fun(x):
        ev = evaluate(problem, x, order=1)
        return float(lam @ ev.values), ev.gradients @ lam

    return fun


def _weighted_hessian(problem: MooProblem, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("i,ijk->jk", lam, evaluate(problem, x, order=2).hessians)


def _initial_inverse_hessian(problem: MooProblem, lam: np.ndarray, x0: np.ndarray):
    hessian = _weighted_hessian(problem, lam, x0)
    try:
        factor = scipy.linalg.cho_factor(hessian)
    except (np.linalg.LinAlgError, ValueError):
        return None
    inverse = scipy.linalg.cho_solve(factor, np.eye(problem.n))
    # BFGS の正定値判定は厳密な対称性を要求する
    return 0.5 * (inverse + inverse.T)


def _newton_polish(
    problem: MooProblem, lam: np.ndarray, x: np.ndarray, steps: int
) -> tuple[np.ndarray, float, int]:
    """残差が減らなくなるまでニュートン法で停留点を仕上げる"""
    best_x = x
    best_norm = np.inf
    used = 0
    for _ in range(steps + 1):
        ev = evaluate(problem, x, order=2)
        gradient = ev.gradients @ lam
        norm = float(np.linalg.norm(gradient))
        if norm >= best_norm:
            break
        best_x, best_norm = x, norm
        if norm == 0.0 or used == steps:
            break
        hessian = np.einsum("i,ijk->jk", lam, ev.hessians)
        try:
            step = np.linalg.solve(hessian, -gradient)
        except np.linalg.LinAlgError:
            break
        x = x + step
        used += 1
    return best_x, best_norm, used


def _solve_unconstrained(
    problem: MooProblem, lam: np.ndarray, x0: np.ndarray, opts: SolverOptions
) -> ScalarizedSolution:
    options = {"gtol": opts.tol_stat, "maxiter": opts.max_iter}
    hess_inv0 = _initial_inverse_hessian(problem, lam, x0)
    if hess_inv0 is not None:
        options["hess_inv0"] = hess_inv0
    fun = _objective(problem, lam)
    try:
        res = minimize(fun, x0, jac=True, method="BFGS", options=options)
    except ValueError as err:
        if "hess_inv0" not in options or "hess_inv0" not in str(err):
            raise
        logger.debug("%s: hess_inv0 rejected at lambda=%s", problem.name, lam.tolist())
        options.pop("hess_inv0")
        res = minimize(fun, x0, jac=True, method="BFGS", options=options)
    if not np.all(np.isfinite(res.x)):
        raise SingularHessianModelError(
            f"{problem.name}: BFGS diverged at lambda={lam.tolist()} ({res.message})"
        )
    x, grad_norm, polished = _newton_polish(problem, lam, res.x, opts.polish_steps)
    converged = grad_norm <= opts.tol_stat
    if not converged:
        if res.nit >= opts.max_iter:
            warnings.warn(
                f"{problem.name}: BFGS stopped after {res.nit} iterations at "
                f"lambda={lam.tolist()} with gradient norm {grad_norm:.3e}",
                MaxIterationsWarning,
                stacklevel=3,
            )
        else:
            raise SingularHessianModelError(
                f"{problem.name}: BFGS stalled at lambda={lam.tolist()} with gradient "
                f"norm {grad_norm:.3e} ({res.message})"
            )
    return ScalarizedSolution(
        lam=lam,
        x=x,
        f_values=evaluate(problem, x).values,
        z_I=np.zeros(0),
        z_E=np.zeros(0),
        grad_norm=grad_norm,
        converged=converged,
        iterations=int(res.nit) + polished,
    )


# ***********************************************************************
# ************************** 制約付きの問題 *****************************
# ***********************************************************************
class _KktState(NamedTuple):
    x: np.ndarray
    z_I: np.ndarray
    z_E: np.ndarray
    stationarity: float
    complementarity: float
    feasibility: float


def _kkt_state(
    problem: MooProblem, lam: np.ndarray, x: np.ndarray, z_I: np.ndarray, z_E: np.ndarray
) -> _KktState:
    gradient = evaluate(problem, x, order=1).gradients @ lam
    ce = evaluate_constraints(problem, x, order=1)
    lagrangian_gradient = gradient + ce.jac_I @ z_I + ce.jac_E @ z_E
    complementarity = float(np.max(np.abs(z_I * ce.c_I), initial=0.0))
    feasibility = max(
        float(np.max(ce.c_I, initial=0.0)), float(np.max(np.abs(ce.c_E), initial=0.0))
    )
    return _KktState(
        x,
        z_I,
        z_E,
        float(np.linalg.norm(lagrangian_gradient)),
        complementarity,
        feasibility,
    )


def _polish_active_set(
    problem: MooProblem,
    lam: np.ndarray,
    x: np.ndarray,
    z_I: np.ndarray,
    z_E: np.ndarray,
    active: list[int],
    steps: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    有効制約を等式と見なした KKT 方程式
        Σλ_i∇f_i + J_A z_A + J_E z_E = 0, c_A = 0, c_E = 0
    をニュートン法で解く。残差が最も小さかった点を返す。
    """
    n = problem.n
    n_a = len(active)
    z_A = z_I[active].copy()
    best = (np.inf, x, z_A, z_E)
    used = 0
    for _ in range(steps + 1):
        ev = evaluate(problem, x, order=2)
        ce = evaluate_constraints(problem, x, order=2)
        J_A = ce.jac_I[:, active]
        J_E = ce.jac_E
        residual = np.concatenate(
            [ev.gradients @ lam + J_A @ z_A + J_E @ z_E, ce.c_I[active], ce.c_E]
        )
        norm = float(np.linalg.norm(residual))
        if norm >= best[0]:
            break
        best = (norm, x, z_A, z_E)
        if norm == 0.0 or used == steps:
            break
        hessian = (
            np.einsum("i,ijk->jk", lam, ev.hessians)
            + np.einsum("i,ijk->jk", z_A, ce.hessians_I[active])
            + np.einsum("i,ijk->jk", z_E, ce.hessians_E)
        )
        m = n_a + J_E.shape[1]
        constraint_jacobian = np.hstack([J_A, J_E])
        matrix = np.block(
            [[hessian, constraint_jacobian], [constraint_jacobian.T, np.zeros((m, m))]]
        )
        try:
            step = np.linalg.solve(matrix, -residual)
        except np.linalg.LinAlgError:
            break
        x = x + step[:n]
        z_A = z_A + step[n : n + n_a]
        z_E = z_E + step[n + n_a :]
        used += 1
    _, x, z_A, z_E = best
    z_full = np.zeros_like(z_I)
    z_full[active] = z_A
    return x, z_full, z_E, used


def _solve_constrained(
    problem: MooProblem, lam: np.ndarray, x0: np.ndarray, opts: SolverOptions
) -> ScalarizedSolution:
    constraints = []
    if problem.n_ineq:
        # SLSQP の不等式は fun(x) >= 0 の向き
        constraints.append(
            {
                "type": "ineq",
                "fun": lambda x: -evaluate_constraints(problem, x).c_I,
                "jac": lambda x: -evaluate_constraints(problem, x, order=1).jac_I.T,
            }
        )
    if problem.n_eq:
        constraints.append(
            {
                "type": "eq",
                "fun": lambda x: evaluate_constraints(problem, x).c_E,
                "jac": lambda x: evaluate_constraints(problem, x, order=1).jac_E.T,
            }
        )
    res = minimize(
        _objective(problem, lam),
        x0,
        jac=True,
        method="SLSQP",
        constraints=constraints,
        options={"maxiter": opts.sqp_max_iter, "ftol": opts.sqp_ftol},
    )
    if not np.all(np.isfinite(res.x)):
        raise SingularHessianModelError(
            f"{problem.name}: SQP diverged at lambda={lam.tolist()} ({res.message})"
        )
    x = res.x
    gradient = evaluate(problem, x, order=1).gradients @ lam
    ce = evaluate_constraints(problem, x, order=1)
    active = _active_inequalities(ce.c_I, ce.jac_I, opts.active_tol)
    z_I, z_E = _least_squares_multipliers(gradient, ce.jac_I, ce.jac_E, active)
    negative = [j for j in active if z_I[j] < -opts.tol_kkt]
    if negative:
        logger.debug(
            "%s: releasing constraints %s with negative multipliers",
            problem.name,
            negative,
        )
        active = [j for j in active if j not in negative]
        z_I, z_E = _least_squares_multipliers(gradient, ce.jac_I, ce.jac_E, active)

    state = _kkt_state(problem, lam, x, z_I, z_E)
    px, pz_I, pz_E, polished = _polish_active_set(
        problem, lam, x, z_I, z_E, active, opts.polish_steps
    )
    candidate = _kkt_state(problem, lam, px, pz_I, pz_E)
    if (
        candidate.feasibility <= opts.tol_kkt
        and np.all(pz_I >= -opts.tol_kkt)
        and candidate.stationarity <= state.stationarity
    ):
        state = candidate
    else:
        polished = 0

    converged = (
        state.stationarity <= opts.tol_kkt
        and state.complementarity <= opts.tol_kkt
        and state.feasibility <= opts.tol_kkt
        and bool(np.all(state.z_I >= -opts.tol_kkt))
    )
    if not converged and res.status == 9:
        warnings.warn(
            f"{problem.name}: SQP stopped after {res.nit} iterations at "
            f"lambda={lam.tolist()} (KKT stationarity {state.stationarity:.3e})",
            MaxIterationsWarning,
            stacklevel=3,
        )
    elif not converged:
        logger.debug(
            "%s: SQP ended with '%s' at lambda=%s, stationarity %.3e",
            problem.name,
            res.message,
            lam.tolist(),
            state.stationarity,
        )
    weak = [j for j in active if state.z_I[j] < opts.scs_tol]
    if weak:
        warnings.warn(
            f"{problem.name}: active constraints {weak} have multipliers below "
            f"{opts.scs_tol:g} at lambda={lam.tolist()}",
            StrictComplementarityWarning,
            stacklevel=3,
        )
    return ScalarizedSolution(
        lam=lam,
        x=state.x,
        f_values=evaluate(problem, state.x).values,
        z_I=state.z_I,
        z_E=state.z_E,
        grad_norm=state.stationarity,
        converged=converged,
        iterations=int(res.nit) + polished,
        active_set=tuple(active),
    )


@type_checker_weights(arg_index=1, kward="lam", size_attr="q")
def solve_weighted_sum(
    problem: MooProblem,
    lam: np.ndarray,
    x0=None,
    opts: Optional[SolverOptions] = None,
    cache: Optional[SolutionCache] = None,
) -> ScalarizedSolution:
    """
    ## Description:
        重み付き和の部分問題を解く。制約のない問題は BFGS（初期の逆ヘッセ行列は x0 での
        厳密な値）、制約付きの問題は SLSQP を使い、どちらもニュートン法で仕上げる。
    ## Args:
        problem (MooProblem): 問題
        lam (np.ndarray): 重みベクトル
        x0 (array-like | None): 初期点。None なら原点
        opts (SolverOptions | None): ソルバーの設定。None なら既定値
        cache (SolutionCache | None): 解のキャッシュ
    ## Returns:
        ScalarizedSolution
    ## Raises:
        NonFiniteEvaluationError: 評価値が有限でない
        SingularHessianModelError: 準ニュートン法が破綻した
        RankDeficientActiveJacobianError: 有効制約の勾配が一次独立でない
    ## Examples:
        >>> sol = solve_weighted_sum(make_problem("ZLT1"), [0.8, 0.1, 0.1])
        >>> np.round(sol.x, 6)
        array([0.8, 0.1, 0.1])
    """
    opts = opts or SOLVER_OPTIONS
    if cache is not None:
        cached = cache.get(problem, lam)
        if cached is not None:
            return cached
    x0 = np.zeros(problem.n) if x0 is None else vector_formatter(x0, "x0")
    if x0.size != problem.n:
        raise ValueError(f"Argument 'x0' must have length {problem.n}, got {x0.size}")
    if problem.constrained:
        solution = _solve_constrained(problem, lam, x0, opts)
    else:
        solution = _solve_unconstrained(problem, lam, x0, opts)
    if cache is not None:
        cache.put(problem, solution)
    return solution


def _grid_points(lambdas: Union[SimplexGrid, np.ndarray]) -> np.ndarray:
    if isinstance(lambdas, SimplexGrid):
        return lambdas.points
    return np.atleast_2d(np.asarray(lambdas, dtype=float))


def solve_grid(
    problem: MooProblem,
    lambdas: Union[SimplexGrid, np.ndarray],
    opts: Optional[SolverOptions] = None,
    cache: Optional[SolutionCache] = None,
    workers: Optional[int] = None,
    grid_opts: Optional[GridOptions] = None,
    min_success: Optional[float] = None,
) -> GridSolutions:
    """
    ## Description:
        複数の重みベクトルについて部分問題を解く。逐次実行ではそれまでに解いた最も近い点から、
        並列実行（workers > 1）では開始前のキャッシュの写しの最も近い点から解き始めるので、
        どちらも結果は実行ごとに変わらない。
    ## Args:
        problem (MooProblem): 問題
        lambdas (SimplexGrid | np.ndarray): 格子、または重みベクトルを行に持つ配列
        opts (SolverOptions | None): ソルバーの設定
        cache (SolutionCache | None): 解のキャッシュ。None なら呼び出しの中だけで使う
        workers (int | None): スレッド数。None なら opts.workers
        grid_opts (GridOptions | None): 成功率の下限などの設定
        min_success (float | None): 成功率の下限。None なら grid_opts.min_success
    ## Returns:
        GridSolutions: 入力と同じ順序の解と、失敗した点
    ## Raises:
        GridSolveError: 成功した点の割合が min_success を下回った
    """
    opts = opts or SOLVER_OPTIONS
    grid_opts = grid_opts or GRID_OPTIONS
    workers = workers or opts.workers
    cache = cache if cache is not None else SolutionCache()
    points = _grid_points(lambdas)
    failures: dict[int, str] = {}

    def solve_one(index: int, starts: SolutionCache) -> Optional[ScalarizedSolution]:
        lam = points[index]
        x0 = None
        if opts.warm_start:
            neighbour = starts.nearest(problem, lam)
            x0 = neighbour.x if neighbour is not None else None
        try:
            return solve_weighted_sum(problem, lam, x0, opts, cache)
        except (SneeError, ValueError) as e:
            failures[index] = f"{type(e).__name__}: {e}"
            return None

    if workers > 1:
        starts = cache.snapshot()
        with ThreadPoolExecutor(max_workers=workers) as executor:
            indices = range(len(points))
            solutions = list(executor.map(lambda i: solve_one(i, starts), indices))
    else:
        solutions = [solve_one(i, cache) for i in range(len(points))]

    result = GridSolutions(solutions, dict(sorted(failures.items())))
    logger.info(
        "%s: solved %d/%d weight vectors (%d failures)",
        problem.name,
        len(points) - len(failures),
        len(points),
        len(failures),
    )
    if min_success is None:
        min_success = grid_opts.min_success
    if points.shape[0] and result.success_rate < min_success:
        raise GridSolveError(
            f"{problem.name}: only {result.success_rate:.1%} of {len(points)} "
            f"grid solves succeeded (need {min_success:.0%}); first failure: "
            f"{next(iter(result.failures.values()))}"
        )
    return result
