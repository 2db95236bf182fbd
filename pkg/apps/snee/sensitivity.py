"""
パレート感度 ∇x(λ), ∇F̄(λ) の計算。

制約のない問題では ∇x(λ) = -Gᵀ H_w⁻¹、制約付きの問題では KKT 系に陰関数定理を
適用して求める。∇F̄(λ) の第 i 列が ∇f̄_i(λ) で、成分 (k, i) は ∂f̄_i/∂λ_k。
"""

import logging
from typing import Any, NamedTuple, Optional

import numpy as np
import scipy.linalg

from apps.snee.config import (
    SENSITIVITY_OPTIONS,
    SOLVER_OPTIONS,
    SensitivityOptions,
    SolverOptions,
)
from apps.snee.errors import (
    MissingMultipliersError,
    SingularKktJacobianError,
    SingularWeightedHessianError,
)
from apps.snee.formatter import type_checker_weights
from apps.snee.inner_solvers import ScalarizedSolution, solve_weighted_sum
from apps.snee.problems import MooProblem, evaluate, evaluate_constraints

logger = logging.getLogger(__name__)


class SensitivityResult(NamedTuple):
    """
    Args:
        lam(np.ndarray): 感度を求めた重みベクトル
        dx_dlambda(np.ndarray): ∇x(λ) (q, n)
        dF_dlambda(np.ndarray): ∇F̄(λ) (q, q)
        pinv_dF(np.ndarray): ∇F̄(λ)†
        singular_values(np.ndarray): ∇F̄(λ) の特異値（降順）
        condition_beyond_singularity(float): 0 と見なさなかった特異値での σ_max / σ_min
    """

    lam: np.ndarray
    dx_dlambda: np.ndarray
    dF_dlambda: np.ndarray
    pinv_dF: np.ndarray
    singular_values: np.ndarray
    condition_beyond_singularity: float

    @property
    def column_norms(self) -> np.ndarray:
        """||∇f̄_i(λ)||, i = 1..q"""
        return np.linalg.norm(self.dF_dlambda, axis=0)


class KktSystem(NamedTuple):
    """
    K(w, λ) = (∇_x L, z_I ∘ c_I, c_E) = 0 の λ による微分に使う行列

    Args:
        w(np.ndarray): (x, z_I, z_E)
        dK_dw(np.ndarray): K の w に関するヤコビ行列
            [[∇²L, ∇c_I, ∇c_E], [diag(z_I) ∇c_Iᵀ, diag(c_I), 0], [∇c_Eᵀ, 0, 0]]
        dK_dlambda(np.ndarray): 上のブロックが G = (∇f_1, ..., ∇f_q)、下は 0
        selector_L(np.ndarray): w から x を取り出す行列 (I_n; 0)
    """

    w: np.ndarray
    dK_dw: np.ndarray
    dK_dlambda: np.ndarray
    selector_L: np.ndarray


class GradientCheckReport(NamedTuple):
    problem: str
    lam: np.ndarray
    h: float
    max_rel_error: float
    symmetric_defect: float
    null_vector_defect: float
    discarded_probes: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem": self.problem,
            "lambda": self.lam.tolist(),
            "h": self.h,
            "max_rel_error": self.max_rel_error,
            "symmetric_defect": self.symmetric_defect,
            "null_vector_defect": self.null_vector_defect,
            "discarded_probes": list(self.discarded_probes),
        }


def _truncated_svd(matrix: np.ndarray, rank_tol: float):
    U, s, Vt = np.linalg.svd(matrix)
    kept = s > rank_tol * s[0] if s.size and s[0] > 0 else np.zeros(s.size, dtype=bool)
    return U, s, Vt, kept


def pseudo_inverse(matrix, rank_tol: Optional[float] = None) -> np.ndarray:
    """
    ## Description:
        特異値分解によるムーア・ペンローズの擬似逆行列。
        rank_tol * σ_max 以下の特異値は 0 と見なす。
    ## Args:
        matrix (array-like): 有限な行列
        rank_tol (float | None): 相対的な許容誤差。None なら max(shape) * eps
    ## Returns:
        np.ndarray: 擬似逆行列
    ## Examples:
        >>> pseudo_inverse(np.diag([2.0, 0.0]))
        array([[0.5, 0. ],
               [0. , 0. ]])
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or not np.all(np.isfinite(matrix)):
        raise ValueError("Argument 'matrix' must be a finite two-dimensional array")
    if rank_tol is None:
        rank_tol = max(matrix.shape) * np.finfo(float).eps
    U, s, Vt, kept = _truncated_svd(matrix, rank_tol)
    inverse = np.zeros_like(s)
    inverse[kept] = 1.0 / s[kept]
    k = s.size
    return (Vt[:k].T * inverse) @ U[:, :k].T


def build_result(
    lam: np.ndarray, dx: np.ndarray, dF: np.ndarray, opts: SensitivityOptions
) -> SensitivityResult:
    """∇x(λ) と ∇F̄(λ) から擬似逆行列、特異値、条件数を求めて結果にまとめる"""
    _, s, _, kept = _truncated_svd(dF, opts.rank_tol)
    condition = float(s[0] / s[kept][-1]) if np.any(kept) else np.inf
    return SensitivityResult(
        lam=lam,
        dx_dlambda=dx,
        dF_dlambda=dF,
        pinv_dF=pseudo_inverse(dF, opts.rank_tol),
        singular_values=s,
        condition_beyond_singularity=condition,
    )


def sensitivity_unconstrained(
    problem: MooProblem,
    sol: ScalarizedSolution,
    opts: Optional[SensitivityOptions] = None,
) -> SensitivityResult:
    """
    ## Description:
        制約のない問題の感度 ∇x(λ) = -Gᵀ H_w⁻¹, ∇F̄(λ) = -Gᵀ H_w⁻¹ G を求める。
        H_w = Σλ_i∇²f_i はコレスキー分解、正定値でなければ LU 分解で解く。
    ## Args:
        problem (MooProblem): 制約のない問題
        sol (ScalarizedSolution): x(λ)
        opts (SensitivityOptions | None): 設定
    ## Returns:
        SensitivityResult
    ## Raises:
        SingularWeightedHessianError: H_w が特異
    """
    opts = opts or SENSITIVITY_OPTIONS
    if problem.constrained:
        raise ValueError(f"{problem.name} is constrained; use sensitivity_constrained")
    ev = evaluate(problem, sol.x, order=2)
    G = ev.gradients
    hessian = np.einsum("i,ijk->jk", sol.lam, ev.hessians)
    try:
        Y = scipy.linalg.cho_solve(scipy.linalg.cho_factor(hessian), G)
    except np.linalg.LinAlgError:
        condition = np.linalg.cond(hessian)
        if not np.isfinite(condition) or condition > opts.max_condition:
            raise SingularWeightedHessianError(
                f"{problem.name}: weighted Hessian is singular at "
                f"lambda={sol.lam.tolist()} "
                f"(condition number {condition:.3e})"
            ) from None
        Y = scipy.linalg.lu_solve(scipy.linalg.lu_factor(hessian), G)
    dx = -Y.T
    return build_result(sol.lam, dx, dx @ G, opts)


def assemble_kkt(problem: MooProblem, sol: ScalarizedSolution) -> KktSystem:
    """
    ## Description:
        x(λ) での KKT 系のヤコビ行列を組み立てる。
        ∇²L = Σλ_i∇²f_i + Σ_{j∈I} z_j∇²c_j + Σ_{j∈E} z_j∇²c_j
    ## Raises:
        MissingMultipliersError: 乗数の数が制約の数と合わない
    """
    if not problem.constrained:
        raise ValueError(f"{problem.name} has no constraints")
    if sol.z_I.size != problem.n_ineq or sol.z_E.size != problem.n_eq:
        raise MissingMultipliersError(
            f"{problem.name}: solution carries "
            f"{sol.z_I.size}/{sol.z_E.size} multipliers, "
            f"expected {problem.n_ineq}/{problem.n_eq}"
        )
    n, q = problem.n, problem.q
    n_i, n_e = problem.n_ineq, problem.n_eq
    ev = evaluate(problem, sol.x, order=2)
    ce = evaluate_constraints(problem, sol.x, order=2)
    hessian_L = (
        np.einsum("i,ijk->jk", sol.lam, ev.hessians)
        + np.einsum("i,ijk->jk", sol.z_I, ce.hessians_I)
        + np.einsum("i,ijk->jk", sol.z_E, ce.hessians_E)
    )
    dK_dw = np.block(
        [
            [hessian_L, ce.jac_I, ce.jac_E],
            [sol.z_I[:, None] * ce.jac_I.T, np.diag(ce.c_I), np.zeros((n_i, n_e))],
            [ce.jac_E.T, np.zeros((n_e, n_i)), np.zeros((n_e, n_e))],
        ]
    )
    dK_dlambda = np.vstack([ev.gradients, np.zeros((n_i + n_e, q))])
    selector_L = np.vstack([np.eye(n), np.zeros((n_i + n_e, n))])
    w = np.concatenate([sol.x, sol.z_I, sol.z_E])
    return KktSystem(w, dK_dw, dK_dlambda, selector_L)


def sensitivity_constrained(
    problem: MooProblem,
    sol: ScalarizedSolution,
    opts: Optional[SensitivityOptions] = None,
) -> SensitivityResult:
    """
    ## Description:
        制約付きの問題の感度。dK/dw · dw/dλ = -dK/dλ を解き、x の成分を取り出す。
        ∇F̄(λ) = ∇x(λ) G は一般に対称ではない。
    ## Raises:
        SingularKktJacobianError: KKT 系のヤコビ行列の条件数が max_condition を超えた
    """
    opts = opts or SENSITIVITY_OPTIONS
    kkt = assemble_kkt(problem, sol)
    condition = np.linalg.cond(kkt.dK_dw)
    if not np.isfinite(condition) or condition > opts.max_condition:
        raise SingularKktJacobianError(
            f"{problem.name}: KKT Jacobian is singular at lambda={sol.lam.tolist()} "
            f"(condition number {condition:.3e}, active set {list(sol.active_set)})"
        )
    W = scipy.linalg.lu_solve(scipy.linalg.lu_factor(kkt.dK_dw), -kkt.dK_dlambda)
    dx = (kkt.selector_L.T @ W).T
    G = kkt.dK_dlambda[: problem.n]
    return build_result(sol.lam, dx, dx @ G, opts)


def compute_sensitivity(
    problem: MooProblem,
    sol: ScalarizedSolution,
    opts: Optional[SensitivityOptions] = None,
) -> SensitivityResult:
    """問題に制約があるかどうかで計算方法を選ぶ"""
    if problem.constrained:
        return sensitivity_constrained(problem, sol, opts)
    return sensitivity_unconstrained(problem, sol, opts)


@type_checker_weights(arg_index=1, kward="lam", size_attr="q")
def check_gradient(
    problem: MooProblem,
    lam: np.ndarray,
    h: Optional[float] = None,
    opts: Optional[SensitivityOptions] = None,
    solver_opts: Optional[SolverOptions] = None,
) -> GradientCheckReport:
    """
    ## Description:
        解析的な ∇F̄(λ) を、部分問題を解き直した F̄ の中心差分と比べる。
        プローブ点 λ ± h e_i は和が 1 になるように割り直す。x(λ) は λ の正の定数倍で
        変わらないので、割り直しても全空間での微分が得られる。
        制約付きの問題で有効制約が変わったプローブは h を半分にしてやり直し、
        fd_retries 回でも安定しなければ捨てる。
    ## Args:
        problem (MooProblem): 問題
        lam (np.ndarray): 相対的内部の重みベクトル
        h (float | None): 刻み幅。None なら opts.fd_step
        opts (SensitivityOptions | None): 感度の設定
        solver_opts (SolverOptions | None): ソルバーの設定
    ## Returns:
        GradientCheckReport:
            max_rel_error は成分ごとの |fd - an| / max(1, |an|) の最大値。
            null_vector_defect は ||λᵀ ∇F̄||。
    """
    opts = opts or SENSITIVITY_OPTIONS
    solver_opts = solver_opts or SOLVER_OPTIONS
    h = opts.fd_step if h is None else float(h)
    if h <= 0:
        raise ValueError(f"Argument 'h' must be positive, got {h}")
    sol = solve_weighted_sum(problem, lam, opts=solver_opts)
    sens = compute_sensitivity(problem, sol, opts)
    dF = sens.dF_dlambda
    errors = []
    discarded = []
    for i in range(problem.q):
        step = h * max(1.0, abs(lam[i]))
        if lam[i] > 0:
            step = min(step, 0.5 * lam[i])
        else:
            discarded.append(i)
            continue
        for _ in range(opts.fd_retries + 1):
            plus = lam.copy()
            plus[i] += step
            minus = lam.copy()
            minus[i] -= step
            plus, minus = plus / plus.sum(), minus / minus.sum()
            sol_plus = solve_weighted_sum(problem, plus, sol.x, solver_opts)
            sol_minus = solve_weighted_sum(problem, minus, sol.x, solver_opts)
            stable = set(sol_plus.active_set) == set(sol.active_set) and set(
                sol_minus.active_set
            ) == set(sol.active_set)
            if stable:
                fd = (sol_plus.f_values - sol_minus.f_values) / (2.0 * step)
                errors.append(np.max(np.abs(fd - dF[i]) / np.maximum(1.0, np.abs(dF[i]))))
                break
            step *= 0.5
        else:
            logger.info("%s: probe %d changes the active set; discarded", problem.name, i)
            discarded.append(i)
    return GradientCheckReport(
        problem=problem.name,
        lam=lam,
        h=h,
        max_rel_error=float(max(errors)) if errors else float("nan"),
        symmetric_defect=float(np.max(np.abs(dF - dF.T))),
        null_vector_defect=float(np.linalg.norm(lam @ dF)),
        discarded_probes=tuple(discarded),
    )
