"""
多目的最適化問題の定義と、テスト問題のレジストリ。

目的関数と制約関数はすべて2階までの導関数を手で書いている。自動微分は使わない。
有限差分はテストでの検証にのみ使う。
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from apps.snee.config import PROBLEM_DEFAULTS
from apps.snee.errors import (
    NonFiniteEvaluationError,
    ProblemParameterError,
    UnconstrainedProblemError,
    UnknownProblemError,
)
from apps.snee.formatter import (
    type_checker_order,
    type_checker_vector,
    type_checker_weights,
    vector_formatter,
)


class ScalarFunction(NamedTuple):
    """x のスカラー関数と、その勾配・ヘッセ行列"""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]


class ObjectiveEvaluation(NamedTuple):
    """
    values(np.ndarray): 目的関数値 (q,)
    gradients(np.ndarray | None): 行列 G (n, q)。第 i 列が ∇f_i
    hessians(np.ndarray | None): ヘッセ行列 (q, n, n)
    """

    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None


class ConstraintEvaluation(NamedTuple):
    """
    c_I, c_E: 不等式制約・等式制約の値
    jac_I, jac_E: 列が ∇c_j の行列 (n, |I|), (n, |E|)
    hessians_I, hessians_E: 制約ごとのヘッセ行列 (|I|, n, n), (|E|, n, n)
    """

    c_I: np.ndarray
    c_E: np.ndarray
    jac_I: Optional[np.ndarray] = None
    jac_E: Optional[np.ndarray] = None
    hessians_I: Optional[np.ndarray] = None
    hessians_E: Optional[np.ndarray] = None


class Dominance(Enum):
    strict: str = "strict"
    weak: str = "weak"
    none: str = "none"


@dataclass(frozen=True, eq=False)
class MooProblem:
    """
    多目的最適化問題 min F(x) = (f_1(x), ..., f_q(x)) s.t. c_I(x) <= 0, c_E(x) = 0

    Args:
        name(str): 問題名
        n(int): 決定変数の次元
        q(int): 目的関数の数
        objectives(tuple[ScalarFunction]): 目的関数
        inequality_constraints(tuple[ScalarFunction]): 不等式制約 c_j(x) <= 0
        equality_constraints(tuple[ScalarFunction]): 等式制約 c_j(x) = 0
        params(dict): 問題のパラメーター（n̄, q̄, r など）
        data(dict): 問題の係数など、参照用のデータ
    """

    name: str
    n: int
    q: int
    objectives: tuple[ScalarFunction, ...]
    inequality_constraints: tuple[ScalarFunction, ...] = ()
    equality_constraints: tuple[ScalarFunction, ...] = ()
    params: dict[str, Any] = field(default_factory=dict)
    data: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.q < 2:
            raise ProblemParameterError(
                f"A problem needs q >= 2 objectives, got {self.q}"
            )
        if self.n < 1:
            raise ProblemParameterError(f"A problem needs n >= 1 variables, got {self.n}")
        if len(self.objectives) != self.q:
            raise ProblemParameterError(
                f"Expected {self.q} objectives, got {len(self.objectives)}"
            )

    @property
    def n_ineq(self) -> int:
        return len(self.inequality_constraints)

    @property
    def n_eq(self) -> int:
        return len(self.equality_constraints)

    @property
    def constrained(self) -> bool:
        return (self.n_ineq + self.n_eq) > 0

    @property
    def key(self) -> tuple:
        """キャッシュのキーに使う識別子"""
        return (self.name, tuple(sorted(self.params.items())))

    def record(self) -> dict[str, Any]:
        """`list-problems` の出力に使う辞書"""
        return {
            "name": self.name,
            "n": self.n,
            "q": self.q,
            "constrained": self.constrained,
            "params": dict(self.params),
        }

    def __repr__(self) -> str:
        return (
            f"MooProblem(name={self.name!r}, n={self.n}, q={self.q}, "
            f"|I|={self.n_ineq}, |E|={self.n_eq}, params={self.params})"
        )


# ***********************************************************************
# ************************ 関数を組み立てる部品 ************************
# ***********************************************************************
def quadratic(
    hessian: np.ndarray, linear: np.ndarray, constant: float = 0.0
) -> ScalarFunction:
    """
    ## Description:
        2次関数 f(x) = ½ xᵀHx + bᵀx + c を作る。
    ## Args:
        hessian (np.ndarray): 対称行列 H
        linear (np.ndarray): ベクトル b
        constant (float): 定数 c
    ## Returns:
        ScalarFunction
    ## Examples:
        >>> f = quadratic(2 * np.eye(2), np.array([0.0, -2.0]), 1.0)
        >>> f.value(np.zeros(2))
        1.0
    """
    H = np.array(hessian, dtype=float)
    b = np.array(linear, dtype=float)
    c = float(constant)
    return ScalarFunction(
        value=lambda x: float(0.5 * x @ H @ x + b @ x + c),
        gradient=lambda x: H @ x + b,
        hessian=lambda x: H.copy(),
    )


def squared_distance(center: np.ndarray, offset: float = 0.0) -> ScalarFunction:
    """f(x) = ||x - center||² + offset"""
    center = np.asarray(center, dtype=float)
    n = center.size
    return quadratic(2.0 * np.eye(n), -2.0 * center, float(center @ center) + offset)


def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _quartic_well(nbar: int, shift: float) -> ScalarFunction:
    """f(x) = (1/n̄) Σ (x_i - s)² + ½ Σ (x_i - s)⁴"""

    def value(x):
        d = x - shift
        return float(np.sum(d**2) / nbar + 0.5 * np.sum(d**4))

    def gradient(x):
        d = x - shift
        return 2.0 * d / nbar + 2.0 * d**3

    def hessian(x):
        d = x - shift
        return np.diag(2.0 / nbar + 6.0 * d**2)

    return ScalarFunction(value, gradient, hessian)


def _cubic_difference_objective() -> ScalarFunction:
    """DAS1 の f_2 = 3x_1 + 2x_2 - x_3/3 + 0.01 (x_4 - x_5)³"""
    coef = np.array([3.0, 2.0, -1.0 / 3.0, 0.0, 0.0])

    def value(x):
        return float(coef @ x + 0.01 * (x[3] - x[4]) ** 3)

    def gradient(x):
        d2 = 0.03 * (x[3] - x[4]) ** 2
        grad = coef.copy()
        grad[3] += d2
        grad[4] -= d2
        return grad

    def hessian(x):
        d = 0.06 * (x[3] - x[4])
        hess = np.zeros((5, 5))
        hess[3, 3] = d
        hess[4, 4] = d
        hess[3, 4] = -d
        hess[4, 3] = -d
        return hess

    return ScalarFunction(value, gradient, hessian)


def _das1_quadratic_equality() -> ScalarFunction:
    """DAS1 の c_3 = 4x_1 - 2x_2 + 0.8x_3 + 0.6x_4 + 0.5x_5²"""
    hess = np.zeros((5, 5))
    hess[4, 4] = 1.0
    return quadratic(hess, np.array([4.0, -2.0, 0.8, 0.6, 0.0]))


def _do2dk_objective(n: int, use_sine: bool) -> ScalarFunction:
    """
    ## Description:
        DO2DK の目的関数 f = g_1(x) g_2(x_1) (trig(π x_1 / 2 + π) + 1)。
        g_1 は x_2..x_n の1次式なので、ヘッセ行列は第1行・第1列にしか値を持たない。
    """
    k = 9.0 / (n - 1)
    sqrt2 = math.sqrt(2.0)
    half_pi = 0.5 * math.pi

    def parts(x):
        x1 = x[0]
        g1 = 1.0 + k * float(np.sum(x[1:]))
        g2 = 5.0 + 10.0 * (x1 - 0.5) ** 2 + sqrt2 * math.cos(2.0 * math.pi * x1)
        dg2 = 20.0 * (x1 - 0.5) - 2.0 * math.pi * sqrt2 * math.sin(2.0 * math.pi * x1)
        ddg2 = 20.0 - 4.0 * math.pi**2 * sqrt2 * math.cos(2.0 * math.pi * x1)
        theta = half_pi * x1 + math.pi
        if use_sine:
            s = math.sin(theta) + 1.0
            ds = half_pi * math.cos(theta)
            dds = -(half_pi**2) * math.sin(theta)
        else:
            s = math.cos(theta) + 1.0
            ds = -half_pi * math.sin(theta)
            dds = -(half_pi**2) * math.cos(theta)
        h = g2 * s
        dh = dg2 * s + g2 * ds
        ddh = ddg2 * s + 2.0 * dg2 * ds + g2 * dds
        return g1, h, dh, ddh

    def value(x):
        g1, h, _, _ = parts(x)
        return g1 * h

    def gradient(x):
        g1, h, dh, _ = parts(x)
        grad = np.full(n, k * h)
        grad[0] = g1 * dh
        return grad

    def hessian(x):
        g1, _, dh, ddh = parts(x)
        hess = np.zeros((n, n))
        hess[0, 0] = g1 * ddh
        hess[0, 1:] = k * dh
        hess[1:, 0] = k * dh
        return hess

    return ScalarFunction(value, gradient, hessian)


# ***********************************************************************
# *************************** テスト問題 *******************************
# ***********************************************************************
def _check_params(name: str, params: dict[str, Any], allowed: set[str]) -> None:
    unknown = set(params) - allowed
    if unknown:
        raise ProblemParameterError(
            f"Unknown parameters for {name}: {sorted(unknown)}. "
            f"Allowed: {sorted(allowed)}"
        )


def _integer_param(params: dict[str, Any], key: str, minimum: int) -> int:
    value = params[key]
    try:
        ivalue = int(value)
    except (TypeError, ValueError) as e:
        raise ProblemParameterError(f"Parameter '{key}' must be an integer") from e
    if ivalue != value or ivalue < minimum:
        raise ProblemParameterError(
            f"Parameter '{key}' must be an integer >= {minimum}, got {value}"
        )
    return ivalue


def _build_zlt1(params: dict[str, Any]) -> MooProblem:
    _check_params("ZLT1", params, set())
    objectives = tuple(squared_distance(_unit(3, i)) for i in range(3))
    return MooProblem("ZLT1", 3, 3, objectives)


def _build_zlt1q(params: dict[str, Any]) -> MooProblem:
    _check_params("ZLT1q", params, {"nbar", "qbar"})
    params = {**PROBLEM_DEFAULTS["ZLT1q"], **params}
    nbar = _integer_param(params, "nbar", 2)
    qbar = _integer_param(params, "qbar", 2)
    if qbar > nbar:
        raise ProblemParameterError(
            f"ZLT1q needs qbar <= nbar, got qbar={qbar}, nbar={nbar}"
        )
    objectives = tuple(squared_distance(_unit(nbar, j)) for j in range(qbar))
    params = {"nbar": nbar, "qbar": qbar}
    return MooProblem("ZLT1q", nbar, qbar, objectives, params=params)


def _vfm1_objectives() -> tuple[ScalarFunction, ...]:
    return (
        squared_distance(np.array([0.0, 1.0])),
        squared_distance(np.array([0.0, -1.0]), offset=1.0),
        squared_distance(np.array([1.0, 0.0]), offset=2.0),
    )


def _build_vfm1(params: dict[str, Any]) -> MooProblem:
    _check_params("VFM1", params, set())
    return MooProblem("VFM1", 2, 3, _vfm1_objectives())


def _build_grv1(params: dict[str, Any]) -> MooProblem:
    _check_params("GRV1", params, {"nbar", "literal_f2"})
    defaults = PROBLEM_DEFAULTS["GRV1"]
    nbar = _integer_param({**{"nbar": defaults["nbar"]}, **params}, "nbar", 1)
    if nbar != 1:
        # 公開されている行列は 2x2 なので n̄ = 1 しか作れない
        raise ProblemParameterError(
            f"GRV1 data is published for nbar = 1 only (n = 2), got nbar={nbar}"
        )
    literal_f2 = bool(params.get("literal_f2", False))
    a = [float(v) for v in defaults["a"]]
    blocks = [np.array(h, dtype=float) for h in defaults["hessians"]]
    # 対角と非対角の成分に名前を付ける: H^(i) = [[H_a, H_c], [H_c, H_b]]
    named = {}
    for i, h in enumerate(blocks):
        named[f"H{3 * i + 1}"] = float(h[0, 0])
        named[f"H{3 * i + 2}"] = float(h[1, 1])
        named[f"H{3 * i + 3}"] = float(h[0, 1])
    hessians = list(blocks)
    if literal_f2:
        # f_2 = ½ H_3 x_1² + ½ H_4 x_2² + H_5 x_1 x_2 （印刷されたとおりの添字）
        hessians[1] = np.array(
            [[named["H3"], named["H5"]], [named["H5"], named["H4"]]], dtype=float
        )
    linears = [np.array(a[0:2]), np.array(a[2:4]), np.array(a[4:6])]
    objectives = tuple(quadratic(h, b) for h, b in zip(hessians, linears, strict=True))
    data = {**named, **{f"a{i + 1}": v for i, v in enumerate(a)}}
    return MooProblem(
        "GRV1",
        2 * nbar,
        3,
        objectives,
        params={"nbar": nbar, "literal_f2": literal_f2},
        data=data,
    )


def _build_grv2(params: dict[str, Any]) -> MooProblem:
    _check_params("GRV2", params, {"nbar"})
    params = {**PROBLEM_DEFAULTS["GRV2"], **params}
    nbar = _integer_param(params, "nbar", 1)
    objectives = (_quartic_well(nbar, 0.0), _quartic_well(nbar, 2.0))
    return MooProblem("GRV2", nbar, 2, objectives, params={"nbar": nbar})


def _build_das1(params: dict[str, Any]) -> MooProblem:
    _check_params("DAS1", params, set())
    objectives = (squared_distance(np.zeros(5)), _cubic_difference_objective())
    inequalities = (squared_distance(np.zeros(5), offset=-10.0),)
    equalities = (
        quadratic(np.zeros((5, 5)), np.array([1.0, 2.0, -1.0, -0.5, 1.0]), -2.0),
        _das1_quadratic_equality(),
    )
    return MooProblem("DAS1", 5, 2, objectives, inequalities, equalities)


def _build_do2dk(params: dict[str, Any]) -> MooProblem:
    _check_params("DO2DK", params, {"n", "r"})
    params = {**PROBLEM_DEFAULTS["DO2DK"], **params}
    n = _integer_param(params, "n", 2)
    try:
        r = float(params["r"])
    except (TypeError, ValueError) as e:
        raise ProblemParameterError("Parameter 'r' must be a number") from e
    if not (math.isfinite(r) and r > 0):
        raise ProblemParameterError(f"Parameter 'r' must be positive, got {params['r']}")
    objectives = (_do2dk_objective(n, use_sine=True), _do2dk_objective(n, use_sine=False))
    zeros = np.zeros((n, n))
    # -x_j <= 0 と x_j - r <= 0 を 2n 個の不等式として明示的に持つ
    lower = tuple(quadratic(zeros, -_unit(n, j)) for j in range(n))
    upper = tuple(quadratic(zeros, _unit(n, j), -r) for j in range(n))
    return MooProblem("DO2DK", n, 2, objectives, lower + upper, params={"n": n, "r": r})


def _build_vfm1constr(params: dict[str, Any]) -> MooProblem:
    _check_params("VFM1constr", params, set())
    inequalities = (
        squared_distance(np.zeros(2), offset=-0.8),
        squared_distance(np.array([1.0, 0.0]), offset=-1.0),
    )
    return MooProblem("VFM1constr", 2, 3, _vfm1_objectives(), inequalities)


_REGISTRY: dict[str, Callable[[dict[str, Any]], MooProblem]] = {
    "ZLT1": _build_zlt1,
    "GRV1": _build_grv1,
    "VFM1": _build_vfm1,
    "ZLT1q": _build_zlt1q,
    "GRV2": _build_grv2,
    "DAS1": _build_das1,
    "DO2DK": _build_do2dk,
    "VFM1constr": _build_vfm1constr,
}

PROBLEM_NAMES: tuple[str, ...] = tuple(_REGISTRY)


def make_problem(name: str, params: Optional[dict[str, Any]] = None) -> MooProblem:
    """
    ## Description:
        名前とパラメーターからテスト問題を作る。
    ## Args:
        name (str):
            問題名。ZLT1, GRV1, VFM1, ZLT1q, GRV2, DAS1, DO2DK, VFM1constr のいずれか。
        params (dict | None):
            問題のパラメーター。省略した項目は既定値になる。
            - ZLT1q: nbar, qbar（既定値 5, 5）
            - GRV2: nbar（既定値 2）
            - GRV1: nbar（1 のみ）, literal_f2
            - DO2DK: n（既定値 30）, r（既定値 1.0）
    ## Returns:
        MooProblem
    ## Raises:
        UnknownProblemError: 登録されていない名前
        ProblemParameterError: パラメーターが不正
    ## Examples:
        >>> make_problem("DO2DK", {"r": 0.5}).n_ineq
        60
    """
    builder = _REGISTRY.get(name)
    if builder is None:
        raise UnknownProblemError(
            f"Unknown problem '{name}'. Registered: {', '.join(PROBLEM_NAMES)}"
        )
    return builder(dict(params or {}))


def list_problems() -> list[dict[str, Any]]:
    """登録されているすべての問題を既定のパラメーターで作り、その概要を返す"""
    return [make_problem(name).record() for name in PROBLEM_NAMES]


# ***********************************************************************
# ******************************* 評価 *********************************
# ***********************************************************************
def _check_finite(values: np.ndarray, what: str, problem: MooProblem, x: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise NonFiniteEvaluationError(
            f"{problem.name}: non-finite {what} at x={x.tolist()}"
        )


def _evaluate_functions(
    functions: tuple[ScalarFunction, ...], x: np.ndarray, order: int, n: int
) -> tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    values = np.array([f.value(x) for f in functions], dtype=float)
    gradients = None
    hessians = None
    if order >= 1:
        gradients = np.zeros((n, len(functions)))
        for i, f in enumerate(functions):
            gradients[:, i] = f.gradient(x)
    if order == 2:
        hessians = np.zeros((len(functions), n, n))
        for i, f in enumerate(functions):
            hessians[i] = f.hessian(x)
    return values, gradients, hessians


@type_checker_vector(arg_index=1, kward="x", size_attr="n")
@type_checker_order(arg_index=2, kward="order")
def evaluate(problem: MooProblem, x: np.ndarray, order: int = 0) -> ObjectiveEvaluation:
    """
    ## Description:
        目的関数 F(x) と、必要に応じて勾配行列 G とヘッセ行列を評価する。
    ## Args:
        problem (MooProblem): 問題
        x (np.ndarray): 決定変数 (n,)
        order (int): 0: 値のみ, 1: 勾配まで, 2: ヘッセ行列まで
    ## Returns:
        ObjectiveEvaluation
    ## Raises:
        ValueError: x の長さが n と異なる、または有限でない
        NonFiniteEvaluationError: 評価値が有限でない
    ## Examples:
        >>> evaluate(make_problem("VFM1"), [0.0, 0.0]).values
        array([1., 2., 3.])
    """
    values, gradients, hessians = _evaluate_functions(
        problem.objectives, x, order, problem.n
    )
    for what, arr in (
        ("objective", values),
        ("gradient", gradients),
        ("hessian", hessians),
    ):
        if arr is not None:
            _check_finite(arr, what, problem, x)
    return ObjectiveEvaluation(values, gradients, hessians)


@type_checker_vector(arg_index=1, kward="x", size_attr="n")
@type_checker_order(arg_index=2, kward="order")
def evaluate_constraints(
    problem: MooProblem, x: np.ndarray, order: int = 0
) -> ConstraintEvaluation:
    """
    ## Description:
        制約関数 c_I, c_E を、宣言された順序のまま評価する。
    ## Args:
        problem (MooProblem): 制約付きの問題
        x (np.ndarray): 決定変数 (n,)
        order (int): 0: 値のみ, 1: ヤコビ行列まで, 2: ヘッセ行列まで
    ## Returns:
        ConstraintEvaluation
    ## Raises:
        UnconstrainedProblemError: 制約のない問題
    ## Examples:
        >>> evaluate_constraints(make_problem("VFM1constr"), [0.0, 0.0]).c_I
        array([-0.8,  0. ])
    """
    if not problem.constrained:
        raise UnconstrainedProblemError(f"{problem.name} has no constraints")
    c_I, jac_I, hess_I = _evaluate_functions(
        problem.inequality_constraints, x, order, problem.n
    )
    c_E, jac_E, hess_E = _evaluate_functions(
        problem.equality_constraints, x, order, problem.n
    )
    for what, arr in (
        ("inequality constraint", c_I),
        ("equality constraint", c_E),
        ("constraint jacobian", jac_I),
        ("constraint jacobian", jac_E),
        ("constraint hessian", hess_I),
        ("constraint hessian", hess_E),
    ):
        if arr is not None:
            _check_finite(arr, what, problem, x)
    return ConstraintEvaluation(c_I, c_E, jac_I, jac_E, hess_I, hess_E)


def dominates(F1, F2) -> Dominance:
    """
    ## Description:
        目的関数値のベクトル同士のパレート支配関係を判定する。
    ## Args:
        F1, F2 (array-like): 同じ長さの目的関数値
    ## Returns:
        Dominance:
            - strict: すべての成分で F1 < F2
            - weak: すべての成分で F1 <= F2 かつ F1 != F2
            - none: それ以外
    ## Examples:
        >>> dominates([1, 2], [2, 3])
        <Dominance.strict: 'strict'>
        >>> dominates([1, 3], [1, 4])
        <Dominance.weak: 'weak'>
    """
    a = vector_formatter(F1, "F1")
    b = vector_formatter(F2, "F2")
    if a.size != b.size:
        raise ValueError(f"Objective vectors differ in length: {a.size} != {b.size}")
    if np.all(a < b):
        return Dominance.strict
    if np.all(a <= b) and np.any(a < b):
        return Dominance.weak
    return Dominance.none


@type_checker_weights(arg_index=1, kward="lam", size_attr="q")
@type_checker_vector(arg_index=2, kward="x", size_attr="n")
def weighted_hessian_is_pd(
    problem: MooProblem, lam: np.ndarray, x: np.ndarray
) -> bool:
    """重み付き和のヘッセ行列 Σλ_i∇²f_i(x) が正定値かをコレスキー分解で判定する"""
    hessians = evaluate(problem, x, order=2).hessians
    matrix = np.einsum("i,ijk->jk", lam, hessians)
    try:
        np.linalg.cholesky(0.5 * (matrix + matrix.T))
    except np.linalg.LinAlgError:
        return False
    return True
