"""
重み付き和によるスカラー化と、単体 Λ、その離散化 Λ_m、Λ への射影。
"""

import itertools
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from apps.snee.formatter import (
    type_checker_order,
    type_checker_vector,
    type_checker_weights,
    vector_formatter,
    weights_formatter,
)
from apps.snee.problems import MooProblem, evaluate


class WeightedSumValue(NamedTuple):
    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None


class SimplexGrid(NamedTuple):
    """
    Λ_m: 刻み幅 step の等間隔な重みベクトルの集合

    Args:
        step(float): 刻み幅
        divisions(int): K = round(1 / step)
        points(np.ndarray): 重みベクトル (m, q)。整数の組成 k / K から作る
    """

    step: float
    divisions: int
    points: np.ndarray

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def q(self) -> int:
        return self.points.shape[1]

    @property
    def counts(self) -> np.ndarray:
        """各点の整数の組成 k（和は K）"""
        return np.rint(self.points * self.divisions).astype(int)


@type_checker_weights(arg_index=1, kward="lam", size_attr="q")
@type_checker_vector(arg_index=2, kward="x", size_attr="n")
@type_checker_order(arg_index=3, kward="order")
def weighted_sum(
    problem: MooProblem, lam: np.ndarray, x: np.ndarray, order: int = 0
) -> WeightedSumValue:
    """
    ## Description:
        重み付き和 Σλ_i f_i(x) と、その勾配・ヘッセ行列を評価する。
    ## Args:
        problem (MooProblem): 問題
        lam (np.ndarray): 重みベクトル（Λ の点）
        x (np.ndarray): 決定変数
        order (int): 0: 値のみ, 1: 勾配まで, 2: ヘッセ行列まで
    ## Returns:
        WeightedSumValue
    ## Examples:
        >>> zlt1 = make_problem("ZLT1")
        >>> weighted_sum(zlt1, [1, 0, 0], [1, 0, 0], order=1).gradient
        array([0., 0., 0.])
    """
    ev = evaluate(problem, x, order)
    value = float(lam @ ev.values)
    gradient = ev.gradients @ lam if ev.gradients is not None else None
    hessian = None
    if ev.hessians is not None:
        hessian = np.einsum("i,ijk->jk", lam, ev.hessians)
    return WeightedSumValue(value, gradient, hessian)


def project_simplex(v) -> np.ndarray:
    """
    ## Description:
        ベクトルを単体 Λ にユークリッド距離で直交射影する。
        降順に並べ替えてしきい値 θ を求め、v - θ を 0 で切り捨てる。
    ## Args:
        v (array-like): 有限な1次元ベクトル
    ## Returns:
        np.ndarray: 射影された重みベクトル
    ## Examples:
        >>> project_simplex([0.6, 0.6])
        array([0.5, 0.5])
        >>> project_simplex([2.0, 0.0])
        array([1., 0.])
    """
    v = vector_formatter(v, "v")
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - 1.0
    index = np.arange(1, v.size + 1)
    rho = np.nonzero(u - cumulative / index > 0)[0][-1]
    theta = cumulative[rho] / (rho + 1.0)
    projected = np.maximum(v - theta, 0.0)
    # 丸め誤差で和が 1 からずれた分を正の成分に配り直す
    return projected / projected.sum()


def simplex_grid(q: int, step: float) -> SimplexGrid:
    """
    ## Description:
        K = 1/step 個に分けた単体の格子点 Λ_m を作る。各点は K の q 個の非負整数への
        組成 k を K で割ったもので、k の辞書順に並ぶ。
    ## Args:
        q (int): 目的関数の数
        step (float): 刻み幅。1/step はほぼ整数でなければならない
    ## Returns:
        SimplexGrid: m = C(K+q-1, q-1) 個の点
    ## Examples:
        >>> simplex_grid(2, 0.5).points
        array([[0. , 1. ],
               [0.5, 0.5],
               [1. , 0. ]])
        >>> simplex_grid(5, 0.1).m
        1001
    """
    if int(q) != q or q < 2:
        raise ValueError(f"Argument 'q' must be an integer >= 2, got {q}")
    q = int(q)
    if not (0 < step <= 1):
        raise ValueError(f"Argument 'step' must satisfy 0 < step <= 1, got {step}")
    divisions = int(round(1.0 / step))
    if divisions < 1 or abs(divisions * step - 1.0) > 1e-9:
        raise ValueError(f"1/step must be an integer, got step={step}")
    # stars and bars: K 個の星と q-1 本の棒の並べ方
    counts = []
    for bars in itertools.combinations(range(divisions + q - 1), q - 1):
        edges = (-1,) + bars + (divisions + q - 1,)
        counts.append([edges[i + 1] - edges[i] - 1 for i in range(q)])
    points = np.array(counts, dtype=float) / divisions
    points.setflags(write=False)
    return SimplexGrid(step=1.0 / divisions, divisions=divisions, points=points)


def grid_frame(grid: SimplexGrid) -> pd.DataFrame:
    """格子点を列 lambda_1..lambda_q の DataFrame にする"""
    columns = [f"lambda_{i + 1}" for i in range(grid.q)]
    return pd.DataFrame(np.array(grid.points), columns=columns)


def nearest_grid_index(grid: SimplexGrid, lam) -> int:
    """
    ## Description:
        重みベクトルに最も近い格子点のインデックスを返す。距離が等しい場合は
        インデックスの小さい方。
    ## Examples:
        >>> nearest_grid_index(simplex_grid(2, 0.5), [0.6, 0.4])
        1
    """
    lam = weights_formatter(lam, "lam")
    if lam.size != grid.q:
        raise ValueError(f"Argument 'lam' must have length {grid.q}, got {lam.size}")
    return int(np.argmin(np.linalg.norm(grid.points - lam, axis=1)))
