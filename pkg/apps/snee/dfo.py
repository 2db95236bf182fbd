"""
微分を使わない最適化（Nelder-Mead, DIRECT）。

どちらも scipy の実装を使い、評価回数の上限と評価履歴はこのモジュールの
`_Recorder` が管理する。点の変換（単体への射影など）を渡すと、変換後の点で目的関数を
評価し、履歴にも変換後の点を残す。
"""

import logging
import warnings
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import Bounds, direct, minimize

from apps.snee.config import (
    DIRECT_OPTIONS,
    NELDER_MEAD_OPTIONS,
    DirectOptions,
    NelderMeadOptions,
)
from apps.snee.errors import MaxEvaluationsWarning
from apps.snee.formatter import vector_formatter

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]
Transform = Callable[[np.ndarray], np.ndarray]


class Incumbent(NamedTuple):
    evaluation: int
    point: np.ndarray
    value: float


class DfoTrace(NamedTuple):
    """
    Args:
        iterates(list[tuple]): 評価したすべての (点, 値)
        incumbents(list[Incumbent]): 最良値が更新された評価
        best_point(np.ndarray): 最良の点
        best_value(float): 最良値
        evaluations(int): 評価回数
        converged(bool): 収束判定を満たして終了したか
        message(str): 終了理由
    """

    iterates: list[tuple[np.ndarray, float]]
    incumbents: list[Incumbent]
    best_point: np.ndarray
    best_value: float
    evaluations: int
    converged: bool
    message: str = ""


class _Recorder(object):
    def __init__(
        self,
        objective: Objective,
        budget: int,
        transform: Optional[Transform] = None,
        nonfinite_value: Optional[float] = None,
        capture_errors: bool = False,
    ):
        self.objective = objective
        self.budget = budget
        self.transform = transform
        self.nonfinite_value = nonfinite_value
        self.iterates: list[tuple[np.ndarray, float]] = []
        self.incumbents: list[Incumbent] = []
        self.exhausted = False
        self.capture_errors = capture_errors
        self.error: Optional[BaseException] = None

    @property
    def evaluations(self) -> int:
        return len(self.iterates)

    def __call__(self, v) -> float:
        if self.error is not None:
            return self._filler()
        if self.evaluations >= self.budget:
            # コンパイル済みの最適化から例外は抜けないので、記録せず最良値を返す
            self.exhausted = True
            return self._filler()
        point = np.array(v, dtype=float)
        try:
            if self.transform is not None:
                point = self.transform(point)
            value = float(self.objective(point))
        except Exception as e:
            if not self.capture_errors:
                raise
            self.error = e
            return self._filler()
        self.iterates.append((point, value))
        if not self.incumbents or value < self.incumbents[-1].value:
            self.incumbents.append(Incumbent(self.evaluations, point, value))
        if not np.isfinite(value) and self.nonfinite_value is not None:
            return self.nonfinite_value
        return value

    def _filler(self) -> float:
        if self.incumbents and np.isfinite(self.incumbents[-1].value):
            return self.incumbents[-1].value
        if self.nonfinite_value is not None:
            return self.nonfinite_value
        return np.inf

    def trace(self, converged: bool, message: str) -> DfoTrace:
        if not self.incumbents:
            raise RuntimeError("The optimizer finished without evaluating the objective")
        best = self.incumbents[-1]
        return DfoTrace(
            iterates=self.iterates,
            incumbents=self.incumbents,
            best_point=best.point,
            best_value=best.value,
            evaluations=self.evaluations,
            converged=converged,
            message=message,
        )


def nelder_mead(
    objective: Objective,
    x0,
    opts: Optional[NelderMeadOptions] = None,
    transform: Optional[Transform] = None,
) -> DfoTrace:
    """
    ## Description:
        Nelder-Mead 法（反射 1、拡大 2、収縮 0.5、縮小 0.5）で最小化する。
        初期単体は x0 と、x0 から各軸方向に initial_step 進めた点。
        単体の直径が xatol 未満かつ値の広がりが fatol 未満になれば収束。
    ## Args:
        objective (Callable): 最小化するスカラー関数
        x0 (array-like): 初期点
        opts (NelderMeadOptions | None): 設定。None なら既定値（評価回数の上限は 200 q）
        transform (Callable | None): 評価前に点へ適用する変換
    ## Returns:
        DfoTrace
    ## Warns:
        MaxEvaluationsWarning: 収束する前に評価回数の上限に達した
    ## Examples:
        >>> f = lambda v: float(np.sum((v - [0.3, 0.7]) ** 2))
        >>> trace = nelder_mead(f, [0.9, 0.1])
        >>> np.round(trace.best_point, 4)
        array([0.3, 0.7])
    """
    opts = opts or NELDER_MEAD_OPTIONS
    x0 = vector_formatter(x0, "x0")
    budget = opts.max_evaluations(x0.size)
    recorder = _Recorder(objective, budget, transform)
    simplex = np.vstack([x0, x0 + opts.initial_step * np.eye(x0.size)])
    res = minimize(
        recorder,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": opts.xatol,
            "fatol": opts.fatol,
            "maxfev": budget,
            "maxiter": budget,
        },
    )
    converged = bool(res.success) and not recorder.exhausted
    message = "evaluation budget exhausted" if recorder.exhausted else str(res.message)
    if not converged:
        warnings.warn(
            f"Nelder-Mead stopped after {recorder.evaluations} evaluations: {message}",
            MaxEvaluationsWarning,
            stacklevel=2,
        )
    logger.debug("Nelder-Mead: %d evaluations, %s", recorder.evaluations, message)
    return recorder.trace(converged, message)


def direct_optimize(
    objective: Objective,
    lower,
    upper,
    opts: Optional[DirectOptions] = None,
    transform: Optional[Transform] = None,
) -> DfoTrace:
    """
    ## Description:
        DIRECT 法で箱 [lower, upper] 上の関数を最小化する。最初の評価は箱の中心。
        潜在的に最適な超矩形は Jones のバランス係数 eps で選ぶ。
        評価回数の上限に達して止まるのが通常の終了で、converged は scipy が
        それ以外の理由で止めたときだけ True になる。
        目的関数の例外は DIRECT の終了後に送出し直す。
    ## Args:
        objective (Callable): 最小化するスカラー関数
        lower, upper (array-like): 箱の下限と上限
        opts (DirectOptions | None): 設定。None なら既定値
            （評価回数の上限は次元 3 以下で 500、それ以上で 2000）
        transform (Callable | None): 評価前に点へ適用する変換
    ## Returns:
        DfoTrace: 非有限の値は DIRECT には nonfinite_value として渡し、履歴には元の値を残す
    """
    opts = opts or DIRECT_OPTIONS
    lower = vector_formatter(lower, "lower")
    upper = vector_formatter(upper, "upper")
    if lower.size != upper.size or np.any(lower >= upper):
        raise ValueError(f"Invalid box: lower={lower.tolist()}, upper={upper.tolist()}")
    budget = opts.max_evaluations(lower.size)
    recorder = _Recorder(
        objective, budget, transform, opts.nonfinite_value, capture_errors=True
    )
    res = direct(
        recorder,
        Bounds(lower, upper),
        eps=opts.eps,
        maxfun=budget,
        maxiter=budget,
        locally_biased=opts.locally_biased,
    )
    if recorder.error is not None:
        raise recorder.error
    converged = (
        bool(res.success)
        and not recorder.exhausted
        and recorder.evaluations < budget
    )
    message = "evaluation budget exhausted" if recorder.exhausted else str(res.message)
    logger.debug("DIRECT: %d evaluations, %s", recorder.evaluations, message)
    return recorder.trace(converged, message)
