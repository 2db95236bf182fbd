import os
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

FilePath = str

DEFAULTS_FILE: FilePath = os.path.join(os.path.dirname(__file__), "data", "defaults.yaml")


def read_defaults(fp: FilePath = DEFAULTS_FILE) -> dict:
    """
    ## Summary:
        既定値の YAML ファイルを読み込む。
    ## Args:
        fp (str): ファイルパス
    ## Returns:
        dict: 設定の辞書
    """
    with open(fp, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


CONFIG = read_defaults()


class _Options(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SolverOptions(_Options):
    """
    内部ソルバー（BFGS / SQP）の設定。

    Args:
        tol_stat(float): 停留性の許容誤差（勾配ノルム）
        max_iter(int): BFGS の反復上限
        tol_kkt(float): KKT 残差の許容誤差
        sqp_max_iter(int): SQP の反復上限
        sqp_ftol(float): SLSQP の目的関数値の精度
        active_tol(float): 有効制約の判定に使う許容誤差
        scs_tol(float): 狭義相補性の警告しきい値
        polish_steps(int): ニュートン法による仕上げの反復上限
        warm_start(bool): グリッドの求解で近くの解から開始するか
        workers(int): グリッドの求解に使うスレッド数
    """

    tol_stat: float = Field(gt=0)
    max_iter: int = Field(gt=0)
    tol_kkt: float = Field(gt=0)
    sqp_max_iter: int = Field(gt=0)
    sqp_ftol: float = Field(gt=0)
    active_tol: float = Field(gt=0)
    scs_tol: float = Field(ge=0)
    polish_steps: int = Field(ge=0)
    warm_start: bool = True
    workers: int = Field(default=1, ge=1)


class SensitivityOptions(_Options):
    rank_tol: float = Field(gt=0)
    max_condition: float = Field(gt=1)
    fd_step: float = Field(gt=0)
    fd_retries: int = Field(ge=0)


class GridOptions(_Options):
    steps: dict[int, float]
    fallback_step: float = Field(gt=0, le=1)
    min_success: float = Field(gt=0, le=1)
    max_dropped: float = Field(ge=0, le=1)

    def step_for(self, q: int) -> float:
        """目的関数の数 q に対する Λ_m の刻み幅"""
        return self.steps.get(q, self.fallback_step)


class NelderMeadOptions(_Options):
    initial_step: float = Field(gt=0)
    xatol: float = Field(gt=0)
    fatol: float = Field(gt=0)
    budget_per_dim: int = Field(gt=0)
    budget: Optional[int] = Field(default=None, gt=0)

    def max_evaluations(self, dim: int) -> int:
        return self.budget if self.budget is not None else self.budget_per_dim * dim


class DirectOptions(_Options):
    eps: float = Field(gt=0)
    budget_small: int = Field(gt=0)
    budget_large: int = Field(gt=0)
    small_dim: int = Field(gt=0)
    locally_biased: bool = False
    nonfinite_value: float = Field(gt=0)
    budget: Optional[int] = Field(default=None, gt=0)

    def max_evaluations(self, dim: int) -> int:
        if self.budget is not None:
            return self.budget
        return self.budget_small if dim <= self.small_dim else self.budget_large


class KneeOptions(_Options):
    fixed_alpha: float = Field(gt=0)
    adaptive_factor: float = Field(gt=0)
    adaptive_problems: tuple[str, ...]
    starts: dict[str, tuple[float, ...]]

    @field_validator("starts", mode="before")
    @classmethod
    def check_starts(cls, value: dict) -> dict:
        return {name: tuple(float(v) for v in start) for name, start in value.items()}


SOLVER_OPTIONS = SolverOptions(**CONFIG["inner_solver"])
SENSITIVITY_OPTIONS = SensitivityOptions(**CONFIG["sensitivity"])
GRID_OPTIONS = GridOptions(**CONFIG["grid"])
NELDER_MEAD_OPTIONS = NelderMeadOptions(**CONFIG["nelder_mead"])
DIRECT_OPTIONS = DirectOptions(**CONFIG["direct"])
KNEE_OPTIONS = KneeOptions(**CONFIG["knee"])

# 問題ごとの既定のパラメーター（GRV1 の公開データを含む）
PROBLEM_DEFAULTS: dict[str, dict] = CONFIG["problems"]
