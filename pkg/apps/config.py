import os
from enum import Enum
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from apps.snee.config import GRID_OPTIONS
from apps.snee.errors import SneeError
from apps.snee.neighborhoods import NeighborhoodKind, NeighborhoodSpec
from apps.snee.problems import make_problem

current_dir = os.path.dirname(os.path.abspath(__file__))
config_file = os.path.join(current_dir, "user/config.yaml")

global CONFIG
with open(config_file, "r", encoding="utf-8") as f:
    CONFIG = yaml.safe_load(f)


class Command(Enum):
    list_problems: str = "list-problems"
    check_grad: str = "check-grad"
    subfront: str = "subfront"
    knee: str = "knee"
    table1: str = "table1"


class OutputFormat(Enum):
    csv: str = "csv"
    json: str = "json"


class OutputSettings(BaseModel):
    """
    Args:
        significant_digits(int): 書き出す数値の有効桁数
        directory(str): 既定の出力先
        format(OutputFormat): 既定の出力形式
    """

    model_config = ConfigDict(frozen=True)

    significant_digits: int = Field(default=12, ge=1, le=17)
    directory: str = "./outputs"
    format: OutputFormat = OutputFormat.csv


class Table1Row(BaseModel):
    model_config = ConfigDict(frozen=True)

    problem: str
    center: tuple[float, ...]
    kind: NeighborhoodKind
    size: float = Field(gt=0)
    published_mcm: float = Field(ge=0, le=1)
    published_fraction: float = Field(ge=0, le=1)

    @property
    def spec(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(kind=self.kind, size=self.size)


class Tolerances(BaseModel):
    """MCM は相対・絶対のうち緩い方、割合は絶対誤差で判定する"""

    model_config = ConfigDict(frozen=True)

    mcm_relative: float = Field(gt=0)
    mcm_absolute: float = Field(ge=0)
    fraction_absolute: float = Field(ge=0)

    def mcm_ok(self, value: float, reference: float) -> bool:
        allowed = max(self.mcm_relative * abs(reference), self.mcm_absolute)
        return abs(value - reference) <= allowed

    def fraction_ok(self, value: float, reference: float) -> bool:
        return abs(value - reference) <= self.fraction_absolute


class Table1Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid_step: Optional[float] = Field(default=None, gt=0, le=1)
    rows: tuple[Table1Row, ...]


OUTPUT_SETTINGS = OutputSettings(**CONFIG["output"])
TABLE1_SETTINGS = Table1Settings(**CONFIG["table1"])
TOLERANCES = Tolerances(**CONFIG["tolerances"])


def _weights(value: Any) -> Optional[tuple[float, ...]]:
    # "0.8,0.1,0.1" の形の文字列も受け付ける
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(float(v) for v in value)


class RunConfig(BaseModel):
    """
    ## Description:
        1 回の実行の設定。問題名がわかる場合は、問題を作って重みの長さと
        刻み幅を検証する。
    ## Args:
        command(Command): 実行するコマンド
        problem(str | None): 問題名
        params(dict): 問題のパラメーター
        grid_step(float | None): Λ_m の刻み幅。None なら q ごとの既定値
        neighborhood(NeighborhoodSpec | None): subfront で使う近傍
        center(tuple[float] | None): 近傍の中心
        method(str): 膝解の探索法 "nm" / "direct"
        start(tuple[float] | None): Nelder-Mead の初期点
        seedless(bool): 初期点を受け付けず、問題ごとの既定の初期点から探索する
        budget(int | None): 評価回数の上限
        output_dir(str): 出力先
        format(OutputFormat): 出力形式
        workers(int | None): グリッドの求解に使うスレッド数
        inner_tol(float | None): 内部ソルバーの停留性の許容誤差
        inner_maxiter(int | None): 内部ソルバーの反復上限
        warm_start(bool | None): グリッドの求解で近くの解から開始するか
        h(float | None): check-grad の差分幅
    """

    model_config = ConfigDict(frozen=True)

    command: Command
    problem: Optional[str] = None
    params: dict[str, Any] = Field(default_factory=dict)
    grid_step: Optional[float] = Field(default=None, gt=0, le=1)
    neighborhood: Optional[NeighborhoodSpec] = None
    center: Optional[tuple[float, ...]] = None
    method: Literal["nm", "direct"] = "nm"
    start: Optional[tuple[float, ...]] = None
    seedless: bool = False
    budget: Optional[int] = Field(default=None, gt=0)
    output_dir: str = OUTPUT_SETTINGS.directory
    format: OutputFormat = OUTPUT_SETTINGS.format
    workers: Optional[int] = Field(default=None, ge=1)
    inner_tol: Optional[float] = Field(default=None, gt=0)
    inner_maxiter: Optional[int] = Field(default=None, gt=0)
    warm_start: Optional[bool] = None
    h: Optional[float] = Field(default=None, gt=0)

    @field_validator("center", "start", mode="before")
    @classmethod
    def parse_weights(cls, value: Any) -> Optional[tuple[float, ...]]:
        return _weights(value)

    @field_validator("output_dir")
    @classmethod
    def check_output_dir(cls, value: str) -> str:
        # まだ無いディレクトリは、最も近い既存の親に書き込めればよい
        path = os.path.abspath(value)
        if os.path.exists(path) and not os.path.isdir(path):
            raise ValueError(f"Output path '{value}' is not a directory")
        existing = path
        while not os.path.exists(existing):
            existing = os.path.dirname(existing)
        if not os.path.isdir(existing) or not os.access(existing, os.W_OK | os.X_OK):
            raise ValueError(f"Output directory '{value}' is not writable")
        return value

    @model_validator(mode="after")
    def check_problem(self) -> "RunConfig":
        needs_problem = self.command in (
            Command.check_grad,
            Command.subfront,
            Command.knee,
        )
        if needs_problem and self.problem is None:
            raise ValueError(f"Command '{self.command.value}' requires a problem")
        if self.command == Command.subfront and self.neighborhood is None:
            raise ValueError("Command 'subfront' requires a neighborhood")
        if self.seedless and self.start is not None:
            raise ValueError("'start' cannot be combined with 'seedless'")
        if self.problem is None:
            return self
        try:
            problem = make_problem(self.problem, self.params)
        except SneeError as e:
            raise ValueError(str(e)) from e
        for name in ("center", "start"):
            weights = getattr(self, name)
            if weights is not None and len(weights) != problem.q:
                raise ValueError(
                    f"'{name}' must have {problem.q} entries, got {len(weights)}"
                )
        if self.grid_step is not None:
            divisions = round(1.0 / self.grid_step)
            if abs(divisions * self.grid_step - 1.0) > 1e-9:
                raise ValueError(f"1/grid_step must be an integer, got {self.grid_step}")
        return self

    def step_for(self, q: int) -> float:
        return self.grid_step if self.grid_step is not None else GRID_OPTIONS.step_for(q)
