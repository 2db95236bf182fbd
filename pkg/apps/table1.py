"""
近傍（ball, E_α, E_β）ごとの MCM と格子点の割合を計算し、公表値と並べる。

問題ごとに Λ_m・理想点と最下点・解のキャッシュを共有する。ある行の計算に
失敗しても、その行に理由を記録して残りの行を計算する。
"""

import logging
from itertools import groupby
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from apps.config import TABLE1_SETTINGS, TOLERANCES, Table1Row, Table1Settings, Tolerances
from apps.snee.config import GRID_OPTIONS, SolverOptions
from apps.snee.errors import SneeError
from apps.snee.inner_solvers import SolutionCache
from apps.snee.neighborhoods import (
    IdealNadir,
    NeighborhoodKind,
    compute_mcm,
    compute_subfront,
    ideal_nadir,
)
from apps.snee.problems import make_problem
from apps.snee.scalarization import SimplexGrid, simplex_grid

logger = logging.getLogger(__name__)

COLUMNS = [
    "problem",
    "n",
    "q",
    "kind",
    "size",
    "center",
    "mcm",
    "published_mcm",
    "mcm_deviation",
    "mcm_pass",
    "fraction",
    "published_fraction",
    "fraction_deviation",
    "fraction_pass",
    "count",
    "grid_points",
    "error",
]


class Table1Record(NamedTuple):
    """
    Args:
        mcm_deviation(float): (mcm - published_mcm) / published_mcm
        fraction_deviation(float): fraction - published_fraction
        error(str): 失敗した場合の理由。成功なら空文字列
    """

    problem: str
    n: int
    q: int
    kind: str
    size: float
    center: str
    mcm: float
    published_mcm: float
    mcm_deviation: float
    mcm_pass: bool
    fraction: float
    published_fraction: float
    fraction_deviation: float
    fraction_pass: bool
    count: int
    grid_points: int
    error: str = ""


class Table1Report(NamedTuple):
    """
    Args:
        table(pd.DataFrame): 1 行 1 近傍の結果
        ellipsoid_best(dict[str, bool]): 問題ごとに E_α の MCM が他の近傍より大きいか
    """

    table: pd.DataFrame
    ellipsoid_best: dict[str, bool]

    @property
    def passed(self) -> bool:
        ok = self.table["mcm_pass"] & self.table["fraction_pass"]
        return bool(ok.all()) and all(self.ellipsoid_best.values())

    def summary(self) -> dict:
        return {
            "rows": len(self.table),
            "failed_rows": int((self.table["error"] != "").sum()),
            "mcm_pass": int(self.table["mcm_pass"].sum()),
            "fraction_pass": int(self.table["fraction_pass"].sum()),
            "ellipsoid_best": self.ellipsoid_best,
            "passed": self.passed,
        }


def _failed_record(row: Table1Row, n: int, q: int, grid_points: int, error: str):
    return Table1Record(
        problem=row.problem,
        n=n,
        q=q,
        kind=row.kind.value,
        size=row.size,
        center=",".join(f"{v:g}" for v in row.center),
        mcm=float("nan"),
        published_mcm=row.published_mcm,
        mcm_deviation=float("nan"),
        mcm_pass=False,
        fraction=float("nan"),
        published_fraction=row.published_fraction,
        fraction_deviation=float("nan"),
        fraction_pass=False,
        count=0,
        grid_points=grid_points,
        error=error,
    )


def compute_row(
    row: Table1Row,
    grid: SimplexGrid,
    bounds: IdealNadir,
    cache: SolutionCache,
    tolerances: Tolerances = TOLERANCES,
    solver_opts: Optional[SolverOptions] = None,
    workers: Optional[int] = None,
) -> Table1Record:
    """
    ## Description:
        1 行分のサブフロントを作り、MCM と格子点の割合を公表値と比べる。
    ## Raises:
        SneeError: サブフロントまたは MCM が求まらない
    """
    problem = make_problem(row.problem)
    subfront = compute_subfront(
        problem,
        row.spec,
        row.center,
        grid,
        cache=cache,
        solver_opts=solver_opts,
        workers=workers,
    )
    mcm = compute_mcm(problem, subfront, bounds)
    fraction = subfront.fraction_of_grid
    logger.info(
        "%s %s(%g): MCM=%.4f (%.4f), fraction=%.4f (%.4f)",
        row.problem,
        row.kind.value,
        row.size,
        mcm,
        row.published_mcm,
        fraction,
        row.published_fraction,
    )
    return Table1Record(
        problem=row.problem,
        n=problem.n,
        q=problem.q,
        kind=row.kind.value,
        size=row.size,
        center=",".join(f"{v:g}" for v in row.center),
        mcm=mcm,
        published_mcm=row.published_mcm,
        mcm_deviation=(mcm - row.published_mcm) / row.published_mcm,
        mcm_pass=tolerances.mcm_ok(mcm, row.published_mcm),
        fraction=fraction,
        published_fraction=row.published_fraction,
        fraction_deviation=fraction - row.published_fraction,
        fraction_pass=tolerances.fraction_ok(fraction, row.published_fraction),
        count=subfront.count,
        grid_points=grid.m,
    )


def _ellipsoid_best(records: list[Table1Record]) -> bool:
    """E_α の MCM が同じ問題の他の近傍より真に大きいか"""
    ellipsoid = [r.mcm for r in records if r.kind == NeighborhoodKind.ellipsoid.value]
    others = [r.mcm for r in records if r.kind != NeighborhoodKind.ellipsoid.value]
    if not ellipsoid or not np.all(np.isfinite(ellipsoid)):
        return False
    finite_others = [v for v in others if np.isfinite(v)]
    return all(max(ellipsoid) > v for v in finite_others)


def compute_table1(
    settings: Table1Settings = TABLE1_SETTINGS,
    tolerances: Tolerances = TOLERANCES,
    grid_step: Optional[float] = None,
    solver_opts: Optional[SolverOptions] = None,
    workers: Optional[int] = None,
) -> Table1Report:
    """
    ## Description:
        設定のすべての行を計算する。行は問題ごとにまとめ、Λ_m と理想点・最下点を
        1 度だけ求める。
    ## Args:
        settings (Table1Settings): 行と刻み幅
        tolerances (Tolerances): 合否の許容幅
        grid_step (float | None): 刻み幅の上書き。None なら設定または q ごとの既定値
    ## Returns:
        Table1Report
    """
    step = grid_step if grid_step is not None else settings.grid_step
    records: list[Table1Record] = []
    ellipsoid_best: dict[str, bool] = {}
    for name, rows in groupby(settings.rows, key=lambda r: r.problem):
        rows = list(rows)
        problem = make_problem(name)
        grid = simplex_grid(problem.q, step or GRID_OPTIONS.step_for(problem.q))
        cache = SolutionCache()
        problem_records = []
        try:
            bounds = ideal_nadir(problem, grid, cache, solver_opts, workers)
        except SneeError as e:
            logger.warning("%s: ideal and nadir points unavailable: %s", name, e)
            message = f"{type(e).__name__}: {e}"
            problem_records = [
                _failed_record(row, problem.n, problem.q, grid.m, message) for row in rows
            ]
        else:
            for row in rows:
                try:
                    record = compute_row(
                        row, grid, bounds, cache, tolerances, solver_opts, workers
                    )
                except SneeError as e:
                    logger.warning("%s %s: %s", name, row.kind.value, e)
                    record = _failed_record(
                        row, problem.n, problem.q, grid.m, f"{type(e).__name__}: {e}"
                    )
                problem_records.append(record)
        ellipsoid_best[name] = _ellipsoid_best(problem_records)
        records.extend(problem_records)
    table = pd.DataFrame.from_records(records, columns=COLUMNS)
    return Table1Report(table=table, ellipsoid_best=ellipsoid_best)
