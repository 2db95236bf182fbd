"""
計算結果を CSV / JSON に書き出す。

列は重み、決定変数、目的関数値の順に並べ、数値は有効桁数をそろえて書き出す。
同じ設定で実行すれば同じファイルになる。
"""

import json
import logging
import os
from enum import Enum
from typing import Any, Optional

import numpy as np
import pandas as pd

from apps.config import OUTPUT_SETTINGS, OutputFormat
from apps.snee.knee import KneeResult
from apps.snee.neighborhoods import SubFront
from apps.snee.utils import significant

logger = logging.getLogger(__name__)


def _columns(prefix: str, size: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(size)]


def points_frame(lambdas: np.ndarray, xs: np.ndarray, fs: np.ndarray) -> pd.DataFrame:
    """
    ## Description:
        重み、決定変数、目的関数値を 1 行 1 点の表にする。
    ## Args:
        lambdas (np.ndarray): (k, q)
        xs (np.ndarray): (k, n)
        fs (np.ndarray): (k, q)
    ## Returns:
        pd.DataFrame: 列は lambda_1..q, x_1..n, f_1..q
    """
    lambdas = np.atleast_2d(lambdas)
    xs = np.atleast_2d(xs)
    fs = np.atleast_2d(fs)
    return pd.concat(
        [
            pd.DataFrame(lambdas, columns=_columns("lambda", lambdas.shape[1])),
            pd.DataFrame(xs, columns=_columns("x", xs.shape[1])),
            pd.DataFrame(fs, columns=_columns("f", fs.shape[1])),
        ],
        axis=1,
    )


def subfront_frame(subfront: SubFront) -> pd.DataFrame:
    df = points_frame(subfront.lambdas, subfront.xs, subfront.fs)
    df.insert(0, "grid_index", np.asarray(subfront.indices, dtype=int))
    return df


def knee_trace_frame(result: KneeResult) -> pd.DataFrame:
    """最良値の更新履歴。iteration, mcf, mcm, alpha_used の後に重みの列"""
    q = result.lambda_star.size
    records = []
    for point in result.trace:
        record = {
            "iteration": point.iteration,
            "mcf": point.mcf,
            "mcm": point.mcm,
            "alpha_used": point.alpha_used,
        }
        record.update(dict(zip(_columns("lambda", q), point.lam, strict=True)))
        records.append(record)
    columns = ["iteration", "mcf", "mcm", "alpha_used", *_columns("lambda", q)]
    return pd.DataFrame.from_records(records, columns=columns)


def to_jsonable(obj: Any, digits: Optional[int] = None) -> Any:
    """
    ## Description:
        numpy の配列やスカラー、Enum を JSON で書ける値に変換する。
        浮動小数点数は有効桁数で丸め、非有限の値は None にする。
    ## Examples:
        >>> to_jsonable({"a": np.array([1 / 3, np.nan])}, 4)
        {'a': [0.3333, None]}
    """
    digits = digits or OUTPUT_SETTINGS.significant_digits
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v, digits) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist(), digits)
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v, digits) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return significant(value, digits) if np.isfinite(value) else None
    return obj


def _prepare(directory: str) -> None:
    os.makedirs(directory, exist_ok=True)


def write_frame(
    df: pd.DataFrame,
    directory: str,
    name: str,
    fmt: OutputFormat = OutputFormat.csv,
    digits: Optional[int] = None,
) -> str:
    """
    ## Description:
        表を CSV（ヘッダー付き）または JSON（レコードの配列）で書き出す。
    ## Args:
        df (pd.DataFrame): 書き出す表
        directory (str): 出力先
        name (str): 拡張子を除いたファイル名
        fmt (OutputFormat): 出力形式
        digits (int | None): 有効桁数
    ## Returns:
        str: 書き出したファイルのパス
    """
    digits = digits or OUTPUT_SETTINGS.significant_digits
    fmt = OutputFormat(fmt)
    _prepare(directory)
    fp = os.path.join(directory, f"{name}.{fmt.value}")
    if fmt == OutputFormat.csv:
        df.to_csv(fp, index=False, float_format=f"%.{digits}g", lineterminator="\n")
    else:
        records = to_jsonable(df.to_dict(orient="records"), digits)
        with open(fp, "w", encoding="utf-8") as f:
            f.write(json.dumps(records, indent=4, ensure_ascii=False))
    logger.info("Wrote %d rows to %s", len(df), fp)
    return fp


def write_json(obj: Any, directory: str, name: str, digits: Optional[int] = None) -> str:
    _prepare(directory)
    fp = os.path.join(directory, f"{name}.json")
    with open(fp, "w", encoding="utf-8") as f:
        f.write(json.dumps(to_jsonable(obj, digits), indent=4, ensure_ascii=False))
    logger.info("Wrote %s", fp)
    return fp


def subfront_summary(problem_record: dict, subfront: SubFront, mcm: float, spec) -> dict:
    return {
        "problem": problem_record,
        "neighborhood": {
            "kind": spec.kind,
            "size": spec.size,
            "alpha_mode": spec.alpha_mode,
            "size_used": subfront.size_used,
        },
        "center": subfront.center,
        "count": subfront.count,
        "fraction_of_grid": subfront.fraction_of_grid,
        "degenerate": subfront.degenerate,
        "dropped": list(subfront.dropped),
        "unreliable": subfront.unreliable,
        "mcm": mcm,
    }


def knee_summary(problem_record: dict, result: KneeResult) -> dict:
    return {
        "problem": problem_record,
        "method": result.method,
        "start": result.start,
        "lambda_star": result.lambda_star,
        "x_star": result.x_star,
        "f_star": result.f_star,
        "mcf_star": result.mcf_star,
        "evaluations": result.evaluations,
        "converged": result.converged,
    }
