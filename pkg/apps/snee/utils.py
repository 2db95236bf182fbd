from typing import Union

import numpy as np
import pandas as pd

UniqueIterable = Union[tuple, list, np.ndarray, pd.Series]
LambdaKey = tuple[float, ...]


def dimensional_count(value: UniqueIterable) -> int:
    """
    ## Description:
        オブジェクトがどの程度の次元を持つリストであるかを測定する関数。
    Args:
        value (tuple | list | np.ndarray | pd.Series):
            測定したい値。それ以外の型（str, int, floatなど）は0次元と見なされます。
    Returns:
        int:
            測定された次元の数。
            - 0: スカラー
            - 1: ベクトル
            - 2: 行列
    Examples:
        >>> dimensional_count(1.0)
        0
        >>> dimensional_count([0.8, 0.1, 0.1])
        1
        >>> dimensional_count(np.eye(3))
        2
    """
    if isinstance(value, np.ndarray):
        return value.ndim
    if isinstance(value, pd.Series):
        value = value.to_list()
    if isinstance(value, (tuple, list)):
        return 1 + max(dimensional_count(item) for item in value) if value else 1
    return 0


def lambda_key(lam: np.ndarray, digits: int = 12) -> LambdaKey:
    """
    ## Description:
        重みベクトルをキャッシュのキーに変換する。丸めによって、グリッドの点と
        同じ値を別経路で作った場合も同じキーになる。
    Args:
        lam (np.ndarray): 重みベクトル
        digits (int): 丸める桁数
    Returns:
        tuple[float, ...]: キー
    Examples:
        >>> lambda_key(np.array([1 / 3, 1 / 3, 1 / 3]))
        (0.333333333333, 0.333333333333, 0.333333333333)
    """
    # -0.0 と 0.0 を区別しない
    return tuple(float(v) + 0.0 for v in np.round(np.asarray(lam, dtype=float), digits))


def significant(value: float, digits: int = 12) -> float:
    """有効数字 digits 桁に丸めた浮動小数点数を返す"""
    if not np.isfinite(value):
        return float(value)
    return float(f"{value:.{digits}g}")
