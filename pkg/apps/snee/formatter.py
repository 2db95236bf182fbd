from typing import Any, Optional

import numpy as np

from apps.snee.utils import dimensional_count

SIMPLEX_TOL = 1e-12


def _intermediate(arg_index, kward, *args, **kwargs) -> dict[str, Any]:
    """
    ## Description:
        引数が args にあるか kwargs にあるかを判定するヘルパー関数。
    ## Args:
        arg_index (int):
            位置引数のインデックス。
        kward (str):
            キーワード引数の名前。
    ## Returns:
        dict:
            "in_args" (bool): 引数が args にある場合は True、kwargs にある場合は False。
            "value" (Any): 引数の値。
    """
    in_args = True
    value = None
    if arg_index < len(args):
        value = args[arg_index]
    else:
        in_args = False
        value = kwargs[kward]
    return {"in_args": in_args, "value": value}


def _return_value(value: Any, data: dict[str, Any], args, kwargs) -> Any:
    """
    ## Description:
        型チェック後の値を args または kwargs に戻す。
    """
    if data["in_args"]:
        args = list(args)
        args[data["arg_index"]] = value
    else:
        kwargs[data["kward"]] = value
    return {"args": args, "kwargs": kwargs}


def vector_formatter(value: Any, kward: str = "value") -> np.ndarray:
    """
    ## Description:
        値を有限な1次元の float 配列に変換する。
    ## Args:
        value (Any):
            スカラー以外の1次元の繰り返し可能なオブジェクト。
        kward (str):
            エラーメッセージに使う引数名。
    ## Returns:
        np.ndarray:
            float64 の1次元配列（コピー）。
    ## Examples:
        >>> vector_formatter([1, 0, 0])
        array([1., 0., 0.])
    """
    count = dimensional_count(value)
    if count != 1:
        raise TypeError(
            f"Argument '{kward}' must be a one-dimensional iterable, got {count}D value."
        )
    try:
        vector = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise TypeError(
            f"Argument '{kward}' must contain numbers, got {type(value)}"
        ) from e
    if not np.all(np.isfinite(vector)):
        raise ValueError(f"Argument '{kward}' must be finite, got {vector}")
    return vector


def weights_formatter(
    value: Any, kward: str = "lam", tol: float = SIMPLEX_TOL
) -> np.ndarray:
    """
    ## Description:
        値が単体 Λ の点（非負で和が1）であることを確認して配列に変換する。
        丸め誤差程度の負の成分は 0 にする。
    ## Args:
        value (Any):
            重みベクトル
        kward (str):
            エラーメッセージに使う引数名。
        tol (float):
            非負性と和の許容誤差
    ## Returns:
        np.ndarray:
            重みベクトル
    ## Examples:
        >>> weights_formatter([0.8, 0.1, 0.1])
        array([0.8, 0.1, 0.1])
        >>> weights_formatter([0.8, 0.3, 0.1])
        Traceback (most recent call last):
            ...
        ValueError: Argument 'lam' must lie in the simplex ...
    """
    lam = vector_formatter(value, kward)
    if lam.size < 2 or np.any(lam < -tol) or abs(lam.sum() - 1.0) > tol * lam.size:
        raise ValueError(
            f"Argument '{kward}' must lie in the simplex (nonnegative, sum 1), got {lam}"
        )
    return np.clip(lam, 0.0, None)


def type_checker_vector(arg_index: int, kward: str, size_attr: Optional[str] = None):
    """
    ## Description:
        引数が有限な1次元ベクトルかをチェックするデコレーター。
    ## Args:
        arg_index (int):
            位置引数のインデックスを指定。
        kward (str):
            キーワード引数の名前を指定。
        size_attr (str | None):
            第1引数（問題オブジェクト）の属性名。指定した場合は長さが一致するかも確認する。
    ## Returns:
        np.ndarray:
            float64 の1次元配列に変換された引数の値。
    """

    def decorator(func):
        def wrapper(*args, **kwargs):
            data = _intermediate(arg_index, kward, *args, **kwargs)
            data["arg_index"] = arg_index
            data["kward"] = kward
            value = vector_formatter(data["value"], kward)
            if size_attr is not None:
                expected = getattr(args[0], size_attr)
                if value.size != expected:
                    raise ValueError(
                        f"Argument '{kward}' must have length {expected}, "
                        f"got {value.size}"
                    )
            result = _return_value(value, data, args, kwargs)
            return func(*result["args"], **result["kwargs"])

        wrapper.__name__ = func.__name__
        wrapper.__doc__ = func.__doc__
        return wrapper

    return decorator


def type_checker_weights(arg_index: int, kward: str, size_attr: Optional[str] = None):
    """
    ## Description:
        引数が単体 Λ の重みベクトルかをチェックするデコレーター。
    ## Args:
        arg_index (int):
            位置引数のインデックスを指定。
        kward (str):
            キーワード引数の名前を指定。
        size_attr (str | None):
            第1引数の属性名。指定した場合は長さ（目的関数の数 q）も確認する。
    ## Returns:
        np.ndarray:
            重みベクトル
    """

    def decorator(func):
        def wrapper(*args, **kwargs):
            data = _intermediate(arg_index, kward, *args, **kwargs)
            data["arg_index"] = arg_index
            data["kward"] = kward
            value = weights_formatter(data["value"], kward)
            if size_attr is not None:
                expected = getattr(args[0], size_attr)
                if value.size != expected:
                    raise ValueError(
                        f"Argument '{kward}' must have length {expected}, "
                        f"got {value.size}"
                    )
            result = _return_value(value, data, args, kwargs)
            return func(*result["args"], **result["kwargs"])

        wrapper.__name__ = func.__name__
        wrapper.__doc__ = func.__doc__
        return wrapper

    return decorator


def type_checker_order(arg_index: int, kward: str):
    """
    ## Description:
        微分の階数を表す引数が 0, 1, 2 のいずれかかをチェックするデコレーター。
    """

    def decorator(func):
        def wrapper(*args, **kwargs):
            if arg_index >= len(args) and kward not in kwargs:
                return func(*args, **kwargs)
            data = _intermediate(arg_index, kward, *args, **kwargs)
            data["arg_index"] = arg_index
            data["kward"] = kward
            value = data["value"]
            try:
                value = int(value)
            except Exception as e:
                raise TypeError(
                    f"Argument '{kward}' must be an integer, got {type(value)}"
                ) from e
            if value not in (0, 1, 2):
                raise ValueError(f"Argument '{kward}' must be 0, 1 or 2, got {value}")
            result = _return_value(value, data, args, kwargs)
            return func(*result["args"], **result["kwargs"])

        wrapper.__name__ = func.__name__
        wrapper.__doc__ = func.__doc__
        return wrapper

    return decorator
