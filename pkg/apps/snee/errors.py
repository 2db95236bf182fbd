"""
snee パッケージで使用する例外と警告のカテゴリ。

引数の形や型の誤りは ``formatter`` のデコレーターが ValueError / TypeError として
送出する。ここにあるのは数値計算の途中で起こる失敗のみ。
"""


class SneeError(Exception):
    """snee の数値計算に関する例外の基底クラス"""


class UnknownProblemError(SneeError, KeyError):
    """登録されていない問題名が指定された"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown problem"


class ProblemParameterError(SneeError, ValueError):
    """問題のパラメーター（n̄, q̄, r など）が不正"""


class NonFiniteEvaluationError(SneeError):
    """目的関数や制約関数の評価値が有限でない（定義域外）"""


class UnconstrainedProblemError(SneeError):
    """制約のない問題に対して制約の評価を要求した"""


class SingularHessianModelError(SneeError):
    """準ニュートン法のヘッセ行列モデルが破綻した"""


class RankDeficientActiveJacobianError(SneeError):
    """有効制約の勾配が一次独立でない（LICQ 違反）"""


class SingularWeightedHessianError(SneeError):
    """重み付き和のヘッセ行列が特異"""


class SingularKktJacobianError(SneeError):
    """KKT 系のヤコビ行列が特異（LICQ / SCS / SOSC のいずれかが不成立）"""


class MissingMultipliersError(SneeError):
    """制約付き問題の解にラグランジュ乗数が付いていない"""


class DegenerateNeighborhoodError(SneeError):
    """近傍が退化して大きさを決められない"""


class ZeroFullRangeError(SneeError):
    """ある目的関数が Λ_m 全体で一定なので MCM の分母が 0 になる"""


class GridSolveError(SneeError):
    """グリッド上の部分問題の求解に失敗した点が多すぎる"""


class MaxIterationsWarning(UserWarning):
    """内部ソルバーが反復回数の上限に達した"""


class MaxEvaluationsWarning(UserWarning):
    """DFO が評価回数の上限に達した"""


class StrictComplementarityWarning(UserWarning):
    """有効制約の乗数がほぼ 0（狭義相補性が危うい）"""


class DegenerateSensitivityWarning(UserWarning):
    """∇F̄ の列がすべて 0 に近い"""


class UnreliableSubFrontWarning(UserWarning):
    """サブフロントの求解失敗点が 10% を超えた"""
