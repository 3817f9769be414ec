"""
异常定义
每类异常带有CLI退出码：2=配置错误，3=数据错误，4=数值失败
"""
from typing import Optional


class CorrDecodeError(Exception):
    """所有业务异常的基类"""
    exit_code = 1


class ConfigError(CorrDecodeError, ValueError):
    """配置错误（参数越界、未知字段、枚举非法等）"""
    exit_code = 2


class DataError(CorrDecodeError, ValueError):
    """数据错误"""
    exit_code = 3


class ShapeError(DataError):
    """矩阵形状不匹配"""


class DegenerateSampleError(DataError):
    """样本数不足（例如 m < 2）"""


class DegenerateVarianceError(DataError):
    """方差为零，相关系数无定义"""


class InputError(DataError):
    """输入为空或长度不足"""


class ParseError(DataError):
    """文件/侧车元数据解析失败"""


class SymmetryError(DataError):
    """要求对称矩阵但输入不对称"""


class BoundaryError(DataError):
    """取值落在定义域边界（例如 |r| = 1 时的 atanh）"""


class NumericError(CorrDecodeError, ArithmeticError):
    """数值失败（梯度非有限、训练发散）"""
    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StateError(NumericError):
    """内部状态不一致（例如前向记录与网络不匹配）"""


class PipelineStageError(CorrDecodeError):
    """流水线阶段失败，携带阶段名与折编号，退出码沿用原始异常"""

    def __init__(self, stage: str, fold: Optional[int], cause: Exception):
        where = f"阶段={stage}" + (f", 折={fold}" if fold is not None else "")
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.fold = fold
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return getattr(self.cause, "exit_code", 1)
