"""
异常定义

所有异常都继承 SolaError，同时继承对应的内置异常，调用方可以按任意一层捕获。
"""

from typing import Optional


class SolaError(Exception):
    """SoLA 引擎异常基类"""


class ShapeError(SolaError, ValueError):
    """张量形状不匹配"""


class ParameterError(SolaError, ValueError):
    """参数超出定义域（例如 w <= 0 或 ε 不在 (0, 1) 内）"""


class DegenerateKernelError(SolaError, ArithmeticError):
    """核注意力分母为零"""

    def __init__(self, message: str, token_index: Optional[int] = None):
        super().__init__(message)
        self.token_index = token_index


class EvaluationError(SolaError, ArithmeticError):
    """被检查函数返回了非有限值"""


class ResolutionError(SolaError, ValueError):
    """输入分辨率不能被 patch 大小整除"""


class MergeError(ShapeError):
    """patch merging 的输入网格边长为奇数"""


class GridError(ShapeError):
    """token 数与 H×W 网格不一致"""


class SamplingError(SolaError, ValueError):
    """等距采样的目标数超出源 token 数"""


class RouteError(ShapeError):
    """HSB 路由两端形状与配置不一致"""


class ConfigError(SolaError, ValueError):
    """配置违反约束；field 记录出错的字段名"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class TruncationError(SolaError, ValueError):
    """衰减核截断半径过小"""


class ToleranceError(SolaError, ValueError):
    """阈值低于截断核能分辨的下限"""


class FitError(SolaError, ArithmeticError):
    """回归拟合退化"""


class TokenIndexError(SolaError, IndexError):
    """token 下标超出 [1, N]"""
