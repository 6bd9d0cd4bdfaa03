"""
混合层基类

定义了 L（线性注意力）与 S（softmax 注意力）两类层的统一接口。
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from ..errors import GridError, ShapeError
from ..numerics import DualValue, Tensor


@dataclass(frozen=True)
class TokenGrid:
    """按行优先展开的 H×W token 网格"""

    tokens: Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens 须为 N×D 矩阵，实际为 {self.tokens.shape}")
        if self.height < 1 or self.width < 1 or self.tokens.shape[0] != self.height * self.width:
            raise GridError(f"token 数 {self.tokens.shape[0]} 与网格 {self.height}×{self.width} 不一致")

    @classmethod
    def from_image(cls, image: Tensor) -> "TokenGrid":
        h, w, c = image.shape
        return cls(image.reshape(h * w, c), h, w)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def as_image(self) -> Tensor:
        return self.tokens.reshape(self.height, self.width, self.dim)

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.height, self.width)


@dataclass(frozen=True)
class LayerOutput:
    """层输出；tap 为可供 HSB 引出的隐状态（仅 L 层有）"""

    tokens: Tensor
    tap: Optional[Tensor] = None


class HybridLayer(ABC):
    """混合调度中单个层的基类"""

    kind: str = "?"

    def __init__(self, dim: int):
        """
        初始化层

        Args:
            dim: token 通道数 D
        """
        self.dim = dim
        self.logger = logging.getLogger(self.__class__.__name__)

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> Any:
        """
        按种子初始化参数

        Args:
            rng: numpy 随机数生成器

        Returns:
            该层的参数树（冻结 dataclass）
        """
        pass

    @abstractmethod
    def forward_vjp(self, params: Any, grid: TokenGrid) -> DualValue:
        """
        前向计算并返回回拉函数

        Args:
            params: 参数树
            grid: 输入 token 网格

        Returns:
            DualValue: value 为 LayerOutput；pullback(g_tokens, g_tap=None) 返回 (g_tokens_in, g_params)
        """
        pass

    @abstractmethod
    def param_count(self) -> int:
        """按形状计算参数量，不分配参数"""
        pass

    @abstractmethod
    def flops(self, n_tokens: int) -> int:
        """
        给定 token 数时的乘加次数

        Args:
            n_tokens: token 数 N

        Returns:
            int: 乘加次数（1 次乘加记为 1 FLOP）
        """
        pass

    def forward(self, params: Any, grid: TokenGrid) -> LayerOutput:
        return self.forward_vjp(params, grid).value

    def check_input(self, grid: TokenGrid):
        if grid.dim != self.dim:
            raise ShapeError(f"{self.get_layer_name()} 期望通道数 {self.dim}，实际为 {grid.dim}")

    def get_layer_name(self) -> str:
        return f"{self.__class__.__name__}(kind={self.kind}, dim={self.dim})"
