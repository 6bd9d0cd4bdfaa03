"""
层工厂

根据模式串中的类型字符（L / S）创建相应的层实例。
"""

import logging
from typing import Dict, List, Type

from ..errors import ConfigError
from ..schedule import BackboneConfig
from .base_layer import HybridLayer
from .softmax_layer import SoftmaxLayer
from .wkv_linear import WkvLinearLayer


class LayerFactory:
    """混合层工厂"""

    def __init__(self):
        self.logger = logging.getLogger(self.__class__.__name__)
        self._layers: Dict[str, Type[HybridLayer]] = {}
        self._register_layers()

    def _register_layers(self):
        """注册所有可用的层类型"""
        self._layers[WkvLinearLayer.kind] = WkvLinearLayer
        self._layers[SoftmaxLayer.kind] = SoftmaxLayer
        self.logger.debug(f"已注册 {len(self._layers)} 种层类型")

    def create_layer(self, kind: str, cfg: BackboneConfig, stage: int) -> HybridLayer:
        """
        为指定阶段创建层

        Args:
            kind: 类型字符
            cfg: 骨干网络配置
            stage: 阶段号（从 1 开始）

        Returns:
            HybridLayer: 层实例
        """
        layer_class = self._layers.get(kind)
        if layer_class is None:
            raise ConfigError(f"不支持的层类型: '{kind}'", field="patterns")
        dim = cfg.stage_dims[stage - 1]
        if layer_class is WkvLinearLayer:
            return WkvLinearLayer(dim, channel_mix_ratio=cfg.channel_mix_ratio)
        return SoftmaxLayer(dim, heads=cfg.heads(stage), mlp_ratio=cfg.mlp_ratio)

    def create_stage(self, cfg: BackboneConfig, stage: int) -> List[HybridLayer]:
        return [self.create_layer(kind, cfg, stage) for kind in cfg.patterns[stage - 1]]

    def get_supported_kinds(self) -> List[str]:
        return list(self._layers.keys())

    def is_kind_supported(self, kind: str) -> bool:
        return kind in self._layers


# 全局工厂实例
layer_factory = LayerFactory()
