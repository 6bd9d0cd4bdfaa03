"""
混合层模块

L 层（WKV 线性注意力）与 S 层（全局 softmax 注意力）的实现及其工厂。
"""

from .base_layer import HybridLayer, LayerOutput, TokenGrid
from .layer_factory import LayerFactory, layer_factory
from .softmax_layer import (
    ConvMlpParams,
    MhsaParams,
    SoftmaxLayer,
    SoftmaxLayerParams,
    conv_mlp,
    conv_mlp_vjp,
    mhsa,
    mhsa_vjp,
    softmax_layer,
)
from .wkv_linear import (
    ChannelMixParams,
    OpCounter,
    WkvLayerParams,
    WkvLinearLayer,
    WkvParams,
    channel_mix,
    channel_mix_vjp,
    spatial_mix,
    spatial_mix_vjp,
    wkv_effective_range,
    wkv_layer,
    wkv_naive,
    wkv_scan,
    wkv_scan_vjp,
)

__all__ = [
    "HybridLayer",
    "LayerOutput",
    "TokenGrid",
    "LayerFactory",
    "layer_factory",
    "WkvLinearLayer",
    "WkvParams",
    "ChannelMixParams",
    "WkvLayerParams",
    "OpCounter",
    "wkv_naive",
    "wkv_scan",
    "wkv_scan_vjp",
    "wkv_effective_range",
    "spatial_mix",
    "spatial_mix_vjp",
    "channel_mix",
    "channel_mix_vjp",
    "wkv_layer",
    "SoftmaxLayer",
    "MhsaParams",
    "ConvMlpParams",
    "SoftmaxLayerParams",
    "mhsa",
    "mhsa_vjp",
    "conv_mlp",
    "conv_mlp_vjp",
    "softmax_layer",
]
