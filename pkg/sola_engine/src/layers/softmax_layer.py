"""
全局 softmax 注意力层

多头自注意力（不分窗口，所有 N 个 token 互相可见）+ 带 3×3 深度卷积的 MLP。
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, GridError
from ..numerics import (
    DualValue,
    LinearProjection,
    Tensor,
    depthwise_conv3x3_vjp,
    gelu_vjp,
    layer_norm_vjp,
    softmax_rows,
)
from .base_layer import HybridLayer, LayerOutput, TokenGrid
from .wkv_linear import NORM_MACS


@dataclass(frozen=True)
class MhsaParams:
    heads: int
    proj_qkv: LinearProjection
    proj_out: LinearProjection
    norm_gain: Tensor
    norm_shift: Tensor


@dataclass(frozen=True)
class ConvMlpParams:
    proj_up: LinearProjection
    dw_kernel: Tensor
    proj_down: LinearProjection
    norm_gain: Tensor
    norm_shift: Tensor


@dataclass(frozen=True)
class SoftmaxLayerParams:
    attention: MhsaParams
    mlp: ConvMlpParams


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: Tensor) -> Tensor:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def mhsa_vjp(x: Tensor, p: MhsaParams) -> DualValue:
    """
    LN → QKV 投影 → 每个头做缩放点积注意力 → 拼接 → 输出投影 → 残差。

    pullback 返回 (g_x, MhsaParams 形状的梯度)。
    """
    d = x.shape[1]
    if p.heads < 1 or d % p.heads != 0:
        raise ConfigError(f"通道数 {d} 不能被头数 {p.heads} 整除", field="heads")
    scale = 1.0 / np.sqrt(d // p.heads)

    ln = layer_norm_vjp(x, p.norm_gain, p.norm_shift)
    qkv = p.proj_qkv.apply_vjp(ln.value)
    q, k, v = (_split_heads(part, p.heads) for part in np.split(qkv.value, 3, axis=1))
    attn = softmax_rows(q @ k.transpose(0, 2, 1) * scale)
    ctx = _merge_heads(attn @ v)
    o = p.proj_out.apply_vjp(ctx)
    out = x + o.value

    def pullback(g: Tensor):
        g_ctx, g_proj_out = o.pullback(g)
        g_ctx = _split_heads(g_ctx, p.heads)
        g_attn = g_ctx @ v.transpose(0, 2, 1)
        g_v = attn.transpose(0, 2, 1) @ g_ctx
        g_scores = attn * (g_attn - np.sum(g_attn * attn, axis=-1, keepdims=True)) * scale
        g_q = g_scores @ k
        g_k = g_scores.transpose(0, 2, 1) @ q
        g_qkv = np.concatenate([_merge_heads(g_q), _merge_heads(g_k), _merge_heads(g_v)], axis=1)
        g_ln, g_proj_qkv = qkv.pullback(g_qkv)
        g_x_ln, g_gain, g_shift = ln.pullback(g_ln)
        grads = MhsaParams(
            heads=p.heads,
            proj_qkv=g_proj_qkv,
            proj_out=g_proj_out,
            norm_gain=g_gain,
            norm_shift=g_shift,
        )
        return g + g_x_ln, grads

    return DualValue(out, pullback)


def mhsa(x: TokenGrid, p: MhsaParams) -> Tensor:
    return mhsa_vjp(x.tokens, p).value


def attention_weights(x: Tensor, p: MhsaParams) -> Tensor:
    """每个头的注意力权重，形状 heads×N×N"""
    d = x.shape[1]
    ln = layer_norm_vjp(x, p.norm_gain, p.norm_shift).value
    q, k, _ = (_split_heads(part, p.heads) for part in np.split(p.proj_qkv.apply(ln), 3, axis=1))
    return softmax_rows(q @ k.transpose(0, 2, 1) / np.sqrt(d // p.heads))


def conv_mlp_vjp(x: Tensor, p: ConvMlpParams, height: int, width: int) -> DualValue:
    """LN → 升维 → H×W 网格上的 3×3 深度卷积 → GELU → 降维 → 残差"""
    n = x.shape[0]
    if n != height * width:
        raise GridError(f"token 数 {n} 与网格 {height}×{width} 不一致")
    ln = layer_norm_vjp(x, p.norm_gain, p.norm_shift)
    up = p.proj_up.apply_vjp(ln.value)
    hidden = up.value.shape[1]
    conv = depthwise_conv3x3_vjp(up.value.reshape(height, width, hidden), p.dw_kernel)
    act = gelu_vjp(conv.value)
    down = p.proj_down.apply_vjp(act.value.reshape(n, hidden))
    out = x + down.value

    def pullback(g: Tensor):
        g_act, g_proj_down = down.pullback(g)
        (g_conv,) = act.pullback(g_act.reshape(height, width, hidden))
        g_up, g_kernel = conv.pullback(g_conv)
        g_ln, g_proj_up = up.pullback(g_up.reshape(n, hidden))
        g_x_ln, g_gain, g_shift = ln.pullback(g_ln)
        grads = ConvMlpParams(
            proj_up=g_proj_up,
            dw_kernel=g_kernel,
            proj_down=g_proj_down,
            norm_gain=g_gain,
            norm_shift=g_shift,
        )
        return g + g_x_ln, grads

    return DualValue(out, pullback)


def conv_mlp(x: TokenGrid, p: ConvMlpParams) -> Tensor:
    return conv_mlp_vjp(x.tokens, p, x.height, x.width).value


def softmax_layer_param_count(dim: int, mlp_ratio: int) -> int:
    hidden = mlp_ratio * dim
    attention = (dim * 3 * dim + 3 * dim) + (dim * dim + dim) + 2 * dim
    mlp = (dim * hidden + hidden) + 9 * hidden + (hidden * dim + dim) + 2 * dim
    return attention + mlp


def softmax_layer_flops(n_tokens: int, dim: int, mlp_ratio: int) -> int:
    hidden = mlp_ratio * dim
    attention = (
        NORM_MACS * n_tokens * dim
        + 3 * n_tokens * dim * dim
        + 2 * n_tokens * n_tokens * dim
        + n_tokens * dim * dim
    )
    mlp = (
        NORM_MACS * n_tokens * dim
        + 2 * n_tokens * dim * hidden
        + 9 * n_tokens * hidden
        + n_tokens * hidden
    )
    return attention + mlp


class SoftmaxLayer(HybridLayer):
    """S 层：MHSA 后接卷积 MLP"""

    kind = "S"

    def __init__(self, dim: int, heads: int = 1, mlp_ratio: int = 4):
        super().__init__(dim)
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"通道数 {dim} 不能被头数 {heads} 整除", field="heads")
        if mlp_ratio < 1:
            raise ConfigError(f"MLP 扩展倍数必须 ≥ 1，实际为 {mlp_ratio}", field="mlp_ratio")
        self.heads = heads
        self.mlp_ratio = mlp_ratio

    def init_params(self, rng: np.random.Generator) -> SoftmaxLayerParams:
        d = self.dim
        hidden = self.mlp_ratio * d
        kernel = np.zeros((3, 3, hidden))
        kernel[1, 1, :] = 1.0
        kernel = kernel + rng.normal(0.0, 1.0 / 3.0, size=kernel.shape)
        attention = MhsaParams(
            heads=self.heads,
            proj_qkv=LinearProjection.init(rng, d, 3 * d),
            proj_out=LinearProjection.init(rng, d, d),
            norm_gain=np.ones(d),
            norm_shift=np.zeros(d),
        )
        mlp = ConvMlpParams(
            proj_up=LinearProjection.init(rng, d, hidden),
            dw_kernel=kernel,
            proj_down=LinearProjection.init(rng, hidden, d),
            norm_gain=np.ones(d),
            norm_shift=np.zeros(d),
        )
        return SoftmaxLayerParams(attention=attention, mlp=mlp)

    def forward_vjp(self, params: SoftmaxLayerParams, grid: TokenGrid) -> DualValue:
        self.check_input(grid)
        attention = mhsa_vjp(grid.tokens, params.attention)
        mlp = conv_mlp_vjp(attention.value, params.mlp, grid.height, grid.width)

        def pullback(g: Tensor, g_tap=None):
            g_mid, g_mlp = mlp.pullback(g)
            g_x, g_attention = attention.pullback(g_mid)
            return g_x, SoftmaxLayerParams(attention=g_attention, mlp=g_mlp)

        return DualValue(LayerOutput(tokens=mlp.value), pullback)

    def param_count(self) -> int:
        return softmax_layer_param_count(self.dim, self.mlp_ratio)

    def flops(self, n_tokens: int) -> int:
        return softmax_layer_flops(n_tokens, self.dim, self.mlp_ratio)


def softmax_layer(x: TokenGrid, params: SoftmaxLayerParams) -> TokenGrid:
    """conv_mlp(mhsa(x))"""
    mid = x.with_tokens(mhsa(x, params.attention))
    return x.with_tokens(conv_mlp(mid, params.mlp))
