"""
WKV 线性注意力层

Spatial Mix（双向 WKV，逐通道衰减 w 与当前 token 奖励 u）+ Channel Mix（门控 ReLU² MLP）。

WKV 的定义（逐通道）：
    wkv_t = (Σ_{i≠t} e^{−(|t−i|−1)/N·w + k_i}·v_i + e^{u+k_t}·v_t)
          / (Σ_{i≠t} e^{−(|t−i|−1)/N·w + k_i}     + e^{u+k_t})

wkv_naive 逐 token 直接求和，作为基准；wkv_scan 用正反两遍递推在 O(N·d) 内求出同一结果。
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..config import config
from ..errors import ParameterError, ShapeError
from ..numerics import (
    DualValue,
    LinearProjection,
    Tensor,
    layer_norm_vjp,
    relu_sq_vjp,
    sigmoid_vjp,
)
from .base_layer import HybridLayer, LayerOutput, TokenGrid

# 每个 token、每个通道的扫描乘加数：两个方向各 4 次，合并 2 次
WKV_SCAN_MACS = 10
# LayerNorm 每个元素的乘加数
NORM_MACS = 2


@dataclass
class OpCounter:
    """统计扫描内层的逐元素操作次数，用于复杂度测试"""

    ops: int = 0

    def add(self, n: int):
        self.ops += int(n)


@dataclass(frozen=True)
class WkvParams:
    """Spatial Mix 参数"""

    w: Tensor
    u: Tensor
    proj_r: LinearProjection
    proj_k: LinearProjection
    proj_v: LinearProjection
    proj_out: LinearProjection
    norm_gain: Tensor
    norm_shift: Tensor


@dataclass(frozen=True)
class ChannelMixParams:
    """Channel Mix 参数；proj_k: D→rD，proj_v: rD→D"""

    proj_r: LinearProjection
    proj_k: LinearProjection
    proj_v: LinearProjection
    norm_gain: Tensor
    norm_shift: Tensor


@dataclass(frozen=True)
class WkvLayerParams:
    spatial: WkvParams
    channel: ChannelMixParams


def _check_wkv_inputs(k: Tensor, v: Tensor, w: Tensor, u: Tensor):
    if k.ndim != 2 or k.shape != v.shape:
        raise ShapeError(f"k 与 v 须为相同形状的 N×d 矩阵: {k.shape} 与 {v.shape}")
    d = k.shape[1]
    if w.shape != (d,) or u.shape != (d,):
        raise ShapeError(f"w/u 形状 {w.shape}/{u.shape} 与通道数 {d} 不符")
    if k.shape[0] < 1:
        raise ShapeError("token 数 N 必须 ≥ 1")


def _exponents(k: Tensor, w: Tensor, u: Tensor) -> Tensor:
    """N×N×d 指数矩阵 E[t, i]，对角为 u + k_t"""
    n = k.shape[0]
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(np.float64)
    exps = -((dist - 1.0) / n)[:, :, None] * w[None, None, :] + k[None, :, :]
    exps[idx, idx, :] = u[None, :] + k
    return exps


def wkv_naive(k: Tensor, v: Tensor, w: Tensor, u: Tensor, counter: Optional[OpCounter] = None) -> Tensor:
    """逐 token 直接求和，每个 token 减去当前最大指数防止溢出"""
    _check_wkv_inputs(k, v, w, u)
    n, d = k.shape
    idx = np.arange(n)
    out = np.empty_like(v)
    for t in range(n):
        dist = np.abs(t - idx).astype(np.float64)
        exps = -((dist - 1.0) / n)[:, None] * w[None, :] + k
        exps[t] = u + k[t]
        peak = np.max(exps, axis=0)
        weights = np.exp(exps - peak)
        out[t] = np.sum(weights * v, axis=0) / np.sum(weights, axis=0)
        if counter is not None:
            counter.add(n * d)
    return out


def _directional_states(
    k: Tensor, v: Tensor, decay: Tensor, order: range, counter: Optional[OpCounter]
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    沿 order 方向递推，返回每个 token 处（不含自身）的 (分子, 分母, 指数) 三元组。

    状态表示 Σ e^{指数}：num·e^{p} 与 den·e^{p}。
    """
    n, d = k.shape
    nums = np.empty((n, d))
    dens = np.empty((n, d))
    peaks = np.empty((n, d))
    a = np.zeros(d)
    b = np.zeros(d)
    p = np.full(d, config.STATE_SENTINEL)
    for t in order:
        nums[t], dens[t], peaks[t] = a, b, p
        decayed = p - decay
        q = np.maximum(decayed, k[t])
        old = np.exp(decayed - q)
        new = np.exp(k[t] - q)
        a = old * a + new * v[t]
        b = old * b + new
        p = q
        if counter is not None:
            counter.add(d)
    return nums, dens, peaks


def _directional_states_raw(k: Tensor, v: Tensor, decay: Tensor, order: range) -> Tuple[Tensor, Tensor]:
    """不做最大值平移的递推，仅用于故障注入"""
    n, d = k.shape
    nums = np.empty((n, d))
    dens = np.empty((n, d))
    a = np.zeros(d)
    b = np.zeros(d)
    factor = np.exp(-decay)
    for t in order:
        nums[t], dens[t] = a, b
        a = factor * a + np.exp(k[t]) * v[t]
        b = factor * b + np.exp(k[t])
    return nums, dens


def wkv_scan(
    k: Tensor,
    v: Tensor,
    w: Tensor,
    u: Tensor,
    stabilize: bool = True,
    counter: Optional[OpCounter] = None,
) -> Tensor:
    """
    O(N·d) 的双向 WKV。

    Args:
        k, v: N×d
        w, u: 长度 d 的衰减与奖励
        stabilize: False 时去掉最大值平移（故障注入用，大 |k| 会溢出）
        counter: 可选的操作计数器

    Returns:
        Tensor: N×d，与 wkv_naive 在 1e-8 相对误差内一致
    """
    _check_wkv_inputs(k, v, w, u)
    n = k.shape[0]
    decay = w / n
    bonus = u + k

    if not stabilize:
        with np.errstate(over="ignore", invalid="ignore"):
            fa, fb = _directional_states_raw(k, v, decay, range(n))
            ba, bb = _directional_states_raw(k, v, decay, range(n - 1, -1, -1))
            e_bonus = np.exp(bonus)
            return (fa + ba + e_bonus * v) / (fb + bb + e_bonus)

    fa, fb, fp = _directional_states(k, v, decay, range(n), counter)
    ba, bb, bp = _directional_states(k, v, decay, range(n - 1, -1, -1), counter)
    peak = np.maximum(np.maximum(fp, bp), bonus)
    ef = np.exp(fp - peak)
    eb = np.exp(bp - peak)
    eu = np.exp(bonus - peak)
    if counter is not None:
        counter.add(k.size)
    return (fa * ef + ba * eb + eu * v) / (fb * ef + bb * eb + eu)


def wkv_scan_vjp(k: Tensor, v: Tensor, w: Tensor, u: Tensor) -> DualValue:
    """
    前向用 wkv_scan；反向构造 N×N×d 的归一化权重（仅适用于小规模训练）。

    pullback 返回 (g_k, g_v, g_w, g_u)。
    """
    out = wkv_scan(k, v, w, u)

    def pullback(g: Tensor):
        n = k.shape[0]
        exps = _exponents(k, w, u)
        exps = exps - np.max(exps, axis=1, keepdims=True)
        alpha = np.exp(exps)
        alpha = alpha / np.sum(alpha, axis=1, keepdims=True)
        g_v = np.einsum("tic,tc->ic", alpha, g)
        d_exp = alpha * (g[:, None, :] * (v[None, :, :] - out[:, None, :]))
        g_k = np.sum(d_exp, axis=0)
        diag = np.arange(n)
        g_u = np.sum(d_exp[diag, diag, :], axis=0)
        dist = np.abs(diag[:, None] - diag[None, :]).astype(np.float64)
        coeff = -(dist - 1.0) / n
        coeff[diag, diag] = 0.0
        g_w = np.einsum("tic,ti->c", d_exp, coeff)
        return g_k, g_v, g_w, g_u

    return DualValue(out, pullback)


def wkv_effective_range(w: Tensor, n_tokens: int, epsilon: float) -> Tensor:
    """
    每个通道的 WKV 作用距离：衰减因子 e^{−(Δ−1)/N·w} 降到 ε 时的 Δ = 1 + N·ln(1/ε)/w。

    w ≤ 0 的通道不衰减，返回 inf。
    """
    if not 0 < epsilon < 1:
        raise ParameterError(f"容差 ε 必须在 (0, 1) 内，实际为 {epsilon}")
    w = np.asarray(w, dtype=np.float64)
    out = np.full(w.shape, np.inf)
    positive = w > 0
    out[positive] = 1.0 + n_tokens * np.log(1.0 / epsilon) / w[positive]
    return out


# =============================================================================
# Spatial Mix / Channel Mix
# =============================================================================


def spatial_mix_vjp(x: Tensor, p: WkvParams) -> DualValue:
    """
    LN → R/K/V 投影 → WKV → σ(R)⊙WKV → 输出投影 → 残差。

    value 为 (输出, WKV 输出)；pullback(g, g_tap=None) 返回 (g_x, WkvParams 形状的梯度)。
    """
    ln = layer_norm_vjp(x, p.norm_gain, p.norm_shift)
    r = p.proj_r.apply_vjp(ln.value)
    k = p.proj_k.apply_vjp(ln.value)
    v = p.proj_v.apply_vjp(ln.value)
    wkv = wkv_scan_vjp(k.value, v.value, p.w, p.u)
    gate = sigmoid_vjp(r.value)
    gated = gate.value * wkv.value
    o = p.proj_out.apply_vjp(gated)
    out = x + o.value

    def pullback(g: Tensor, g_tap: Optional[Tensor] = None):
        g_gated, g_proj_out = o.pullback(g)
        g_wkv = g_gated * gate.value
        if g_tap is not None:
            g_wkv = g_wkv + g_tap
        (g_r,) = gate.pullback(g_gated * wkv.value)
        g_k, g_v, g_w, g_u = wkv.pullback(g_wkv)
        g_ln_r, g_proj_r = r.pullback(g_r)
        g_ln_k, g_proj_k = k.pullback(g_k)
        g_ln_v, g_proj_v = v.pullback(g_v)
        g_x_ln, g_gain, g_shift = ln.pullback(g_ln_r + g_ln_k + g_ln_v)
        grads = WkvParams(
            w=g_w,
            u=g_u,
            proj_r=g_proj_r,
            proj_k=g_proj_k,
            proj_v=g_proj_v,
            proj_out=g_proj_out,
            norm_gain=g_gain,
            norm_shift=g_shift,
        )
        return g + g_x_ln, grads

    return DualValue((out, wkv.value), pullback)


def spatial_mix(x: TokenGrid, p: WkvParams) -> Tensor:
    return spatial_mix_vjp(x.tokens, p).value[0]


def channel_mix_vjp(x: Tensor, p: ChannelMixParams) -> DualValue:
    """LN → R/K 投影 → V = proj_v(ReLU²(K)) → σ(R)⊙V → 残差"""
    ln = layer_norm_vjp(x, p.norm_gain, p.norm_shift)
    r = p.proj_r.apply_vjp(ln.value)
    k = p.proj_k.apply_vjp(ln.value)
    act = relu_sq_vjp(k.value)
    v = p.proj_v.apply_vjp(act.value)
    gate = sigmoid_vjp(r.value)
    out = x + gate.value * v.value

    def pullback(g: Tensor):
        (g_r,) = gate.pullback(g * v.value)
        g_act, g_proj_v = v.pullback(g * gate.value)
        (g_k,) = act.pullback(g_act)
        g_ln_r, g_proj_r = r.pullback(g_r)
        g_ln_k, g_proj_k = k.pullback(g_k)
        g_x_ln, g_gain, g_shift = ln.pullback(g_ln_r + g_ln_k)
        grads = ChannelMixParams(
            proj_r=g_proj_r,
            proj_k=g_proj_k,
            proj_v=g_proj_v,
            norm_gain=g_gain,
            norm_shift=g_shift,
        )
        return g + g_x_ln, grads

    return DualValue(out, pullback)


def channel_mix(x: TokenGrid, p: ChannelMixParams) -> Tensor:
    return channel_mix_vjp(x.tokens, p).value


# =============================================================================
# 层
# =============================================================================


def wkv_layer_param_count(dim: int, ratio: int) -> int:
    spatial = 4 * (dim * dim + dim) + 2 * dim + 2 * dim
    hidden = ratio * dim
    channel = (dim * dim + dim) + (dim * hidden + hidden) + (hidden * dim + dim) + 2 * dim
    return spatial + channel


def wkv_layer_flops(n_tokens: int, dim: int, ratio: int) -> int:
    hidden = ratio * dim
    spatial = (
        NORM_MACS * n_tokens * dim
        + 4 * n_tokens * dim * dim
        + WKV_SCAN_MACS * n_tokens * dim
        + n_tokens * dim
    )
    channel = (
        NORM_MACS * n_tokens * dim
        + n_tokens * dim * dim
        + 2 * n_tokens * dim * hidden
        + n_tokens * hidden
        + n_tokens * dim
    )
    return spatial + channel


def decay_ramp(dim: int) -> Tensor:
    """w 按通道线性铺开在 DECAY_RAMP 区间内"""
    low, high = config.DECAY_RAMP
    if dim == 1:
        return np.array([low])
    return np.linspace(low, high, dim)


class WkvLinearLayer(HybridLayer):
    """L 层：Spatial Mix 后接 Channel Mix"""

    kind = "L"

    def __init__(self, dim: int, channel_mix_ratio: int = 4):
        super().__init__(dim)
        self.channel_mix_ratio = channel_mix_ratio

    def init_params(self, rng: np.random.Generator) -> WkvLayerParams:
        d = self.dim
        hidden = self.channel_mix_ratio * d
        spatial = WkvParams(
            w=decay_ramp(d),
            u=np.zeros(d),
            proj_r=LinearProjection.init(rng, d, d),
            proj_k=LinearProjection.init(rng, d, d),
            proj_v=LinearProjection.init(rng, d, d),
            proj_out=LinearProjection.init(rng, d, d),
            norm_gain=np.ones(d),
            norm_shift=np.zeros(d),
        )
        channel = ChannelMixParams(
            proj_r=LinearProjection.init(rng, d, d),
            proj_k=LinearProjection.init(rng, d, hidden),
            proj_v=LinearProjection.init(rng, hidden, d),
            norm_gain=np.ones(d),
            norm_shift=np.zeros(d),
        )
        return WkvLayerParams(spatial=spatial, channel=channel)

    def forward_vjp(self, params: WkvLayerParams, grid: TokenGrid) -> DualValue:
        self.check_input(grid)
        spatial = spatial_mix_vjp(grid.tokens, params.spatial)
        mid, tap = spatial.value
        channel = channel_mix_vjp(mid, params.channel)

        def pullback(g: Tensor, g_tap: Optional[Tensor] = None):
            g_mid, g_channel = channel.pullback(g)
            g_x, g_spatial = spatial.pullback(g_mid, g_tap)
            return g_x, WkvLayerParams(spatial=g_spatial, channel=g_channel)

        return DualValue(LayerOutput(tokens=channel.value, tap=tap), pullback)

    def param_count(self) -> int:
        return wkv_layer_param_count(self.dim, self.channel_mix_ratio)

    def flops(self, n_tokens: int) -> int:
        return wkv_layer_flops(n_tokens, self.dim, self.channel_mix_ratio)


def wkv_layer(x: TokenGrid, params: WkvLayerParams) -> TokenGrid:
    """channel_mix(spatial_mix(x))，形状不变"""
    mid = x.with_tokens(spatial_mix(x, params.spatial))
    return x.with_tokens(channel_mix(mid, params.channel))
