"""
Hidden State Bridge

从浅层 L 层的隐状态中等距采样 T_dst 个 token，投影到目标维度，
再经门控加到深层 S 层的输入上：

    X_HSB = Samp(H_src, T_dst)·W_HSB
    X_in  = X_dst + σ(X_dst·W_g + b_g) ⊙ X_HSB
"""

from dataclasses import dataclass

import numpy as np

from .errors import RouteError, SamplingError
from .numerics import DualValue, LinearProjection, Tensor, sigmoid_vjp
from .schedule import HsbRoute


def sample_indices(n_src: int, n_out: int) -> np.ndarray:
    """中心对齐的等距下标 floor((j + 0.5)·N_src / n_out)"""
    if not 1 <= n_out <= n_src:
        raise SamplingError(f"采样数 {n_out} 必须在 [1, {n_src}] 内")
    j = np.arange(n_out)
    return ((2 * j + 1) * n_src) // (2 * n_out)


def sample_equidistant(tokens: Tensor, n_out: int) -> Tensor:
    return tokens[sample_indices(tokens.shape[0], n_out)]


def sample_equidistant_vjp(tokens: Tensor, n_out: int) -> DualValue:
    idx = sample_indices(tokens.shape[0], n_out)

    def pullback(g: Tensor):
        g_tokens = np.zeros_like(tokens)
        np.add.at(g_tokens, idx, g)
        return (g_tokens,)

    return DualValue(tokens[idx], pullback)


@dataclass(frozen=True)
class HsbParams:
    """一条路由的参数：proj 为 W_HSB（无偏置），gate 为 W_g"""

    route: HsbRoute
    proj: LinearProjection
    gate: LinearProjection

    @classmethod
    def init(cls, rng: np.random.Generator, route: HsbRoute, src_dim: int, dst_dim: int) -> "HsbParams":
        return cls(
            route=route,
            proj=LinearProjection.init(rng, src_dim, dst_dim, bias=False),
            gate=LinearProjection.init(rng, dst_dim, dst_dim),
        )


def hsb_param_count(src_dim: int, dst_dim: int) -> int:
    return src_dim * dst_dim + dst_dim * dst_dim + dst_dim


def hsb_flops(n_dst: int, src_dim: int, dst_dim: int) -> int:
    return n_dst * src_dim * dst_dim + n_dst * dst_dim * dst_dim + n_dst * dst_dim


def _check_route(src_hidden: Tensor, dst_input: Tensor, p: HsbParams):
    if src_hidden.ndim != 2 or src_hidden.shape[1] != p.proj.in_dim:
        raise RouteError(f"路由 {p.route} 的源形状 {src_hidden.shape} 与 W_HSB {p.proj.weight.shape} 不符")
    if dst_input.ndim != 2 or dst_input.shape[1] != p.proj.out_dim or p.gate.in_dim != dst_input.shape[1]:
        raise RouteError(f"路由 {p.route} 的目标形状 {dst_input.shape} 与投影维度 {p.proj.out_dim} 不符")


def hidden_state_bridge_vjp(src_hidden: Tensor, dst_input: Tensor, p: HsbParams) -> DualValue:
    """pullback 返回 (g_src, g_dst, HsbParams 形状的梯度)"""
    _check_route(src_hidden, dst_input, p)
    n_dst = dst_input.shape[0]
    try:
        sampled = sample_equidistant_vjp(src_hidden, n_dst)
    except SamplingError as e:
        raise RouteError(f"路由 {p.route}: 源 token 数 {src_hidden.shape[0]} 少于目标 token 数 {n_dst}") from e
    bridged = p.proj.apply_vjp(sampled.value)
    logits = p.gate.apply_vjp(dst_input)
    gate = sigmoid_vjp(logits.value)
    out = dst_input + gate.value * bridged.value

    def pullback(g: Tensor):
        g_sampled, g_proj = bridged.pullback(g * gate.value)
        (g_src,) = sampled.pullback(g_sampled)
        (g_logits,) = gate.pullback(g * bridged.value)
        g_dst_gate, g_gate = logits.pullback(g_logits)
        return g_src, g + g_dst_gate, HsbParams(route=p.route, proj=g_proj, gate=g_gate)

    return DualValue(out, pullback)


def hidden_state_bridge(src_hidden: Tensor, dst_input: Tensor, p: HsbParams) -> Tensor:
    return hidden_state_bridge_vjp(src_hidden, dst_input, p).value
