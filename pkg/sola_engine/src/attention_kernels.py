"""
注意力核模块

softmax 注意力、广义核注意力、基于隐状态的线性注意力，
以及带距离衰减的隐状态（直接求和形式与递推形式）和单层有效作用范围。

这里的 softmax 注意力不做 1/√d 缩放；骨干网络中的 softmax 层才缩放。
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .errors import DegenerateKernelError, ParameterError, ShapeError, TokenIndexError
from .numerics import Tensor, as_tensor, softmax_rows

FeatureMap = Callable[[Tensor], Tensor]
DecayFn = Callable[[Union[int, Tensor]], Union[float, Tensor]]


@dataclass(frozen=True)
class AttentionInputs:
    """q、k、v 三个 N×d 矩阵"""

    q: Tensor
    k: Tensor
    v: Tensor

    def __post_init__(self):
        shapes = [self.q.shape, self.k.shape, self.v.shape]
        if any(len(s) != 2 for s in shapes):
            raise ShapeError(f"q/k/v 须为二维矩阵，实际为 {shapes}")
        if self.q.shape != self.k.shape or self.k.shape[0] != self.v.shape[0]:
            raise ShapeError(f"q/k/v 的 N 或 d 不一致: {shapes}")
        if self.q.shape[0] < 1:
            raise ShapeError("token 数 N 必须 ≥ 1")

    @classmethod
    def from_arrays(cls, q, k, v) -> "AttentionInputs":
        return cls(as_tensor(q, "q"), as_tensor(k, "k"), as_tensor(v, "v"))

    @property
    def n_tokens(self) -> int:
        return self.q.shape[0]


def elu_feature(x: Tensor) -> Tensor:
    """elu(x) + 1，严格为正的特征映射"""
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class SimilarityKernel:
    """
    非负相似度核 κ(q, k)。

    若给出特征映射 (feature_q, feature_k)，则 κ(q, k) = φ_q(q)·φ_k(k)ᵀ。
    """

    evaluate: Callable[[Tensor, Tensor], float]
    feature_q: Optional[FeatureMap] = None
    feature_k: Optional[FeatureMap] = None

    @classmethod
    def exponential(cls) -> "SimilarityKernel":
        """κ = exp(q·kᵀ)，即 softmax 注意力"""
        return cls(evaluate=lambda q, k: float(np.exp(q @ k)))

    @classmethod
    def uniform(cls) -> "SimilarityKernel":
        return cls(evaluate=lambda q, k: 1.0)

    @classmethod
    def from_features(cls, feature_q: FeatureMap, feature_k: Optional[FeatureMap] = None) -> "SimilarityKernel":
        feature_k = feature_k or feature_q
        return cls(
            evaluate=lambda q, k: float(feature_q(q) @ feature_k(k)),
            feature_q=feature_q,
            feature_k=feature_k,
        )

    @property
    def has_features(self) -> bool:
        return self.feature_q is not None and self.feature_k is not None


@dataclass(frozen=True)
class HiddenState:
    """线性注意力的隐状态 H ∈ R^{m×d}"""

    matrix: Tensor

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeError(f"隐状态须为 m×d 矩阵，实际为 {self.matrix.shape}")

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def value_dim(self) -> int:
        return self.matrix.shape[1]


def softmax_attention(inp: AttentionInputs) -> Tensor:
    """SoAttn = softmax_rows(Q·Kᵀ)·V，不缩放"""
    return softmax_rows(inp.q @ inp.k.T) @ inp.v


def kernel_attention(inp: AttentionInputs, kernel: SimilarityKernel) -> Tensor:
    """
    逐 token 计算 Σ κ(q_t, k_i) v_i / Σ κ(q_t, k_i)。

    Raises:
        DegenerateKernelError: 某个 t 的分母为零
    """
    n = inp.n_tokens
    out = np.empty((n, inp.v.shape[1]))
    for t in range(n):
        weights = np.array([kernel.evaluate(inp.q[t], inp.k[i]) for i in range(n)])
        if np.any(weights < 0):
            raise ParameterError(f"相似度核在 token {t} 处出现负值")
        denom = weights.sum()
        if denom <= 0.0:
            raise DegenerateKernelError(f"token {t} 的核注意力分母为零", token_index=t)
        out[t] = weights @ inp.v / denom
    return out


def _features(inp: AttentionInputs, phi_q: FeatureMap, phi_k: Optional[FeatureMap]) -> Tuple[Tensor, Tensor]:
    fq = phi_q(inp.q)
    fk = (phi_k or phi_q)(inp.k)
    if fq.shape != fk.shape:
        raise ShapeError(f"φ_q 与 φ_k 的输出维度不一致: {fq.shape} 与 {fk.shape}")
    if np.any(fq < 0) or np.any(fk < 0):
        raise ParameterError("特征映射输出必须非负")
    return fq, fk


def _normalize(out: Tensor, denom: Tensor) -> Tensor:
    zero = np.flatnonzero(denom <= 0.0)
    if zero.size:
        t = int(zero[0])
        raise DegenerateKernelError(f"token {t} 的线性注意力分母为零", token_index=t)
    return out / denom[:, None]


def linear_attention(
    inp: AttentionInputs,
    phi_q: FeatureMap,
    phi_k: Optional[FeatureMap] = None,
    normalized: bool = False,
) -> Tuple[Tensor, HiddenState]:
    """
    右结合形式 φ(Q)·(φ(K)ᵀV)，不构造 N×N 矩阵。

    Returns:
        (输出, 全局隐状态 H = φ(K)ᵀV)
    """
    fq, fk = _features(inp, phi_q, phi_k)
    state = fk.T @ inp.v
    out = fq @ state
    if normalized:
        out = _normalize(out, fq @ fk.sum(axis=0))
    return out, HiddenState(state)


def linear_attention_quadratic(
    inp: AttentionInputs,
    phi_q: FeatureMap,
    phi_k: Optional[FeatureMap] = None,
    normalized: bool = False,
) -> Tensor:
    """左结合形式 (φ(Q)·φ(K)ᵀ)·V，显式构造 N×N 权重矩阵"""
    fq, fk = _features(inp, phi_q, phi_k)
    weights = fq @ fk.T
    out = weights @ inp.v
    if normalized:
        out = _normalize(out, weights.sum(axis=1))
    return out


def exponential_decay(w: float) -> DecayFn:
    """decay(Δ) = e^{−wΔ}"""
    if w < 0:
        raise ParameterError(f"衰减率须非负，实际为 {w}")
    return lambda delta: np.exp(-w * np.asarray(delta, dtype=np.float64))


def decayed_state(keys: Tensor, values: Tensor, phi_k: FeatureMap, decay: DecayFn, t: int) -> HiddenState:
    """
    直接求和：H_t = Σ_{i≠t} decay(|t−i|)·φ(k_i)ᵀv_i + φ(k_t)ᵀv_t。

    Args:
        keys, values: N×d
        phi_k: 键的特征映射
        decay: 距离 Δ 到 (0, 1] 的函数
        t: 1 起始的 token 下标
    """
    n = keys.shape[0]
    if values.shape[0] != n:
        raise ShapeError(f"keys 与 values 的 token 数不一致: {keys.shape} 与 {values.shape}")
    if not 1 <= t <= n:
        raise TokenIndexError(f"下标 t={t} 超出范围 [1, {n}]")
    features = phi_k(keys)
    state = np.zeros((features.shape[1], values.shape[1]))
    for i in range(1, n + 1):
        outer = np.outer(features[i - 1], values[i - 1])
        if i == t:
            state = state + outer
        else:
            state = state + float(decay(abs(t - i))) * outer
    return HiddenState(state)


def recurrent_state(keys: Tensor, values: Tensor, phi_k: FeatureMap, rate: float) -> Tensor:
    """
    递推形式：H_t = e^{−w}·H_{t−1} + φ(k_t)ᵀv_t，正反两个方向各扫一遍后合并。

    Returns:
        Tensor: N×m×d，第 t 个切片与 decayed_state(..., exponential_decay(rate), t+1) 相同
    """
    features = phi_k(keys)
    n = features.shape[0]
    factor = np.exp(-rate)
    outers = features[:, :, None] * values[:, None, :]

    forward = np.empty_like(outers)
    backward = np.empty_like(outers)
    acc = np.zeros_like(outers[0])
    for t in range(n):
        acc = factor * acc + outers[t]
        forward[t] = acc
    acc = np.zeros_like(outers[0])
    for t in range(n - 1, -1, -1):
        acc = factor * acc + outers[t]
        backward[t] = acc
    # 对角项在两个方向中各出现一次
    return forward + backward - outers


def effective_range(w: float, epsilon: float) -> float:
    """单层有效作用范围 ξ = ln(1/ε)/w"""
    if not w > 0:
        raise ParameterError(f"衰减率 w 必须 > 0，实际为 {w}")
    if not 0 < epsilon < 1:
        raise ParameterError(f"容差 ε 必须在 (0, 1) 内，实际为 {epsilon}")
    return float(np.log(1.0 / epsilon) / w)
