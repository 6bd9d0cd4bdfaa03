"""
作用范围分析

离散指数衰减核 k(Δ) ∝ e^{−w|Δ|} 的 M 次卷积：方差可加，中心区域趋近高斯，
有效半径 ξ_M ≈ σ_M·√(2 ln(1/ε))，随深度按 √M 增长。
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .config import config
from .errors import FitError, ParameterError, ToleranceError, TruncationError
from .numerics import Tensor


@dataclass(frozen=True)
class DecayKernel:
    """支撑为 [−R, R] 的对称离散分布；weights[R + Δ] 为 k(Δ)"""

    weights: Tensor
    rate: Optional[float] = None

    def __post_init__(self):
        if self.weights.ndim != 1 or self.weights.size % 2 != 1:
            raise ParameterError(f"核权重须为奇数长度的一维数组，实际形状 {self.weights.shape}")
        if np.any(self.weights < 0):
            raise ParameterError("核权重必须非负")

    @property
    def radius(self) -> int:
        return self.weights.size // 2

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1)

    def at(self, delta: int) -> float:
        if abs(delta) > self.radius:
            return 0.0
        return float(self.weights[self.radius + delta])

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def mean(self) -> float:
        return float(np.sum(self.offsets * self.weights) / self.mass)

    @property
    def variance(self) -> float:
        offsets = self.offsets.astype(np.float64)
        mean = self.mean
        return float(np.sum((offsets - mean) ** 2 * self.weights) / self.mass)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class KernelStats:
    mean: float
    variance: float
    radius: int
    epsilon: float


@dataclass(frozen=True)
class ScalingFit:
    """ξ = c·M^α 的对数线性拟合"""

    depths: List[int]
    radii: List[int]
    constant: float
    exponent: float
    r_squared: float


def _normalized(weights: Tensor) -> Tensor:
    return weights / np.sum(weights)


def delta_kernel() -> DecayKernel:
    """δ₀，卷积的单位元"""
    return DecayKernel(np.array([1.0]))


def exp_kernel(w: float, radius: Optional[int] = None) -> DecayKernel:
    """
    截断到 [−R, R] 并重新归一化的指数核

    Args:
        w: 衰减率，> 0
        radius: 截断半径，默认 ceil(25 / w)

    Raises:
        TruncationError: R < 25 / w，尾部质量不可忽略
    """
    if not w > 0:
        raise ParameterError(f"衰减率 w 必须 > 0，实际为 {w}")
    minimum = config.TRUNCATION_FACTOR / w
    if radius is None:
        radius = math.ceil(minimum)
    if radius < minimum:
        raise TruncationError(f"截断半径 {radius} 小于 {minimum:.3f}（= {config.TRUNCATION_FACTOR}/w）")
    offsets = np.arange(-radius, radius + 1)
    return DecayKernel(_normalized(np.exp(-w * np.abs(offsets))), rate=float(w))


def gaussian_kernel(sigma: float, radius: Optional[int] = None) -> DecayKernel:
    """离散高斯核，默认截断半径 ceil(8σ)"""
    if not sigma > 0:
        raise ParameterError(f"σ 必须 > 0，实际为 {sigma}")
    radius = math.ceil(8 * sigma) if radius is None else radius
    offsets = np.arange(-radius, radius + 1)
    return DecayKernel(_normalized(np.exp(-(offsets**2) / (2.0 * sigma * sigma))))


def convolve(a: DecayKernel, b: DecayKernel) -> DecayKernel:
    """精确离散卷积，支撑半径相加；只做归一化以吸收舍入"""
    return DecayKernel(_normalized(np.convolve(a.weights, b.weights)))


def power(k: DecayKernel, depth: int) -> DecayKernel:
    """k 的 depth 次自卷积，按二进制位平方累乘"""
    if depth < 1:
        raise ParameterError(f"深度 M 必须 ≥ 1，实际为 {depth}")
    out: Optional[DecayKernel] = None
    base = k
    while depth:
        if depth & 1:
            out = base if out is None else convolve(out, base)
        depth >>= 1
        if depth:
            base = convolve(base, base)
    return out


def stack(rates: Sequence[float]) -> DecayKernel:
    """不同衰减率的指数核依次卷积"""
    if not rates:
        raise ParameterError("至少需要一个衰减率")
    out = exp_kernel(rates[0])
    for w in rates[1:]:
        out = convolve(out, exp_kernel(w))
    return out


def continuous_variance(rates: Sequence[float]) -> float:
    """连续近似 σ² = Σ 2/w²"""
    return float(sum(2.0 / (w * w) for w in rates))


def gaussian_lobe_error(k: DecayKernel) -> float:
    """
    中心区域 |Δ| ≤ 2σ 上 k(Δ)/k(0) 与 exp(−Δ²/2σ²) 的最大对数偏差

    Returns:
        float: max |ln(k(Δ)/k(0)) + Δ²/(2σ²)|
    """
    var = k.variance
    if not var > 0:
        raise ParameterError("核方差为零，无法与高斯比较")
    sigma = math.sqrt(var)
    reach = min(int(math.floor(2.0 * sigma)), k.radius)
    peak = k.at(0)
    deltas = np.arange(-reach, reach + 1)
    values = np.array([k.at(int(d)) for d in deltas])
    if peak <= 0 or np.any(values <= 0):
        raise ParameterError("中心区域存在零权重，核已退化")
    return float(np.max(np.abs(np.log(values / peak) + deltas**2 / (2.0 * var))))


def effective_radius(k: DecayKernel, epsilon: float) -> int:
    """
    k(Δ)/k(0) ≤ ε 的最小非负整数 Δ

    Raises:
        ToleranceError: 截断范围内没有满足条件的 Δ
    """
    if not 0 < epsilon < 1:
        raise ParameterError(f"容差 ε 必须在 (0, 1) 内，实际为 {epsilon}")
    half = k.weights[k.radius :]
    ratio = half / half[0]
    below = np.flatnonzero(ratio <= epsilon * (1.0 + 1e-12))
    if below.size == 0:
        raise ToleranceError(f"ε={epsilon} 低于截断核在半径 {k.radius} 处的比值 {ratio[-1]:.3e}")
    return int(below[0])


def predicted_radius(sigma: float, epsilon: float) -> float:
    """高斯近似下的半径 σ·√(2 ln(1/ε))"""
    return sigma * math.sqrt(2.0 * math.log(1.0 / epsilon))


def kernel_stats(k: DecayKernel, epsilon: Optional[float] = None) -> KernelStats:
    epsilon = config.RANGE_EPSILON if epsilon is None else epsilon
    return KernelStats(mean=k.mean, variance=k.variance, radius=effective_radius(k, epsilon), epsilon=epsilon)


def range_table(w: float, epsilon: float, depths: Sequence[int]) -> List[Dict[str, float]]:
    """每个深度一行：M, sigma, xi, xi_predicted, gaussian_error"""
    base = exp_kernel(w)
    rows = []
    current = None
    done = 0
    for depth in sorted(depths):
        # 按递增深度复用已算好的卷积
        if current is None:
            current = power(base, depth)
        else:
            current = convolve(current, power(base, depth - done)) if depth > done else current
        done = depth
        sigma = current.sigma
        rows.append(
            {
                "M": int(depth),
                "sigma": sigma,
                "xi": effective_radius(current, epsilon),
                "xi_predicted": predicted_radius(sigma, epsilon),
                "gaussian_error": gaussian_lobe_error(current),
            }
        )
    return rows


def fit_power_law(depths: Sequence[int], radii: Sequence[float]) -> ScalingFit:
    """log ξ 对 log M 的最小二乘拟合"""
    if len(depths) < 4:
        raise FitError(f"拟合至少需要 4 个深度，实际为 {len(depths)}")
    if len(set(depths)) < 2 or len(set(radii)) < 2:
        raise FitError("深度或半径没有变化，拟合退化")
    fit = stats.linregress(np.log(np.asarray(depths, dtype=np.float64)), np.log(np.asarray(radii, dtype=np.float64)))
    return ScalingFit(
        depths=[int(d) for d in depths],
        radii=[int(r) for r in radii],
        constant=float(np.exp(fit.intercept)),
        exponent=float(fit.slope),
        r_squared=float(fit.rvalue**2),
    )


def fit_sqrt_scaling(depths: Sequence[int], w: float = 1.0, epsilon: Optional[float] = None) -> ScalingFit:
    """计算每个深度的 ξ_M 并拟合 ξ = c·M^α"""
    epsilon = config.RANGE_EPSILON if epsilon is None else epsilon
    if len(depths) < 4:
        raise FitError(f"拟合至少需要 4 个深度，实际为 {len(depths)}")
    rows = range_table(w, epsilon, depths)
    fit = fit_power_law([r["M"] for r in rows], [r["xi"] for r in rows])
    logging.info(f"√M 拟合: α={fit.exponent:.4f}, R²={fit.r_squared:.4f}（w={w}, ε={epsilon}）")
    return fit
