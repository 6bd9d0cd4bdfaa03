"""
数值基础模块

提供所有层共用的稠密张量运算、它们的反向（向量-雅可比积）规则，
以及用于梯度校验的中心差分工具。

约定：
- Tensor 即 float64 的 numpy.ndarray，公开运算不修改输入。
- 每个原语提供 op(...) 返回值，以及 op_vjp(...) 返回 DualValue(value, pullback)。
- pullback 接收输出的余切，返回与输入一一对应的余切元组。
"""

import logging
from dataclasses import dataclass, fields, is_dataclass, replace
from typing import Any, Callable, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf, expit

from .config import config
from .errors import EvaluationError, ShapeError

Tensor = np.ndarray
Pullback = Callable[[Tensor], Tuple[Any, ...]]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class DualValue:
    """前向值与其回拉函数"""

    value: Any
    pullback: Pullback


def as_tensor(x: Any, name: str = "tensor") -> Tensor:
    """转换为 float64 数组并检查所有元素有限"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 0 and 0 in arr.shape:
        raise ShapeError(f"{name} 含空轴: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"{name} 含非有限值 (NaN/Inf)")
    return arr


def relative_error(actual: Tensor, expected: Tensor) -> float:
    """按最大范数计算的相对误差：max|a-b| / max|b|"""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if actual.shape != expected.shape:
        raise ShapeError(f"形状不一致: {actual.shape} 与 {expected.shape}")
    scale = max(float(np.max(np.abs(expected), initial=0.0)), np.finfo(np.float64).tiny)
    return float(np.max(np.abs(actual - expected), initial=0.0) / scale)


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: 形状不一致 {a.shape} 与 {b.shape}")


# =============================================================================
# 矩阵与逐元素运算
# =============================================================================


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """标准矩阵乘法 [m×k]·[k×n]"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul 维度不匹配: {a.shape} 与 {b.shape}")
    return a @ b


def matmul_vjp(a: Tensor, b: Tensor) -> DualValue:
    out = matmul(a, b)

    def pullback(g: Tensor):
        return g @ b.T, a.T @ g

    return DualValue(out, pullback)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "elementwise_mul")
    return a * b


def elementwise_mul_vjp(a: Tensor, b: Tensor) -> DualValue:
    out = elementwise_mul(a, b)
    return DualValue(out, lambda g: (g * b, g * a))


def sigmoid(x: Tensor) -> Tensor:
    return expit(x)


def sigmoid_vjp(x: Tensor) -> DualValue:
    s = expit(x)
    return DualValue(s, lambda g: (g * s * (1.0 - s),))


def relu_sq(x: Tensor) -> Tensor:
    """ReLU²: max(x, 0)²"""
    r = np.maximum(x, 0.0)
    return r * r


def relu_sq_vjp(x: Tensor) -> DualValue:
    r = np.maximum(x, 0.0)
    return DualValue(r * r, lambda g: (2.0 * g * r,))


def gelu(x: Tensor) -> Tensor:
    """精确（erf）形式的 GELU"""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_vjp(x: Tensor) -> DualValue:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return DualValue(x * cdf, lambda g: (g * (cdf + x * pdf),))


def softmax_rows(x: Tensor) -> Tensor:
    """逐行 softmax，先减去每行最大值防止溢出"""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_vjp(x: Tensor) -> DualValue:
    y = softmax_rows(x)

    def pullback(g: Tensor):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return DualValue(y, pullback)


# =============================================================================
# 归一化与卷积
# =============================================================================


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: Optional[float] = None) -> Tensor:
    return layer_norm_vjp(x, gain, shift, eps).value


def layer_norm_vjp(x: Tensor, gain: Tensor, shift: Tensor, eps: Optional[float] = None) -> DualValue:
    """
    对最后一个轴做 Layer Normalization，再逐通道仿射。

    pullback 返回 (g_x, g_gain, g_shift)。
    """
    eps = config.LAYER_NORM_EPS if eps is None else eps
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm: 归一化轴为空")
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: 仿射参数形状 {gain.shape}/{shift.shape} 与通道数 {d} 不符")
    mean = np.mean(x, axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out = x_hat * gain + shift

    def pullback(g: Tensor):
        reduce_axes = tuple(range(g.ndim - 1))
        g_gain = np.sum(g * x_hat, axis=reduce_axes)
        g_shift = np.sum(g, axis=reduce_axes)
        g_hat = g * gain
        g_x = inv_std * (
            g_hat
            - np.mean(g_hat, axis=-1, keepdims=True)
            - x_hat * np.mean(g_hat * x_hat, axis=-1, keepdims=True)
        )
        return g_x, g_gain, g_shift

    return DualValue(out, pullback)


def _check_conv_shapes(x: Tensor, kernel: Tensor):
    if x.ndim != 3 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"depthwise_conv3x3: 输入须为 H×W×C，实际为 {x.shape}")
    if kernel.shape != (3, 3, x.shape[2]):
        raise ShapeError(f"depthwise_conv3x3: 卷积核须为 3×3×{x.shape[2]}，实际为 {kernel.shape}")


def depthwise_conv3x3(x: Tensor, kernel: Tensor) -> Tensor:
    """逐通道 3×3 卷积，零填充宽度 1，空间尺寸不变"""
    _check_conv_shapes(x, kernel)
    h, w, _ = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(x)
    # 累加顺序与逐像素的朴素循环一致，结果逐位相同
    for di in range(3):
        for dj in range(3):
            out += padded[di : di + h, dj : dj + w, :] * kernel[di, dj, :]
    return out


def depthwise_conv3x3_vjp(x: Tensor, kernel: Tensor) -> DualValue:
    out = depthwise_conv3x3(x, kernel)
    h, w, _ = x.shape

    def pullback(g: Tensor):
        padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        g_padded = np.zeros_like(padded)
        g_kernel = np.zeros_like(kernel)
        for di in range(3):
            for dj in range(3):
                window = padded[di : di + h, dj : dj + w, :]
                g_kernel[di, dj, :] = np.sum(g * window, axis=(0, 1))
                g_padded[di : di + h, dj : dj + w, :] += g * kernel[di, dj, :]
        return g_padded[1:-1, 1:-1, :], g_kernel

    return DualValue(out, pullback)


# =============================================================================
# 线性投影
# =============================================================================


@dataclass(frozen=True)
class LinearProjection:
    """y = x·W + b，W 形状为 [in_dim × out_dim]"""

    weight: Tensor
    bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"投影权重须为二维，实际为 {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"偏置形状 {self.bias.shape} 与输出维度 {self.weight.shape[1]} 不符")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int, bias: bool = True) -> "LinearProjection":
        """权重 ~ N(0, 1/in_dim)，偏置为零"""
        weight = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, out_dim))
        return cls(weight=weight, bias=np.zeros(out_dim) if bias else None)

    def apply(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"投影输入维度 {x.shape} 与权重 {self.weight.shape} 不匹配")
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def apply_vjp(self, x: Tensor) -> DualValue:
        """pullback 返回 (g_x, 同结构的梯度投影)"""
        out = self.apply(x)

        def pullback(g: Tensor):
            g_x = g @ self.weight.T
            g_w = x.reshape(-1, self.in_dim).T @ g.reshape(-1, self.out_dim)
            g_b = None if self.bias is None else np.sum(g.reshape(-1, self.out_dim), axis=0)
            return g_x, LinearProjection(weight=g_w, bias=g_b)

        return DualValue(out, pullback)


# =============================================================================
# 参数树工具：冻结 dataclass / list / tuple / dict 组成的树，叶子为 ndarray
# =============================================================================


def _join(prefix: str, name: Any) -> str:
    return f"{prefix}.{name}" if prefix else str(name)


def tree_leaves(tree: Any, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
    """按确定顺序遍历所有 ndarray 叶子，产出 (路径, 数组)"""
    if isinstance(tree, np.ndarray):
        yield prefix, tree
    elif is_dataclass(tree) and not isinstance(tree, type):
        for f in fields(tree):
            yield from tree_leaves(getattr(tree, f.name), _join(prefix, f.name))
    elif isinstance(tree, (list, tuple)):
        for i, item in enumerate(tree):
            yield from tree_leaves(item, _join(prefix, i))
    elif isinstance(tree, dict):
        for key in sorted(tree, key=str):
            yield from tree_leaves(tree[key], _join(prefix, key))


def tree_map_with_path(fn: Callable[..., Tensor], tree: Any, *rest: Any, prefix: str = "") -> Any:
    """对每个 ndarray 叶子应用 fn(路径, 叶子, *其余树的对应叶子)，非数组字段原样保留"""
    if isinstance(tree, np.ndarray):
        return fn(prefix, tree, *rest)
    if is_dataclass(tree) and not isinstance(tree, type):
        updates = {
            f.name: tree_map_with_path(
                fn,
                getattr(tree, f.name),
                *[getattr(r, f.name) for r in rest],
                prefix=_join(prefix, f.name),
            )
            for f in fields(tree)
        }
        return replace(tree, **updates)
    if isinstance(tree, (list, tuple)):
        mapped = [
            tree_map_with_path(fn, item, *[r[i] for r in rest], prefix=_join(prefix, i))
            for i, item in enumerate(tree)
        ]
        return type(tree)(mapped)
    if isinstance(tree, dict):
        return {
            key: tree_map_with_path(fn, tree[key], *[r[key] for r in rest], prefix=_join(prefix, key))
            for key in tree
        }
    return tree


def tree_map(fn: Callable[..., Tensor], tree: Any, *rest: Any) -> Any:
    return tree_map_with_path(lambda _path, *leaves: fn(*leaves), tree, *rest)


def tree_size(tree: Any) -> int:
    """叶子元素总数（即参数量）"""
    return sum(leaf.size for _, leaf in tree_leaves(tree))


def tree_zeros_like(tree: Any) -> Any:
    return tree_map(np.zeros_like, tree)


def tree_add(a: Any, b: Any) -> Any:
    return tree_map(lambda x, y: x + y, a, b)


def tree_axpy(alpha: float, x: Any, y: Any) -> Any:
    """返回 y + alpha·x（逐叶子）"""
    return tree_map(lambda xi, yi: yi + alpha * xi, x, y)


# =============================================================================
# 梯度校验
# =============================================================================


def _scalar_value(dual: DualValue) -> float:
    value = np.asarray(dual.value, dtype=np.float64)
    if value.size != 1:
        raise EvaluationError(f"grad_check 需要标量函数，实际输出形状 {value.shape}")
    value = float(value.reshape(()))
    if not np.isfinite(value):
        raise EvaluationError(f"被检查函数返回非有限值: {value}")
    return value


def grad_check(
    f: Callable[..., DualValue],
    inputs: Sequence[Any],
    step: Optional[float] = None,
    coords_per_leaf: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    用中心差分检查解析梯度。

    Args:
        f: 接收 *inputs，返回标量 DualValue；pullback(1.0) 返回与 inputs 对齐的梯度（可为参数树）
        inputs: 张量或参数树序列
        step: 差分步长，默认 1e-5
        coords_per_leaf: 每个叶子随机抽查的坐标数；None 表示检查全部坐标
        seed: 抽查坐标的随机种子

    Returns:
        float: 各输入中最大的相对误差 ‖a−n‖ / max(‖a‖, ‖n‖, 1e-10)，
            每个输入的所有抽查坐标合并计算
    """
    h = config.GRAD_CHECK_STEP if step is None else step
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    dual = f(*inputs)
    _scalar_value(dual)
    analytic = dual.pullback(np.ones_like(np.asarray(dual.value, dtype=np.float64)))
    if not isinstance(analytic, tuple):
        analytic = (analytic,)

    worst = 0.0
    for pos, (tree, grad_tree) in enumerate(zip(inputs, analytic)):
        grads = dict(tree_leaves(grad_tree))
        selected_all = []
        numeric_all = []
        for path, leaf in tree_leaves(tree):
            if path not in grads or grads[path] is None:
                raise EvaluationError(f"第 {pos} 个输入缺少叶子 '{path}' 的梯度")
            if coords_per_leaf is None or coords_per_leaf >= leaf.size:
                coords = np.arange(leaf.size)
            else:
                coords = rng.choice(leaf.size, size=coords_per_leaf, replace=False)

            for c in coords:
                values = []
                for sign in (1.0, -1.0):
                    bumped = leaf.copy()
                    bumped.flat[c] += sign * h

                    def swap(p, a, target=path, new=bumped):
                        return new if p == target else a

                    perturbed = list(inputs)
                    perturbed[pos] = tree_map_with_path(swap, tree)
                    values.append(_scalar_value(f(*perturbed)))
                numeric_all.append((values[0] - values[1]) / (2.0 * h))
            selected_all.append(np.asarray(grads[path]).reshape(-1)[coords])

        # 同一输入的所有抽查坐标合并成一个向量再比较
        selected = np.concatenate(selected_all) if selected_all else np.zeros(0)
        numeric = np.asarray(numeric_all)
        denom = max(np.linalg.norm(selected), np.linalg.norm(numeric), 1e-10)
        err = float(np.linalg.norm(selected - numeric) / denom)
        logging.debug(f"grad_check: 输入 {pos} 共 {numeric.size} 个坐标，相对误差 {err:.3e}")
        worst = max(worst, err)
    return worst
