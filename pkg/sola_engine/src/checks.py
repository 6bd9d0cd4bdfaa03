"""
验收检查

CheckSuite 维护一组具名检查：基准等价、特化、结合律、HSB 空操作、梯度校验、
参数量/计算量、复杂度增长指数、作用范围定律。每个检查返回 CheckResult。
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from .attention_kernels import (
    AttentionInputs,
    SimilarityKernel,
    elu_feature,
    kernel_attention,
    linear_attention,
    linear_attention_quadratic,
    softmax_attention,
)
from .backbone import SolaModel, build, forward_vjp, route_shapes
from .bridge import HsbParams, hidden_state_bridge_vjp
from .config import config
from .flops import count_flops, count_params, growth_exponents, scaling_curve
from .layers.base_layer import TokenGrid
from .layers.softmax_layer import SoftmaxLayer
from .layers.wkv_linear import WkvLinearLayer, wkv_naive, wkv_scan
from .numerics import DualValue, grad_check, relative_error, tree_map
from .range_analysis import continuous_variance, fit_sqrt_scaling, stack
from .schedule import BackboneConfig, HsbRoute, load_preset

# 各预设的参考参数量与计算量
REFERENCE_TOTALS = {
    "sola_t": (6.59e6, 1.89e9),
    "sola_s": (30.69e6, 5.43e9),
    "sola_b": (88.26e6, 14.96e9),
}
PARAM_TOLERANCE = 0.05
FLOP_TOLERANCE = 0.15
SCALING_RESOLUTIONS = (224, 448, 672, 896, 1024)
# SoLA-T 在 224² 下各路由的 (源隐状态形状, 桥接输出形状)
REFERENCE_ROUTE_SHAPES = {
    "sola_t": [((3136, 96), (196, 192)), ((784, 128), (196, 192)), ((196, 192), (49, 256))],
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    wall_time_s: float = 0.0


CheckFn = Callable[[], CheckResult]


def _result(name: str, value: float, threshold: float, passed: bool, detail: str = "") -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), value=float(value), threshold=float(threshold), detail=detail)


def stress_instances(seed: int, count: int = 100, max_tokens: int = 256, max_channels: int = 16):
    """随机 WKV 实例，其中一部分键取 ±30 与 ±750"""
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = int(rng.integers(1, max_tokens + 1))
        d = int(rng.integers(1, max_channels + 1))
        k = rng.normal(size=(n, d))
        if i % 4 == 1:
            k = np.where(rng.random((n, d)) < 0.5, 30.0, -30.0)
        elif i % 4 == 3:
            k = np.where(rng.random((n, d)) < 0.5, 750.0, -750.0)
        yield k, rng.normal(size=(n, d)), rng.normal(size=d) * 0.5, rng.normal(size=d) * 0.5


def micro_loss(model: SolaModel, image: np.ndarray, direction: np.ndarray) -> Callable:
    """返回 f(params, image) = ⟨pooled, direction⟩ 的 DualValue 函数"""

    def f(params, img):
        features, _ = forward_vjp(model, img, params)

        def pullback(g):
            return features.pullback(g * direction)[::-1]

        return DualValue(float(features.value @ direction), pullback)

    return f


def _layer_loss(layer, grid_shape):
    h, w = grid_shape

    def f(params, tokens):
        step = layer.forward_vjp(params, TokenGrid(tokens, h, w))

        def pullback(g):
            g_x, g_params = step.pullback(np.full_like(step.value.tokens, float(g)))
            return g_params, g_x

        return DualValue(float(np.sum(step.value.tokens)), pullback)

    return f


def drop_routes(model: SolaModel) -> SolaModel:
    """同一组参数，去掉所有 HSB 路由"""
    cfg = model.cfg.model_copy(update={"hsb_routes": []})
    return SolaModel(cfg, model.layers, replace(model.params, bridges=[]))


def silence_bridges(model: SolaModel) -> SolaModel:
    """把所有 W_HSB 置零"""
    bridges = [replace(b, proj=tree_map(np.zeros_like, b.proj)) for b in model.params.bridges]
    return model.with_params(replace(model.params, bridges=bridges))


class CheckSuite:
    """验收检查集合"""

    def __init__(self, cfg: Optional[BackboneConfig] = None, seed: Optional[int] = None, inject_fault: bool = False):
        """
        Args:
            cfg: 用于 HSB 路由形状检查的配置，默认 sola_t
            seed: 随机种子
            inject_fault: True 时 WKV 扫描去掉最大值平移，用于验证检查能发现故障
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.cfg = cfg
        self.seed = config.DEFAULT_SEED if seed is None else seed
        self.inject_fault = inject_fault
        self._checks: Dict[str, CheckFn] = {}
        self._register_checks()

    def _register_checks(self):
        """注册所有检查"""
        self._checks["wkv_oracle"] = self.check_wkv_oracle
        self._checks["kernel_specialization"] = self.check_kernel_specialization
        self._checks["linear_associativity"] = self.check_linear_associativity
        self._checks["hsb_noop"] = self.check_hsb_noop
        self._checks["hsb_route_shapes"] = self.check_hsb_route_shapes
        self._checks["grad_wkv_layer"] = self.check_grad_wkv_layer
        self._checks["grad_softmax_layer"] = self.check_grad_softmax_layer
        self._checks["grad_hsb"] = self.check_grad_hsb
        self._checks["grad_micro_backbone"] = self.check_grad_micro_backbone
        for name in REFERENCE_TOTALS:
            self._checks[f"params_{name}"] = lambda n=name: self.check_params(n)
            self._checks[f"flops_{name}"] = lambda n=name: self.check_flops(n)
        self._checks["scaling_exponents"] = self.check_scaling_exponents
        self._checks["range_law"] = self.check_range_law
        self._checks["range_variance"] = self.check_range_variance
        self.logger.debug(f"已注册 {len(self._checks)} 项检查")

    def get_check_names(self) -> List[str]:
        return list(self._checks.keys())

    def run(self, name: str) -> CheckResult:
        check = self._checks.get(name)
        if check is None:
            raise KeyError(f"未知检查: {name}")
        start = time.perf_counter()
        try:
            result = check()
        except Exception as e:
            self.logger.error(f"检查 {name} 异常: {e}", exc_info=True)
            result = _result(name, float("nan"), float("nan"), False, f"异常: {e}")
        result.wall_time_s = time.perf_counter() - start
        status = "通过" if result.passed else "失败"
        self.logger.info(f"检查 {name}: {status}（值 {result.value:.3e}，阈值 {result.threshold:.3e}）")
        return result

    def run_all(self, names: Optional[List[str]] = None) -> List[CheckResult]:
        return [self.run(name) for name in (names or self.get_check_names())]

    # --- 数值等价 ---

    def check_wkv_oracle(self) -> CheckResult:
        worst = 0.0
        count = 0
        for k, v, w, u in stress_instances(self.seed):
            fast = wkv_scan(k, v, w, u, stabilize=not self.inject_fault)
            slow = wkv_naive(k, v, w, u)
            err = relative_error(fast, slow) if np.all(np.isfinite(fast)) else float("inf")
            worst = max(worst, err)
            count += 1
        return _result("wkv_oracle", worst, 1e-8, worst <= 1e-8, f"{count} 个实例")

    def check_kernel_specialization(self) -> CheckResult:
        rng = np.random.default_rng(self.seed)
        worst = 0.0
        for n in (1, 5, 17, 32):
            d = int(rng.integers(1, 9))
            inp = AttentionInputs.from_arrays(*(rng.normal(size=(n, d)) * 0.5 for _ in range(3)))
            worst = max(worst, float(np.max(np.abs(kernel_attention(inp, SimilarityKernel.exponential()) - softmax_attention(inp)))))
        return _result("kernel_specialization", worst, 1e-12, worst <= 1e-12)

    def check_linear_associativity(self) -> CheckResult:
        rng = np.random.default_rng(self.seed)
        inp = AttentionInputs.from_arrays(*(rng.normal(size=(16, 8)) for _ in range(3)))
        right, _ = linear_attention(inp, elu_feature)
        left = linear_attention_quadratic(inp, elu_feature)
        err = float(np.max(np.abs(right - left)))
        return _result("linear_associativity", err, 1e-10, err <= 1e-10)

    # --- HSB ---

    def _micro(self) -> BackboneConfig:
        return load_preset("micro")

    def check_hsb_noop(self) -> CheckResult:
        model = silence_bridges(build(self._micro(), seed=self.seed))
        image = np.random.default_rng(self.seed).normal(size=(32, 32, 3))
        bridged, _ = forward_vjp(model, image)
        plain, _ = forward_vjp(drop_routes(model), image)
        same = np.array_equal(bridged.value, plain.value)
        diff = float(np.max(np.abs(bridged.value - plain.value)))
        return _result("hsb_noop", diff, 0.0, same)

    def check_hsb_route_shapes(self) -> CheckResult:
        """224² 下每条路由的源/目标形状；预设有参考值时须逐条相等"""
        cfg = self.cfg or load_preset("sola_t")
        shapes = route_shapes(cfg, 224)
        expected = REFERENCE_ROUTE_SHAPES.get(cfg.name)
        bad = [str(r) for r, (src, dst) in zip(cfg.hsb_routes, shapes) if src[0] < dst[0]]
        if expected is not None and shapes != expected:
            bad.append(f"形状 {shapes} 与参考值 {expected} 不符")
        detail = "; ".join(
            f"{r}: {src[0]}×{src[1]} → {dst[0]}×{dst[1]}" for r, (src, dst) in zip(cfg.hsb_routes, shapes)
        )
        return _result("hsb_route_shapes", len(bad), 0, not bad, detail)

    # --- 梯度 ---

    def check_grad_wkv_layer(self) -> CheckResult:
        rng = np.random.default_rng(self.seed)
        layer = WkvLinearLayer(6, channel_mix_ratio=2)
        params = _perturb_biases(layer.init_params(rng), rng)
        err = grad_check(_layer_loss(layer, (2, 2)), [params, rng.normal(size=(4, 6))])
        return _result("grad_wkv_layer", err, 1e-4, err <= 1e-4)

    def check_grad_softmax_layer(self) -> CheckResult:
        rng = np.random.default_rng(self.seed)
        layer = SoftmaxLayer(8, heads=2, mlp_ratio=2)
        params = _perturb_biases(layer.init_params(rng), rng)
        err = grad_check(_layer_loss(layer, (2, 2)), [params, rng.normal(size=(4, 8))])
        return _result("grad_softmax_layer", err, 1e-4, err <= 1e-4)

    def check_grad_hsb(self) -> CheckResult:
        rng = np.random.default_rng(self.seed)
        bridge = HsbParams.init(rng, HsbRoute(src=(1, 1), dst=(2, 1)), 4, 6)

        def f(p, src, dst):
            out = hidden_state_bridge_vjp(src, dst, p)

            def pullback(g):
                g_src, g_dst, g_p = out.pullback(np.full_like(out.value, float(g)))
                return g_p, g_src, g_dst

            return DualValue(float(np.sum(out.value)), pullback)

        err = grad_check(f, [bridge, rng.normal(size=(16, 4)), rng.normal(size=(4, 6))])
        return _result("grad_hsb", err, 1e-4, err <= 1e-4)

    def check_grad_micro_backbone(self) -> CheckResult:
        rng = np.random.default_rng(self.seed)
        model = build(self._micro(), seed=self.seed)
        image = rng.normal(size=(32, 32, 3))
        direction = rng.normal(size=model.cfg.stage_dims[-1])
        err = grad_check(micro_loss(model, image, direction), [model.params, image], coords_per_leaf=3, seed=self.seed)
        return _result("grad_micro_backbone", err, 1e-3, err <= 1e-3)

    # --- 参数量与计算量 ---

    def check_params(self, name: str) -> CheckResult:
        expected = REFERENCE_TOTALS[name][0]
        actual = count_params(load_preset(name))
        dev = abs(actual - expected) / expected
        return _result(f"params_{name}", dev, PARAM_TOLERANCE, dev <= PARAM_TOLERANCE, f"{actual:,} vs {expected:,.0f}")

    def check_flops(self, name: str) -> CheckResult:
        expected = REFERENCE_TOTALS[name][1]
        actual = count_flops(load_preset(name), 224)
        dev = abs(actual - expected) / expected
        return _result(f"flops_{name}", dev, FLOP_TOLERANCE, dev <= FLOP_TOLERANCE, f"{actual:,} vs {expected:,.0f}")

    def check_scaling_exponents(self) -> CheckResult:
        cfg = self.cfg or load_preset("sola_t")
        exps = growth_exponents(scaling_curve(cfg, SCALING_RESOLUTIONS))
        passed = (
            exps["sola"] <= 1.25
            and exps["full_softmax"] >= 1.5
            and 0.98 <= exps["pure_linear"] <= 1.02
        )
        detail = ", ".join(f"{k}={v:.4f}" for k, v in exps.items())
        return _result("scaling_exponents", exps["sola"], 1.25, passed, detail)

    # --- 作用范围 ---

    def check_range_law(self) -> CheckResult:
        fit = fit_sqrt_scaling([4, 8, 16, 32, 64], w=1.0, epsilon=config.RANGE_EPSILON)
        passed = 0.42 <= fit.exponent <= 0.58 and fit.r_squared >= 0.98
        return _result("range_law", fit.exponent, 0.5, passed, f"R²={fit.r_squared:.5f}")

    def check_range_variance(self) -> CheckResult:
        rates = [0.1, 0.08, 0.05]
        measured = stack(rates).variance
        expected = continuous_variance(rates)
        dev = abs(measured - expected) / expected
        return _result("range_variance", dev, 0.02, dev <= 0.02, f"{measured:.4f} vs {expected:.4f}")


def _perturb_biases(params, rng: np.random.Generator):
    """把零初始化的偏置、位移和奖励换成小随机数，让梯度校验覆盖这些参数"""
    return tree_map(lambda a: a + 0.1 * rng.normal(size=a.shape), params)
