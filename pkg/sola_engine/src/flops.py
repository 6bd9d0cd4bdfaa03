"""
参数量与计算量统计

1 次乘加记为 1 FLOP；只统计骨干网络（不含分类头）。
除 softmax 注意力的 2·N²·D 外，各项都与 token 数成正比。
"""

import logging
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
from scipy import stats

from .backbone import SolaModel, flop_table, param_table
from .errors import FitError
from .schedule import LINEAR, NAMED_SCHEDULES, BackboneConfig, full_softmax_variant, pure_linear_variant

ModelOrConfig = Union[SolaModel, BackboneConfig]

SCALING_VARIANTS = ("sola", "full_softmax", "pure_linear")


def _config_of(target: ModelOrConfig) -> BackboneConfig:
    return target.cfg if isinstance(target, SolaModel) else target


def count_params(target: ModelOrConfig) -> int:
    """
    参数总数

    Args:
        target: 已构建的模型（统计实际分配的参数）或配置（只按形状统计）
    """
    if isinstance(target, SolaModel):
        return target.num_params()
    return int(sum(param_table(target).values()))


def count_flops(target: ModelOrConfig, resolution: int, width: Optional[int] = None) -> int:
    """给定输入分辨率时的乘加总数"""
    table = flop_table(_config_of(target), resolution, width)
    return int(sum(table.values()))


def variants_of(cfg: BackboneConfig) -> Dict[str, BackboneConfig]:
    return {
        "sola": cfg,
        "full_softmax": full_softmax_variant(cfg),
        "pure_linear": pure_linear_variant(cfg),
    }


def scaling_curve(
    cfg: BackboneConfig, resolutions: Iterable[int], variants: Iterable[str] = SCALING_VARIANTS
) -> List[Dict[str, Union[str, int]]]:
    """
    各变体在不同分辨率下的计算量

    Returns:
        List[Dict]: 每行 {variant, resolution, tokens, flops}，行数 = 分辨率数 × 变体数
    """
    configs = variants_of(cfg)
    rows = []
    for name in variants:
        variant = configs[name]
        for res in resolutions:
            grid = variant.stage_grids(res)[0]
            rows.append(
                {
                    "variant": name,
                    "resolution": int(res),
                    "tokens": grid[0] * grid[1],
                    "flops": count_flops(variant, res),
                }
            )
    logging.info(f"已计算 {cfg.name} 的扩展曲线: {len(rows)} 行")
    return rows


def fit_growth_exponent(tokens: List[int], flops: List[int]) -> float:
    """log FLOPs 对 log token 数的最小二乘斜率"""
    if len(tokens) < 2 or len(set(tokens)) < 2:
        raise FitError(f"拟合增长指数至少需要两个不同的 token 数，实际为 {tokens}")
    fit = stats.linregress(np.log(np.asarray(tokens, dtype=np.float64)), np.log(np.asarray(flops, dtype=np.float64)))
    return float(fit.slope)


def growth_exponents(rows: List[Dict[str, Union[str, int]]]) -> Dict[str, float]:
    """按变体分组拟合增长指数"""
    out = {}
    for name in dict.fromkeys(r["variant"] for r in rows):
        subset = [r for r in rows if r["variant"] == name]
        out[name] = fit_growth_exponent([r["tokens"] for r in subset], [r["flops"] for r in subset])
    return out


def schedule_ablation(
    cfg: BackboneConfig,
    stage_index: int = 3,
    patterns: Optional[Dict[str, str]] = None,
    resolution: int = 224,
    isolate: bool = True,
) -> List[Dict[str, Union[str, int]]]:
    """
    把某个阶段的模式串替换为各候选后统计参数量与计算量

    Args:
        cfg: 基础配置
        stage_index: 被替换的阶段（从 1 开始）
        patterns: 名称 → 模式串；默认使用与该阶段层数相同的命名调度
        resolution: 输入分辨率
        isolate: True 时其余阶段全部换成 L 层，只比较该阶段；False 时其余阶段保持原配置

    Returns:
        List[Dict]: 每行 {name, pattern, softmax_layers, params, flops}
    """
    depth = len(cfg.patterns[stage_index - 1])
    if patterns is None:
        patterns = {name: p for name, p in NAMED_SCHEDULES.items() if len(p) == depth}
    base = cfg
    if isolate:
        others = [p if s == stage_index else LINEAR * len(p) for s, p in enumerate(cfg.patterns, start=1)]
        base = cfg.with_patterns(others)
    rows = []
    for name, pattern in patterns.items():
        variant = base.with_stage_pattern(stage_index, pattern, name=f"{cfg.name}-{name}")
        rows.append(
            {
                "name": name,
                "pattern": "/".join(variant.patterns),
                "softmax_layers": pattern.count("S"),
                "params": count_params(variant),
                "flops": count_flops(variant, resolution),
            }
        )
    logging.info(f"调度消融: 第 {stage_index} 阶段 {len(rows)} 种模式")
    return rows
