"""
子命令实现

每个 cmd_* 返回一个 RunReport；异常原样抛出，由 app.main 统一映射为退出码。
"""

import logging
import os
import time
from typing import List, Optional, Sequence

import numpy as np

from sola_engine import (
    CheckSuite,
    ToyTrainer,
    build,
    count_flops,
    count_params,
    forward,
    load_config,
    scaling_curve,
    schedule_ablation,
)
from sola_engine.src.checks import SCALING_RESOLUTIONS
from sola_engine.src.config import config as engine_config
from sola_engine.src.errors import FitError
from sola_engine.src.flops import growth_exponents
from sola_engine.src.range_analysis import fit_power_law, range_table
from sola_engine.src.schedule import BackboneConfig
from sola_engine.src.toy_task import make_toy_task
from sola_engine.src.utils import ensure_directory_exists, write_csv

from harness.config import HarnessConfig
from harness.models import EXIT_CHECK_FAILED, CheckResultModel, RunReport

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["variant", "resolution", "tokens", "flops"]
RANGE_COLUMNS = ["M", "sigma", "xi", "xi_predicted", "gaussian_error"]
PATTERN_COLUMNS = ["name", "pattern", "softmax_layers", "params", "flops"]
# 拟合 √M 规律时忽略的浅层深度
RANGE_FIT_MIN_DEPTH = 4


def load_backbone(config_path: Optional[str], no_hsb: bool = False) -> BackboneConfig:
    """加载配置；no_hsb 时关闭所有 HSB 路由"""
    cfg = load_config(config_path or HarnessConfig.DEFAULT_CONFIG)
    if no_hsb:
        cfg = cfg.model_copy(update={"hsb_enabled": False})
        logger.info(f"已关闭 {cfg.name} 的 HSB")
    return cfg


def _csv_path(out: Optional[str], command: str) -> str:
    """--out 以 .csv 结尾时直接使用，否则写到输出目录"""
    if out and out.lower().endswith(".csv"):
        return out
    return os.path.join(HarnessConfig.OUTPUT_DIR, f"{command}.csv")


def depth_grid(max_depth: int) -> List[int]:
    """1, 2, 4, ... 直到 max_depth（含）"""
    depths = []
    d = 1
    while d < max_depth:
        depths.append(d)
        d *= 2
    depths.append(max_depth)
    return depths


# --- forward ---


def cmd_forward(
    config_path: Optional[str] = None,
    resolution: int = 224,
    seed: Optional[int] = None,
    no_hsb: bool = False,
) -> RunReport:
    """
    随机初始化模型并在随机图像上做一次前向

    Returns:
        RunReport: metrics 含池化特征统计，details 含逐层轨迹
    """
    start = time.perf_counter()
    seed = engine_config.DEFAULT_SEED if seed is None else seed
    cfg = load_backbone(config_path, no_hsb)
    cfg.stage_grids(resolution)
    model = build(cfg, seed=seed)
    image = np.random.default_rng(seed).normal(size=(resolution, resolution, 3))
    logger.info(f"正在运行前向: {cfg.name} @ {resolution}×{resolution}")
    trace = forward(model, image)
    height, width, dim = trace.stage_shapes[-1]
    metrics = {
        "params": float(model.num_params()),
        "flops": float(count_flops(cfg, resolution)),
        "layers": float(len(trace.layers)),
        "final_height": float(height),
        "final_width": float(width),
        "final_dim": float(dim),
        "pooled_norm": float(np.linalg.norm(trace.pooled)),
        "pooled_mean": float(np.mean(trace.pooled)),
    }
    details = trace.to_report()
    details["pooled"] = [float(x) for x in trace.pooled]
    return RunReport(
        command="forward",
        config_digest=cfg.digest(),
        metrics=metrics,
        details=details,
        wall_time_s=time.perf_counter() - start,
    )


# --- check ---


def cmd_check(
    config_path: Optional[str] = None,
    seed: Optional[int] = None,
    inject_fault: bool = False,
    names: Optional[Sequence[str]] = None,
) -> RunReport:
    """运行验收检查，任一失败时 exit_code 为 1"""
    start = time.perf_counter()
    cfg = load_backbone(config_path)
    suite = CheckSuite(cfg=cfg, seed=seed, inject_fault=inject_fault)
    results = suite.run_all(list(names) if names else None)
    checks = [CheckResultModel.from_check_result(r) for r in results]
    report = RunReport(
        command="check",
        config_digest=cfg.digest(),
        metrics={f"{c.name}": c.value for c in checks},
        checks=checks,
        wall_time_s=time.perf_counter() - start,
    )
    failed = report.failed_checks
    if failed:
        logger.error(f"以下检查未通过: {', '.join(failed)}")
        report.exit_code = EXIT_CHECK_FAILED
    else:
        logger.info(f"全部 {len(checks)} 项检查通过")
    return report


# --- bench ---


def cmd_bench(
    config_path: Optional[str] = None,
    resolutions: Optional[Sequence[int]] = None,
    out: Optional[str] = None,
    no_hsb: bool = False,
) -> RunReport:
    """三种变体的计算量曲线与增长指数，曲线写入 CSV"""
    start = time.perf_counter()
    cfg = load_backbone(config_path, no_hsb)
    resolutions = list(resolutions or SCALING_RESOLUTIONS)
    rows = scaling_curve(cfg, resolutions)
    csv_path = _csv_path(out, "bench")
    write_csv(csv_path, BENCH_COLUMNS, rows)
    metrics = {"params": float(count_params(cfg))}
    if len(set(resolutions)) >= 2:
        for name, exponent in growth_exponents(rows).items():
            metrics[f"exponent_{name}"] = exponent
    else:
        logger.warning("分辨率少于两个，跳过增长指数拟合")
    return RunReport(
        command="bench",
        config_digest=cfg.digest(),
        metrics=metrics,
        details={"csv": csv_path, "rows": len(rows), "resolutions": resolutions},
        wall_time_s=time.perf_counter() - start,
    )


# --- range ---


def cmd_range(
    w: float = 1.0,
    epsilon: Optional[float] = None,
    max_depth: int = 64,
    out: Optional[str] = None,
) -> RunReport:
    """叠加指数核的作用半径表与 √M 拟合"""
    start = time.perf_counter()
    epsilon = engine_config.RANGE_EPSILON if epsilon is None else epsilon
    rows = range_table(w, epsilon, depth_grid(max_depth))
    csv_path = _csv_path(out, "range")
    write_csv(csv_path, RANGE_COLUMNS, rows)
    metrics = {"w": float(w), "epsilon": float(epsilon), "xi_depth_1": float(rows[0]["xi"])}
    fit_rows = [r for r in rows if r["M"] >= RANGE_FIT_MIN_DEPTH]
    try:
        fit = fit_power_law([r["M"] for r in fit_rows], [r["xi"] for r in fit_rows])
        metrics.update({"exponent": fit.exponent, "constant": fit.constant, "r_squared": fit.r_squared})
        logger.info(f"拟合结果: ξ ≈ {fit.constant:.4f}·M^{fit.exponent:.4f}，R²={fit.r_squared:.5f}")
    except FitError as e:
        logger.warning(f"深度不足，跳过拟合: {e}")
    return RunReport(
        command="range",
        config_digest="",
        metrics=metrics,
        details={"csv": csv_path, "table": rows},
        wall_time_s=time.perf_counter() - start,
    )


# --- train-toy ---


def cmd_train_toy(
    config_path: Optional[str] = None,
    steps: int = 200,
    lr: float = 0.05,
    seed: Optional[int] = None,
) -> RunReport:
    """在合成二分类任务上训练，验证梯度贯通"""
    start = time.perf_counter()
    cfg = load_backbone(config_path or "micro")
    trainer = ToyTrainer(cfg, lr=lr, seed=seed)
    task = make_toy_task(seed=trainer.seed)
    result = trainer.train(task, steps)
    metrics = {
        "params": float(count_params(cfg)),
        "steps": float(steps),
        "lr": float(lr),
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "accuracy": result.accuracy,
    }
    return RunReport(
        command="train-toy",
        config_digest=cfg.digest(),
        metrics=metrics,
        details={"losses": result.losses, "class_counts": task.class_counts()},
        wall_time_s=time.perf_counter() - start,
    )


# --- patterns ---


def cmd_patterns(
    config_path: Optional[str] = None,
    stage: int = 3,
    resolution: int = 224,
    out: Optional[str] = None,
    isolate: bool = True,
) -> RunReport:
    """把某一阶段换成各命名调度，比较参数量与计算量；isolate 时其余阶段全为 L 层"""
    start = time.perf_counter()
    cfg = load_backbone(config_path)
    rows = schedule_ablation(cfg, stage_index=stage, resolution=resolution, isolate=isolate)
    csv_path = _csv_path(out, "patterns")
    write_csv(csv_path, PATTERN_COLUMNS, rows)
    return RunReport(
        command="patterns",
        config_digest=cfg.digest(),
        metrics={f"flops_{r['name']}": float(r["flops"]) for r in rows},
        details={"csv": csv_path, "table": rows, "isolate": isolate},
        wall_time_s=time.perf_counter() - start,
    )


def write_report(report: RunReport, out: Optional[str]):
    """--out 以 .json 结尾时把报告写入文件"""
    if not out or not out.lower().endswith(".json"):
        return
    ensure_directory_exists(os.path.dirname(out))
    with open(out, "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=HarnessConfig.REPORT_INDENT))
    logger.info(f"报告已写入: {out}")
