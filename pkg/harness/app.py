import argparse
import os
import sys
import logging
from typing import List, Optional

# 将项目根目录添加到 Python 路径中，确保可以导入 sola_engine 和 harness
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from sola_engine.src.errors import (
    ConfigError,
    ParameterError,
    ResolutionError,
    SamplingError,
    ToleranceError,
    TruncationError,
)
from sola_engine.src.utils import setup_logging
from harness import commands
from harness.config import HarnessConfig
from harness.models import EXIT_USAGE, ErrorReport, RunReport

# 这些异常说明输入不合法，退出码为 2
USAGE_ERRORS = (ConfigError, ResolutionError, ParameterError, TruncationError, ToleranceError, SamplingError)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"必须为正整数: {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"不能为负: {text}")
    return value


def create_parser() -> argparse.ArgumentParser:
    """
    构建命令行解析器
    """
    parser = argparse.ArgumentParser(prog="sola", description="SoLA 混合注意力骨干网络工具")
    parser.add_argument("--log-level", default=HarnessConfig.LOG_LEVEL, help="日志级别")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="随机初始化并运行一次前向")
    p.add_argument("--config", default=None, help="配置文件路径或预设名")
    p.add_argument("--resolution", type=_positive_int, default=224)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-hsb", action="store_true", help="关闭 HSB")
    p.add_argument("--out", default=None, help="报告输出路径（.json）")

    p = sub.add_parser("check", help="运行验收检查")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--inject-fault", action="store_true", help="去掉 WKV 扫描的最大值平移")
    p.add_argument("--only", nargs="+", default=None, help="只运行指定检查")
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench", help="计算量随分辨率的扩展曲线")
    p.add_argument("--config", default=None)
    p.add_argument("--resolution", type=_positive_int, nargs="+", default=None, dest="resolutions")
    p.add_argument("--no-hsb", action="store_true")
    p.add_argument("--out", default=None, help="CSV 或 JSON 输出路径")

    p = sub.add_parser("range", help="叠加衰减核的作用半径")
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-depth", type=_positive_int, default=64)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train-toy", help="在合成任务上训练")
    p.add_argument("--config", default="micro")
    p.add_argument("--steps", type=_non_negative_int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("patterns", help="比较单个阶段的不同调度")
    p.add_argument("--config", default=None)
    p.add_argument("--stage", type=int, choices=[1, 2, 3, 4], default=3)
    p.add_argument("--keep-stages", action="store_true", help="其余阶段保持原配置，不换成全 L")
    p.add_argument("--resolution", type=_positive_int, default=224)
    p.add_argument("--out", default=None)
    return parser


def dispatch(args: argparse.Namespace) -> RunReport:
    if args.command == "forward":
        return commands.cmd_forward(args.config, args.resolution, args.seed, args.no_hsb)
    if args.command == "check":
        return commands.cmd_check(args.config, args.seed, args.inject_fault, args.only)
    if args.command == "bench":
        return commands.cmd_bench(args.config, args.resolutions, args.out, args.no_hsb)
    if args.command == "range":
        return commands.cmd_range(args.w, args.epsilon, args.max_depth, args.out)
    if args.command == "train-toy":
        return commands.cmd_train_toy(args.config, args.steps, args.lr, args.seed)
    if args.command == "patterns":
        return commands.cmd_patterns(args.config, args.stage, args.resolution, args.out, isolate=not args.keep_stages)
    raise ValueError(f"未知命令: {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令行入口，返回退出码：0 成功，1 检查失败，2 用法或配置错误
    """
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    try:
        report = dispatch(args)
    except USAGE_ERRORS as e:
        field = getattr(e, "field", None) or ""
        logging.error(f"{args.command} 失败: {e}" + (f"（字段 {field}）" if field else ""))
        error = ErrorReport(command=args.command, error=str(e), field=field)
        print(error.model_dump_json(indent=HarnessConfig.REPORT_INDENT))
        return EXIT_USAGE
    except Exception as e:
        logging.error(f"{args.command} 发生未预期的错误: {e}", exc_info=True)
        raise

    commands.write_report(report, args.out)
    print(report.model_dump_json(indent=HarnessConfig.REPORT_INDENT))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
