import os

from sola_engine.src.config import config as engine_config


class HarnessConfig:
    """
    命令行工具配置类。
    输出目录与日志级别沿用引擎配置（SOLA_OUTPUT_DIR / SOLA_LOG_LEVEL），其余属性可通过环境变量覆盖。
    """

    OUTPUT_DIR = engine_config.OUTPUT_DIR
    LOG_LEVEL = engine_config.LOG_LEVEL
    DEFAULT_CONFIG = os.getenv("SOLA_DEFAULT_CONFIG", "sola_t")
    REPORT_INDENT = int(os.getenv("SOLA_REPORT_INDENT", 2))
