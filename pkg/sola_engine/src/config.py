import os
from dataclasses import dataclass
from typing import Tuple
from dotenv import load_dotenv

# 在模块加载时立即加载 .env 文件，确保环境变量可用
load_dotenv()

_PACKAGE_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@dataclass(frozen=True)
class SolaConfig:
    """
    SoLA 引擎配置类。
    使用 dataclass 的 frozen=True 使配置对象不可变，防止在运行时意外修改。
    模型结构（各阶段维度、调度模式、HSB 路由）不在这里，见 presets/*.json。
    """

    # --- 路径配置 ---
    PRESET_DIR: str = os.path.join(_PACKAGE_ROOT, "presets")
    OUTPUT_DIR: str = os.getenv("SOLA_OUTPUT_DIR", "outputs")

    # --- 日志配置 ---
    LOG_LEVEL: str = os.getenv("SOLA_LOG_LEVEL", "INFO")
    LOG_EVERY: int = 20

    # --- 数值配置 ---
    LAYER_NORM_EPS: float = 1e-6
    GRAD_CHECK_STEP: float = 1e-5
    # 扫描状态的初始指数（代替 -inf，避免 inf - inf）
    STATE_SENTINEL: float = -1e38

    # --- 主干网络配置 ---
    POS_EMBED_GRID: int = 56
    # WKV 衰减参数 w 的初始化：按通道线性铺开在该区间内
    DECAY_RAMP: Tuple[float, float] = (1.0, 8.0)
    EMBED_INIT_STD: float = 0.02
    DEFAULT_SEED: int = int(os.getenv("SOLA_SEED", 0))

    # --- 玩具训练任务配置 ---
    TOY_MAX_PARAMS: int = 500_000
    TOY_IMAGE_SIZE: int = 32
    TOY_SAMPLES_PER_CLASS: int = 8
    TOY_MIN_BLOB_DISTANCE: float = 16.0
    TOY_BLOB_SIGMA: float = 1.5

    # --- 作用范围分析配置 ---
    RANGE_EPSILON: float = 1e-3
    # 截断半径至少为 TRUNCATION_FACTOR / w，使尾部质量 < 1e-10
    TRUNCATION_FACTOR: float = 25.0

    # --- 输出格式 ---
    CSV_FLOAT_FORMAT: str = "%.17g"


# 创建一个全局配置实例，方便其他模块导入和使用
config = SolaConfig()
