"""
层级调度与骨干网络配置

BackboneConfig 是 JSON 配置文件的 pydantic 模式。模式串字母表由 field_validator 检查，
HSB 路由两端的层类型与维度链由 model_validator 检查；违反时抛出带字段名的 ConfigError。
"""

import logging
import math
import os
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .config import config
from .errors import ConfigError, ResolutionError
from .utils import stable_digest

LINEAR = "L"
SOFTMAX = "S"
LAYER_KINDS = (LINEAR, SOFTMAX)
NUM_STAGES = 4

LayerPos = Tuple[int, int]

# 第 3 阶段的候选调度（6 层）
NAMED_SCHEDULES: Dict[str, str] = {
    "sola": "LLSLLS",
    "alternating": "LSLSLS",
    "stacked_last": "LLLSSS",
    "pure_linear": "LLLLLL",
    "full_softmax": "SSSSSS",
    "first_1": "SLLLLL",
    "first_2": "SSLLLL",
    "first_3": "SSSLLL",
    "last_1": "LLLLLS",
    "last_2": "LLLLSS",
}


def check_layer_kinds(stages: List[str]) -> List[str]:
    """每个阶段的模式串非空且只含 L / S"""
    for i, stage in enumerate(stages, start=1):
        if not stage:
            raise ConfigError(f"第 {i} 阶段的模式串为空", field="patterns")
        bad = sorted(set(stage) - set(LAYER_KINDS))
        if bad:
            raise ConfigError(f"第 {i} 阶段的模式串 '{stage}' 含非法字符 {bad}", field="patterns")
    return stages


def as_config_error(exc: ValidationError) -> ConfigError:
    """取出校验器抛出的 ConfigError；类型错误等转换为以首个出错字段命名的 ConfigError"""
    first = exc.errors()[0]
    cause = first.get("ctx", {}).get("error")
    if isinstance(cause, ConfigError):
        return cause
    loc = first.get("loc") or ("config",)
    return ConfigError(f"配置格式错误: {first['msg']}", field=str(loc[0]))


class SchedulePattern(BaseModel):
    """四个阶段的层类型串，例如 ["LL", "LL", "LLSLLS", "LS"]"""

    stages: List[str] = Field(..., min_length=NUM_STAGES, max_length=NUM_STAGES)

    @field_validator("stages")
    @classmethod
    def _known_kinds(cls, stages: List[str]) -> List[str]:
        return check_layer_kinds(stages)

    @classmethod
    def parse(cls, text: str) -> "SchedulePattern":
        """
        解析 "LL/LL/LLSLLS/LS" 形式的字符串

        Raises:
            ConfigError: 阶段数不为 4 或含非法字符
        """
        try:
            return cls(stages=[s.strip() for s in text.split("/")])
        except ValidationError as e:
            raise as_config_error(e) from e

    def kind(self, stage: int, layer: int) -> str:
        """(stage, layer) 均从 1 开始"""
        return self.stages[stage - 1][layer - 1]

    def positions(self) -> List[LayerPos]:
        """按网络顺序列出所有层位置"""
        return [(s, j) for s, stage in enumerate(self.stages, start=1) for j in range(1, len(stage) + 1)]

    def __str__(self) -> str:
        return "/".join(self.stages)


class HsbRoute(BaseModel):
    """Hidden State Bridge 路由：src 为 L 层，dst 为其后的 S 层"""

    src: LayerPos
    dst: LayerPos

    def __str__(self) -> str:
        return f"({self.src[0]},{self.src[1]})L→({self.dst[0]},{self.dst[1]})S"


class BackboneConfig(BaseModel):
    """
    四阶段 SoLA 骨干网络配置

    构造时即完成全部校验；校验失败时 pydantic 抛出 ValidationError，
    经 parse_config / validate_config 转换为 ConfigError。
    """

    name: str = "custom"
    patch_size: int = Field(default=4, ge=1)
    stem_dim: int = Field(..., ge=1)
    stage_dims: List[int] = Field(..., min_length=NUM_STAGES, max_length=NUM_STAGES)
    patterns: List[str] = Field(..., min_length=NUM_STAGES, max_length=NUM_STAGES)
    hsb_routes: List[HsbRoute] = Field(default_factory=list)
    mlp_ratio: int = Field(default=4, ge=1)
    channel_mix_ratio: int = Field(default=4, ge=1)
    head_divisor: int = Field(default=32, ge=1)
    hsb_enabled: bool = True

    @field_validator("patterns")
    @classmethod
    def _known_kinds(cls, patterns: List[str]) -> List[str]:
        return check_layer_kinds(patterns)

    @model_validator(mode="after")
    def _check_dims(self) -> "BackboneConfig":
        if any(d < 1 for d in self.stage_dims):
            raise ConfigError(f"阶段维度必须为正: {self.stage_dims}", field="stage_dims")
        if self.stage_dims[0] != self.stem_dim:
            raise ConfigError(
                f"第 1 阶段维度 {self.stage_dims[0]} 须等于 stem_dim {self.stem_dim}", field="stage_dims"
            )
        if any(b < a for a, b in zip(self.stage_dims, self.stage_dims[1:])):
            raise ConfigError(f"阶段维度不能随下采样减小: {self.stage_dims}", field="stage_dims")
        for s in range(1, NUM_STAGES + 1):
            if SOFTMAX in self.patterns[s - 1] and self.stage_dims[s - 1] % self.heads(s) != 0:
                raise ConfigError(
                    f"第 {s} 阶段维度 {self.stage_dims[s - 1]} 不能被头数 {self.heads(s)} 整除",
                    field="head_divisor",
                )
        return self

    @model_validator(mode="after")
    def _check_routes(self) -> "BackboneConfig":
        order = {pos: i for i, pos in enumerate(self.schedule.positions())}
        for route in self.hsb_routes:
            for end, pos in (("src", route.src), ("dst", route.dst)):
                if pos not in order:
                    raise ConfigError(f"HSB 路由 {route} 的 {end} {pos} 不在模式串范围内", field="hsb_routes")
            if self.layer_kind(*route.src) != LINEAR:
                raise ConfigError(f"HSB 路由 {route} 的源 {route.src} 不是 L 层", field="hsb_routes")
            if self.layer_kind(*route.dst) != SOFTMAX:
                raise ConfigError(f"HSB 路由 {route} 的目标 {route.dst} 不是 S 层", field="hsb_routes")
            if order[route.dst] <= order[route.src]:
                raise ConfigError(f"HSB 路由 {route} 的目标必须位于源之后", field="hsb_routes")
        return self

    @property
    def schedule(self) -> SchedulePattern:
        return SchedulePattern(stages=self.patterns)

    def layer_kind(self, stage: int, layer: int) -> str:
        return self.schedule.kind(stage, layer)

    def heads(self, stage: int) -> int:
        """每阶段的注意力头数：dim / head_divisor，至少为 1"""
        return max(1, self.stage_dims[stage - 1] // self.head_divisor)

    def stage_grids(self, height: int, width: Optional[int] = None) -> List[Tuple[int, int]]:
        """
        每个阶段的 token 网格边长。奇数边长在下采样前补零到偶数。

        Raises:
            ResolutionError: 输入边长不能被 patch_size 整除
        """
        width = height if width is None else width
        if height < 1 or width < 1 or height % self.patch_size or width % self.patch_size:
            raise ResolutionError(f"输入分辨率 {height}×{width} 不能被 patch 大小 {self.patch_size} 整除")
        grids = [(height // self.patch_size, width // self.patch_size)]
        for _ in range(NUM_STAGES - 1):
            h, w = grids[-1]
            grids.append((math.ceil(h / 2), math.ceil(w / 2)))
        return grids

    def digest(self) -> str:
        return stable_digest(self.model_dump(mode="json"))

    # --- 变体 ---

    def with_patterns(self, patterns: List[str], name: Optional[str] = None) -> "BackboneConfig":
        """替换模式串，丢弃两端层类型不再匹配的 HSB 路由；结果重新校验"""
        schedule = SchedulePattern.parse("/".join(patterns))
        kept = []
        for route in self.hsb_routes:
            try:
                if schedule.kind(*route.src) == LINEAR and schedule.kind(*route.dst) == SOFTMAX:
                    kept.append(route)
            except IndexError:
                continue
        data = self.model_dump()
        data.update(patterns=list(patterns), name=name or self.name, hsb_routes=[r.model_dump() for r in kept])
        return validate_config(data)

    def with_stage_pattern(self, stage: int, pattern: str, name: Optional[str] = None) -> "BackboneConfig":
        patterns = list(self.patterns)
        patterns[stage - 1] = pattern
        return self.with_patterns(patterns, name=name or f"{self.name}[{stage}:{pattern}]")


def full_softmax_variant(cfg: BackboneConfig) -> BackboneConfig:
    """同深度、全部为 S 层、无 HSB 路由"""
    patterns = [SOFTMAX * len(p) for p in cfg.patterns]
    return cfg.with_patterns(patterns, name=f"{cfg.name}-full-softmax")


def pure_linear_variant(cfg: BackboneConfig) -> BackboneConfig:
    """同深度、全部为 L 层、无 HSB 路由"""
    patterns = [LINEAR * len(p) for p in cfg.patterns]
    return cfg.with_patterns(patterns, name=f"{cfg.name}-pure-linear")


def validate_config(data: Dict[str, Any]) -> BackboneConfig:
    """从字典构造并校验配置"""
    try:
        return BackboneConfig.model_validate(data)
    except ValidationError as e:
        raise as_config_error(e) from e


def parse_config(payload: str) -> BackboneConfig:
    """从 JSON 文本解析并校验配置；非法 JSON 同样报为 ConfigError"""
    try:
        return BackboneConfig.model_validate_json(payload)
    except ValidationError as e:
        raise as_config_error(e) from e


def load_config(path: str) -> BackboneConfig:
    """读取 JSON 配置文件；path 也可以是预设名（如 "sola_t"）"""
    if not os.path.exists(path):
        preset_path = os.path.join(config.PRESET_DIR, f"{path}.json")
        if not os.path.exists(preset_path):
            raise ConfigError(f"配置文件不存在: {path}", field="config")
        path = preset_path
    with open(path, "r", encoding="utf-8") as f:
        cfg = parse_config(f.read())
    logging.info(f"已加载配置 {cfg.name}: {'/'.join(cfg.patterns)}，{len(cfg.hsb_routes)} 条 HSB 路由")
    return cfg


def load_preset(name: str) -> BackboneConfig:
    return load_config(os.path.join(config.PRESET_DIR, f"{name}.json"))


def list_presets() -> List[str]:
    return sorted(f[:-5] for f in os.listdir(config.PRESET_DIR) if f.endswith(".json"))
