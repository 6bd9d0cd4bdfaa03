from .src.config import SolaConfig, config
from .src.schedule import BackboneConfig, HsbRoute, SchedulePattern, load_config, load_preset
from .src.backbone import ForwardTrace, SolaModel, build, forward
from .src.flops import count_flops, count_params, scaling_curve, schedule_ablation
from .src.checks import CheckSuite
from .src.trainer import ToyTrainer

__all__ = [
    "SolaConfig",
    "config",
    "BackboneConfig",
    "HsbRoute",
    "SchedulePattern",
    "load_config",
    "load_preset",
    "SolaModel",
    "ForwardTrace",
    "build",
    "forward",
    "count_params",
    "count_flops",
    "scaling_curve",
    "schedule_ablation",
    "CheckSuite",
    "ToyTrainer",
]
