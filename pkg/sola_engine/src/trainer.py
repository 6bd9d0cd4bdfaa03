"""
玩具训练

在骨干网络上接一个池化 + 线性的二分类头，用全批量梯度下降（固定学习率）训练交叉熵。
只用于验证梯度能贯穿各个模块，不追求精度。
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from .backbone import BackboneParams, SolaModel, build, forward_vjp
from .config import config
from .errors import ConfigError
from .flops import count_params
from .numerics import LinearProjection, Tensor, tree_add, tree_axpy, tree_zeros_like
from .schedule import BackboneConfig
from .toy_task import NUM_CLASSES, ToyTask


@dataclass(frozen=True)
class ClassifierParams:
    backbone: BackboneParams
    head: LinearProjection


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    accuracy: float = 0.0

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def cross_entropy(logits: Tensor, label: int) -> Tuple[float, Tensor]:
    """返回 (损失, 对 logits 的梯度)；用 log-softmax 计算，概率下溢时损失仍有限"""
    log_probs = special.log_softmax(logits)
    grad = np.exp(log_probs)
    grad[label] -= 1.0
    return float(-log_probs[label]), grad


class ToyTrainer:
    """全批量梯度下降训练器"""

    def __init__(self, cfg: BackboneConfig, lr: float = 0.05, seed: Optional[int] = None):
        """
        初始化训练器

        Args:
            cfg: 骨干网络配置，参数量不得超过 TOY_MAX_PARAMS
            lr: 固定学习率
            seed: 初始化种子
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        total = count_params(cfg)
        if total > config.TOY_MAX_PARAMS:
            raise ConfigError(
                f"配置 {cfg.name} 有 {total:,} 个参数，超过上限 {config.TOY_MAX_PARAMS:,}（仅限桌面规模）",
                field="config",
            )
        if lr < 0:
            raise ConfigError(f"学习率不能为负: {lr}", field="lr")
        self.lr = lr
        self.seed = config.DEFAULT_SEED if seed is None else seed
        self.model: SolaModel = build(cfg, seed=self.seed)
        rng = np.random.default_rng(self.seed + 1)
        self.params = ClassifierParams(
            backbone=self.model.params,
            head=LinearProjection.init(rng, cfg.stage_dims[-1], NUM_CLASSES),
        )

    def predict(self, params: ClassifierParams, image: Tensor) -> Tensor:
        features, _ = forward_vjp(self.model, image, params.backbone)
        return params.head.apply(features.value[None, :])[0]

    def loss_and_grad(self, params: ClassifierParams, task: ToyTask) -> Tuple[float, ClassifierParams, float]:
        """
        整个数据集上的平均损失、梯度与准确率
        """
        total = 0.0
        correct = 0
        grads = tree_zeros_like(params)
        n = len(task)
        for image, label in zip(task.images, task.labels):
            features, _ = forward_vjp(self.model, image, params.backbone)
            head = params.head.apply_vjp(features.value[None, :])
            logits = head.value[0]
            loss, g_logits = cross_entropy(logits, int(label))
            total += loss
            correct += int(np.argmax(logits) == label)
            g_features, g_head = head.pullback(g_logits[None, :] / n)
            _, g_backbone = features.pullback(g_features[0])
            grads = tree_add(grads, ClassifierParams(backbone=g_backbone, head=g_head))
        return total / n, grads, correct / n

    def train(self, task: ToyTask, steps: int) -> TrainResult:
        """
        训练 steps 步

        Returns:
            TrainResult: 每步开始时的损失（共 steps + 1 个，最后一个为训练结束后的损失）与最终准确率
        """
        result = TrainResult()
        params = self.params
        for step in range(steps):
            loss, grads, _ = self.loss_and_grad(params, task)
            result.losses.append(loss)
            if step % config.LOG_EVERY == 0:
                self.logger.info(f"第 {step} 步: 损失 {loss:.6f}")
            params = tree_axpy(-self.lr, grads, params)
        loss, _, accuracy = self.loss_and_grad(params, task)
        result.losses.append(loss)
        result.accuracy = accuracy
        self.params = params
        self.logger.info(f"训练结束: 损失 {result.initial_loss:.6f} → {result.final_loss:.6f}，准确率 {accuracy:.3f}")
        return result
