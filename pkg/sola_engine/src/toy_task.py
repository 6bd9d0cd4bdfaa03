"""
合成二分类任务

类别 0：一个亮斑；类别 1：两个相距至少 16 像素的亮斑。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import config
from .errors import ConfigError
from .numerics import Tensor

NUM_CLASSES = 2
_MARGIN = 4
_NOISE_STD = 0.05
_MAX_CENTER_TRIES = 1000


@dataclass(frozen=True)
class ToyTask:
    images: Tensor
    labels: np.ndarray
    seed: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def class_counts(self) -> List[int]:
        return [int(np.sum(self.labels == c)) for c in range(NUM_CLASSES)]


def _blob(size: int, center: Tuple[float, float], sigma: float) -> Tensor:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2.0 * sigma * sigma))


def _random_center(rng: np.random.Generator, size: int) -> Tuple[float, float]:
    return tuple(rng.uniform(_MARGIN, size - 1 - _MARGIN, size=2))


def _two_centers(rng: np.random.Generator, size: int, min_distance: float):
    """
    Raises:
        ConfigError: 图像太小，放不下两个相距 min_distance 的亮斑
    """
    span = size - 1 - 2 * _MARGIN
    if span * np.sqrt(2.0) < min_distance:
        raise ConfigError(f"图像边长 {size} 放不下两个相距 {min_distance} 像素的亮斑", field="size")
    for _ in range(_MAX_CENTER_TRIES):
        a = _random_center(rng, size)
        b = _random_center(rng, size)
        if np.hypot(a[0] - b[0], a[1] - b[1]) >= min_distance:
            return a, b
    raise ConfigError(f"{_MAX_CENTER_TRIES} 次采样后仍未找到相距 {min_distance} 像素的两个中心", field="size")


def make_toy_task(
    seed: Optional[int] = None,
    samples_per_class: Optional[int] = None,
    size: Optional[int] = None,
) -> ToyTask:
    """
    生成确定性的合成数据集，两类样本交替排列

    Args:
        seed: 随机种子
        samples_per_class: 每类样本数
        size: 图像边长

    Returns:
        ToyTask: images 形状 (n, size, size, 3)，labels 形状 (n,)
    """
    seed = config.DEFAULT_SEED if seed is None else seed
    samples_per_class = samples_per_class or config.TOY_SAMPLES_PER_CLASS
    size = size or config.TOY_IMAGE_SIZE
    sigma = config.TOY_BLOB_SIGMA
    rng = np.random.default_rng(seed)

    images = []
    labels = []
    for _ in range(samples_per_class):
        for label in range(NUM_CLASSES):
            if label == 0:
                canvas = _blob(size, _random_center(rng, size), sigma)
            else:
                a, b = _two_centers(rng, size, config.TOY_MIN_BLOB_DISTANCE)
                canvas = _blob(size, a, sigma) + _blob(size, b, sigma)
            color = rng.uniform(0.5, 1.0, size=3)
            image = canvas[:, :, None] * color + rng.normal(0.0, _NOISE_STD, size=(size, size, 3))
            images.append(image)
            labels.append(label)

    task = ToyTask(images=np.stack(images), labels=np.array(labels, dtype=np.int64), seed=seed)
    logging.info(f"已生成合成任务: {len(task)} 张 {size}×{size} 图像，种子 {seed}")
    return task
