"""
测试合成任务与玩具训练
"""

import numpy as np
import pytest

from sola_engine import ToyTrainer
from sola_engine.src.errors import ConfigError
from sola_engine.src.toy_task import make_toy_task
from sola_engine.src.trainer import cross_entropy


def test_toy_task_is_balanced_and_deterministic():
    task = make_toy_task(seed=5, samples_per_class=3, size=32)
    assert task.images.shape == (6, 32, 32, 3)
    assert task.class_counts() == [3, 3]
    again = make_toy_task(seed=5, samples_per_class=3, size=32)
    np.testing.assert_array_equal(task.images, again.images)
    np.testing.assert_array_equal(task.labels, again.labels)


def test_cross_entropy_gradient():
    loss, grad = cross_entropy(np.array([0.0, 0.0]), 1)
    assert loss == pytest.approx(np.log(2.0))
    np.testing.assert_allclose(grad, [0.5, -0.5])


def test_large_config_is_rejected(tiny_cfg):
    with pytest.raises(ConfigError) as exc:
        ToyTrainer(tiny_cfg)
    assert exc.value.field == "config"


def test_negative_lr_is_rejected(micro_cfg):
    with pytest.raises(ConfigError):
        ToyTrainer(micro_cfg, lr=-0.1)


def test_zero_lr_keeps_loss(micro_cfg):
    task = make_toy_task(seed=0, samples_per_class=2)
    result = ToyTrainer(micro_cfg, lr=0.0, seed=0).train(task, steps=2)
    assert len(result.losses) == 3
    assert max(result.losses) - min(result.losses) <= 1e-12


def test_training_reduces_loss(micro_cfg):
    task = make_toy_task(seed=0, samples_per_class=2)
    result = ToyTrainer(micro_cfg, lr=0.01, seed=0).train(task, steps=3)
    assert result.final_loss < result.initial_loss
    assert 0.0 <= result.accuracy <= 1.0


def test_training_is_deterministic(micro_cfg):
    task = make_toy_task(seed=1, samples_per_class=2)
    first = ToyTrainer(micro_cfg, lr=0.01, seed=1).train(task, steps=2)
    second = ToyTrainer(micro_cfg, lr=0.01, seed=1).train(task, steps=2)
    assert first.losses == second.losses


def test_predict_returns_two_logits(micro_cfg):
    task = make_toy_task(seed=0, samples_per_class=1)
    trainer = ToyTrainer(micro_cfg, lr=0.01, seed=0)
    logits = trainer.predict(trainer.params, task.images[0])
    assert logits.shape == (2,)
    assert np.all(np.isfinite(logits))


def test_cross_entropy_is_finite_for_extreme_logits():
    loss, grad = cross_entropy(np.array([2000.0, -2000.0]), 1)
    assert loss == pytest.approx(4000.0)
    np.testing.assert_allclose(grad, [1.0, -1.0])


def test_training_meets_loss_target(micro_cfg):
    # 完整的 200 步训练，耗时约一分钟
    trainer = ToyTrainer(micro_cfg, lr=0.05)
    result = trainer.train(make_toy_task(seed=trainer.seed), steps=200)
    assert len(result.losses) == 201
    assert result.final_loss < 0.8 * result.initial_loss


def test_toy_task_rejects_tiny_images():
    with pytest.raises(ConfigError) as exc:
        make_toy_task(seed=0, samples_per_class=1, size=16)
    assert exc.value.field == "size"
