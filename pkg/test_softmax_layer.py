"""
测试 softmax 层（MHSA + 卷积 MLP）
"""

import numpy as np
import pytest

from sola_engine.src.errors import ConfigError, GridError
from sola_engine.src.layers import SoftmaxLayer, TokenGrid, conv_mlp_vjp, softmax_layer
from sola_engine.src.layers.softmax_layer import (
    attention_weights,
    softmax_layer_flops,
    softmax_layer_param_count,
)
from sola_engine.src.numerics import DualValue, grad_check, tree_map, tree_size


def layer_loss(layer, height, width, direction):
    def f(params, tokens):
        step = layer.forward_vjp(params, TokenGrid(tokens, height, width))

        def pullback(g):
            g_x, g_params = step.pullback(float(g) * direction)
            return g_params, g_x

        return DualValue(float(np.sum(step.value.tokens * direction)), pullback)

    return f


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError) as exc:
        SoftmaxLayer(6, heads=4)
    assert exc.value.field == "heads"


def test_attention_weights_are_row_stochastic(rng):
    layer = SoftmaxLayer(8, heads=2, mlp_ratio=2)
    params = layer.init_params(rng)
    weights = attention_weights(rng.normal(size=(6, 8)), params.attention)
    assert weights.shape == (2, 6, 6)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0)
    assert np.all(weights > 0)


def test_param_and_flop_formulas():
    d, n, r = 256, 49, 4
    assert softmax_layer_param_count(d, r) == (4 + 2 * r) * d * d + (9 + 10 * r) * d
    assert softmax_layer_flops(n, d, r) == (4 + 2 * r) * n * d * d + 2 * n * n * d + (4 + 10 * r) * n * d


def test_param_count_matches_allocation(rng):
    layer = SoftmaxLayer(8, heads=2, mlp_ratio=3)
    assert layer.param_count() == tree_size(layer.init_params(rng))


def test_layer_preserves_shape(rng):
    layer = SoftmaxLayer(8, heads=2, mlp_ratio=2)
    params = layer.init_params(rng)
    grid = TokenGrid(rng.normal(size=(6, 8)), 2, 3)
    out = layer.forward(params, grid)
    assert out.tokens.shape == (6, 8)
    assert out.tap is None
    np.testing.assert_allclose(softmax_layer(grid, params).tokens, out.tokens)


def test_conv_mlp_rejects_bad_grid(rng):
    layer = SoftmaxLayer(8, heads=2, mlp_ratio=2)
    params = layer.init_params(rng)
    with pytest.raises(GridError):
        conv_mlp_vjp(rng.normal(size=(5, 8)), params.mlp, 2, 3)


def test_layer_gradient(rng):
    layer = SoftmaxLayer(8, heads=2, mlp_ratio=2)
    params = tree_map(lambda a: a + 0.1 * rng.normal(size=a.shape), layer.init_params(rng))
    direction = rng.normal(size=(6, 8))
    err = grad_check(layer_loss(layer, 2, 3, direction), [params, rng.normal(size=(6, 8))])
    assert err <= 1e-4


def test_single_token_has_no_query_key_gradient(rng):
    """只有一个 token 时注意力权重恒为 1，Q/K 投影得不到梯度"""
    d = 8
    layer = SoftmaxLayer(d, heads=2, mlp_ratio=2)
    params = layer.init_params(rng)
    step = layer.forward_vjp(params, TokenGrid(rng.normal(size=(1, d)), 1, 1))
    _, grads = step.pullback(rng.normal(size=(1, d)))
    qk = grads.attention.proj_qkv.weight[:, : 2 * d]
    np.testing.assert_allclose(qk, 0.0, atol=1e-12)
    assert np.any(grads.attention.proj_qkv.weight[:, 2 * d :] != 0)
