"""
测试注意力核：softmax / 核注意力 / 线性注意力 / 衰减隐状态
"""

import math

import numpy as np
import pytest

from sola_engine.src.attention_kernels import (
    AttentionInputs,
    HiddenState,
    SimilarityKernel,
    decayed_state,
    effective_range,
    elu_feature,
    exponential_decay,
    kernel_attention,
    linear_attention,
    linear_attention_quadratic,
    recurrent_state,
    softmax_attention,
)
from sola_engine.src.errors import DegenerateKernelError, ParameterError, ShapeError, TokenIndexError
from sola_engine.src.numerics import relative_error


def make_inputs(rng, n=12, d=4, scale=0.5):
    return AttentionInputs.from_arrays(
        rng.normal(size=(n, d)) * scale, rng.normal(size=(n, d)) * scale, rng.normal(size=(n, d))
    )


def relu_feature(x):
    return np.maximum(x, 0.0)


def test_exponential_kernel_equals_softmax(rng):
    inp = make_inputs(rng, n=32)
    out = kernel_attention(inp, SimilarityKernel.exponential())
    assert relative_error(out, softmax_attention(inp)) <= 1e-12


def test_uniform_kernel_averages_values(rng):
    inp = make_inputs(rng, n=7)
    out = kernel_attention(inp, SimilarityKernel.uniform())
    np.testing.assert_allclose(out, np.broadcast_to(inp.v.mean(axis=0), out.shape), rtol=1e-12)


def test_softmax_rows_are_convex_combinations(rng):
    inp = make_inputs(rng, n=10, scale=3.0)
    out = softmax_attention(inp)
    assert np.all(out <= inp.v.max(axis=0) + 1e-12)
    assert np.all(out >= inp.v.min(axis=0) - 1e-12)


def test_single_token_returns_value(rng):
    inp = make_inputs(rng, n=1)
    np.testing.assert_allclose(softmax_attention(inp), inp.v)


@pytest.mark.parametrize("normalized", [False, True])
def test_linear_attention_grouping_agrees(rng, normalized):
    inp = make_inputs(rng, n=24, d=6)
    right, state = linear_attention(inp, elu_feature, normalized=normalized)
    left = linear_attention_quadratic(inp, elu_feature, normalized=normalized)
    assert relative_error(right, left) <= 1e-10
    assert isinstance(state, HiddenState)
    assert (state.feature_dim, state.value_dim) == (6, 6)


def test_feature_kernel_matches_normalized_linear_attention(rng):
    inp = make_inputs(rng, n=9)
    kernel = SimilarityKernel.from_features(elu_feature)
    assert kernel.has_features
    out, _ = linear_attention(inp, elu_feature, normalized=True)
    assert relative_error(kernel_attention(inp, kernel), out) <= 1e-12


def test_zero_denominator_names_token(rng):
    inp = AttentionInputs.from_arrays(-np.ones((4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    with pytest.raises(DegenerateKernelError) as exc:
        kernel_attention(inp, SimilarityKernel.from_features(relu_feature))
    assert exc.value.token_index == 0
    with pytest.raises(DegenerateKernelError):
        linear_attention(inp, relu_feature, normalized=True)


def test_attention_inputs_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        AttentionInputs.from_arrays(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=(4, 3)))


def test_recurrent_state_matches_direct_sum(rng):
    keys = rng.normal(size=(10, 3))
    values = rng.normal(size=(10, 2))
    stacked = recurrent_state(keys, values, elu_feature, rate=0.3)
    decay = exponential_decay(0.3)
    for t in range(1, 11):
        direct = decayed_state(keys, values, elu_feature, decay, t).matrix
        assert relative_error(stacked[t - 1], direct) <= 1e-12


def test_no_decay_gives_global_state(rng):
    inp = make_inputs(rng, n=8)
    _, state = linear_attention(inp, elu_feature)
    local = decayed_state(inp.k, inp.v, elu_feature, exponential_decay(0.0), t=3)
    assert relative_error(local.matrix, state.matrix) <= 1e-12


def test_decayed_state_index_bounds(rng):
    keys = rng.normal(size=(4, 2))
    with pytest.raises(TokenIndexError):
        decayed_state(keys, keys, elu_feature, exponential_decay(1.0), t=0)
    with pytest.raises(IndexError):
        decayed_state(keys, keys, elu_feature, exponential_decay(1.0), t=5)


def test_effective_range():
    assert effective_range(1.0, 1e-3) == pytest.approx(math.log(1000.0))
    assert effective_range(2.0, 1e-3) == pytest.approx(math.log(1000.0) / 2.0)
    with pytest.raises(ParameterError):
        effective_range(0.0, 1e-3)
    with pytest.raises(ParameterError):
        effective_range(1.0, 1.0)
