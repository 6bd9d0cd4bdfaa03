"""
测试数值原语与梯度校验
"""

import numpy as np
import pytest

from sola_engine.src.bridge import HsbParams
from sola_engine.src.errors import EvaluationError, ShapeError
from sola_engine.src.numerics import (
    DualValue,
    LinearProjection,
    as_tensor,
    depthwise_conv3x3,
    depthwise_conv3x3_vjp,
    elementwise_mul_vjp,
    gelu_vjp,
    grad_check,
    layer_norm,
    layer_norm_vjp,
    matmul,
    matmul_vjp,
    relative_error,
    relu_sq_vjp,
    sigmoid_vjp,
    softmax_rows,
    softmax_rows_vjp,
    tree_axpy,
    tree_leaves,
    tree_map,
    tree_size,
    tree_zeros_like,
)
from sola_engine.src.schedule import HsbRoute


def weighted_loss(op, weights):
    """f(*args) = Σ op(*args)·weights，pullback 透传 op 的梯度元组"""

    def f(*args):
        out = op(*args)

        def pullback(g):
            return out.pullback(float(g) * weights)

        return DualValue(float(np.sum(out.value * weights)), pullback)

    return f


def away_from_zero(rng, shape):
    """远离 0 的随机数，避开 ReLU² 的拐点"""
    return (np.abs(rng.normal(size=shape)) + 0.1) * rng.choice([-1.0, 1.0], size=shape)


def test_relative_error_uses_max_norm():
    assert relative_error(np.array([1.0, 2.1]), np.array([1.0, 2.0])) == pytest.approx(0.05)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_relative_error_shape_mismatch():
    with pytest.raises(ShapeError):
        relative_error(np.zeros(3), np.zeros(4))


def test_as_tensor_rejects_bad_input():
    with pytest.raises(EvaluationError):
        as_tensor([1.0, np.nan])
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))
    assert as_tensor([1, 2]).dtype == np.float64


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_softmax_rows_is_stable():
    out = softmax_rows(np.array([[1000.0, 1000.0], [-1000.0, 0.0]]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[0], [0.5, 0.5])
    np.testing.assert_allclose(np.sum(out, axis=1), 1.0)


def test_layer_norm_normalizes_last_axis(rng):
    x = rng.normal(3.0, 5.0, size=(4, 16))
    out = layer_norm(x, np.ones(16), np.zeros(16))
    np.testing.assert_allclose(np.mean(out, axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.std(out, axis=1), 1.0, rtol=1e-6)


def test_layer_norm_rejects_wrong_affine_shape(rng):
    with pytest.raises(ShapeError):
        layer_norm(rng.normal(size=(2, 4)), np.ones(3), np.zeros(4))


def test_depthwise_conv_delta_kernel_is_identity(rng):
    x = rng.normal(size=(3, 5, 4))
    kernel = np.zeros((3, 3, 4))
    kernel[1, 1, :] = 1.0
    np.testing.assert_array_equal(depthwise_conv3x3(x, kernel), x)


def test_depthwise_conv_zero_padding():
    x = np.ones((2, 2, 1))
    out = depthwise_conv3x3(x, np.ones((3, 3, 1)))
    # 每个像素的 3×3 邻域内只有 4 个有效位置
    np.testing.assert_array_equal(out[:, :, 0], np.full((2, 2), 4.0))


@pytest.mark.parametrize(
    "name",
    ["matmul", "elementwise_mul", "sigmoid", "relu_sq", "gelu", "softmax_rows", "layer_norm", "depthwise_conv3x3"],
)
def test_primitive_gradients(name, rng):
    """每个原语的回拉与中心差分一致"""
    if name == "matmul":
        inputs = [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]
        op, out_shape = matmul_vjp, (3, 2)
    elif name == "elementwise_mul":
        inputs = [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]
        op, out_shape = elementwise_mul_vjp, (3, 4)
    elif name == "sigmoid":
        inputs = [rng.normal(size=(3, 4))]
        op, out_shape = sigmoid_vjp, (3, 4)
    elif name == "relu_sq":
        inputs = [away_from_zero(rng, (3, 4))]
        op, out_shape = relu_sq_vjp, (3, 4)
    elif name == "gelu":
        inputs = [rng.normal(size=(3, 4))]
        op, out_shape = gelu_vjp, (3, 4)
    elif name == "softmax_rows":
        inputs = [rng.normal(size=(3, 5))]
        op, out_shape = softmax_rows_vjp, (3, 5)
    elif name == "layer_norm":
        inputs = [rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)]
        op, out_shape = layer_norm_vjp, (3, 6)
    else:
        inputs = [rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 3, 2))]
        op, out_shape = depthwise_conv3x3_vjp, (3, 4, 2)
    err = grad_check(weighted_loss(op, rng.normal(size=out_shape)), inputs)
    assert err < 1e-6


def test_linear_projection_gradient(rng):
    proj = LinearProjection.init(rng, 4, 3)
    proj = LinearProjection(weight=proj.weight, bias=rng.normal(size=3))
    weights = rng.normal(size=(5, 3))

    def f(p, x):
        out = p.apply_vjp(x)

        def pullback(g):
            g_x, g_p = out.pullback(float(g) * weights)
            return g_p, g_x

        return DualValue(float(np.sum(out.value * weights)), pullback)

    assert grad_check(f, [proj, rng.normal(size=(5, 4))]) < 1e-6


def test_linear_projection_without_bias(rng):
    proj = LinearProjection.init(rng, 4, 3, bias=False)
    assert proj.bias is None
    assert (proj.in_dim, proj.out_dim) == (4, 3)
    x = rng.normal(size=(2, 4))
    np.testing.assert_allclose(proj.apply(x), x @ proj.weight)
    with pytest.raises(ShapeError):
        proj.apply(rng.normal(size=(2, 5)))


def test_grad_check_detects_wrong_gradient(rng):
    def f(x):
        return DualValue(float(np.sum(x * x)), lambda g: (4.0 * g * x,))

    assert grad_check(f, [rng.normal(size=5)]) > 0.1


def test_grad_check_requires_scalar(rng):
    def f(x):
        return DualValue(x, lambda g: (g,))

    with pytest.raises(EvaluationError):
        grad_check(f, [rng.normal(size=3)])


def test_grad_check_on_sampled_coords(rng):
    weights = rng.normal(size=(6, 6))
    err = grad_check(weighted_loss(matmul_vjp, weights), [rng.normal(size=(6, 6)), rng.normal(size=(6, 6))], coords_per_leaf=4)
    assert err < 1e-6


def test_tree_utilities_keep_non_array_fields(rng):
    bridge = HsbParams.init(rng, HsbRoute(src=(1, 1), dst=(2, 1)), 4, 6)
    # proj: 4×6（无偏置），gate: 6×6 + 6
    assert tree_size(bridge) == 4 * 6 + 6 * 6 + 6
    zeros = tree_zeros_like(bridge)
    assert zeros.route == bridge.route
    assert zeros.proj.bias is None
    assert all(np.all(leaf == 0) for _, leaf in tree_leaves(zeros))
    moved = tree_axpy(2.0, tree_map(np.ones_like, bridge), bridge)
    np.testing.assert_allclose(moved.gate.weight, bridge.gate.weight + 2.0)


def test_tree_leaves_paths_are_stable(rng):
    tree = {"b": [np.zeros(2)], "a": LinearProjection.init(rng, 2, 2)}
    paths = [p for p, _ in tree_leaves(tree)]
    assert paths == ["a.weight", "a.bias", "b.0"]
