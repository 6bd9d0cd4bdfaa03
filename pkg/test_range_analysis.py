"""
测试叠加衰减核的作用范围分析
"""

import math

import numpy as np
import pytest

from sola_engine.src.errors import FitError, ParameterError, ToleranceError, TruncationError
from sola_engine.src.range_analysis import (
    continuous_variance,
    convolve,
    delta_kernel,
    effective_radius,
    exp_kernel,
    fit_power_law,
    fit_sqrt_scaling,
    gaussian_kernel,
    gaussian_lobe_error,
    kernel_stats,
    power,
    predicted_radius,
    range_table,
    stack,
)


def test_exp_kernel_is_normalized_and_symmetric():
    k = exp_kernel(0.5)
    assert k.radius == 50
    assert k.mass == pytest.approx(1.0)
    np.testing.assert_allclose(k.weights, k.weights[::-1])
    assert k.mean == pytest.approx(0.0, abs=1e-12)


def test_exp_kernel_truncation_guard():
    with pytest.raises(TruncationError):
        exp_kernel(1.0, radius=10)
    with pytest.raises(ParameterError):
        exp_kernel(0.0)


def test_delta_is_identity():
    k = exp_kernel(1.0)
    np.testing.assert_allclose(convolve(delta_kernel(), k).weights, k.weights)


@pytest.mark.parametrize("w,expected", [(1.0, 7), (0.5, 14), (2.0, 4)])
def test_single_layer_radius(w, expected):
    assert effective_radius(exp_kernel(w), 1e-3) == expected == math.ceil(math.log(1000.0) / w)


def test_variance_adds_under_convolution():
    k = exp_kernel(0.7)
    assert power(k, 3).variance == pytest.approx(3 * k.variance, rel=1e-9)
    assert power(k, 3).radius == 3 * k.radius


def test_stack_matches_continuous_variance():
    rates = [0.1, 0.08, 0.05]
    assert stack(rates).variance == pytest.approx(continuous_variance(rates), rel=0.02)


def test_gaussian_shape_emerges_with_depth():
    k = exp_kernel(1.0)
    assert gaussian_lobe_error(power(k, 32)) < gaussian_lobe_error(power(k, 2))
    assert gaussian_lobe_error(gaussian_kernel(4.0)) < 1e-9


def test_radius_tolerance_errors():
    k = exp_kernel(1.0)
    with pytest.raises(ParameterError):
        effective_radius(k, 1.5)
    with pytest.raises(ToleranceError):
        effective_radius(k, 1e-12)


def test_kernel_stats():
    stats = kernel_stats(exp_kernel(1.0))
    assert stats.radius == 7
    assert stats.epsilon == 1e-3
    assert stats.variance > 0


def test_range_table_columns_and_prediction():
    rows = range_table(1.0, 1e-3, [1, 4, 16, 64])
    assert [r["M"] for r in rows] == [1, 4, 16, 64]
    assert set(rows[0]) == {"M", "sigma", "xi", "xi_predicted", "gaussian_error"}
    assert rows[0]["xi"] == 7
    deep = rows[-1]
    assert deep["xi_predicted"] == pytest.approx(predicted_radius(deep["sigma"], 1e-3))
    assert 0.8 <= deep["xi"] / deep["xi_predicted"] <= 1.25
    radii = [r["xi"] for r in rows]
    assert radii == sorted(radii)


def test_sqrt_scaling_law():
    fit = fit_sqrt_scaling([4, 8, 16, 32, 64], w=1.0, epsilon=1e-3)
    assert 0.42 <= fit.exponent <= 0.58
    assert fit.r_squared >= 0.98


def test_fit_requires_enough_depths():
    with pytest.raises(FitError):
        fit_power_law([1, 2, 3], [1, 2, 3])
    with pytest.raises(FitError):
        fit_power_law([1, 2, 3, 4], [5, 5, 5, 5])


def test_power_matches_direct_double_sum():
    k = exp_kernel(1.0)
    squared = power(k, 2)
    for delta in range(-squared.radius, squared.radius + 1):
        direct = sum(k.at(a) * k.at(delta - a) for a in range(-k.radius, k.radius + 1))
        assert squared.at(delta) == pytest.approx(direct, rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("depth", [1, 5, 6, 7])
def test_power_matches_repeated_convolution(depth):
    k = exp_kernel(1.0)
    repeated = k
    for _ in range(depth - 1):
        repeated = convolve(repeated, k)
    np.testing.assert_allclose(power(k, depth).weights, repeated.weights, rtol=1e-9, atol=1e-300)


def test_lobe_error_thresholds():
    k = exp_kernel(1.0)
    assert gaussian_lobe_error(k) > 0.5
    assert gaussian_lobe_error(power(k, 16)) <= 0.1


@pytest.mark.parametrize("depth", [8, 16, 32])
def test_radius_close_to_gaussian_prediction(depth):
    k = power(exp_kernel(1.0), depth)
    predicted = predicted_radius(k.sigma, 1e-3)
    assert abs(effective_radius(k, 1e-3) - predicted) <= 0.15 * predicted


def test_slow_decay_variance():
    assert exp_kernel(0.05).variance == pytest.approx(800.0, rel=0.01)


def test_radius_shrinks_as_tolerance_grows():
    k = power(exp_kernel(1.0), 8)
    radii = [effective_radius(k, eps) for eps in (1e-6, 1e-4, 1e-3, 1e-2, 0.1, 0.5)]
    assert all(a >= b for a, b in zip(radii, radii[1:]))
