"""
测试 Hidden State Bridge
"""

import numpy as np
import pytest

from sola_engine.src.bridge import (
    HsbParams,
    hidden_state_bridge,
    hidden_state_bridge_vjp,
    hsb_param_count,
    sample_equidistant,
    sample_indices,
)
from sola_engine.src.errors import RouteError, SamplingError
from sola_engine.src.numerics import DualValue, LinearProjection, grad_check, tree_size
from sola_engine.src.schedule import HsbRoute

ROUTE = HsbRoute(src=(1, 1), dst=(2, 1))


def test_sample_indices_are_centered():
    np.testing.assert_array_equal(sample_indices(16, 4), [2, 6, 10, 14])
    np.testing.assert_array_equal(sample_indices(5, 5), np.arange(5))
    np.testing.assert_array_equal(sample_indices(7, 1), [3])


def test_sample_indices_bounds():
    with pytest.raises(SamplingError):
        sample_indices(4, 5)
    with pytest.raises(SamplingError):
        sample_indices(4, 0)


def test_sample_equidistant_picks_rows():
    tokens = np.arange(32, dtype=np.float64).reshape(16, 2)
    np.testing.assert_array_equal(sample_equidistant(tokens, 4), tokens[[2, 6, 10, 14]])


def test_zero_projection_is_identity(rng):
    params = HsbParams.init(rng, ROUTE, 4, 6)
    silent = HsbParams(route=ROUTE, proj=LinearProjection(weight=np.zeros((4, 6))), gate=params.gate)
    dst = rng.normal(size=(4, 6))
    np.testing.assert_array_equal(hidden_state_bridge(rng.normal(size=(16, 4)), dst, silent), dst)


def test_param_count(rng):
    params = HsbParams.init(rng, ROUTE, 4, 6)
    assert tree_size(params) == hsb_param_count(4, 6)


def test_route_shape_errors(rng):
    params = HsbParams.init(rng, ROUTE, 4, 6)
    with pytest.raises(RouteError):
        hidden_state_bridge(rng.normal(size=(16, 5)), rng.normal(size=(4, 6)), params)
    with pytest.raises(RouteError):
        hidden_state_bridge(rng.normal(size=(16, 4)), rng.normal(size=(4, 7)), params)
    with pytest.raises(RouteError):
        hidden_state_bridge(rng.normal(size=(3, 4)), rng.normal(size=(4, 6)), params)


def test_bridge_gradient(rng):
    params = HsbParams.init(rng, ROUTE, 4, 6)
    direction = rng.normal(size=(4, 6))

    def f(p, src, dst):
        out = hidden_state_bridge_vjp(src, dst, p)

        def pullback(g):
            g_src, g_dst, g_p = out.pullback(float(g) * direction)
            return g_p, g_src, g_dst

        return DualValue(float(np.sum(out.value * direction)), pullback)

    err = grad_check(f, [params, rng.normal(size=(16, 4)), rng.normal(size=(4, 6))])
    assert err <= 1e-4


def test_unsampled_source_rows_get_no_gradient(rng):
    params = HsbParams.init(rng, ROUTE, 4, 6)
    out = hidden_state_bridge_vjp(rng.normal(size=(16, 4)), rng.normal(size=(4, 6)), params)
    g_src, _, _ = out.pullback(np.ones((4, 6)))
    untouched = np.setdiff1d(np.arange(16), [2, 6, 10, 14])
    np.testing.assert_array_equal(g_src[untouched], 0.0)


def test_sample_indices_exhaustive():
    for n_src in range(1, 65):
        for n_out in range(1, n_src + 1):
            idx = sample_indices(n_src, n_out)
            assert len(idx) == n_out
            assert idx[0] >= 0 and idx[-1] < n_src
            assert np.all(np.diff(idx) > 0)


def test_zero_gate_halves_bridge(rng):
    params = HsbParams.init(rng, ROUTE, 4, 6)
    closed = HsbParams(
        route=ROUTE,
        proj=params.proj,
        gate=LinearProjection(weight=np.zeros((6, 6)), bias=np.zeros(6)),
    )
    src = rng.normal(size=(16, 4))
    dst = rng.normal(size=(4, 6))
    bridged = sample_equidistant(src, 4) @ params.proj.weight
    np.testing.assert_allclose(hidden_state_bridge(src, dst, closed), dst + 0.5 * bridged, atol=1e-12)
