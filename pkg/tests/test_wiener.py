import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sense_forge.errors import ContractError
from sense_forge.rng import RngStreamSpec
from sense_forge.wiener import (
    alpha_integral_ensemble,
    alpha_integral_variance,
    alpha_point_integral,
    integral_statistics,
    refine_bridge,
    sample_increments,
)


def test_sample_increments_uses_stream_draws():
    stream = RngStreamSpec(3, 8)
    path = sample_increments(5, 0.04, 2, stream)
    np.testing.assert_array_equal(path.values[0], [0.0, 0.0])
    np.testing.assert_allclose(path.increments, 0.2 * stream.normals(10).reshape(5, 2))
    assert path.total_time == pytest.approx(0.2)


@pytest.mark.parametrize("alpha, column", [(0.0, slice(None, -1)), (1.0, slice(1, None))])
def test_bridge_at_endpoints_is_exact(alpha, column):
    path = refine_bridge(sample_increments(6, 0.1, 1, RngStreamSpec(1, 2)), alpha)
    np.testing.assert_array_equal(path.interior, path.values[column])


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_ensemble_kernel_matches_reference_path(alpha, stream):
    dt, substeps = 0.01, 8
    ensemble = alpha_integral_ensemble(dt, 1, [alpha], 5, substeps, first_stream=stream)[alpha]
    path = refine_bridge(sample_increments(substeps, dt / substeps, 1, RngStreamSpec(5, stream)), alpha)
    assert ensemble[0] == pytest.approx(alpha_point_integral(path, alpha).value, rel=1e-12, abs=1e-18)


def test_alpha_integral_moments_match_exact_formula():
    dt, n = 0.01, 200000
    for substeps in (1, 16):
        samples = alpha_integral_ensemble(dt, n, [0.0, 0.5, 1.0], 11, substeps)
        for alpha, values in samples.items():
            var = alpha_integral_variance(alpha, dt, substeps)
            if var == 0.0:
                # a single Ito step evaluates W(0) = 0
                assert not np.any(values)
                continue
            assert abs(values.mean() - alpha * dt) < 5 * np.sqrt(var / n)
            assert abs(values.var(ddof=1) / var - 1) < 5 * np.sqrt(2 / n) * 2


def test_exact_variance_limits():
    dt = 0.1
    # one step: W(alpha dt) dW has variance (alpha^2 + alpha) dt^2
    assert alpha_integral_variance(1.0, dt, 1) == pytest.approx(2 * dt * dt)
    assert alpha_integral_variance(0.0, dt, 1) == pytest.approx(0.0)
    assert alpha_integral_variance(0.3, dt, 10**9) == pytest.approx(dt * dt / 2, rel=1e-8)


def test_integral_statistics_rejects_mixed_samples():
    a = alpha_point_integral(sample_increments(2, 0.1, 1, RngStreamSpec(0, 0)), 0.0)
    b = alpha_point_integral(sample_increments(2, 0.1, 1, RngStreamSpec(0, 1)), 1.0)
    with pytest.raises(ContractError):
        integral_statistics([a, b])
    stats = integral_statistics([a, a])
    assert stats.count == 2 and stats.variance == 0.0


def test_unrefined_interior_alpha_is_rejected():
    path = sample_increments(2, 0.1, 1, RngStreamSpec(0, 0))
    with pytest.raises(ContractError):
        alpha_point_integral(path, 0.5)
