import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sense_forge.core import (
    Box,
    MatrixFieldSpec,
    SenseParameter,
    constant_matrix_field,
    diffusion_matrix,
    ito_equivalent_drift,
    relative_deviation,
    spurious_drift_from_diffusion,
    spurious_drift_from_noise,
    symmetrize_noise,
    symmetrized_field,
)
from sense_forge.errors import ContractError, DomainError
from sense_forge.models import build_model, diag2d, geometric

finite = st.floats(-3, 3, allow_nan=False)


def test_sense_parameter_bounds():
    assert SenseParameter.stratonovich().alpha == 0.5
    assert SenseParameter(1).alpha == 1.0
    for bad in (-0.1, 1.5):
        with pytest.raises(ContractError, match=r"alpha must lie in \[0,1\]"):
            SenseParameter(bad)


def test_box_contains_and_require():
    box = Box([0.0, 1.0], [1.0, 2.0])
    assert box.contains([0.5, 1.5])
    assert not box.contains([1.5, 1.5])
    with pytest.raises(DomainError):
        box.require([[0.5, 3.0]])
    with pytest.raises(ContractError):
        Box([1.0], [0.0])


def test_geometric_spurious_drift_closed_form():
    sigma = 0.7
    model = geometric(sigma=sigma)
    x = np.linspace(0.1, 5, 11)[:, None]
    np.testing.assert_allclose(spurious_drift_from_noise(model.noise, x), sigma**2 * x, rtol=1e-15)
    np.testing.assert_allclose(spurious_drift_from_diffusion(model.noise, x), sigma**2 * x, rtol=1e-15)
    for alpha in (0.0, 0.25, 1.0):
        np.testing.assert_allclose(ito_equivalent_drift(model, x, alpha), alpha * sigma**2 * x, rtol=1e-15)


def test_analytic_derivative_matches_finite_differences():
    model = build_model({"model": "asinh"})
    x = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(model.noise.derivative(x), model.noise.fd_derivative(x), atol=1e-9)


@given(arrays(float, (2, 2), elements=st.floats(-2, 2)), st.floats(0.1, 3), st.floats(0.1, 3))
def test_identity_holds_for_diagonal_noise(coeffs, x1, x2):
    # b^ii depends on x^i only: the case where the divergence form is exact
    def func(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = coeffs[0, 0] + coeffs[0, 1] * x[..., 0] ** 2
        out[..., 1, 1] = coeffs[1, 0] + coeffs[1, 1] * np.sin(x[..., 1])
        return out

    def deriv(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = 2 * coeffs[0, 1] * x[..., 0]
        out[..., 1, 1, 1] = coeffs[1, 1] * np.cos(x[..., 1])
        return out

    noise = MatrixFieldSpec(2, 2, func, deriv)
    x = np.array([[x1, x2]])
    np.testing.assert_allclose(
        spurious_drift_from_noise(noise, x), spurious_drift_from_diffusion(noise, x), rtol=1e-12, atol=1e-12
    )


def test_identity_fails_for_a_symmetric_counterexample():
    # B = [[x2, 1], [1, 0]] is symmetric: db^ik/dx^m b^mk = (1, 0) but (1/2) dD^ik/dx^k = (1/2, 0)
    def func(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = x[..., 1]
        out[..., 0, 1] = out[..., 1, 0] = 1.0
        return out

    def deriv(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = 1.0
        return out

    noise = MatrixFieldSpec(2, 2, func, deriv)
    x = np.array([[0.3, -1.2]])
    np.testing.assert_allclose(spurious_drift_from_noise(noise, x), [[1.0, 0.0]])
    np.testing.assert_allclose(spurious_drift_from_diffusion(noise, x), [[0.5, 0.0]])


def test_diffusion_of_diag2d():
    model = diag2d()
    d = diffusion_matrix(model.noise, [2.0, 3.0])
    np.testing.assert_allclose(d.matrix, np.diag([4.0, 9.0]))
    np.testing.assert_allclose(d.eigenvalues, [9.0, 4.0])
    assert np.linalg.det(d.eigenvectors) == pytest.approx(1.0)


@given(arrays(float, (3, 2), elements=finite))
def test_symmetrize_noise_preserves_diffusion(b):
    result = symmetrize_noise(b)
    rotation = result.rotation
    np.testing.assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-10)
    sym = result.symmetric[:, :3]
    np.testing.assert_allclose(sym, sym.T, atol=1e-10)
    np.testing.assert_allclose(sym @ sym.T, b @ b.T, atol=1e-9)


def test_symmetrized_field_derivative_matches_finite_differences():
    raw = MatrixFieldSpec(
        2,
        2,
        lambda x: np.stack(
            [np.stack([2 + x[..., 0] * x[..., 1], 0.3 * x[..., 0]], -1), np.stack([x[..., 1] ** 2, 2.0 + 0 * x[..., 0]], -1)],
            -2,
        ),
    )
    sym = symmetrized_field(raw)
    x = np.array([[0.2, -0.4], [0.7, 0.1]])
    np.testing.assert_allclose(sym.raw(x) @ np.swapaxes(sym.raw(x), -1, -2), raw.raw(x) @ np.swapaxes(raw.raw(x), -1, -2))
    np.testing.assert_allclose(sym.derivative(x), sym.fd_derivative(x), atol=1e-8)


def test_constant_noise_has_no_spurious_drift():
    noise = constant_matrix_field([[1.0, 2.0], [0.0, 3.0]])
    assert not np.any(spurious_drift_from_noise(noise, np.ones((4, 2))))


def test_relative_deviation():
    assert relative_deviation([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)
    assert relative_deviation([0.0], [0.0]) == 0.0
