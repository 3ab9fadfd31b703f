import numpy as np
import pytest
from scipy import stats

from sense_forge.errors import ContractError, StabilityError
from sense_forge.fpe import (
    DensityGrid,
    density_distance,
    ensemble_to_density,
    fpe_evolve,
    gaussian_density,
    heat_evolve,
    max_stable_dt,
    pullback_density,
    pushforward_density,
)
from sense_forge.integrator import simulate_ensemble
from sense_forge.models import constant, geometric, ornstein_uhlenbeck
from sense_forge.normal_form import analytic_chart


def test_heat_equation_variance_grows_linearly():
    axis = np.linspace(-12, 12, 481)
    u = gaussian_density(axis, 0.0, 1.0)
    out = heat_evolve(u, 1.0, 1e-3)
    assert out.mass == pytest.approx(1.0, abs=1e-12)
    assert out.variance == pytest.approx(2.0, rel=1e-3)
    assert out.t == pytest.approx(1.0)


def test_reflecting_boundaries_conserve_mass():
    axis = np.linspace(0.05, 4.0, 200)
    w0 = gaussian_density(axis, 1.0, 0.3)
    model = geometric(sigma=0.8)
    dt = 0.5 / np.ceil(0.5 / max_stable_dt(axis, (0.8 * axis) ** 2))
    w = fpe_evolve(model, w0, 0.5, dt, 0.0)
    assert w.mass == pytest.approx(w0.mass, rel=1e-10)
    assert w.ledger["clamped"] == 0.0


def test_absorbing_ledger_balances_mass():
    axis = np.linspace(-2, 2, 101)
    w0 = gaussian_density(axis, 0.0, 0.5, boundary="absorbing")
    w = heat_evolve(w0, 1.0, 5e-4)
    assert w.ledger["absorbed"] > 0.01
    assert w.mass + w.ledger["absorbed"] == pytest.approx(w0.ledger["initial"], rel=1e-10)


def test_ornstein_uhlenbeck_reaches_stationary_law():
    axis = np.linspace(-5, 5, 201)
    w0 = gaussian_density(axis, 2.0, 0.3)
    w = fpe_evolve(ornstein_uhlenbeck(theta=1.0, b=1.0), w0, 8.0, 1e-3)
    stationary = stats.norm.pdf(axis, scale=np.sqrt(0.5))
    assert np.trapezoid(np.abs(w.values - stationary), axis) < 1e-3


def test_stability_error_reports_max_dt():
    axis = np.linspace(-1, 1, 101)
    with pytest.raises(StabilityError) as info:
        heat_evolve(gaussian_density(axis, 0, 0.2), 0.1, 0.1)
    assert info.value.max_dt == pytest.approx(0.4 * 0.02**2)
    assert info.value.exit_code == 6


def test_sense_changes_the_density_only_with_state_dependent_noise():
    axis = np.linspace(-4, 4, 161)
    w0 = gaussian_density(axis, 0, 0.5)
    a, b = (fpe_evolve(constant(b=1.0), w0, 0.5, 1e-3, alpha) for alpha in (0.0, 1.0))
    np.testing.assert_array_equal(a.values, b.values)
    axis = np.linspace(0.1, 4, 161)
    w0 = gaussian_density(axis, 1.0, 0.2)
    a, b = (fpe_evolve(geometric(), w0, 0.2, 5e-5, alpha) for alpha in (0.0, 1.0))
    assert density_distance(a, b)[0] > 1e-2


def test_push_and_pull_are_inverse():
    chart = analytic_chart(geometric(sigma=0.5), x_range=([0.05], [8.0]))
    z_axis = np.linspace(*chart.forward(np.array([[0.05], [8.0]]))[:, 0], 1024)
    u = gaussian_density(z_axis, 0.0, 0.5)
    w = pushforward_density(chart, u, np.linspace(0.05, 8.0, 1024))
    assert w.mass == pytest.approx(1.0, abs=2e-3)
    back = pullback_density(chart, w, z_axis)
    assert density_distance(back, u)[0] < 5e-3


def test_ks_distance_between_shifted_gaussians():
    axis = np.linspace(-10, 10, 4001)
    d = density_distance(gaussian_density(axis, 0, 1), gaussian_density(axis, 0.1, 1))[1]
    assert d == pytest.approx(2 * stats.norm.cdf(0.05) - 1, abs=1e-5)


def test_histogram_density_has_unit_mass_and_ledger():
    ens = simulate_ensemble(constant(b=1.0), [0.0], 1.0, 0.01, 2000, 3)
    grid = ensemble_to_density(ens, axis=np.linspace(-2, 2, 81))
    assert grid.mass == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < grid.ledger["outside"] < 0.1


def test_density_grid_checks():
    with pytest.raises(ContractError):
        DensityGrid(np.array([0.0, 1.0, 3.0]), np.ones(3))
    grid = gaussian_density(np.linspace(-1, 1, 5), 0, 1)
    with pytest.raises(ValueError):
        grid.values[0] = 1.0
