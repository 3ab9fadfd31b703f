import math

import numpy as np
import pytest

from sense_forge.core import SdeModel
from sense_forge.errors import ContractError, DomainExitError
from sense_forge.integrator import (
    alpha_euler_step,
    check_time_grid,
    pushforward_paths,
    simulate_ensemble,
    simulate_senses,
    simulate_senses_with_wiener,
    wiener_ensemble,
    write_ensemble,
)
from sense_forge.io import read_json
from sense_forge.models import asinh, constant, diag2d, geometric, ornstein_uhlenbeck
from sense_forge.normal_form import analytic_chart
from sense_forge.rng import block_normals

ALPHAS = [0.0, 0.25, 0.5, 0.75, 1.0]

SCALAR_CASES = [
    (geometric(sigma=0.5), 1.0, "absorb"),
    (geometric(sigma=3.0, x_max=5.0), 1.0, "absorb"),
    (geometric(sigma=3.0, x_max=5.0), 1.0, "reflect"),
    (asinh(x_min=-3.0, x_max=3.0), 0.5, "reflect"),
    (constant(b=1.3, drift=0.2), 0.0, "absorb"),
    (ornstein_uhlenbeck(theta=2.0, b=0.7), 1.5, "absorb"),
]


@pytest.mark.parametrize("model, x0, policy", SCALAR_CASES)
def test_compiled_kernel_matches_vectorized_path(model, x0, policy):
    fast = simulate_senses(model, [x0], 0.5, 0.01, 300, 17, ALPHAS, policy, 5)
    slow = simulate_senses(model, [x0], 0.5, 0.01, 300, 17, ALPHAS, policy, 5, compiled=False)
    for a in ALPHAS:
        np.testing.assert_array_equal(fast[a].states, slow[a].states)
        assert fast[a].report == slow[a].report


def test_exits_are_counted_under_absorb_and_reflect():
    model = geometric(sigma=3.0, x_max=5.0)
    absorbed = simulate_ensemble(model, [1.0], 1.0, 0.01, 500, 3)
    reflected = simulate_ensemble(model, [1.0], 1.0, 0.01, 500, 3, policy="reflect")
    assert absorbed.report.exited_paths > 0
    assert np.all(reflected.states <= 5.0) and np.all(reflected.states >= model.domain.lo[0])


def test_abort_policy_raises_with_path_index():
    model = geometric(sigma=3.0, x_max=5.0)
    with pytest.raises(DomainExitError) as info:
        simulate_ensemble(model, [1.0], 1.0, 0.01, 500, 3, policy="abort")
    assert info.value.path_index is not None
    assert info.value.exit_code == 3


def test_ensemble_is_a_pure_function_of_the_seed():
    model = geometric()
    a = simulate_ensemble(model, [1.0], 0.1, 0.01, 50, 99)
    b = simulate_ensemble(model, [1.0], 0.1, 0.01, 50, 99)
    c = simulate_ensemble(model, [1.0], 0.1, 0.01, 50, 100)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    # path p uses stream first_stream + p, so a shifted window reproduces the tail
    d = simulate_ensemble(model, [1.0], 0.1, 0.01, 20, 99, first_stream=30)
    np.testing.assert_array_equal(a.states[30:], d.states)


def test_first_step_matches_hand_computation():
    sigma, dt = 0.5, 0.01
    model = geometric(sigma=sigma)
    z = block_normals(4, 0, 3, 1)[:, 0]
    for alpha in (0.0, 0.5, 1.0):
        ens = simulate_ensemble(model.with_sense(alpha), [2.0], dt, dt, 3, 4)
        dw = math.sqrt(dt) * z
        expected = 2.0 + alpha * sigma * sigma * 2.0 * dt + sigma * 2.0 * dw
        np.testing.assert_allclose(ens.terminal[:, 0], expected, rtol=1e-15)
        np.testing.assert_allclose(
            alpha_euler_step(model, [[2.0]] * 3, dw[:, None], dt, alpha)[:, 0], expected, rtol=1e-15
        )


def test_constant_noise_is_sense_neutral():
    out = simulate_senses(constant(b=1.0), [0.0], 1.0, 0.01, 200, 1, ALPHAS)
    for a in ALPHAS[1:]:
        np.testing.assert_array_equal(out[a].states, out[0.0].states)


def test_wiener_paths_match_the_driving_noise():
    out, wiener = simulate_senses_with_wiener(constant(b=1.0), [0.0], 0.2, 0.01, 40, 8, [0.5])
    np.testing.assert_array_equal(wiener.states, wiener_ensemble(0.2, 0.01, 40, 8).states)
    np.testing.assert_allclose(out[0.5].states, wiener.states, atol=1e-14)


def test_vectorized_path_for_two_dimensional_model():
    model = diag2d()
    ens = simulate_ensemble(model, [1.0, 2.0], 0.1, 1e-4, 30, 5, record_every=100)
    w = wiener_ensemble(0.1, 1e-4, 30, 5, dim=2, record_every=100)
    # diagonal geometric noise in Stratonovich sense: x_i = x_i(0) exp(W_i) up to Euler error
    exact = np.array([1.0, 2.0]) * np.exp(w.states)
    assert np.mean(np.abs(ens.states - exact)) < 5e-3


def test_pushforward_of_wiener_is_lognormal_image():
    chart = analytic_chart(geometric(sigma=0.5), x_ref=1.0)
    w = wiener_ensemble(0.5, 0.01, 10, 2)
    x = pushforward_paths(chart, w)
    np.testing.assert_allclose(x.states, np.exp(0.5 * w.states), rtol=1e-14)


def test_time_grid_and_arguments_are_checked():
    assert check_time_grid(1.0, 1e-3) == 1000
    with pytest.raises(ContractError):
        check_time_grid(1.0, 0.3)
    with pytest.raises(ContractError):
        simulate_ensemble(geometric(), [1.0], 1.0, 0.1, 0, 1)
    with pytest.raises(ContractError):
        simulate_ensemble(geometric(), [1.0], 1.0, 0.1, 3, 1, policy="bounce")


def test_write_ensemble_is_byte_deterministic(tmp_path):
    ens = simulate_ensemble(geometric(), [1.0], 0.05, 0.01, 4, 7)
    write_ensemble(ens, tmp_path / "a.csv", tmp_path / "a.json")
    write_ensemble(simulate_ensemble(geometric(), [1.0], 0.05, 0.01, 4, 7), tmp_path / "b.csv", tmp_path / "b.json")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert rows[0] == "path_id,t,x1" and len(rows) == 1 + 4 * 6
    # 17 significant digits round-trip exactly
    assert float(rows[-1].split(",")[2]) == ens.states[3, -1, 0]
    assert read_json(tmp_path / "a.json")["N"] == 4


def test_models_without_kernel_use_vectorized_path():
    model = geometric()
    plain = SdeModel(model.drift, model.noise, 0.5, "plain")
    a = simulate_ensemble(plain, [1.0], 0.1, 0.01, 20, 5)
    b = simulate_ensemble(model, [1.0], 0.1, 0.01, 20, 5)
    np.testing.assert_array_equal(a.states, b.states)
