import numpy as np
import pytest

from sense_forge.errors import ConfigError, ContractError
from sense_forge.expr import compile_expression
from sense_forge.models import REGISTRY, build_model


@pytest.mark.parametrize(
    "source, expected",
    [
        ("1 + x1^2", 1 + 0.3**2),
        ("2^3^2", 2.0 ** 9),
        ("-x2 * 2", 0.8),
        ("sqrt(1 + x1**2) * exp(-x2)", np.sqrt(1.09) * np.exp(0.4)),
        ("k * x1", 0.75),
    ],
)
def test_expression_values(source, expected):
    value = compile_expression(source, 2, {"k": 2.5})(np.array([0.3, -0.4]))
    assert float(value) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("source", ["__import__('os')", "x1 if x1 else 0", "x3", "foo(x1)", "x1 = 2", "x1 < 2"])
def test_expression_rejects_unsafe_or_unknown(source):
    with pytest.raises(ContractError):
        compile_expression(source, 2)(np.zeros(2))


def test_expression_model_round_trip():
    spec = {"model": "expression", "noise": [["s*x1"]], "drift": ["0"], "params": {"s": 0.5}}
    model = build_model(spec)
    again = build_model(model.descriptor)
    x = np.array([[2.0]])
    np.testing.assert_array_equal(model.noise(x), again.noise(x))
    np.testing.assert_allclose(model.noise.derivative(x), [[[[0.5]]]], rtol=1e-9)


def test_registry_models_build():
    for name in REGISTRY:
        model = build_model(name, alpha=0.25)
        assert model.alpha == 0.25


def test_unknown_model_names_field():
    with pytest.raises(ConfigError, match="model"):
        build_model("nope")
    with pytest.raises(ConfigError, match="model_params"):
        build_model({"model": "geometric", "params": {"bogus": 1}})
