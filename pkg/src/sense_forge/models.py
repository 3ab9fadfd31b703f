"""Built-in models addressable by name, plus user models from expression strings."""

import numpy as np

from .core import Box, MatrixFieldSpec, SdeModel, STRATONOVICH, VectorFieldSpec
from .errors import ConfigError
from .expr import matrix_field_from_strings, vector_field_from_strings

# family codes understood by the compiled stepper in integrator.py
KERNEL_GEOMETRIC = 1
KERNEL_ASINH = 2
KERNEL_CONSTANT = 3
KERNEL_OU = 4

__all__ = ["REGISTRY", "build_model", "geometric", "asinh", "diag2d", "constant", "ornstein_uhlenbeck"]


def _zeros_vector(dim, domain):
    return VectorFieldSpec(
        dim,
        lambda x: np.zeros(np.shape(x)),
        lambda x: np.zeros(np.shape(x)[:-1] + (dim, dim)),
        domain,
    )


def geometric(sigma=0.5, mu=0.0, x_min=1e-6, x_max=1e6, alpha=STRATONOVICH):
    """``dX = mu X dt + sigma X dW`` on ``[x_min, x_max]`` (``x_min > 0``)."""
    if x_min <= 0:
        raise ConfigError("x_min", "the geometric model needs x_min > 0")
    domain = Box([x_min], [x_max])
    drift = VectorFieldSpec(1, lambda x: mu * x, lambda x: np.full(np.shape(x) + (1,), float(mu)), domain)
    noise = MatrixFieldSpec(
        1,
        1,
        lambda x: (sigma * x)[..., None],
        lambda x: np.full(np.shape(x)[:-1] + (1, 1, 1), float(sigma)),
        domain,
    )
    params = {"sigma": sigma, "mu": mu, "x_min": x_min, "x_max": x_max}
    kernel = (KERNEL_GEOMETRIC, float(mu), float(sigma))
    return SdeModel(drift, noise, alpha, "geometric", {"model": "geometric", "params": params}, kernel)


def asinh(x_min=-100.0, x_max=100.0, alpha=STRATONOVICH):
    """``dX = sqrt(1 + X^2) dW``; the unit-diffusion chart is ``z = asinh(x)``."""
    domain = Box([x_min], [x_max])
    noise = MatrixFieldSpec(
        1,
        1,
        lambda x: np.sqrt(1.0 + x * x)[..., None],
        lambda x: (x / np.sqrt(1.0 + x * x))[..., None, None],
        domain,
    )
    params = {"x_min": x_min, "x_max": x_max}
    descriptor = {"model": "asinh", "params": params}
    return SdeModel(_zeros_vector(1, domain), noise, alpha, "asinh", descriptor, (KERNEL_ASINH, 0.0, 0.0))


def diag2d(x_min=1e-3, x_max=1e3, alpha=STRATONOVICH):
    """``B = diag(x1, x2)`` with zero drift."""
    domain = Box([x_min, x_min], [x_max, x_max])

    def noise_func(x):
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 0, 0] = x[..., 0]
        out[..., 1, 1] = x[..., 1]
        return out

    def noise_derivative(x):
        out = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = 1.0
        out[..., 1, 1, 1] = 1.0
        return out

    noise = MatrixFieldSpec(2, 2, noise_func, noise_derivative, domain)
    params = {"x_min": x_min, "x_max": x_max}
    return SdeModel(_zeros_vector(2, domain), noise, alpha, "diag2d", {"model": "diag2d", "params": params})


def constant(b=1.0, dim=1, drift=0.0, alpha=STRATONOVICH):
    """Additive noise ``B = b I`` with constant drift: the sense-neutral control."""
    domain = Box.unbounded(dim)
    drift_value = np.full(dim, float(drift))
    drift_field = VectorFieldSpec(
        dim,
        lambda x: np.broadcast_to(drift_value, np.shape(x)),
        lambda x: np.zeros(np.shape(x)[:-1] + (dim, dim)),
        domain,
    )
    matrix = float(b) * np.eye(dim)
    noise = MatrixFieldSpec(
        dim,
        dim,
        lambda x: np.broadcast_to(matrix, np.shape(x)[:-1] + (dim, dim)),
        lambda x: np.zeros(np.shape(x)[:-1] + (dim, dim, dim)),
        domain,
    )
    params = {"b": b, "dim": dim, "drift": drift}
    kernel = (KERNEL_CONSTANT, float(drift), float(b)) if dim == 1 else None
    return SdeModel(drift_field, noise, alpha, "constant", {"model": "constant", "params": params}, kernel)


def ornstein_uhlenbeck(theta=1.0, b=1.0, alpha=STRATONOVICH):
    """``dX = -theta X dt + b dW``."""
    domain = Box.unbounded(1)
    drift = VectorFieldSpec(1, lambda x: -theta * x, lambda x: np.full(np.shape(x) + (1,), -float(theta)), domain)
    noise = MatrixFieldSpec(
        1,
        1,
        lambda x: np.full(np.shape(x)[:-1] + (1, 1), float(b)),
        lambda x: np.zeros(np.shape(x)[:-1] + (1, 1, 1)),
        domain,
    )
    params = {"theta": theta, "b": b}
    descriptor = {"model": "ornstein_uhlenbeck", "params": params}
    return SdeModel(drift, noise, alpha, "ornstein_uhlenbeck", descriptor, (KERNEL_OU, float(theta), float(b)))


REGISTRY = {
    "geometric": geometric,
    "asinh": asinh,
    "diag2d": diag2d,
    "constant": constant,
    "ornstein_uhlenbeck": ornstein_uhlenbeck,
}


def _expression_model(spec, alpha):
    noise_strings = spec.get("noise")
    if not noise_strings:
        raise ConfigError("noise", "expression models need a 'noise' matrix of strings")
    if isinstance(noise_strings, str):
        noise_strings = [[noise_strings]]
    noise_strings = [[row] if isinstance(row, str) else list(row) for row in noise_strings]
    dim = len(noise_strings)
    drift_strings = spec.get("drift") or ["0"] * dim
    if isinstance(drift_strings, str):
        drift_strings = [drift_strings]
    domain_spec = spec.get("domain")
    if domain_spec is None:
        domain = Box.unbounded(dim)
    else:
        domain = Box(domain_spec["lower"], domain_spec["upper"])
    params = spec.get("params") or {}
    try:
        drift = vector_field_from_strings(drift_strings, spec.get("drift_jacobian"), domain, params)
        noise = matrix_field_from_strings(noise_strings, spec.get("noise_derivative"), domain, params)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    descriptor = {
        "model": "expression",
        "drift": list(drift_strings),
        "noise": noise_strings,
        "drift_jacobian": spec.get("drift_jacobian"),
        "noise_derivative": spec.get("noise_derivative"),
        "domain": domain.to_dict() if domain_spec is not None else None,
        "params": dict(params),
    }
    return SdeModel(drift, noise, alpha, spec.get("name", "expression"), descriptor)


def build_model(spec, alpha=STRATONOVICH):
    """Builds a model from a registry name or a descriptor dict.

    Descriptors look like ``{"model": "geometric", "params": {"sigma": 0.5}}``
    or ``{"model": "expression", "drift": [...], "noise": [[...]], ...}``.
    """
    if isinstance(spec, str):
        spec = {"model": spec}
    name = spec.get("model", "expression")
    if name == "expression":
        return _expression_model(spec, alpha)
    if name not in REGISTRY:
        raise ConfigError("model", f"unknown model {name!r}; known: {sorted(REGISTRY)} or 'expression'")
    try:
        return REGISTRY[name](alpha=alpha, **(spec.get("params") or {}))
    except TypeError as exc:
        raise ConfigError("model_params", str(exc)) from None
