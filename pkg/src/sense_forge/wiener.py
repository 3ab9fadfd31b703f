"""Wiener paths, Brownian-bridge refinement and the alpha-point stochastic integral.

The integral  sum_j W(t_j + alpha dt) [W(t_{j+1}) - W(t_j)]  is evaluated on
paths whose interior points are drawn from the exact Brownian-bridge law, so
the only approximation is the partition itself.  A single step is *not* a good
stand-in for the stochastic integral: with W(0) = 0 the one-step sum is
W(alpha dt) W(dt), of variance (alpha^2 + alpha) dt^2.  Over K equal sub-steps
the variance is dt^2/2 + (alpha^2 + alpha - 1/2) dt^2 / K, which approaches the
alpha-independent limit dt^2/2; the mean is alpha dt for every K.
"""

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import as_sense
from .errors import ContractError
from .rng import PURPOSE_BRIDGE, PURPOSE_INCREMENTS, RngStreamSpec, _normal_pair

__all__ = [
    "WienerPath",
    "AlphaIntegralSample",
    "IntegralStatistics",
    "sample_increments",
    "refine_bridge",
    "alpha_point_integral",
    "integral_statistics",
    "alpha_integral_ensemble",
    "alpha_integral_variance",
]


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Wiener path on a uniform grid, optionally refined at ``t_j + alpha dt``.

    ``values`` has shape ``(steps + 1, dim)`` with ``values[0] == 0``;
    ``interior[j]`` holds ``W(t_j + interior_alpha * dt)`` after refinement.
    """

    dt: float
    values: np.ndarray
    stream: Optional[RngStreamSpec] = None
    interior: Optional[np.ndarray] = None
    interior_alpha: Optional[float] = None

    @property
    def steps(self):
        return self.values.shape[0] - 1

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def increments(self):
        return np.diff(self.values, axis=0)

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @property
    def total_time(self):
        return self.dt * self.steps


@dataclass(frozen=True)
class AlphaIntegralSample:
    alpha: float
    dt_total: float
    value: float


@dataclass(frozen=True)
class IntegralStatistics:
    mean: float
    variance: float
    standard_error: float
    count: int


def sample_increments(steps, dt, dim, stream):
    """Samples a Wiener path with ``steps`` increments of variance ``dt``.

    Draw ``j * dim + k`` of the stream's increment purpose is the standardized
    increment of component ``k`` over step ``j``.
    """
    if steps < 1:
        raise ContractError("steps must be at least 1")
    if not dt > 0:
        raise ContractError("dt must be positive")
    if dim < 1:
        raise ContractError("dim must be at least 1")
    z = stream.normals(steps * dim, PURPOSE_INCREMENTS).reshape(steps, dim)
    values = np.zeros((steps + 1, dim))
    np.cumsum(np.sqrt(dt) * z, axis=0, out=values[1:])
    return WienerPath(float(dt), values, stream)


def refine_bridge(path, alpha):
    """Inserts ``W(t_j + alpha dt)`` into every step by Brownian-bridge sampling.

    Given the endpoints, the interior value is normal with mean
    ``(1 - alpha) W(t_j) + alpha W(t_{j+1})`` and variance
    ``alpha (1 - alpha) dt``.  Grid values are returned unchanged.  ``alpha``
    of 0 or 1 is accepted and yields the left or right endpoint exactly.
    """
    alpha = as_sense(alpha).alpha
    if path.stream is None:
        raise ContractError("bridge refinement needs the path's stream for reproducible draws")
    xi = path.stream.normals(path.steps * path.dim, PURPOSE_BRIDGE).reshape(path.steps, path.dim)
    left, right = path.values[:-1], path.values[1:]
    spread = np.sqrt(alpha * (1.0 - alpha) * path.dt)
    interior = (1.0 - alpha) * left + alpha * right + spread * xi
    return WienerPath(path.dt, path.values, path.stream, interior, alpha)


def alpha_point_integral(path, alpha, component=0):
    """``sum_j W(t_j + alpha dt) dW_j`` for one component of a refined path."""
    alpha = as_sense(alpha).alpha
    if path.interior is not None and path.interior_alpha == alpha:
        points = path.interior[:, component]
    elif alpha == 0.0:
        points = path.values[:-1, component]
    elif alpha == 1.0:
        points = path.values[1:, component]
    else:
        raise ContractError(f"path is not refined for alpha={alpha}")
    dw = path.increments[:, component]
    value = 0.0
    for p, d in zip(points.tolist(), dw.tolist()):
        value += p * d
    return AlphaIntegralSample(alpha, path.total_time, value)


def integral_statistics(samples):
    """Sample mean, unbiased variance and standard error of the mean."""
    samples = list(samples)
    if len(samples) < 2:
        raise ContractError("need at least two samples")
    keys = {(s.alpha, s.dt_total) for s in samples}
    if len(keys) != 1:
        raise ContractError(f"samples mix (alpha, dt_total) values: {sorted(keys)}")
    values = np.array([s.value for s in samples])
    return _statistics(values)


def _statistics(values):
    n = values.size
    mean = float(np.mean(values))
    variance = float(np.var(values, ddof=1))
    return IntegralStatistics(mean, variance, float(np.sqrt(variance / n)), n)


@numba.njit(cache=True)
def _alpha_integral_kernel(seed, first_stream, n_paths, substeps, sub_dt, alphas, out):
    n_alpha = alphas.shape[0]
    root_dt = np.sqrt(sub_dt)
    spread = np.empty(n_alpha)
    for a in range(n_alpha):
        spread[a] = np.sqrt(alphas[a] * (1.0 - alphas[a]) * sub_dt)
    inc_purpose = np.uint64(PURPOSE_INCREMENTS)
    bridge_purpose = np.uint64(PURPOSE_BRIDGE)
    dw_buf = np.empty(2)
    xi_buf = np.empty(2)
    for p in range(n_paths):
        stream = np.uint64(first_stream + p)
        w = 0.0
        for a in range(n_alpha):
            out[a, p] = 0.0
        for j in range(substeps):
            if j % 2 == 0:
                block = np.uint64(j >> 1)
                dw_buf[0], dw_buf[1] = _normal_pair(seed, inc_purpose, stream, block)
                xi_buf[0], xi_buf[1] = _normal_pair(seed, bridge_purpose, stream, block)
            dw = root_dt * dw_buf[j % 2]
            xi = xi_buf[j % 2]
            w_next = w + dw
            for a in range(n_alpha):
                point = (1.0 - alphas[a]) * w + alphas[a] * w_next + spread[a] * xi
                out[a, p] += point * dw
            w = w_next
    return out


def alpha_integral_ensemble(dt, n_samples, alphas, master_seed, substeps=1, first_stream=0):
    """Alpha-point integrals over ``[0, dt]`` for many independent paths.

    Path ``p`` uses stream ``first_stream + p`` and is partitioned into
    ``substeps`` equal steps; the value for each alpha equals
    ``alpha_point_integral(refine_bridge(sample_increments(substeps, dt/substeps,
    1, stream), alpha), alpha)`` (all alphas share the same driving path).

    Returns
    -------
    dict
        alpha -> ndarray of ``n_samples`` values.
    """
    alphas = np.array([as_sense(a).alpha for a in np.atleast_1d(alphas)], dtype=float)
    if substeps < 1 or n_samples < 1:
        raise ContractError("substeps and n_samples must be positive")
    if not dt > 0:
        raise ContractError("dt must be positive")
    out = np.empty((alphas.size, int(n_samples)))
    _alpha_integral_kernel(
        np.uint64(int(master_seed)), int(first_stream), int(n_samples), int(substeps), dt / substeps, alphas, out
    )
    return {float(a): out[i] for i, a in enumerate(alphas)}


def alpha_integral_variance(alpha, dt, substeps):
    """Exact variance of the ``substeps``-step alpha-point sum over ``[0, dt]``."""
    return dt * dt * (0.5 + (alpha * alpha + alpha - 0.5) / substeps)
