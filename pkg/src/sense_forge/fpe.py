"""One-dimensional Fokker-Planck evolution and density transport between charts.

The equation is

    w_t = d/dx [ -(a + alpha a_sp) w + (1/2) d/dx (D w) ]

discretized in conservative flux form on a node-centred grid: boundary nodes
own half cells, so the trapezoid rule measures exactly the mass the scheme
conserves.  Fluxes at the cell faces use the centred drift flux
``(A_j w_j + A_{j+1} w_{j+1}) / 2`` and the central difference of ``D w``;
time stepping is explicit Euler under ``dt <= 0.4 dx^2 / max D``.
"""

from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import ito_equivalent_drift
from .errors import ChartRangeError, ContractError, StabilityError
from .integrator import check_time_grid
from .io import write_csv, write_json
from .models import constant

__all__ = [
    "BOUNDARIES",
    "DensityGrid",
    "CFL_FACTOR",
    "max_stable_dt",
    "fpe_evolve",
    "heat_evolve",
    "pushforward_density",
    "pullback_density",
    "density_distance",
    "ensemble_to_density",
    "gaussian_density",
    "write_density",
]

BOUNDARIES = ("reflecting", "absorbing")
CFL_FACTOR = 0.4
# tolerance on uniform spacing of an axis, relative to the spacing
_UNIFORM_TOL = 1e-9


def _check_axis(axis):
    axis = np.asarray(axis, dtype=float)
    if axis.ndim != 1 or axis.size < 3:
        raise ContractError("density axis must be 1D with at least 3 nodes")
    steps = np.diff(axis)
    if np.any(steps <= 0) or np.max(np.abs(steps - steps.mean())) > _UNIFORM_TOL * steps.mean():
        raise ContractError("density axis must be uniform and increasing")
    return axis


def _cell_volumes(axis):
    dx = (axis[-1] - axis[0]) / (axis.size - 1)
    vol = np.full(axis.size, dx)
    vol[0] = vol[-1] = 0.5 * dx
    return vol


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Density values on a uniform axis at time ``t``.

    ``ledger`` tracks mass bookkeeping: ``initial`` mass, mass ``absorbed``
    at the boundaries and mass added by ``clamped`` negative values.
    """

    axis: np.ndarray
    values: np.ndarray
    t: float = 0.0
    boundary: str = "reflecting"
    ledger: dict = field(default_factory=dict)

    def __post_init__(self):
        axis = _check_axis(self.axis)
        values = np.array(self.values, dtype=float)
        if values.shape != axis.shape:
            raise ContractError("density values must match the axis")
        if not np.all(np.isfinite(values)):
            raise ContractError("density values must be finite")
        if np.any(values < -1e-12):
            raise ContractError("density values must be nonnegative")
        if self.boundary not in BOUNDARIES:
            raise ContractError(f"boundary must be one of {BOUNDARIES}")
        axis = axis.copy()
        axis.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "values", values)
        ledger = {"initial": float(self.mass), "absorbed": 0.0, "clamped": 0.0}
        ledger.update(self.ledger)
        object.__setattr__(self, "ledger", ledger)

    @property
    def dx(self):
        return float((self.axis[-1] - self.axis[0]) / (self.axis.size - 1))

    @property
    def mass(self):
        return float(np.trapezoid(self.values, self.axis))

    @property
    def mean(self):
        return float(np.trapezoid(self.axis * self.values, self.axis) / self.mass)

    @property
    def variance(self):
        m = self.mean
        return float(np.trapezoid((self.axis - m) ** 2 * self.values, self.axis) / self.mass)

    def cdf(self):
        """Cumulative trapezoid integral, starting at 0."""
        steps = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.axis)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def normalized(self):
        return replace(self, values=self.values / self.mass, ledger={})


def gaussian_density(axis, mean, std, boundary="reflecting"):
    """Normal density sampled on ``axis`` (not renormalized)."""
    axis = np.asarray(axis, dtype=float)
    values = np.exp(-0.5 * ((axis - mean) / std) ** 2) / (std * np.sqrt(2 * np.pi))
    return DensityGrid(axis, values, 0.0, boundary)


def max_stable_dt(axis, diffusion_values):
    dx = (axis[-1] - axis[0]) / (axis.size - 1)
    return float(CFL_FACTOR * dx * dx / np.max(np.abs(diffusion_values)))


@numba.njit(cache=True)
def _evolve_kernel(w, drift, diff, dx, dt, steps, absorbing):
    """Explicit flux-form steps; returns (absorbed, clamped) mass."""
    m = w.shape[0]
    flux = np.zeros(m + 1)  # flux[j] sits between nodes j-1 and j
    vol = np.full(m, dx)
    vol[0] = 0.5 * dx
    vol[m - 1] = 0.5 * dx
    absorbed = 0.0
    clamped = 0.0
    for _ in range(steps):
        for j in range(1, m):
            flux[j] = 0.5 * (drift[j - 1] * w[j - 1] + drift[j] * w[j]) - 0.5 * (
                diff[j] * w[j] - diff[j - 1] * w[j - 1]
            ) / dx
        if absorbing:
            # Dirichlet nodes: whatever reaches them leaves the domain
            absorbed += dt * (flux[m - 1] - flux[1]) + w[0] * vol[0] + w[m - 1] * vol[m - 1]
            w[0] = 0.0
            w[m - 1] = 0.0
            for j in range(1, m - 1):
                w[j] += dt / vol[j] * (flux[j] - flux[j + 1])
        else:
            for j in range(m):
                w[j] += dt / vol[j] * (flux[j] - flux[j + 1])
        for j in range(m):
            if w[j] < 0.0:
                clamped -= w[j] * vol[j]
                w[j] = 0.0
    return absorbed, clamped


def fpe_evolve(model, w0, T, dt, alpha=None):
    """Evolves a density under the FPE of a scalar model read in sense ``alpha``.

    Parameters
    ----------
    model : SdeModel
        One-dimensional model; its domain must contain the axis.
    w0 : DensityGrid
        Initial density; its ``boundary`` selects reflecting (zero flux) or
        absorbing (zero density) boundary nodes.
    T, dt : float
        ``dt`` must divide ``T`` and satisfy ``dt <= 0.4 dx^2 / max D``.
    alpha : float, optional
        Defaults to the model's own sense.

    Raises
    ------
    StabilityError
        With ``max_dt`` set to the largest admissible step.
    """
    if model.state_dim != 1 or model.noise_dim < 1:
        raise ContractError("fpe_evolve needs a one-dimensional model")
    steps = check_time_grid(T, dt)
    x = w0.axis[:, None]
    drift = ito_equivalent_drift(model, x, alpha)[:, 0]
    b = model.noise(x)
    diff = np.einsum("jk,jk->j", b[:, 0, :], b[:, 0, :])
    limit = max_stable_dt(w0.axis, diff)
    if dt > limit:
        raise StabilityError(f"dt={dt!r} exceeds the stability bound {limit!r} (0.4 dx^2 / max D)", max_dt=limit)
    w = np.array(w0.values, dtype=float)
    absorbed, clamped = _evolve_kernel(w, drift, diff, w0.dx, float(dt), steps, w0.boundary == "absorbing")
    ledger = dict(w0.ledger)
    ledger["absorbed"] = ledger.get("absorbed", 0.0) + float(absorbed)
    ledger["clamped"] = ledger.get("clamped", 0.0) + float(clamped)
    return DensityGrid(w0.axis, w, w0.t + steps * dt, w0.boundary, ledger)


_HEAT_MODEL = constant(b=1.0, dim=1, drift=0.0)


def heat_evolve(u0, T, dt):
    """``u_t = (1/2) u_zz``: :func:`fpe_evolve` on the unit constant-noise model."""
    return fpe_evolve(_HEAT_MODEL, u0, T, dt)


def _resample(chart_map, source, target_axis, jacobian, boundary, t):
    interp = PchipInterpolator(source.axis, source.values, extrapolate=False)
    values = interp(chart_map)
    values = np.where(np.isfinite(values), values, 0.0) * np.abs(jacobian)
    return DensityGrid(target_axis, np.clip(values, 0.0, None), t, boundary)


def _support_inside(u, box, what):
    support = u.axis[u.values > 0]
    if support.size and (support[0] < box.lower[0] or support[-1] > box.upper[0]):
        raise ChartRangeError(
            f"{what} support [{support[0]!r}, {support[-1]!r}] exceeds the chart range {box.lower}..{box.upper}"
        )


def pushforward_density(chart, u, x_axis=None):
    """``w(x) = u(z(x)) |dz/dx|`` on ``x_axis`` (from ``u dz = w dx``).

    ``x_axis`` defaults to a uniform axis with as many nodes as ``u`` over the
    preimage of ``u.axis``.  ``u`` is interpolated monotonically (PCHIP) and
    taken as zero outside its axis.
    """
    _support_inside(u, chart.valid_z_box, "density")
    if x_axis is None:
        ends = chart.inverse(np.array([[u.axis[0]], [u.axis[-1]]]))[:, 0]
        x_axis = np.linspace(ends[0], ends[1], u.axis.size)
    x_axis = _check_axis(x_axis)
    x = np.clip(x_axis, chart.valid_x_box.lower[0], chart.valid_x_box.upper[0])[:, None]
    z = chart.forward(x)[:, 0]
    jac = chart.jacobian(x)[:, 0, 0]
    return _resample(z, u, x_axis, jac, u.boundary, u.t)


def pullback_density(chart, w, z_axis=None):
    """``u(z) = w(x(z)) |dx/dz|``, the inverse of :func:`pushforward_density`."""
    _support_inside(w, chart.valid_x_box, "density")
    if z_axis is None:
        ends = chart.forward(np.array([[w.axis[0]], [w.axis[-1]]]))[:, 0]
        z_axis = np.linspace(ends[0], ends[1], w.axis.size)
    z_axis = _check_axis(z_axis)
    z = np.clip(z_axis, chart.valid_z_box.lower[0], chart.valid_z_box.upper[0])[:, None]
    x = chart.inverse(z)
    jac = 1.0 / chart.jacobian(x)[:, 0, 0]
    return _resample(x[:, 0], w, z_axis, jac, w.boundary, w.t)


def density_distance(w1, w2):
    """``(L1, KS)``: trapezoid L1 distance and the largest CDF gap."""
    if w1.axis.shape != w2.axis.shape or not np.array_equal(w1.axis, w2.axis):
        raise ContractError("densities live on different axes")
    l1 = float(np.trapezoid(np.abs(w1.values - w2.values), w1.axis))
    ks = float(np.max(np.abs(w1.cdf() - w2.cdf())))
    return l1, ks


def ensemble_to_density(ensemble, time_index=-1, axis=None, bins=512):
    """Histogram of a scalar ensemble with node-centred bins, unit trapezoid mass.

    Node ``j`` owns ``[x_j - dx/2, x_j + dx/2]`` clipped to the axis, so the
    trapezoid rule returns exactly the fraction of samples counted.  Samples
    outside the axis are left out and reported in the ledger as ``outside``.
    """
    if ensemble.dim != 1:
        raise ContractError("ensemble_to_density needs a scalar ensemble")
    samples = ensemble.at(time_index)[:, 0]
    if axis is None:
        lo, hi = float(np.min(samples)), float(np.max(samples))
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        axis = np.linspace(lo, hi, bins)
    axis = _check_axis(axis)
    dx = (axis[-1] - axis[0]) / (axis.size - 1)
    inside = (samples >= axis[0]) & (samples <= axis[-1])
    index = np.clip(np.floor((samples[inside] - axis[0]) / dx + 0.5).astype(np.int64), 0, axis.size - 1)
    counts = np.bincount(index, minlength=axis.size).astype(float)
    n_in = int(np.count_nonzero(inside))
    values = counts / (max(n_in, 1) * _cell_volumes(axis))
    t = float(ensemble.times[time_index])
    ledger = {"outside": float(samples.size - n_in) / samples.size}
    return DensityGrid(axis, values, t, "reflecting", ledger)


def write_density(grid, csv_path, json_path, extra=None):
    """CSV ``x,w`` plus JSON metadata (time, boundary, mass ledger)."""
    write_csv(csv_path, ["x", "w"], zip(grid.axis.tolist(), grid.values.tolist()))
    meta = {"t": grid.t, "boundary": grid.boundary, "mass": grid.mass, "ledger": grid.ledger, "nodes": grid.axis.size}
    if extra:
        meta.update(extra)
    write_json(json_path, meta)
    return meta
