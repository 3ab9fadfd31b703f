"""Coordinate charts ``z(x)`` with inverse, Jacobian and exact JSON round trip.

Charts act on arrays of points of shape ``(..., n)``.  ``jacobian`` returns
``J[..., i, j] = d z^i / d x^j`` and ``hessian`` returns
``H[..., i, j, k] = d^2 z^i / d x^j d x^k``.  ``kappa`` holds the diagonal of
the normal form the chart produces: ``J D J^T = diag(kappa)`` with entries
1, 0 or -1.

Kinds
-----
identity
    ``z = x``.
analytic-1d
    Closed-form Lamperti maps: ``log`` (noise ``sigma x``), ``asinh`` (noise
    ``sqrt(1 + x^2)``) and ``linear`` (constant noise ``c``).
tabulated-1d
    ``z(x) = int_{x_ref}^x |D(s)|^{-1/2} ds`` tabulated by adaptive Simpson on
    a grid; off-grid values add a 16-point Gauss-Legendre integral from the
    nearest node.
diagonal-nd
    Product of 1D charts, one per axis, with passthrough axes where the
    diffusion vanishes identically.
numeric-2d
    Tables of ``z^1, z^2`` on a rectangular grid, interpolated by quintic
    splines (see :func:`sense_forge.normal_form.build_chart_2d`).
"""

import json

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator, RectBivariateSpline
from scipy.spatial import cKDTree

from .core import Box, central_difference
from .errors import ChartRangeError, ContractError, SingularNoiseError

__all__ = [
    "CoordinateChart",
    "IdentityChart",
    "AnalyticChart1D",
    "TabulatedChart1D",
    "DiagonalChart",
    "NumericChart2D",
    "chart_from_dict",
    "chart_from_json",
    "adaptive_simpson",
    "axis_integrand",
]

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(16)

# Newton/bisection stops once |z(x) - z| falls below this times max(1, |z|).
INVERSE_TOLERANCE = 1e-12


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        raise ContractError(f"expected points with last axis {dim}, got shape {x.shape}")
    return x


def _box_dict(box):
    return {"lower": list(box.lower), "upper": list(box.upper)}


def _box_from(data):
    return Box(data["lower"], data["upper"])


def _require_in(box, x, what):
    inside = box.contains(x)
    if not np.all(inside):
        flat = np.atleast_2d(x.reshape(-1, x.shape[-1]))
        bad = int(np.argwhere(~np.atleast_1d(inside).reshape(-1))[0][0])
        raise ChartRangeError(
            f"{what} {flat[bad].tolist()} outside the chart range {box.lower}..{box.upper}", path_index=bad
        )


class CoordinateChart:
    """Base class; subclasses define forward, inverse, jacobian and to_dict."""

    kind = "chart"

    def __init__(self, dim, valid_x_box, valid_z_box, kappa=None):
        self.dim = int(dim)
        self.valid_x_box = valid_x_box
        self.valid_z_box = valid_z_box
        self.kappa = tuple(int(k) for k in (kappa if kappa is not None else (1,) * self.dim))

    def forward(self, x):
        raise NotImplementedError

    def inverse(self, z):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def hessian(self, x):
        """Second derivatives by central differences of the Jacobian."""
        return central_difference(self.jacobian, _as_points(x, self.dim))

    def inverse_jacobian(self, x):
        """``dx/dz`` at the point ``x`` (the matrix inverse of the Jacobian)."""
        return np.linalg.inv(self.jacobian(x))

    def __call__(self, x):
        return self.forward(x)

    @property
    def normal_form(self):
        return np.diag(np.array(self.kappa, dtype=float))

    def round_trip_error(self, x):
        """Largest ``|x(z(x)) - x|`` over the given points."""
        x = _as_points(x, self.dim)
        return float(np.max(np.abs(self.inverse(self.forward(x)) - x)))

    def to_dict(self):
        raise NotImplementedError

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, dim={self.dim})"


class IdentityChart(CoordinateChart):
    kind = "identity"

    def __init__(self, dim, box=None):
        box = box if box is not None else Box.unbounded(dim)
        super().__init__(dim, box, box)

    def forward(self, x):
        x = _as_points(x, self.dim)
        _require_in(self.valid_x_box, x, "point")
        return x.copy()

    def inverse(self, z):
        z = _as_points(z, self.dim)
        _require_in(self.valid_z_box, z, "image point")
        return z.copy()

    def jacobian(self, x):
        x = _as_points(x, self.dim)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def hessian(self, x):
        x = _as_points(x, self.dim)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "box": _box_dict(self.valid_x_box)}


class AnalyticChart1D(CoordinateChart):
    """Closed-form unit-diffusion maps of scalar models.

    ``log``: ``z = ln(x / x_ref) / |sigma|`` for ``b = sigma x`` on ``x > 0``.
    ``asinh``: ``z = asinh(x) - asinh(x_ref)`` for ``b = sqrt(1 + x^2)``.
    ``linear``: ``z = (x - x_ref) / |c|`` for constant ``b = c``.
    """

    kind = "analytic-1d"
    FAMILIES = ("log", "asinh", "linear")

    def __init__(self, family, x_box, x_ref=None, scale=1.0):
        if family not in self.FAMILIES:
            raise ContractError(f"unknown analytic chart family {family!r}")
        self.family = family
        self.scale = abs(float(scale))
        if not self.scale > 0:
            raise ContractError("chart scale must be nonzero")
        x_box = x_box if isinstance(x_box, Box) else Box(*x_box)
        if family == "log" and x_box.lower[0] <= 0:
            raise SingularNoiseError(
                "the log chart needs x > 0: x = 0 is a zero point of b(x) = sigma x", abscissa=0.0
            )
        if x_ref is None:
            x_ref = 1.0 if family == "log" else 0.0
            x_ref = float(np.clip(x_ref, x_box.lower[0], x_box.upper[0]))
        self.x_ref = float(x_ref)
        z_lo, z_hi = self._forward(np.array([x_box.lower[0], x_box.upper[0]]))
        super().__init__(1, x_box, Box([z_lo], [z_hi]))

    def _forward(self, s):
        with np.errstate(divide="ignore"):
            if self.family == "log":
                return np.log(s / self.x_ref) / self.scale
            if self.family == "asinh":
                return np.arcsinh(s) - np.arcsinh(self.x_ref)
            return (s - self.x_ref) / self.scale

    def forward(self, x):
        x = _as_points(x, 1)
        _require_in(self.valid_x_box, x, "point")
        return self._forward(x)

    def inverse(self, z):
        z = _as_points(z, 1)
        _require_in(self.valid_z_box, z, "image point")
        if self.family == "log":
            return self.x_ref * np.exp(self.scale * z)
        if self.family == "asinh":
            return np.sinh(z + np.arcsinh(self.x_ref))
        return self.x_ref + self.scale * z

    def jacobian(self, x):
        x = _as_points(x, 1)
        if self.family == "log":
            j = 1.0 / (self.scale * x)
        elif self.family == "asinh":
            j = 1.0 / np.sqrt(1.0 + x * x)
        else:
            j = np.full(x.shape, 1.0 / self.scale)
        return j[..., None]

    def hessian(self, x):
        x = _as_points(x, 1)
        if self.family == "log":
            h = -1.0 / (self.scale * x * x)
        elif self.family == "asinh":
            h = -x / (1.0 + x * x) ** 1.5
        else:
            h = np.zeros(x.shape)
        return h[..., None, None]

    def to_dict(self):
        return {
            "kind": self.kind,
            "family": self.family,
            "scale": self.scale,
            "x_ref": self.x_ref,
            "x_box": _box_dict(self.valid_x_box),
        }


def axis_integrand(field, axis, anchor):
    """Integrand along one axis of a diffusion field.

    Returns callables ``(density, diag)``: ``diag(s)`` is ``D^{aa}`` at the
    anchor point with ``x^a`` replaced by ``s`` and ``density(s)`` is
    ``|diag(s)|^{-1/2}``.
    """
    anchor = np.asarray(anchor, dtype=float)

    def diag(s):
        s = np.asarray(s, dtype=float)
        pts = np.broadcast_to(anchor, s.shape + anchor.shape).copy()
        pts[..., axis] = s
        return field.raw(pts)[..., axis, axis]

    def density(s):
        d = diag(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 1.0 / np.sqrt(np.abs(d))

    return density, diag


def adaptive_simpson(func, a, b, tol=1e-10, max_depth=40):
    """Integrals of ``func`` over every interval ``[a_k, b_k]``.

    Vectorized adaptive Simpson: an interval is accepted once the two-panel
    and one-panel estimates differ by at most ``15 tol`` (the tolerance halves
    with each split) and the Richardson-corrected value is kept.

    Returns
    -------
    values : ndarray
    max_depth_hit : bool
        True when some interval reached ``max_depth`` without converging.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    result = np.zeros(a.shape[0])
    owner = np.arange(a.shape[0])
    m = 0.5 * (a + b)
    values = func(np.concatenate([a, m, b]))
    fa, fm, fb = np.split(values, 3)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = np.full(a.shape[0], float(tol))
    depth = 0
    hit = False
    while owner.size:
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = np.split(func(np.concatenate([lm, rm])), 2)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        done = np.abs(delta) <= 15.0 * tol
        if depth >= max_depth:
            hit = hit or not np.all(done)
            done[:] = True
        np.add.at(result, owner[done], (left + right + delta / 15.0)[done])
        keep = ~done
        if not np.any(keep):
            break
        a, m, b = a[keep], m[keep], b[keep]
        fa, flm, fm, frm, fb = fa[keep], flm[keep], fm[keep], frm[keep], fb[keep]
        left, right, tol, owner = left[keep], right[keep], tol[keep] / 2.0, owner[keep]
        a = np.concatenate([a, m])
        b = np.concatenate([m, b])
        fa, fm, fb = np.concatenate([fa, fm]), np.concatenate([flm, frm]), np.concatenate([fm, fb])
        whole = np.concatenate([left, right])
        tol = np.concatenate([tol, tol])
        owner = np.concatenate([owner, owner])
        depth += 1
    return result, hit


class TabulatedChart1D(CoordinateChart):
    """``z(x) = sign * int_{x_ref}^x |D|^{-1/2}`` tabulated on ``nodes``.

    ``density`` evaluates the integrand; without it (a chart restored from
    JSON whose source model is unknown) the chart falls back to cubic Hermite
    interpolation of the table and its node derivatives.
    """

    kind = "tabulated-1d"

    def __init__(self, nodes, values, slopes, x_ref, density=None, kappa=1, source=None, axis=0, anchor=None,
                 tolerance=1e-10):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.size < 2 or np.any(np.diff(self.nodes) <= 0):
            raise ContractError("chart nodes must be a strictly increasing 1D grid")
        if np.any(np.diff(self.values) <= 0):
            raise ContractError("tabulated chart values must increase strictly")
        self.x_ref = float(x_ref)
        self.density = density
        self.source = source
        self.axis = int(axis)
        self.anchor = None if anchor is None else [float(v) for v in anchor]
        self.tolerance = float(tolerance)
        self._pchip = PchipInterpolator(self.values, self.nodes)
        self._hermite = CubicHermiteSpline(self.nodes, self.values, self.slopes)
        x_box = Box([self.nodes[0]], [self.nodes[-1]])
        z_box = Box([self.values[0]], [self.values[-1]])
        super().__init__(1, x_box, z_box, (int(kappa),))

    @property
    def table_only(self):
        return self.density is None

    def _eval(self, s):
        if self.density is None:
            return self._hermite(s)
        k = np.clip(np.searchsorted(self.nodes, s), 1, self.nodes.size - 1)
        k = np.where(np.abs(s - self.nodes[k - 1]) <= np.abs(self.nodes[k] - s), k - 1, k)
        start = self.nodes[k]
        half = 0.5 * (s - start)
        mid = 0.5 * (s + start)
        pts = mid[..., None] + half[..., None] * GL_NODES
        f = self.density(pts.reshape(-1)).reshape(pts.shape)
        return self.values[k] + half * (f @ GL_WEIGHTS)

    def _slope(self, s):
        if self.density is None:
            return self._hermite(s, 1)
        return self.density(s)

    def forward(self, x):
        x = _as_points(x, 1)
        _require_in(self.valid_x_box, x, "point")
        return self._eval(x[..., 0])[..., None]

    def jacobian(self, x):
        x = _as_points(x, 1)
        return self._slope(x[..., 0])[..., None, None]

    def inverse(self, z):
        z = _as_points(z, 1)
        _require_in(self.valid_z_box, z, "image point")
        target = z[..., 0].reshape(-1)
        k = np.clip(np.searchsorted(self.values, target), 1, self.nodes.size - 1)
        lo = self.nodes[k - 1].copy()
        hi = self.nodes[k].copy()
        x = np.clip(self._pchip(target), lo, hi)
        scale = np.maximum(1.0, np.abs(target))
        active = np.ones(target.shape, dtype=bool)
        for _ in range(100):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xa = x[idx]
            resid = self._eval(xa) - target[idx]
            converged = np.abs(resid) <= INVERSE_TOLERANCE * scale[idx]
            below = resid < 0
            lo[idx] = np.where(below, xa, lo[idx])
            hi[idx] = np.where(below, hi[idx], xa)
            step = xa - resid / self._slope(xa)
            inside = (step > lo[idx]) & (step < hi[idx])
            new = np.where(inside, step, 0.5 * (lo[idx] + hi[idx]))
            stalled = hi[idx] - lo[idx] <= 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(xa))
            x[idx] = np.where(converged, xa, new)
            active[idx] = ~(converged | stalled)
        return x.reshape(z.shape[:-1] + (1,))

    def to_dict(self):
        return {
            "kind": self.kind,
            "nodes": self.nodes.tolist(),
            "values": self.values.tolist(),
            "slopes": self.slopes.tolist(),
            "x_ref": self.x_ref,
            "kappa": self.kappa[0],
            "axis": self.axis,
            "anchor": self.anchor,
            "tolerance": self.tolerance,
            "source": self.source,
        }


class DiagonalChart(CoordinateChart):
    """Product chart: ``axes[i]`` is a 1D chart or None (passthrough)."""

    kind = "diagonal-nd"

    def __init__(self, axes, box, kappa=None, source=None):
        self.axes = list(axes)
        dim = len(self.axes)
        box = box if isinstance(box, Box) else Box(*box)
        lower, upper = list(box.lower), list(box.upper)
        z_lower, z_upper = list(lower), list(upper)
        default_kappa = []
        for i, chart in enumerate(self.axes):
            if chart is None:
                default_kappa.append(0)
                continue
            lower[i], upper[i] = chart.valid_x_box.lower[0], chart.valid_x_box.upper[0]
            z_lower[i], z_upper[i] = chart.valid_z_box.lower[0], chart.valid_z_box.upper[0]
            default_kappa.append(chart.kappa[0])
        self.source = source
        super().__init__(dim, Box(lower, upper), Box(z_lower, z_upper), kappa if kappa is not None else default_kappa)

    def _map(self, x, method):
        out = np.array(x, dtype=float, copy=True)
        for i, chart in enumerate(self.axes):
            if chart is not None:
                out[..., i] = getattr(chart, method)(x[..., i : i + 1])[..., 0]
        return out

    def forward(self, x):
        x = _as_points(x, self.dim)
        _require_in(self.valid_x_box, x, "point")
        return self._map(x, "forward")

    def inverse(self, z):
        z = _as_points(z, self.dim)
        _require_in(self.valid_z_box, z, "image point")
        return self._map(z, "inverse")

    def jacobian(self, x):
        x = _as_points(x, self.dim)
        out = np.zeros(x.shape[:-1] + (self.dim, self.dim))
        for i, chart in enumerate(self.axes):
            out[..., i, i] = 1.0 if chart is None else chart.jacobian(x[..., i : i + 1])[..., 0, 0]
        return out

    def hessian(self, x):
        x = _as_points(x, self.dim)
        out = np.zeros(x.shape[:-1] + (self.dim,) * 3)
        for i, chart in enumerate(self.axes):
            if chart is not None:
                out[..., i, i, i] = chart.hessian(x[..., i : i + 1])[..., 0, 0, 0]
        return out

    def to_dict(self):
        return {
            "kind": self.kind,
            "axes": [None if c is None else c.to_dict() for c in self.axes],
            "box": _box_dict(self.valid_x_box),
            "kappa": list(self.kappa),
            "source": self.source,
        }


class NumericChart2D(CoordinateChart):
    """Quintic-spline chart from tables ``z1[i, j], z2[i, j]`` on ``grid1 x grid2``."""

    kind = "numeric-2d"

    def __init__(self, grid1, grid2, z1, z2, reference, kappa=(1, 1), residual=None, source=None):
        self.grid1 = np.asarray(grid1, dtype=float)
        self.grid2 = np.asarray(grid2, dtype=float)
        self.z1 = np.asarray(z1, dtype=float)
        self.z2 = np.asarray(z2, dtype=float)
        shape = (self.grid1.size, self.grid2.size)
        if self.z1.shape != shape or self.z2.shape != shape:
            raise ContractError("chart tables must have shape (len(grid1), len(grid2))")
        self.reference = [float(v) for v in reference]
        self.residual = None if residual is None else float(residual)
        self.source = source
        self._splines = [RectBivariateSpline(self.grid1, self.grid2, t, kx=5, ky=5, s=0) for t in (self.z1, self.z2)]
        nodes_z = np.stack([self.z1.ravel(), self.z2.ravel()], axis=-1)
        g1, g2 = np.meshgrid(self.grid1, self.grid2, indexing="ij")
        self._nodes_x = np.stack([g1.ravel(), g2.ravel()], axis=-1)
        self._tree = cKDTree(nodes_z)
        x_box = Box([self.grid1[0], self.grid2[0]], [self.grid1[-1], self.grid2[-1]])
        z_box = Box(nodes_z.min(axis=0), nodes_z.max(axis=0))
        super().__init__(2, x_box, z_box, kappa)

    def _eval(self, x, d1=0, d2=0):
        flat = x.reshape(-1, 2)
        out = np.stack([s.ev(flat[:, 0], flat[:, 1], dx=d1, dy=d2) for s in self._splines], axis=-1)
        return out.reshape(x.shape)

    def forward(self, x):
        x = _as_points(x, 2)
        _require_in(self.valid_x_box, x, "point")
        return self._eval(x)

    def jacobian(self, x):
        x = _as_points(x, 2)
        return np.stack([self._eval(x, 1, 0), self._eval(x, 0, 1)], axis=-1)

    def inverse(self, z):
        z = _as_points(z, 2)
        _require_in(self.valid_z_box, z, "image point")
        target = z.reshape(-1, 2)
        _, nearest = self._tree.query(target)
        x = self._nodes_x[nearest].copy()
        lo, hi = self.valid_x_box.lo, self.valid_x_box.hi
        scale = np.maximum(1.0, np.max(np.abs(target), axis=-1))
        for _ in range(50):
            resid = self._eval(x) - target
            if np.all(np.max(np.abs(resid), axis=-1) <= INVERSE_TOLERANCE * scale):
                break
            step = np.linalg.solve(self.jacobian(x), resid[..., None])[..., 0]
            x = np.clip(x - step, lo, hi)
        resid = np.max(np.abs(self._eval(x) - target), axis=-1)
        bad = resid > 1e-9 * scale
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ChartRangeError(f"image point {target[i].tolist()} is not attained by the chart", path_index=i)
        return x.reshape(z.shape)

    def to_dict(self):
        return {
            "kind": self.kind,
            "grid1": self.grid1.tolist(),
            "grid2": self.grid2.tolist(),
            "z1": self.z1.tolist(),
            "z2": self.z2.tolist(),
            "reference": self.reference,
            "kappa": list(self.kappa),
            "residual": self.residual,
            "source": self.source,
        }


def _field_for(source, field):
    if field is not None or source is None:
        return field
    from .core import as_diffusion
    from .models import build_model

    return as_diffusion(build_model(source))


def chart_from_dict(data, field=None):
    """Rebuilds a chart from :meth:`CoordinateChart.to_dict` output.

    Tabulated charts need the diffusion field for off-grid evaluation: it is
    taken from ``field`` if given, else rebuilt from the stored ``source``
    model descriptor, else the chart is restored in table-only mode.
    """
    kind = data.get("kind")
    if kind == "identity":
        return IdentityChart(data["dim"], _box_from(data["box"]))
    if kind == "analytic-1d":
        return AnalyticChart1D(data["family"], _box_from(data["x_box"]), data["x_ref"], data["scale"])
    if kind == "tabulated-1d":
        field = _field_for(data.get("source"), field)
        density = None
        if field is not None:
            anchor = data.get("anchor") or [data["x_ref"]]
            density = axis_integrand(field, data.get("axis", 0), anchor)[0]
        return TabulatedChart1D(
            data["nodes"], data["values"], data["slopes"], data["x_ref"], density, data.get("kappa", 1),
            data.get("source"), data.get("axis", 0), data.get("anchor"), data.get("tolerance", 1e-10),
        )
    if kind == "diagonal-nd":
        field = _field_for(data.get("source"), field)
        axes = [None if a is None else chart_from_dict(a, field) for a in data["axes"]]
        return DiagonalChart(axes, _box_from(data["box"]), data.get("kappa"), data.get("source"))
    if kind == "numeric-2d":
        return NumericChart2D(
            data["grid1"], data["grid2"], data["z1"], data["z2"], data["reference"], data.get("kappa", (1, 1)),
            data.get("residual"), data.get("source"),
        )
    raise ContractError(f"unknown chart kind {kind!r}")


def chart_from_json(text, field=None):
    return chart_from_dict(json.loads(text), field)
