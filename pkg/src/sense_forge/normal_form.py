"""Normal-form coordinates: charts that make the diffusion matrix constant.

In one dimension ``dz = |D(x)|^{-1/2} dx`` gives ``D* = 1``.  In n dimensions
the construction diagonalizes ``D = O diag(lambda) O^T`` and rescales each
eigendirection by ``|lambda_i|^{-1/2}``; the result is the normal form
``diag(kappa)`` with ``kappa_i = sign(lambda_i)``.  The drift transforms and
the map back to the original coordinates live here as well.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import brentq

from .charts import (
    GL_NODES,
    GL_WEIGHTS,
    AnalyticChart1D,
    DiagonalChart,
    IdentityChart,
    NumericChart2D,
    TabulatedChart1D,
    adaptive_simpson,
    axis_integrand,
)
from .core import (
    Box,
    DiffusionField,
    MatrixFieldSpec,
    SdeModel,
    STRATONOVICH,
    VectorFieldSpec,
    as_diffusion,
    central_difference,
    ito_equivalent_drift,
    spurious_drift_from_noise,
)
from .errors import ChartValidationError, ContractError, RankVariationError, SingularNoiseError

__all__ = [
    "EigenField",
    "SignatureProfile",
    "eigen_field",
    "analytic_chart",
    "build_chart_1d",
    "build_chart_diagonal",
    "build_chart_2d",
    "invert_chart",
    "transform_diffusion",
    "transformed_spurious_drift",
    "transform_drift_tensor",
    "transform_drift_ito",
    "map_back_sde",
    "validate_chart",
]

RANK_TOLERANCE = 1e-10
NUMERIC_CHART_TOLERANCE = 1e-3

_RANK_MESSAGE = "the rank of the diffusion matrix is supposed to be the same for each x"


@dataclass(frozen=True)
class SignatureProfile:
    """Counts of positive, zero and negative eigenvalues; ``kappa`` per axis."""

    n_plus: int
    n_zero: int
    n_minus: int
    kappa: tuple

    @property
    def rank(self):
        return self.n_plus + self.n_minus

    def to_dict(self):
        return {"n_plus": self.n_plus, "n_zero": self.n_zero, "n_minus": self.n_minus, "kappa": list(self.kappa)}


@dataclass(frozen=True, eq=False)
class EigenField:
    """Eigendata of ``D`` along an ordered grid.

    ``eigenvalues[k]`` is sorted descending and ``eigenvectors[k]`` holds the
    matching columns with det +1.  ``continuous[k]`` is False where a sign tie
    or a determinant fix was needed at point ``k``.
    """

    points: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    continuous: np.ndarray
    signature: SignatureProfile
    rank_tol: float


def _source_descriptor(source):
    if isinstance(source, SdeModel):
        return source.descriptor
    return None


def _default_reference(lower, upper, preferred=0.0):
    return float(np.clip(preferred, lower, upper))


def _first_nonzero_positive(v):
    """Sign making the first clearly nonzero component of each column positive."""
    mag = np.abs(v)
    first = np.argmax(mag > 1e-12 * np.max(mag, axis=-2, keepdims=True), axis=-2)
    lead = np.take_along_axis(v, first[..., None, :], axis=-2)[..., 0, :]
    return np.where(lead < 0, -1.0, 1.0)


def _procrustes(block, target):
    """Rotation ``Q`` maximizing ``trace(target^T block Q)``."""
    u, _, vt = np.linalg.svd(block.T @ target)
    return u @ vt


def _align_degenerate(values, vectors, target, gap):
    """Within clusters of (numerically) equal eigenvalues pick the basis closest to ``target``."""
    n = values.shape[0]
    i = 0
    while i < n:
        j = i + 1
        while j < n and abs(values[j] - values[i]) <= gap:
            j += 1
        if j - i > 1:
            block = vectors[:, i:j]
            vectors[:, i:j] = block @ _procrustes(block, target[:, i:j])
        i = j
    return vectors


def _signature(values, tol):
    plus = int(np.sum(values > tol))
    minus = int(np.sum(values < -tol))
    zero = values.shape[0] - plus - minus
    return SignatureProfile(plus, zero, minus, (1,) * plus + (0,) * zero + (-1,) * minus)


def eigen_field(field, points, signature=False):
    """Sign-continuous eigendecomposition of ``D`` along ``points``.

    Parameters
    ----------
    field : SdeModel, MatrixFieldSpec or DiffusionField
    points : array (K, n)
        Grid points in traversal order.
    signature : bool
        Allow indefinite ``D`` (signature normal form); otherwise eigenvalues
        below ``-1e-12`` times the largest magnitude are rejected.

    Raises
    ------
    RankVariationError
        When the count of eigenvalues above ``rank_tol = 1e-10 max|lambda|``
        (or the signature) changes along the grid.
    """
    diffusion = as_diffusion(field)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = diffusion.dim
    d = diffusion.raw(points)
    d = 0.5 * (d + np.swapaxes(d, -1, -2))
    values, vectors = np.linalg.eigh(d)
    values = values[:, ::-1].copy()
    vectors = vectors[:, :, ::-1].copy()
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    rank_tol = RANK_TOLERANCE * scale
    if not signature and np.any(values < -1e-12 * max(scale, 1e-300)):
        k = int(np.argwhere(np.any(values < -1e-12 * scale, axis=1))[0][0])
        raise ContractError(
            f"diffusion matrix is indefinite at {points[k].tolist()}; use the signature normal form"
        )
    if signature:
        # descending by sign class: positives, zeros, negatives (each by magnitude)
        cls = np.where(values > rank_tol, 0, np.where(values < -rank_tol, 2, 1))
        order = np.lexsort((-np.abs(values), cls), axis=-1)
        values = np.take_along_axis(values, order, axis=-1)
        vectors = np.take_along_axis(vectors, order[:, None, :], axis=-1)
    profiles = [_signature(v, rank_tol) for v in values]
    first = profiles[0]
    for k, prof in enumerate(profiles):
        if (prof.n_plus, prof.n_minus) != (first.n_plus, first.n_minus):
            raise RankVariationError(
                f"signature changes from {first.to_dict()} to {prof.to_dict()} at {points[k].tolist()}: "
                + _RANK_MESSAGE
            )
    gap = 1e-12 * max(scale, 1e-300)
    continuous = np.ones(points.shape[0], dtype=bool)
    for k in range(points.shape[0]):
        target = np.eye(n) if k == 0 else vectors[k - 1]
        vectors[k] = _align_degenerate(values[k], vectors[k], target, gap)
        if k == 0:
            signs = _first_nonzero_positive(vectors[k])
        else:
            overlap = np.sum(vectors[k] * vectors[k - 1], axis=0)
            tie = np.abs(overlap) <= 1e-12
            signs = np.where(overlap < 0, -1.0, 1.0)
            if np.any(tie):
                signs = np.where(tie, _first_nonzero_positive(vectors[k]), signs)
                continuous[k] = False
        vectors[k] *= signs
        if np.linalg.det(vectors[k]) < 0:
            vectors[k][:, -1] *= -1.0
            continuous[k] = continuous[k] and k == 0
    return EigenField(points, values, vectors, continuous, first, rank_tol)


def analytic_chart(model, x_range=None, x_ref=None):
    """Closed-form chart for the built-in scalar models (geometric, asinh, constant)."""
    descriptor = model.descriptor or {}
    name = descriptor.get("model")
    params = descriptor.get("params") or {}
    box = Box(*x_range) if x_range is not None else model.domain
    if isinstance(box, tuple):
        box = Box(*box)
    if name == "geometric":
        return AnalyticChart1D("log", box, x_ref, params.get("sigma", 0.5))
    if name == "asinh":
        return AnalyticChart1D("asinh", box, x_ref)
    if name == "constant" and params.get("dim", 1) == 1:
        return AnalyticChart1D("linear", box, x_ref, params.get("b", 1.0))
    raise ContractError(f"no closed-form chart for model {name!r}")


def _check_noise_sign(source, nodes, signature):
    """Locates zero crossings of a scalar noise coefficient between nodes."""
    noise = source.noise if isinstance(source, SdeModel) else source if isinstance(source, MatrixFieldSpec) else None
    if noise is None or noise.rows != 1 or noise.cols != 1:
        return
    b = noise.raw(nodes[:, None])[:, 0, 0]
    zero = np.flatnonzero(b == 0.0)
    if zero.size:
        _singular(nodes[zero[0]])
    change = np.flatnonzero(np.sign(b[:-1]) != np.sign(b[1:]))
    if change.size:
        k = change[0]
        root = brentq(lambda s: float(noise.raw(np.array([[s]]))[0, 0, 0]), nodes[k], nodes[k + 1], xtol=1e-14)
        _singular(root)


def _singular(abscissa):
    raise SingularNoiseError(
        f"diffusion vanishes at x = {float(abscissa)!r}: every point of the chart range must be "
        "not a zero point of b(x)",
        abscissa=float(abscissa),
    )


def _tabulate_axis(density, diag, lower, upper, grid_size, x_ref, tol, signature):
    """Nodes, values and slopes of ``z = int_{x_ref} |D|^{-1/2}`` along one axis."""
    if not (np.isfinite(lower) and np.isfinite(upper) and lower < upper):
        raise ContractError(f"chart range must be finite and nonempty, got [{lower}, {upper}]")
    if grid_size < 2:
        raise ContractError("grid_size must be at least 2")
    nodes = np.linspace(lower, upper, int(grid_size))
    k_ref = int(np.argmin(np.abs(nodes - x_ref)))
    nodes[k_ref] = x_ref
    if np.any(np.diff(nodes) <= 0):
        raise ContractError("reference point collides with a neighbouring grid node")
    d_nodes = diag(nodes)
    sign = np.sign(d_nodes)
    if np.any(sign == 0) or not np.all(np.isfinite(d_nodes)):
        _singular(nodes[int(np.argmax((sign == 0) | ~np.isfinite(d_nodes)))])
    if np.any(sign != sign[0]):
        k = int(np.argmax(sign != sign[0]))
        root = brentq(lambda s: float(diag(np.array([s]))[0]), nodes[k - 1], nodes[k], xtol=1e-14)
        _singular(root)
    if sign[0] < 0 and not signature:
        raise ContractError("diffusion is negative on the range; use the signature normal form")

    def checked(s):
        f = density(s)
        bad = ~np.isfinite(f)
        if np.any(bad):
            _singular(s[int(np.argmax(bad))])
        return f

    cells, hit = adaptive_simpson(checked, nodes[:-1], nodes[1:], tol)
    if hit:
        # runaway subdivision means the integrand is not smooth: a near-zero of D
        _singular(nodes[int(np.argmax(np.abs(np.diff(np.log(checked(nodes))))))])
    values = np.zeros(nodes.size)
    values[k_ref + 1 :] = np.cumsum(cells[k_ref:])
    values[:k_ref] = -np.cumsum(cells[:k_ref][::-1])[::-1]
    return nodes, values, checked(nodes), int(sign[0])


def build_chart_1d(source, x_range=None, grid_size=1025, x_ref=None, signature=False, tol=1e-10):
    """Tabulated Lamperti chart ``z(x) = int_{x_ref}^x |D(s)|^{-1/2} ds``.

    Parameters
    ----------
    source : SdeModel, MatrixFieldSpec or DiffusionField
        A one-dimensional model or field.
    x_range : (lower, upper), optional
        Defaults to the field's domain, which must then be finite.
    grid_size : int
        Number of tabulation nodes (uniform, with the node nearest ``x_ref``
        moved onto it so that ``z(x_ref) = 0`` exactly).
    x_ref : float, optional
        Reference point; defaults to 0 clipped into the range.
    signature : bool
        Accept negative ``D`` (reported as ``kappa = -1``).
    tol : float
        Per-cell adaptive-Simpson tolerance.

    Raises
    ------
    SingularNoiseError
        If ``D`` vanishes (``b`` has a zero) anywhere on the range.
    """
    diffusion = as_diffusion(source)
    if diffusion.dim != 1:
        raise ContractError("build_chart_1d needs a one-dimensional field")
    if x_range is None:
        x_range = (diffusion.domain.lower[0], diffusion.domain.upper[0])
    lower, upper = float(x_range[0]), float(x_range[1])
    x_ref = _default_reference(lower, upper) if x_ref is None else float(x_ref)
    if not lower <= x_ref <= upper:
        raise ContractError(f"x_ref={x_ref} lies outside the range [{lower}, {upper}]")
    nodes_probe = np.linspace(lower, upper, int(max(grid_size, 2)))
    _check_noise_sign(source, nodes_probe, signature)
    density, diag = axis_integrand(diffusion, 0, [x_ref])
    nodes, values, slopes, kappa = _tabulate_axis(density, diag, lower, upper, grid_size, x_ref, tol, signature)
    return TabulatedChart1D(
        nodes, values, slopes, x_ref, density, kappa, _source_descriptor(source), 0, [x_ref], tol
    )


def invert_chart(chart, z):
    """``x(z)``; raises ChartRangeError outside the chart's image box."""
    return chart.inverse(z)


def _check_separable(diffusion, box, grid_size, anchor):
    n = diffusion.dim
    probe = max(3, min(int(grid_size), 9))
    axes = [np.linspace(box.lower[i], box.upper[i], probe) for i in range(n)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    d = diffusion.raw(mesh)
    scale = max(float(np.max(np.abs(d))), 1e-300)
    off = d - np.einsum("...ii->...i", d)[..., None] * np.eye(n)
    if np.max(np.abs(off)) > 1e-12 * scale:
        raise ContractError("diffusion is not diagonal; use build_chart_2d")
    for i in range(n):
        own = mesh.copy()
        own[:, [j for j in range(n) if j != i]] = anchor[[j for j in range(n) if j != i]]
        ref = diffusion.raw(own)[:, i, i]
        if np.max(np.abs(d[:, i, i] - ref)) > 1e-10 * scale:
            raise ContractError(f"D^{i + 1}{i + 1} depends on other coordinates; the field is not separable")


def build_chart_diagonal(source, ranges=None, grid_size=1025, x_ref=None, signature=False, tol=1e-10):
    """Product chart for ``D = diag(f_1(x^1), ..., f_n(x^n))``.

    Axes on which ``f_i`` vanishes identically pass through unchanged
    (``kappa_i = 0``); a partial zero raises RankVariationError.  With
    ``signature=True`` negative ``f_i`` are rescaled by ``|f_i|^{-1/2}`` and
    reported as ``kappa_i = -1``.
    """
    diffusion = as_diffusion(source)
    n = diffusion.dim
    if ranges is None:
        ranges = list(zip(diffusion.domain.lower, diffusion.domain.upper))
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    if len(ranges) != n:
        raise ContractError(f"need {n} axis ranges")
    box = Box([r[0] for r in ranges], [r[1] for r in ranges])
    if x_ref is None:
        x_ref = [_default_reference(lo, hi) for lo, hi in ranges]
    anchor = np.asarray(x_ref, dtype=float)
    if not np.all(box.contains(anchor)):
        raise ContractError(f"x_ref={anchor.tolist()} lies outside the ranges")
    _check_separable(diffusion, box, grid_size, anchor)
    axes = []
    for i, (lo, hi) in enumerate(ranges):
        density, diag = axis_integrand(diffusion, i, anchor)
        probe = diag(np.linspace(lo, hi, int(grid_size)))
        scale = max(float(np.max(np.abs(probe))), 1e-300)
        zero = np.abs(probe) <= RANK_TOLERANCE * scale
        if np.all(np.abs(probe) == 0.0) or np.all(zero) and scale <= 1e-300:
            axes.append(None)
            continue
        if np.any(zero):
            k = int(np.argmax(zero))
            raise RankVariationError(
                f"D^{i + 1}{i + 1} vanishes at x^{i + 1} = {float(np.linspace(lo, hi, int(grid_size))[k])!r} "
                f"but not on the whole axis: {_RANK_MESSAGE}"
            )
        if np.any(np.sign(probe) != np.sign(probe[0])):
            raise RankVariationError(f"D^{i + 1}{i + 1} changes sign on its axis: {_RANK_MESSAGE}")
        nodes, values, slopes, kappa = _tabulate_axis(
            density, diag, lo, hi, grid_size, anchor[i], tol, signature
        )
        axes.append(
            TabulatedChart1D(
                nodes, values, slopes, anchor[i], density, kappa, None, i, anchor.tolist(), tol
            )
        )
    if all(a is None for a in axes):
        return IdentityChart(n, box)
    return DiagonalChart(axes, box, source=_source_descriptor(source))


def _track(values, vectors, start_values, start_vectors, gap_rel=1e-10):
    """Continues eigenframes along sequences of points.

    ``values (L, P, 2)``, ``vectors (L, P, 2, 2)`` are raw eigendata for P
    paths of L points each; the frames are relabelled and re-signed so each
    column moves continuously from ``start_vectors``.
    """
    L = values.shape[0]
    out_values = np.empty_like(values)
    out_vectors = np.empty_like(vectors)
    prev_v, prev_l = start_vectors, start_values
    for k in range(L):
        lam, vec = values[k], vectors[k]
        overlap = np.abs(np.einsum("pia,pib->pab", prev_v, vec))
        swap = overlap[:, 0, 1] + overlap[:, 1, 0] > overlap[:, 0, 0] + overlap[:, 1, 1]
        lam = np.where(swap[:, None], lam[:, ::-1], lam)
        vec = np.where(swap[:, None, None], vec[:, :, ::-1], vec)
        scale = np.maximum(np.max(np.abs(lam), axis=-1), 1e-300)
        degenerate = np.abs(lam[:, 0] - lam[:, 1]) <= gap_rel * scale
        vec = np.where(degenerate[:, None, None], prev_v, vec)
        dots = np.einsum("pia,pia->pa", prev_v, vec)
        vec = vec * np.where(dots < 0, -1.0, 1.0)[:, None, :]
        out_values[k], out_vectors[k] = lam, vec
        prev_v, prev_l = vec, lam
    return out_values, out_vectors


def _segment_points(a, b):
    """GL abscissae of ``[a, b]`` in traversal order, then the end node."""
    t = 0.5 * (a + b) + 0.5 * (b - a) * GL_NODES
    order = np.argsort(t) if b >= a else np.argsort(-t)
    return np.concatenate([t[order], [b]]), GL_WEIGHTS[order] * 0.5 * abs(b - a), np.sign(b - a)


def _line_integrals(diffusion, fixed, axis, line, start, start_values, start_vectors):
    """Integrates ``omega`` along ``line`` (indices outward from ``start``).

    ``fixed`` holds the other coordinate for each of P parallel lines.
    Returns z increments at every node of ``line`` and the frames there.
    """
    P = fixed.shape[0]
    M = line.size
    z = np.zeros((M, P, 2))
    frames = np.zeros((M, P, 2, 2))
    lams = np.zeros((M, P, 2))
    frames[start], lams[start] = start_vectors, start_values
    for direction in (1, -1):
        idx = range(start, M - 1) if direction == 1 else range(start, 0, -1)
        coords, weights, signs, ends = [], [], [], []
        for i in idx:
            t, w, s = _segment_points(line[i], line[i + direction])
            coords.append(t)
            weights.append(w)
            signs.append(s)
            ends.append(i + direction)
        if not coords:
            continue
        seq = np.concatenate(coords)
        pts = np.empty((seq.size, P, 2))
        pts[..., axis] = seq[:, None]
        pts[..., 1 - axis] = fixed[None, :]
        d = diffusion.raw(pts)
        lam, vec = np.linalg.eigh(0.5 * (d + np.swapaxes(d, -1, -2)))
        lam, vec = _track(lam, vec, start_values, start_vectors)
        with np.errstate(divide="ignore"):
            omega = vec[..., axis, :] / np.sqrt(np.abs(lam))
        acc = z[start].copy()
        per = GL_NODES.size + 1
        for s_idx, end in enumerate(ends):
            block = slice(s_idx * per, s_idx * per + GL_NODES.size)
            acc = acc + signs[s_idx] * np.einsum("g,gpa->pa", weights[s_idx], omega[block])
            z[end] = acc
            frames[end] = vec[s_idx * per + GL_NODES.size]
            lams[end] = lam[s_idx * per + GL_NODES.size]
    return z, frames, lams


def build_chart_2d(source, grid1=None, grid2=None, grid_size=65, x_ref=None, signature=False,
                   tolerance=NUMERIC_CHART_TOLERANCE):
    """Numeric chart for a 2D diffusion field by integrating the eigen-coframe.

    With ``D = O diag(lambda) O^T`` the one-forms ``omega_i = |lambda_i|^{-1/2}
    v_i . dx`` satisfy ``omega D omega^T = diag(kappa)``.  ``z^i`` is
    accumulated from the reference point first along the ``x^1`` grid line
    through it, then along every ``x^2`` grid line (16-point Gauss-Legendre
    per segment), with eigenvector labels and signs carried continuously
    from the reference frame chosen closest to the identity.  The tabulated
    ``z`` is interpolated by quintic splines and validated: if
    ``max ||J D J^T - diag(kappa)||`` over the cell centres exceeds
    ``tolerance`` the chart is rejected.

    Raises
    ------
    ChartValidationError
        With the residual map, when the coframe is not integrable on the grid.
    RankVariationError
        When the rank or signature of ``D`` changes.
    """
    diffusion = as_diffusion(source)
    if diffusion.dim != 2:
        raise ContractError("build_chart_2d needs a two-dimensional field")
    dom = diffusion.domain
    if grid1 is None:
        grid1 = np.linspace(dom.lower[0], dom.upper[0], grid_size)
    if grid2 is None:
        grid2 = np.linspace(dom.lower[1], dom.upper[1], grid_size)
    grid1 = np.asarray(grid1, dtype=float)
    grid2 = np.asarray(grid2, dtype=float)
    if not (np.all(np.isfinite(grid1)) and np.all(np.isfinite(grid2))):
        raise ContractError("chart grids must be finite")
    if grid1.size < 4 or grid2.size < 4:
        raise ContractError("numeric charts need at least 4 nodes per axis")
    if x_ref is None:
        x_ref = [_default_reference(grid1[0], grid1[-1]), _default_reference(grid2[0], grid2[-1])]
    # the node nearest the reference point is moved onto it
    grid1, grid2 = grid1.copy(), grid2.copy()
    r1 = int(np.argmin(np.abs(grid1 - x_ref[0])))
    r2 = int(np.argmin(np.abs(grid2 - x_ref[1])))
    grid1[r1], grid2[r2] = float(x_ref[0]), float(x_ref[1])
    if np.any(np.diff(grid1) <= 0) or np.any(np.diff(grid2) <= 0):
        raise ContractError("reference point must lie inside the grid, between distinct nodes")
    reference = np.array([grid1[r1], grid2[r2]])

    # rank / signature over the whole grid
    g1, g2 = np.meshgrid(grid1, grid2, indexing="ij")
    mesh = np.stack([g1.ravel(), g2.ravel()], axis=-1)
    profile = eigen_field(diffusion, mesh, signature).signature
    if profile.n_zero:
        raise RankVariationError(f"numeric 2D charts need a nonsingular diffusion matrix; {_RANK_MESSAGE}")

    d0 = diffusion.raw(reference)
    lam0, vec0 = np.linalg.eigh(0.5 * (d0 + d0.T))
    best = None
    for perm in permutations(range(2)):
        v = vec0[:, list(perm)]
        v = v * np.where(np.diag(v) < 0, -1.0, 1.0)
        score = np.trace(v)
        if best is None or score > best[0] + 1e-12:
            best = (score, lam0[list(perm)], v)
    _, lam0, vec0 = best
    if abs(lam0[0] - lam0[1]) <= 1e-10 * np.max(np.abs(lam0)):
        vec0 = np.eye(2)
    kappa = tuple(int(k) for k in np.sign(lam0))

    row_z, row_frames, row_lams = _line_integrals(
        diffusion, np.array([reference[1]]), 0, grid1, r1, lam0[None], vec0[None]
    )
    col_z, _, _ = _line_integrals(diffusion, grid1, 1, grid2, r2, row_lams[:, 0], row_frames[:, 0])
    z = col_z + row_z[:, 0][None, :, :]  # (n2, n1, 2)
    z1 = z[..., 0].T.copy()
    z2 = z[..., 1].T.copy()

    chart = NumericChart2D(grid1, grid2, z1, z2, reference, kappa, None, _source_descriptor(source))
    c1 = 0.5 * (grid1[:-1] + grid1[1:])
    c2 = 0.5 * (grid2[:-1] + grid2[1:])
    m1, m2 = np.meshgrid(c1, c2, indexing="ij")
    centres = np.stack([m1, m2], axis=-1)
    residual_map = np.linalg.norm(
        transform_diffusion(chart, diffusion, centres) - np.diag(np.array(kappa, dtype=float)), axis=(-2, -1)
    )
    residual = float(np.max(residual_map))
    if not residual <= tolerance:
        raise ChartValidationError(
            f"numeric chart residual {residual!r} exceeds {tolerance!r}: the eigen-coframe of D is not "
            "integrable to global coordinates on this grid",
            residual=residual,
            residual_map=residual_map,
        )
    return NumericChart2D(grid1, grid2, z1, z2, reference, kappa, residual, _source_descriptor(source))


def transform_diffusion(chart, field, x):
    """``D*(z(x)) = J(x) D(x) J(x)^T``."""
    diffusion = as_diffusion(field)
    x = np.asarray(x, dtype=float)
    j = chart.jacobian(x)
    return j @ diffusion.raw(x) @ np.swapaxes(j, -1, -2)


def _fd_in_z(func, z, box):
    """Central differences in ``z``, one-sided (second order) at the box faces."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    columns = []
    for j in range(n):
        h = 1e-5 * np.maximum(np.abs(z[..., j]), 1.0)
        up_ok = z[..., j] + 2 * h <= box.upper[j]
        down_ok = z[..., j] - 2 * h >= box.lower[j]

        def shifted(k):
            zz = z.copy()
            zz[..., j] += k * h
            zz[..., j] = np.clip(zz[..., j], box.lower[j], box.upper[j])
            return func(zz)

        fp, fm = shifted(1), shifted(-1)
        extra = fp.ndim - h.ndim
        hh = h.reshape(h.shape + (1,) * extra)
        central = (fp - fm) / (2 * hh)
        f0 = func(z)
        forward = (-3 * f0 + 4 * fp - shifted(2)) / (2 * hh)
        backward = (3 * f0 - 4 * fm + shifted(-2)) / (2 * hh)
        both = (up_ok & down_ok).reshape(h.shape + (1,) * extra)
        upper_only = up_ok.reshape(h.shape + (1,) * extra)
        columns.append(np.where(both, central, np.where(upper_only, forward, backward)))
    return np.stack(columns, axis=-1)


def transformed_spurious_drift(chart, field, x):
    """Spurious drift in chart coordinates, ``(1/2) d D*^{ik} / d z^k``.

    ``D*(z)`` is evaluated as ``J D J^T`` at ``x(z)`` and differentiated by
    finite differences in ``z``; the result is the residual that a perfect
    normal form makes zero.
    """
    diffusion = as_diffusion(field)
    x = np.asarray(x, dtype=float)
    z = chart.forward(x)

    def d_star(zz):
        xx = chart.inverse(zz)
        return transform_diffusion(chart, diffusion, xx)

    dd = _fd_in_z(d_star, z, chart.valid_z_box)
    return 0.5 * np.einsum("...ikk->...i", dd)


def transform_drift_tensor(chart, drift, x):
    """Tensor rule ``a* = J a``."""
    x = np.asarray(x, dtype=float)
    a = drift.raw(x) if isinstance(drift, VectorFieldSpec) else np.asarray(drift, dtype=float)
    return np.einsum("...ij,...j->...i", chart.jacobian(x), a)


def transform_drift_ito(chart, model, x, alpha=None):
    """Ito-formula image ``a* = J (a + alpha a_sp) + (1/2) H : D``.

    This is the drift of ``Z = z(X)`` when ``X`` follows the model read in
    sense ``alpha``; second derivatives of the chart come from
    :meth:`CoordinateChart.hessian`.
    """
    x = np.asarray(x, dtype=float)
    a = ito_equivalent_drift(model, x, alpha, check=False)
    d = as_diffusion(model).raw(x)
    first = np.einsum("...ij,...j->...i", chart.jacobian(x), a)
    return first + 0.5 * np.einsum("...ijk,...jk->...i", chart.hessian(x), d)


def map_back_sde(chart, z_drift, name="mapped"):
    """The x-coordinate model of ``dZ = a*(Z) dt + I_c dW`` through the chart.

    The noise is ``J^{-1} I_c`` (``I_c = diag(|kappa|)``), which drives the same
    diffusion as the model the chart was built from, and the drift is
    ``a**(x) = J(x)^{-1} a*(z(x))``.  The returned model is read in the
    Stratonovich sense, so its Ito-equivalent drift is ``a** + (1/2) a_sp``:
    the Ito formula applied to ``x(Z)``.
    """
    n = chart.dim
    if isinstance(z_drift, VectorFieldSpec) and z_drift.dim != n:
        raise ContractError("drift dimension differs from chart dimension")
    ic = np.diag(np.abs(np.array(chart.kappa, dtype=float)))
    box = chart.valid_x_box

    def inverse_jacobian(x):
        j = chart.jacobian(x)
        det = np.linalg.det(j)
        if np.any(~np.isfinite(det)) or np.any(np.abs(det) <= 1e-300):
            raise ContractError("chart Jacobian is singular")
        return np.linalg.inv(j)

    def drift(x):
        z = chart.forward(np.clip(x, box.lo, box.hi))
        a_star = z_drift.raw(z) if isinstance(z_drift, VectorFieldSpec) else np.broadcast_to(z_drift, z.shape)
        return np.einsum("...ij,...j->...i", inverse_jacobian(x), a_star)

    def noise(x):
        return inverse_jacobian(x) @ ic

    drift_field = VectorFieldSpec(n, drift, None, box)
    noise_field = MatrixFieldSpec(n, n, noise, None, box)
    return SdeModel(drift_field, noise_field, STRATONOVICH, name)


def validate_chart(chart, field, points=None, n_points=1000, seed=0):
    """Round-trip, ``D*`` and transformed-spurious-drift residuals of a chart.

    Validation points default to ``n_points`` uniform draws inside the chart's
    x box (which must then be finite).
    """
    box = chart.valid_x_box
    if points is None:
        if not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))):
            raise ContractError("validation points needed for an unbounded chart")
        rng = np.random.default_rng(seed)
        points = box.lo + (box.hi - box.lo) * rng.random((n_points, chart.dim))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    scale = np.maximum(1.0, np.abs(points))
    round_trip = float(np.max(np.abs(chart.inverse(chart.forward(points)) - points) / scale))
    d_star = transform_diffusion(chart, field, points)
    d_res = float(np.max(np.abs(d_star - chart.normal_form)))
    asp = float(np.max(np.abs(transformed_spurious_drift(chart, field, points))))
    return {
        "kind": chart.kind,
        "points": int(points.shape[0]),
        "round_trip_error": round_trip,
        "diffusion_residual": d_res,
        "spurious_drift_residual": asp,
    }
