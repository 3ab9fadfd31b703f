"""Field and model types, and the drift/diffusion algebra of an alpha-sense SDE.

The model is

    dX^i = a^i(X) dt + b^ik(X) dW_k |alpha

where ``alpha`` in [0, 1] is the evaluation point of the noise coefficient
inside each time step.  All fields are evaluated on arrays of points with shape
``(..., n)``; outputs keep the leading axes.

Index conventions
-----------------
* vector field Jacobian ``J[..., i, j] = d a^i / d x^j``
* noise derivative ``dB[..., i, k, j] = d b^ik / d x^j``
* diffusion derivative ``dD[..., i, k, j] = d D^ik / d x^j``
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, DomainError

__all__ = [
    "ITO",
    "STRATONOVICH",
    "HANGGI",
    "SenseParameter",
    "as_sense",
    "Box",
    "VectorFieldSpec",
    "MatrixFieldSpec",
    "DiffusionField",
    "SdeModel",
    "DiffusionEvaluation",
    "SymmetrizedNoise",
    "central_difference",
    "relative_deviation",
    "derivative_mismatch",
    "diffusion_matrix",
    "diffusion_tensor",
    "spurious_drift_from_noise",
    "spurious_drift_from_diffusion",
    "ito_equivalent_drift",
    "symmetrize_noise",
    "symmetrized_field",
    "constant_vector_field",
    "constant_matrix_field",
]

ITO = 0.0
STRATONOVICH = 0.5
HANGGI = 1.0

FD_STEP_FACTOR = np.finfo(float).eps ** (1.0 / 3.0)
PSD_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SenseParameter:
    """Integration sense: 0 is Ito, 1/2 Stratonovich, 1 Hanggi (isothermal)."""

    alpha: float

    def __post_init__(self):
        alpha = float(self.alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0,1], got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    def __float__(self):
        return self.alpha

    @classmethod
    def ito(cls):
        return cls(ITO)

    @classmethod
    def stratonovich(cls):
        return cls(STRATONOVICH)

    @classmethod
    def hanggi(cls):
        return cls(HANGGI)


def as_sense(value):
    """Accepts a SenseParameter or a bare float."""
    return value if isinstance(value, SenseParameter) else SenseParameter(value)


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box ``lower <= x <= upper``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != len(upper):
            raise ContractError("box bounds differ in length")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise ContractError(f"empty box {lower} .. {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, dim):
        return cls((-np.inf,) * dim, (np.inf,) * dim)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def require(self, x, what="point"):
        x = np.asarray(x, dtype=float)
        inside = self.contains(x)
        if not np.all(inside):
            bad = x[~inside] if x.ndim > 1 else x
            raise DomainError(f"{what} {np.atleast_2d(bad)[0].tolist()} outside domain {self.lower}..{self.upper}")

    def intersect(self, other):
        return Box(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}


def _points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        raise ContractError(f"expected points with last axis {dim}, got shape {x.shape}")
    return x


def central_difference(func, x):
    """Central differences of ``func`` along each coordinate of ``x``.

    The step is ``max(|x_j|, 1) * eps**(1/3)``; the realized difference
    ``(x+h) - (x-h)`` is used as denominator so representation error in ``h``
    does not leak into the quotient.  Output gets a trailing axis ``j``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    columns = []
    for j in range(n):
        h = FD_STEP_FACTOR * np.maximum(np.abs(x[..., j]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += h
        xm[..., j] -= h
        span = xp[..., j] - xm[..., j]
        diff = np.asarray(func(xp)) - np.asarray(func(xm))
        extra = diff.ndim - span.ndim
        columns.append(diff / span.reshape(span.shape + (1,) * extra))
    return np.stack(columns, axis=-1)


def relative_deviation(a, b, axis=-1):
    """``max|a - b| / max(max|a|, max|b|)`` along ``axis``; zero when both vanish."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    num = np.max(np.abs(a - b), axis=axis)
    den = np.maximum(np.max(np.abs(a), axis=axis), np.max(np.abs(b), axis=axis))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class VectorFieldSpec:
    """A drift-like vector field on R^dim.

    ``func`` maps points ``(..., dim)`` to vectors ``(..., dim)``.  The optional
    ``jacobian_func`` returns ``(..., dim, dim)`` with ``[i, j] = d a^i/d x^j``.
    """

    dim: int
    func: Callable
    jacobian_func: Optional[Callable] = None
    domain: Optional[Box] = None
    descriptor: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ContractError("dim must be positive")
        if self.domain is None:
            object.__setattr__(self, "domain", Box.unbounded(self.dim))
        elif self.domain.dim != self.dim:
            raise ContractError("domain dimension differs from field dimension")

    def raw(self, x):
        x = _points(x, self.dim)
        return np.broadcast_to(np.asarray(self.func(x), dtype=float), x.shape)

    def __call__(self, x, check=True):
        x = _points(x, self.dim)
        if check:
            self.domain.require(x)
        return np.array(self.raw(x))

    @property
    def has_jacobian(self):
        return self.jacobian_func is not None

    def jacobian(self, x, check=True):
        x = _points(x, self.dim)
        if check:
            self.domain.require(x)
        if self.jacobian_func is not None:
            out = np.asarray(self.jacobian_func(x), dtype=float)
            return np.array(np.broadcast_to(out, x.shape + (self.dim,)))
        return central_difference(self.raw, x)

    def fd_jacobian(self, x):
        return central_difference(self.raw, _points(x, self.dim))


@dataclass(frozen=True, eq=False)
class MatrixFieldSpec:
    """A noise matrix field ``B(x)`` of shape ``rows x cols`` on R^rows.

    ``derivative_func`` returns ``(..., rows, cols, rows)`` with
    ``[i, k, j] = d b^ik / d x^j``.
    """

    rows: int
    cols: int
    func: Callable
    derivative_func: Optional[Callable] = None
    domain: Optional[Box] = None
    descriptor: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ContractError("rows and cols must be positive")
        if self.domain is None:
            object.__setattr__(self, "domain", Box.unbounded(self.rows))
        elif self.domain.dim != self.rows:
            raise ContractError("domain dimension differs from state dimension")

    @property
    def dim(self):
        return self.rows

    def raw(self, x):
        x = _points(x, self.rows)
        out = np.asarray(self.func(x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.rows, self.cols))

    def __call__(self, x, check=True):
        x = _points(x, self.rows)
        if check:
            self.domain.require(x)
        return np.array(self.raw(x))

    @property
    def has_derivative(self):
        return self.derivative_func is not None

    def derivative(self, x, check=True):
        x = _points(x, self.rows)
        if check:
            self.domain.require(x)
        if self.derivative_func is not None:
            out = np.asarray(self.derivative_func(x), dtype=float)
            return np.array(np.broadcast_to(out, x.shape[:-1] + (self.rows, self.cols, self.rows)))
        return central_difference(self.raw, x)

    def fd_derivative(self, x):
        return central_difference(self.raw, _points(x, self.rows))


@dataclass(frozen=True, eq=False)
class DiffusionField:
    """A symmetric matrix field ``D(x)`` given directly rather than through ``B``.

    Used for the normal-form construction, where only ``D`` matters, and for
    indefinite coefficient matrices in the signature normal form.
    """

    dim: int
    func: Callable
    derivative_func: Optional[Callable] = None
    domain: Optional[Box] = None
    descriptor: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.domain is None:
            object.__setattr__(self, "domain", Box.unbounded(self.dim))

    @classmethod
    def from_noise(cls, noise):
        """``D = B B^T``, with the product rule when ``B`` has analytic derivatives."""

        def func(x):
            b = noise.raw(x)
            return b @ np.swapaxes(b, -1, -2)

        derivative = None
        if noise.has_derivative:

            def derivative(x):
                b = noise.raw(x)
                db = np.asarray(noise.derivative_func(_points(x, noise.rows)), dtype=float)
                db = np.broadcast_to(db, b.shape + (noise.rows,))
                term = np.einsum("...imj,...km->...ikj", db, b)
                return term + np.swapaxes(term, -2, -3)

        return cls(noise.rows, func, derivative, noise.domain, noise.descriptor)

    def raw(self, x):
        x = _points(x, self.dim)
        return np.broadcast_to(np.asarray(self.func(x), dtype=float), x.shape[:-1] + (self.dim, self.dim))

    def __call__(self, x, check=True):
        x = _points(x, self.dim)
        if check:
            self.domain.require(x)
        return np.array(self.raw(x))

    @property
    def has_derivative(self):
        return self.derivative_func is not None

    def derivative(self, x, check=True):
        x = _points(x, self.dim)
        if check:
            self.domain.require(x)
        if self.derivative_func is not None:
            out = np.asarray(self.derivative_func(x), dtype=float)
            return np.array(np.broadcast_to(out, x.shape[:-1] + (self.dim,) * 3))
        return central_difference(self.raw, x)


def as_diffusion(field_or_model):
    """Normalizes a model, noise field or diffusion field to a DiffusionField."""
    if isinstance(field_or_model, SdeModel):
        return DiffusionField.from_noise(field_or_model.noise)
    if isinstance(field_or_model, MatrixFieldSpec):
        return DiffusionField.from_noise(field_or_model)
    if isinstance(field_or_model, DiffusionField):
        return field_or_model
    raise ContractError(f"cannot interpret {type(field_or_model).__name__} as a diffusion field")


def derivative_mismatch(spec, points):
    """Largest relative gap between analytic and finite-difference derivatives.

    Returns 0.0 for fields without analytic derivatives.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(spec, VectorFieldSpec):
        if not spec.has_jacobian:
            return 0.0
        analytic, numeric = spec.jacobian(points, check=False), spec.fd_jacobian(points)
    elif isinstance(spec, (MatrixFieldSpec, DiffusionField)):
        if not spec.has_derivative:
            return 0.0
        analytic = spec.derivative(points, check=False)
        numeric = central_difference(spec.raw, points)
    else:
        raise ContractError("expected a field spec")
    flat = analytic.reshape(len(points), -1), numeric.reshape(len(points), -1)
    return float(np.max(relative_deviation(*flat)))


@dataclass(frozen=True, eq=False)
class SdeModel:
    """``dX = a(X) dt + B(X) dW`` read in sense ``alpha``."""

    drift: VectorFieldSpec
    noise: MatrixFieldSpec
    sense: SenseParameter = SenseParameter(STRATONOVICH)
    name: str = "model"
    descriptor: Optional[dict] = field(default=None, compare=False)
    # (family code, p0, p1) for built-in scalar families the integrator can
    # step in compiled code; must describe exactly the same drift and noise
    scalar_kernel: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sense", as_sense(self.sense))
        if self.drift.dim != self.noise.rows:
            raise ContractError(f"drift dimension {self.drift.dim} differs from noise rows {self.noise.rows}")
        if self.drift.domain != self.noise.domain:
            raise ContractError("drift and noise domains differ")

    @property
    def state_dim(self):
        return self.drift.dim

    @property
    def noise_dim(self):
        return self.noise.cols

    @property
    def domain(self):
        return self.drift.domain

    @property
    def alpha(self):
        return self.sense.alpha

    def with_sense(self, alpha):
        return SdeModel(self.drift, self.noise, as_sense(alpha), self.name, self.descriptor, self.scalar_kernel)


@dataclass(frozen=True)
class DiffusionEvaluation:
    """``D = B B^T`` at one point with its eigendata (descending, det O = +1)."""

    point: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def diffusion_tensor(noise, x, check=True):
    """Vectorized ``B B^T`` over points ``(..., n)``."""
    b = noise(x, check=check)
    d = b @ np.swapaxes(b, -1, -2)
    return 0.5 * (d + np.swapaxes(d, -1, -2))


def _descending_eigh(matrix):
    values, vectors = np.linalg.eigh(matrix)
    values = values[..., ::-1]
    vectors = vectors[..., :, ::-1].copy()
    flip = np.linalg.det(vectors) < 0
    vectors[flip, :, -1] *= -1.0
    return values, vectors


def diffusion_matrix(noise, x):
    """Diffusion matrix and eigendecomposition at a single point."""
    x = _points(x, noise.rows)
    if x.ndim != 1:
        raise ContractError("diffusion_matrix takes a single point; use diffusion_tensor for batches")
    d = diffusion_tensor(noise, x)
    values, vectors = _descending_eigh(d)
    if values[-1] < -PSD_TOLERANCE * max(1.0, abs(values[0])):
        raise ContractError(f"diffusion matrix is not positive semidefinite at {x.tolist()}: {values.tolist()}")
    return DiffusionEvaluation(x.copy(), d, values, vectors)


def spurious_drift_from_noise(noise, x, check=True):
    """``a_sp^i = sum_{m,k} (d b^ik / d x^m) b^mk``."""
    b = noise(x, check=check)
    db = noise.derivative(x, check=check)
    return np.einsum("...ikm,...mk->...i", db, b)


def spurious_drift_from_diffusion(field, x, check=True):
    """``a_sp^i = (1/2) sum_k d D^ik / d x^k`` from a noise or diffusion field."""
    d = as_diffusion(field)
    dd = d.derivative(x, check=check)
    return 0.5 * np.einsum("...ikk->...i", dd)


def ito_equivalent_drift(model, x, alpha=None, check=True):
    """Drift of the Ito form equivalent to the model read in sense ``alpha``."""
    alpha = model.alpha if alpha is None else as_sense(alpha).alpha
    a = model.drift(x, check=check)
    if alpha == 0.0:
        return a
    return a + alpha * spurious_drift_from_noise(model.noise, x, check=check)


@dataclass(frozen=True)
class SymmetrizedNoise:
    """Result of :func:`symmetrize_noise`.

    ``padded @ rotation == symmetric``; ``rotation`` is orthogonal and the
    leading ``n x n`` block of ``symmetric`` is the symmetric square root of
    ``B B^T``.  ``rank_deficient`` flags the case where the orthogonal factor
    is not unique and was chosen closest to the identity.
    """

    symmetric: np.ndarray
    rotation: np.ndarray
    padded: np.ndarray
    rank_deficient: bool


def _orthogonal_closest_to_identity(m):
    u, _, vt = np.linalg.svd(m)
    return (u @ vt).T


def symmetrize_noise(b, rank_tol=1e-12):
    """Right-multiplies ``B`` by an orthogonal matrix to make it symmetric.

    A rectangular ``B`` is completed by zeros to a square matrix first.  The
    orthogonal factor comes from the polar decomposition ``A = P U``; when
    ``A`` is singular, ``U`` is fixed on the null space by the orthogonal
    Procrustes choice closest to the identity.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 2 or not np.all(np.isfinite(b)):
        raise ContractError("symmetrize_noise expects a finite 2D matrix")
    n, m = b.shape
    size = max(n, m)
    square = np.zeros((size, size))
    square[:n, :m] = b
    w, s, vt = np.linalg.svd(square)
    scale = s[0] if s[0] > 0 else 1.0
    nonzero = s > rank_tol * scale
    rank_deficient = not np.all(nonzero)
    if rank_deficient:
        wr, vr = w[:, nonzero], vt[nonzero].T
        w0, v0 = w[:, ~nonzero], vt[~nonzero].T
        # U = Wr Vr^T + W0 Q V0^T; Q maximizes trace(U).
        q = _orthogonal_closest_to_identity(v0.T @ w0) if w0.shape[1] else np.zeros((0, 0))
        u = wr @ vr.T + (w0 @ q @ v0.T if w0.shape[1] else 0.0)
    else:
        u = w @ vt
    rotation = u.T
    symmetric = square @ rotation
    symmetric = 0.5 * (symmetric + symmetric.T)
    return SymmetrizedNoise(symmetric[:n], rotation, square[:n], rank_deficient)


def _psd_sqrt_with_derivative(d, dd):
    """Symmetric square root ``P`` of ``D`` and its derivative.

    ``P dP + dP P = dD`` is solved in the eigenbasis of ``D``:
    ``dP~_ab = dD~_ab / (s_a + s_b)``.
    """
    values, vectors = np.linalg.eigh(d)
    s = np.sqrt(np.clip(values, 0.0, None))
    p = np.einsum("...ia,...a,...ja->...ij", vectors, s, vectors)
    rotated = np.einsum("...ia,...ikj,...kb->...abj", vectors, dd, vectors)
    denom = s[..., :, None] + s[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        dp_tilde = rotated / denom[..., None]
    dp = np.einsum("...ia,...abj,...kb->...ikj", vectors, dp_tilde, vectors)
    return p, dp


def symmetrized_field(noise):
    """The pointwise symmetrized noise field ``P(x) = (B B^T)^{1/2}``.

    ``P`` is the ``B O(x)`` of :func:`symmetrize_noise` at every point, so it
    drives the same diffusion matrix.  Its derivative is analytic whenever
    ``B`` has analytic derivatives (and ``D`` is nonsingular).
    """
    diffusion = DiffusionField.from_noise(noise)
    n = noise.rows

    def func(x):
        values, vectors = np.linalg.eigh(diffusion.raw(x))
        s = np.sqrt(np.clip(values, 0.0, None))
        return np.einsum("...ia,...a,...ja->...ij", vectors, s, vectors)

    derivative = None
    if noise.has_derivative:

        def derivative(x):
            return _psd_sqrt_with_derivative(diffusion.raw(x), diffusion.derivative(x, check=False))[1]

    return MatrixFieldSpec(n, n, func, derivative, noise.domain)


def constant_vector_field(value, domain=None):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    dim = value.shape[0]
    return VectorFieldSpec(
        dim,
        lambda x: np.broadcast_to(value, np.shape(x)),
        lambda x: np.zeros(np.shape(x)[:-1] + (dim, dim)),
        domain,
    )


def constant_matrix_field(value, domain=None):
    value = np.atleast_2d(np.asarray(value, dtype=float))
    rows, cols = value.shape
    return MatrixFieldSpec(
        rows,
        cols,
        lambda x: np.broadcast_to(value, np.shape(x)[:-1] + (rows, cols)),
        lambda x: np.zeros(np.shape(x)[:-1] + (rows, cols, rows)),
        domain,
    )
