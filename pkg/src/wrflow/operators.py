"""Validated positive-operator arithmetic.

Every operator is a dense complex128 ``(d, d)`` array. Real input is promoted
to complex; Hermitian input is symmetrized so downstream eigensolvers see an
exactly Hermitian matrix.
"""

from dataclasses import dataclass
from functools import cached_property
import warnings

import numpy as np

from ._backend import kernel
from .errors import (
    BlindDirectionWarning,
    DimensionMismatchError,
    EmptyBasisError,
    InvalidConfigError,
    NotHermitianError,
    NotProjectionError,
    ZeroOperatorWarning,
)

EPS_HERM = 1e-10
EPS_PROJ = 1e-10
EPS_PSD = 1e-10
EPS_RECON = 1e-8
RANK_TOL = 1e-12
# Eigenvalues at or below SQRT_FLOOR * |R| are below eigensolver resolution;
# the tree and the sampler zero them before taking square roots.
SQRT_FLOOR = 1e-14
SPLIT_TOL = 1e-10


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def as_hermitian(M, tol=EPS_HERM):
    """Return ``M`` as a symmetrized complex128 array.

    Raises ``NotHermitianError`` when ``|M - M*|_F > tol * |M|_F``.
    """
    a = np.asarray(M)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise DimensionMismatchError(f"expected a nonempty square matrix, got shape {a.shape}")
    a = a.astype(np.complex128)
    if not np.all(np.isfinite(a)):
        raise NotHermitianError("matrix has non-finite entries")
    skew = np.linalg.norm(a - a.conj().T)
    if skew > tol * np.linalg.norm(a):
        raise NotHermitianError(f"|M - M*|_F = {skew:.3e} exceeds {tol:g} * |M|_F")
    return 0.5 * (a + a.conj().T)


class PsdOperator:
    """A positive semidefinite operator with a lazily cached principal root.

    Instances are immutable: ``matrix``, ``sqrt`` and ``eigenvalues`` are
    read-only arrays. Build them with :func:`validate_psd` unless the matrix
    is PSD by construction.
    """

    def __init__(self, matrix, psd_tol=EPS_PSD, floor=0.0):
        self.matrix = _readonly(np.asarray(matrix, dtype=np.complex128))
        self.psd_tol = psd_tol
        self.floor = floor

    @classmethod
    def zero(cls, d):
        return cls(np.zeros((d, d), dtype=np.complex128))

    @cached_property
    def _spectral(self):
        w, s = kernel.psd_sqrt(self.matrix, self.psd_tol, self.floor)
        return _readonly(w), _readonly(s)

    @property
    def eigenvalues(self):
        """Ascending eigenvalues, with the clamped ones set to zero."""
        return self._spectral[0]

    @property
    def sqrt(self):
        return self._spectral[1]

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)

    @property
    def norm(self):
        """Operator norm (largest eigenvalue)."""
        return float(self.eigenvalues[-1])

    @property
    def is_zero(self):
        return not np.any(self.matrix)

    def energy(self, x):
        """The quadratic form ``<x, R x>``."""
        x = np.asarray(x, dtype=np.complex128)
        if x.shape != (self.dim,):
            raise DimensionMismatchError(f"vector of length {x.shape} for dim {self.dim}")
        return float(np.vdot(x, self.matrix @ x).real)

    def __repr__(self):
        return f"PsdOperator(dim={self.dim}, trace={self.trace:.6g})"


def validate_psd(M, tol=EPS_PSD):
    """Check that ``M`` is Hermitian and PSD and return it as a ``PsdOperator``.

    Eigenvalues in ``[-tol * |M|, 0)`` are clamped to zero in the square
    root; anything more negative raises ``NotPsdError``.
    """
    op = PsdOperator(as_hermitian(M), psd_tol=tol)
    op.sqrt  # noqa: B018 -- forces the spectral check now
    return op


def validate_projection(P, tol=EPS_PROJ):
    """Return ``P`` symmetrized after checking it is an orthogonal projection."""
    try:
        p = as_hermitian(P, tol)
    except NotHermitianError as exc:
        raise NotProjectionError(str(exc)) from exc
    defect = np.linalg.norm(p @ p - p)
    if defect > tol * max(1.0, np.linalg.norm(p)):
        raise NotProjectionError(f"|P^2 - P|_F = {defect:.3e} exceeds {tol:g}")
    return p


def _check_dims(R, P):
    if R.dim != P.shape[0]:
        raise DimensionMismatchError(f"operator of dim {R.dim} with projection of dim {P.shape[0]}")


def _projection(P, j):
    if isinstance(P, ProjectionFamily):
        if j is None:
            raise TypeError("a projection index is required with a ProjectionFamily")
        return P.projection(j)
    if j is not None:
        raise TypeError("index given without a ProjectionFamily")
    return np.asarray(P, dtype=np.complex128)


def wr_update(R, P, j=None):
    """``R^{1/2} (I - P) R^{1/2}``.

    ``P`` is either a projection matrix or a ``ProjectionFamily`` together
    with a 1-based index ``j``.
    """
    p = _projection(P, j)
    _check_dims(R, p)
    res, _ = kernel.split_step(R.sqrt, p[None])
    return PsdOperator(res[0])


def dissipated(R, P, j=None):
    """``R^{1/2} P R^{1/2}``, the piece that :func:`wr_update` removes."""
    p = _projection(P, j)
    _check_dims(R, p)
    _, diss = kernel.split_step(R.sqrt, p[None])
    return PsdOperator(diss[0])


def energy_support_basis(R0, rank_tol=RANK_TOL):
    """Orthonormal columns spanning the eigenvectors of ``R0`` above ``rank_tol * lambda_max``.

    The zero operator yields a ``(d, 0)`` array and a ``ZeroOperatorWarning``.
    """
    w, v = np.linalg.eigh(R0.matrix)
    top = w[-1]
    if top <= 0.0:
        warnings.warn("zero operator has an empty energy support", ZeroOperatorWarning, stacklevel=2)
        return np.zeros((R0.dim, 0), dtype=np.complex128)
    keep = w > rank_tol * top
    return v[:, keep][:, ::-1].copy()


def leakage_alpha(projections, h0):
    """Smallest eigenvalue of ``B* (sum_j P_j) B`` for the basis ``B = h0``."""
    h0 = np.asarray(h0, dtype=np.complex128)
    if h0.ndim != 2 or h0.shape[1] == 0:
        raise EmptyBasisError("energy support basis is empty")
    projections = np.asarray(projections, dtype=np.complex128)
    total = projections.sum(axis=0)
    if total.shape[0] != h0.shape[0]:
        raise DimensionMismatchError("basis and projections disagree on dimension")
    compressed = h0.conj().T @ total @ h0
    lam = np.linalg.eigvalsh(0.5 * (compressed + compressed.conj().T))[0]
    return float(np.clip(lam, 0.0, projections.shape[0]))


def splitting_defect(projections, h0):
    """Operator-norm size of ``(sum_j P_j) B - B``; zero when the P_j split H0."""
    h0 = np.asarray(h0, dtype=np.complex128)
    if h0.shape[1] == 0:
        return 0.0
    total = np.asarray(projections).sum(axis=0)
    return float(np.linalg.norm(total @ h0 - h0, 2))


@dataclass(frozen=True)
class ProjectionFamily:
    """Projections ``P_1..P_m`` with their leakage constant on the support H0."""

    projections: np.ndarray
    alpha: float
    h0_basis: np.ndarray
    splitting: bool

    @property
    def m(self):
        return self.projections.shape[0]

    @property
    def dim(self):
        return self.projections.shape[1]

    @property
    def contraction(self):
        """The per-level rate ``c = 1 - alpha / m``."""
        return 1.0 - self.alpha / self.m

    def projection(self, j):
        if not 1 <= j <= self.m:
            raise IndexError(f"projection index {j} outside 1..{self.m}")
        return self.projections[j - 1]


def make_family(projections, R0, rank_tol=RANK_TOL, tol=EPS_PROJ):
    """Validate projections and compute alpha and the splitting flag against ``R0``.

    An alpha indistinguishable from zero is reported as exactly zero with a
    ``BlindDirectionWarning``. When ``R0 = 0`` there is nothing to contract
    and alpha is reported as ``m``.
    """
    projs = [validate_projection(p, tol) for p in projections]
    if not projs:
        raise InvalidConfigError("a projection family needs at least one projection")
    d = projs[0].shape[0]
    if any(p.shape[0] != d for p in projs) or R0.dim != d:
        raise DimensionMismatchError("projections and R0 must share one dimension")
    stack = np.stack(projs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroOperatorWarning)
        h0 = energy_support_basis(R0, rank_tol)
    m = len(projs)
    if h0.shape[1] == 0:
        alpha = float(m)
    else:
        alpha = leakage_alpha(stack, h0)
        if alpha <= SPLIT_TOL:
            alpha = 0.0
            warnings.warn(
                "projections leave a direction of the energy support untouched; alpha = 0",
                BlindDirectionWarning,
                stacklevel=2,
            )
    splitting = splitting_defect(stack, h0) <= SPLIT_TOL
    return ProjectionFamily(_readonly(stack), alpha, _readonly(h0), splitting)


def matrix_to_json(M):
    """Row-major ``{"dim", "entries": [[re, im], ...]}`` document for a matrix."""
    a = np.asarray(M.matrix if isinstance(M, PsdOperator) else M, dtype=np.complex128)
    return {
        "dim": int(a.shape[0]),
        "entries": [[float(z.real), float(z.imag)] for z in a.ravel()],
    }


def matrix_from_json(doc):
    try:
        d = int(doc["dim"])
        flat = np.array(doc["entries"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfigError(f"malformed matrix document: {exc}") from exc
    if d < 1 or flat.shape != (d * d, 2):
        raise InvalidConfigError(f"matrix document needs {d * d} [re, im] pairs")
    return (flat[:, 0] + 1j * flat[:, 1]).reshape(d, d)


def vector_to_json(x):
    return [[float(z.real), float(z.imag)] for z in np.asarray(x, dtype=np.complex128)]


def vector_from_json(items):
    try:
        flat = np.array(items, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"malformed vector: {exc}") from exc
    if flat.ndim == 1:
        return flat.astype(np.complex128)
    if flat.ndim != 2 or flat.shape[1] != 2:
        raise InvalidConfigError("vector entries must be numbers or [re, im] pairs")
    return flat[:, 0] + 1j * flat[:, 1]
