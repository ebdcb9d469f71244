import numpy as np
import numpy.typing as npt
from scipy import linalg

from app.errors.exceptions import DimensionError, SingularityError, SizeGuardError
from app.models.matrix import ComplexMatrix, HermitianPSD, RealArray, as_complex

DEFAULT_KRON_GUARD = 4096 * 4096
SINGULAR_CONDITION = 1e14


def vec(matrix: npt.ArrayLike) -> ComplexMatrix:
    """Stack the columns of ``matrix`` top to bottom into a 1-D vector."""
    m = as_complex(matrix)
    if m.ndim == 1:
        return m
    return m.reshape(-1, order="F")


def unvec(vector: npt.ArrayLike, rows: int, cols: int) -> ComplexMatrix:
    """
    Inverse of ``vec``.

    Raises:
        DimensionError: If the vector does not hold ``rows * cols`` entries.
    """
    v = as_complex(vector).reshape(-1)
    if v.size != rows * cols:
        msg = f"cannot unvec {v.size} entries into {rows}x{cols}"
        raise DimensionError(msg)
    return v.reshape((rows, cols), order="F")


def hermitian_part(matrix: npt.ArrayLike) -> ComplexMatrix:
    """Return ``(M + M^H) / 2`` for a square matrix."""
    m = as_complex(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:  # noqa: PLR2004
        msg = f"expected a square matrix, got shape {m.shape}"
        raise DimensionError(msg)
    return (m + m.conj().T) / 2


def eigh_floored(matrix: npt.ArrayLike, floor: float) -> tuple[RealArray, ComplexMatrix]:
    """Eigendecomposition of the Hermitian part with eigenvalues clamped at ``floor``."""
    h = hermitian_part(matrix)
    eigs, vecs = linalg.eigh(h)
    return np.maximum(eigs, floor), vecs


def hermitize_floor(matrix: npt.ArrayLike, floor: float = 0.0) -> HermitianPSD:
    """
    Symmetrize a square matrix and clamp its eigenvalues at ``floor``.

    Inputs that already are Hermitian with every eigenvalue above the floor
    come back unchanged up to the symmetrization.

    Raises:
        DimensionError: If the input is not square.
    """
    h = hermitian_part(matrix)
    if not np.any(h - np.diag(np.diag(h))):
        d = np.maximum(np.real(np.diag(h)), floor)
        return HermitianPSD.from_diagonal(d)
    eigs, vecs = linalg.eigh(h)
    if eigs.min() >= floor:
        return HermitianPSD(h)
    rebuilt = (vecs * np.maximum(eigs, floor)) @ vecs.conj().T
    return HermitianPSD(hermitian_part(rebuilt))


def relative_floor(cov: HermitianPSD, rel: float, name: str) -> tuple[RealArray, ComplexMatrix]:
    """
    Eigendecomposition of ``cov`` with eigenvalues floored at ``rel`` times the largest.

    Raises:
        SingularityError: If the covariance has no positive eigenvalue at all.
    """
    eigs, vecs = linalg.eigh(cov.matrix)
    largest = float(eigs.max())
    if not largest > 0.0:
        raise SingularityError(name)
    return np.maximum(eigs, rel * largest), vecs


def inv_sqrt(cov: HermitianPSD, name: str = "covariance") -> ComplexMatrix:
    """
    Hermitian inverse square root ``R`` with ``R C R^H = I``.

    Raises:
        SingularityError: If the condition number exceeds 1e14.
    """
    if cov.is_diagonal:
        d = cov.diagonal()
        largest = float(d.max())
        if not largest > 0.0 or d.min() * SINGULAR_CONDITION < largest:
            raise SingularityError(name)
        return np.diag(1.0 / np.sqrt(d)).astype(np.complex128)
    eigs, vecs = linalg.eigh(cov.matrix)
    largest = float(eigs.max())
    if not largest > 0.0 or eigs.min() * SINGULAR_CONDITION < largest:
        raise SingularityError(name)
    r = (vecs / np.sqrt(eigs)) @ vecs.conj().T
    return hermitian_part(r)


def sqrt_psd(cov: HermitianPSD) -> ComplexMatrix:
    """Hermitian square root of a PSD matrix (negative round-off clipped to zero)."""
    eigs, vecs = linalg.eigh(cov.matrix)
    return hermitian_part((vecs * np.sqrt(np.maximum(eigs, 0.0))) @ vecs.conj().T)


def check_size(entries: int, guard: int = DEFAULT_KRON_GUARD) -> None:
    """
    Raise if an allocation of ``entries`` complex numbers exceeds ``guard``.

    Raises:
        SizeGuardError: If the guard is exceeded.
    """
    if entries > guard:
        raise SizeGuardError(entries, guard)


def kron(a: npt.ArrayLike, b: npt.ArrayLike, guard: int = DEFAULT_KRON_GUARD) -> ComplexMatrix:
    """
    Kronecker product guarded against accidental large allocations.

    Satisfies ``vec(A X B) = (B^T kron A) vec(X)``.

    Raises:
        SizeGuardError: If the result would exceed ``guard`` entries.
    """
    am = np.atleast_2d(as_complex(a))
    bm = np.atleast_2d(as_complex(b))
    check_size(am.size * bm.size, guard)
    return np.kron(am, bm)
