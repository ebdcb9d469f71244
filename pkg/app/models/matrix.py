from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from app.errors.exceptions import DimensionError, DomainError

ComplexMatrix = npt.NDArray[np.complex128]
ComplexVector = npt.NDArray[np.complex128]
RealArray = npt.NDArray[np.float64]

HERMITIAN_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-10


def as_complex(values: npt.ArrayLike) -> ComplexMatrix:
    """Return a complex128 copy-free view when possible."""
    return np.asarray(values, dtype=np.complex128)


@dataclass(frozen=True, slots=True)
class HermitianPSD:
    """
    Hermitian positive semi-definite matrix.

    Construction validates the invariants: square, Hermitian within 1e-10
    relative Frobenius error, and no eigenvalue below -1e-10 times the largest.
    Use ``hermitize_floor`` to build one from an arbitrary square matrix.
    """

    matrix: ComplexMatrix = field(repr=False)

    def __post_init__(self) -> None:
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:  # noqa: PLR2004
            msg = f"HermitianPSD needs a non-empty square matrix, got shape {m.shape}"
            raise DimensionError(msg)
        if not np.all(np.isfinite(m)):
            msg = "HermitianPSD entries must be finite"
            raise DomainError(msg)
        scale = max(float(np.linalg.norm(m)), np.finfo(np.float64).tiny)
        if np.linalg.norm(m - m.conj().T) > HERMITIAN_TOL * scale:
            msg = "matrix is not Hermitian"
            raise DomainError(msg)
        if self.is_diagonal:
            eigs = np.real(np.diag(m))
        else:
            eigs = np.linalg.eigvalsh(m)
        largest = max(float(eigs.max()), 0.0)
        if eigs.min() < -NEGATIVE_EIG_TOL * max(largest, np.finfo(np.float64).tiny):
            msg = f"matrix is not positive semi-definite (smallest eigenvalue {eigs.min():.3e})"
            raise DomainError(msg)

    @classmethod
    def from_diagonal(cls, values: npt.ArrayLike) -> "HermitianPSD":
        """Build a diagonal PSD matrix from its real, non-negative diagonal."""
        return cls(np.diag(np.asarray(values, dtype=np.float64)).astype(np.complex128))

    @classmethod
    def scaled_identity(cls, dim: int, value: float) -> "HermitianPSD":
        """Build ``value * I_dim``."""
        return cls((value * np.eye(dim)).astype(np.complex128))

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def is_diagonal(self) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return not np.any(off)

    def diagonal(self) -> RealArray:
        """Real diagonal of the matrix."""
        return np.real(np.diag(self.matrix)).copy()


@dataclass(frozen=True, slots=True)
class Identity:
    """Marker for an identity covariance of the given dimension."""

    dim: int


Covariance = HermitianPSD | Identity


@dataclass(frozen=True, slots=True)
class MatrixGaussian:
    """
    Complex matrix Gaussian ``CMN(mean, row_cov, col_cov)``.

    Messages produced by the engine always keep one of the two covariances
    at the identity.
    """

    mean: ComplexMatrix = field(repr=False)
    row_cov: Covariance
    col_cov: Covariance

    def __post_init__(self) -> None:
        rows, cols = self.mean.shape
        if self.row_cov.dim != rows or self.col_cov.dim != cols:
            msg = (
                f"covariance dims ({self.row_cov.dim}, {self.col_cov.dim}) "
                f"do not match mean shape ({rows}, {cols})"
            )
            raise DimensionError(msg)
        if isinstance(self.row_cov, HermitianPSD) and isinstance(self.col_cov, HermitianPSD):
            msg = "at most one of row_cov and col_cov may be a non-identity matrix"
            raise DomainError(msg)

    @classmethod
    def with_row_cov(cls, mean: ComplexMatrix, row_cov: HermitianPSD) -> "MatrixGaussian":
        """``CMN(mean, row_cov, I)``, the shape of the messages on X."""
        return cls(mean, row_cov, Identity(mean.shape[1]))

    @classmethod
    def with_col_cov(cls, mean: ComplexMatrix, col_cov: HermitianPSD) -> "MatrixGaussian":
        """``CMN(mean, I, col_cov)``, the shape of the messages on S."""
        return cls(mean, Identity(mean.shape[0]), col_cov)

    @property
    def covariance(self) -> HermitianPSD:
        """The single non-identity covariance."""
        if isinstance(self.row_cov, HermitianPSD):
            return self.row_cov
        if isinstance(self.col_cov, HermitianPSD):
            return self.col_cov
        return HermitianPSD.scaled_identity(self.row_cov.dim, 1.0)


@dataclass(frozen=True, slots=True)
class VectorMessage:
    """Complex vector Gaussian ``CN(mean, cov)`` over a vectorized factor."""

    mean: ComplexVector = field(repr=False)
    cov: HermitianPSD

    def __post_init__(self) -> None:
        if self.mean.shape != (self.cov.dim,):
            msg = f"mean of shape {self.mean.shape} does not match covariance dim {self.cov.dim}"
            raise DimensionError(msg)
        if not np.all(np.isfinite(self.mean)):
            msg = "message mean must be finite"
            raise DomainError(msg)
