from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import numpy.typing as npt

from app.core.numcore import DEFAULT_KRON_GUARD, check_size, unvec, vec
from app.errors.exceptions import DimensionError
from app.models.matrix import ComplexMatrix, ComplexVector, RealArray, as_complex

PARTIAL_ORTHOGONAL_TOL = 1e-10

SelectionMode = Literal["row", "column"]


@dataclass(frozen=True, slots=True)
class Dense:
    """Explicit N x LT matrix."""

    matrix: ComplexMatrix = field(repr=False)


@dataclass(frozen=True, slots=True)
class PartialDft:
    """Rows (or columns) ``indices`` of the unitary DFT of size ``max(N, LT)``."""

    indices: npt.NDArray[np.int64] = field(repr=False)
    mode: SelectionMode
    size: int


@dataclass(frozen=True, slots=True)
class SvdPrefactored:
    """Thin SVD ``A = U diag(s) V^H`` of a dense operator."""

    u: ComplexMatrix = field(repr=False)
    s: RealArray = field(repr=False)
    vh: ComplexMatrix = field(repr=False)


Realization = Dense | PartialDft | SvdPrefactored


def dft_entries(rows: npt.ArrayLike, cols: npt.ArrayLike, size: int) -> ComplexMatrix:
    """Entries ``exp(-2j pi r c / size) / sqrt(size)`` of the unitary DFT for the given index sets."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    phase = np.remainder(np.outer(r, c), size).astype(np.float64)
    return np.exp(-2j * np.pi * phase / size) / np.sqrt(size)


@dataclass(frozen=True)
class LinearOperator:
    """
    The measurement operator ``A: C^{L x T} -> C^N`` with ``A(W) = A vec(W)``.

    The dense matrix form is built lazily for block views and oracles. A
    partial DFT is applied with FFTs and never needs it; the realization
    decides how ``apply``, ``adjoint`` and the LMMSE step evaluate the
    operator.
    """

    n: int
    l: int  # noqa: E741
    t: int
    realization: Realization

    def __post_init__(self) -> None:
        if min(self.n, self.l, self.t) < 1:
            msg = f"operator dims must be positive, got n={self.n}, l={self.l}, t={self.t}"
            raise DimensionError(msg)
        shape = self._shape()
        if shape != (self.n, self.l * self.t):
            msg = f"operator matrix has shape {shape}, expected ({self.n}, {self.l * self.t})"
            raise DimensionError(msg)

    def _shape(self) -> tuple[int, int]:
        match self.realization:
            case Dense(matrix):
                return matrix.shape
            case PartialDft(indices, "row", size):
                return len(indices), size
            case PartialDft(indices, "column", size):
                return size, len(indices)
            case SvdPrefactored(u, _, vh):
                return u.shape[0], vh.shape[1]
        msg = f"unknown realization {self.realization!r}"
        raise TypeError(msg)

    @cached_property
    def matrix(self) -> ComplexMatrix:
        """Dense N x LT matrix form of the operator."""
        match self.realization:
            case Dense(matrix):
                return matrix
            case PartialDft(indices, "row", size):
                return dft_entries(indices, np.arange(size), size)
            case PartialDft(indices, "column", size):
                return dft_entries(np.arange(size), indices, size)
            case SvdPrefactored(u, s, vh):
                return (u * s) @ vh
        msg = f"unknown realization {self.realization!r}"
        raise TypeError(msg)

    @cached_property
    def fro_norm_sq(self) -> float:
        """``||A||_F^2``."""
        if isinstance(self.realization, PartialDft):
            return float(len(self.realization.indices))
        return float(np.vdot(self.matrix, self.matrix).real)

    @cached_property
    def gram(self) -> ComplexMatrix:
        """``A A^H`` (N x N)."""
        return self.matrix @ self.matrix.conj().T

    @cached_property
    def partial_orthogonal(self) -> bool:
        """True iff ``A A^H = I_N`` within 1e-10 (Frobenius)."""
        if self.n > self.l * self.t:
            return False
        if isinstance(self.realization, PartialDft):
            return self.realization.mode == "row" or self.n == self.l * self.t
        residual = np.linalg.norm(self.gram - np.eye(self.n))
        return bool(residual <= PARTIAL_ORTHOGONAL_TOL * max(1.0, np.sqrt(self.n)))

    def _check_input(self, w: ComplexMatrix) -> None:
        if w.shape != (self.l, self.t):
            msg = f"operator expects an {self.l}x{self.t} input, got {w.shape}"
            raise DimensionError(msg)

    def apply(self, w: npt.ArrayLike) -> ComplexVector:
        """
        Return ``A vec(W)``.

        Raises:
            DimensionError: If ``W`` is not L x T.
        """
        wm = as_complex(w)
        self._check_input(wm)
        x = vec(wm)
        match self.realization:
            case SvdPrefactored(u, s, vh):
                return u @ (s * (vh @ x))
            case PartialDft(indices, "row", _):
                return np.fft.fft(x, norm="ortho")[indices]
            case PartialDft(indices, "column", size):
                padded = np.zeros(size, dtype=np.complex128)
                padded[indices] = x
                return np.fft.fft(padded, norm="ortho")
        return self.matrix @ x

    def adjoint(self, y: npt.ArrayLike) -> ComplexMatrix:
        """
        Return ``unvec(A^H y, L, T)``.

        Raises:
            DimensionError: If ``y`` does not have N entries.
        """
        yv = as_complex(y).reshape(-1)
        if yv.size != self.n:
            msg = f"operator adjoint expects {self.n} entries, got {yv.size}"
            raise DimensionError(msg)
        match self.realization:
            case SvdPrefactored(u, s, vh):
                return unvec(vh.conj().T @ (s * (u.conj().T @ yv)), self.l, self.t)
            case PartialDft(indices, "row", size):
                padded = np.zeros(size, dtype=np.complex128)
                padded[indices] = yv
                return unvec(np.fft.ifft(padded, norm="ortho"), self.l, self.t)
            case PartialDft(indices, "column", _):
                return unvec(np.fft.ifft(yv, norm="ortho")[indices], self.l, self.t)
        return unvec(self.matrix.conj().T @ yv, self.l, self.t)

    def block(self, i: int) -> ComplexMatrix:
        """
        The i-th (1-based) L-column block ``A_(i)`` of the matrix form.

        Raises:
            DimensionError: If ``i`` is outside ``1..T``.
        """
        if not 1 <= i <= self.t:
            msg = f"block index {i} outside 1..{self.t}"
            raise DimensionError(msg)
        return self.matrix[:, (i - 1) * self.l : i * self.l]

    def ring_matrix(self, guard: int = DEFAULT_KRON_GUARD) -> ComplexMatrix:
        """
        ``[vec(A_(1)), ..., vec(A_(T))]`` as an NL x T matrix.

        Raises:
            SizeGuardError: If NL * T exceeds ``guard``.
        """
        check_size(self.n * self.l * self.t, guard)
        return self.matrix.reshape((self.n * self.l, self.t), order="F")

    def block_gram_sum(self) -> ComplexMatrix:
        """``sum_i A_(i)^H A_(i)`` (L x L)."""
        blocks = self.matrix.reshape((self.n, self.t, self.l))
        return np.einsum("nil,nim->lm", blocks.conj(), blocks)
