from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from app.errors.exceptions import DimensionError, DomainError
from app.models.matrix import ComplexMatrix, ComplexVector, HermitianPSD, MatrixGaussian
from app.models.operator import LinearOperator
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior


@dataclass(frozen=True)
class Problem:
    """
    One recovery problem ``y = A(SX) + n`` with ``n ~ CN(0, noise_var I)``.

    Attributes:
        op (LinearOperator): Measurement operator, fixes L, T and N.
        y (ComplexVector): Measurements.
        noise_var (float): Known noise variance sigma^2.
        k (int): Inner dimension of the factorization.
        prior_s: Elementwise prior of S.
        prior_x: Elementwise prior of X.
    """

    op: LinearOperator
    y: ComplexVector = field(repr=False)
    noise_var: float
    k: int
    prior_s: BernoulliGaussianPrior | GaussianPrior
    prior_x: BernoulliGaussianPrior | GaussianPrior

    def __post_init__(self) -> None:
        if self.y.shape != (self.op.n,):
            msg = f"y has shape {self.y.shape}, operator produces {self.op.n} measurements"
            raise DimensionError(msg)
        if not (np.isfinite(self.noise_var) and self.noise_var > 0.0):
            msg = f"noise variance must be positive, got {self.noise_var}"
            raise DomainError(msg)
        if self.k < 1:
            msg = f"inner dimension must be positive, got {self.k}"
            raise DimensionError(msg)

    @property
    def l(self) -> int:  # noqa: E743
        return self.op.l

    @property
    def t(self) -> int:
        return self.op.t

    @property
    def n(self) -> int:
        return self.op.n


@dataclass(frozen=True)
class HvmpState:
    """
    Every iterate of the engine loop.

    ``msg_x`` is ``CMN(X-bar, Sigma-bar_X, I_T)`` and ``msg_s`` is
    ``CMN(S-bar, I_L, Sigma-bar_S)``; right after initialization they hold the
    prior-drawn estimates with ``U_X`` and ``V_S``.
    """

    s_hat: ComplexMatrix = field(repr=False)
    x_hat: ComplexMatrix = field(repr=False)
    v_s: HermitianPSD = field(repr=False)
    u_x: HermitianPSD = field(repr=False)
    w_hat: ComplexMatrix = field(repr=False)
    nu_w: float
    w_bar: ComplexMatrix = field(repr=False)
    nu_bar_w: float
    msg_x: MatrixGaussian = field(repr=False)
    msg_s: MatrixGaussian = field(repr=False)
    iteration: int = 0

    def __post_init__(self) -> None:
        if not (self.nu_w > 0.0 and self.nu_bar_w > 0.0):
            msg = f"nu_w and nu_bar_w must be positive, got {self.nu_w} and {self.nu_bar_w}"
            raise DomainError(msg)
        k = self.s_hat.shape[1]
        if self.x_hat.shape[0] != k or self.v_s.dim != k or self.u_x.dim != k:
            msg = "state fields disagree on the inner dimension"
            raise DimensionError(msg)
        if not (self.v_s.is_diagonal and self.u_x.is_diagonal):
            msg = "V_S and U_X must be diagonal"
            raise DomainError(msg)


@dataclass(frozen=True, slots=True)
class IterationDiagnostics:
    """Per-iteration record of an engine run."""

    iteration: int
    residual: float
    nu_w: float
    mean_u_x: float
    mean_v_s: float
    rel_change_x: float
    amp_iterations_x: int
    amp_iterations_s: int


StopReason = Literal["t_max", "rel_tol", "observer"]


@dataclass(frozen=True)
class HvmpRun:
    """Result of a complete engine run."""

    state: HvmpState
    trajectory: list[IterationDiagnostics]
    stop_reason: StopReason
