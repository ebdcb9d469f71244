import numpy as np

from app.models.matrix import ComplexMatrix, HermitianPSD, MatrixGaussian
from app.models.operator import Dense, LinearOperator
from app.models.state import HvmpState, Problem
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior
from app.service.verify_service import random_psd


def complex_normal(rng: np.random.Generator, *shape: int) -> ComplexMatrix:
    """Draw i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def psd_with_condition(dim: int, rng: np.random.Generator, condition: float) -> HermitianPSD:
    """Random Hermitian PSD matrix with eigenvalues log-spaced in [1/condition, 1]."""
    return random_psd(dim, rng, np.logspace(0.0, -np.log10(condition), dim))


def identity_operator(l: int, t: int) -> LinearOperator:  # noqa: E741
    """The operator with A = I_LT."""
    return LinearOperator(l * t, l, t, Dense(np.eye(l * t, dtype=np.complex128)))


def make_problem(
    op: LinearOperator,
    k: int,
    y: ComplexMatrix | None = None,
    noise_var: float = 1.0,
    prior_s: BernoulliGaussianPrior | GaussianPrior | None = None,
    prior_x: BernoulliGaussianPrior | GaussianPrior | None = None,
) -> Problem:
    """Problem with zero measurements and Gaussian priors unless given."""
    return Problem(
        op=op,
        y=np.zeros(op.n, dtype=np.complex128) if y is None else y,
        noise_var=noise_var,
        k=k,
        prior_s=prior_s or GaussianPrior(),
        prior_x=prior_x or GaussianPrior(),
    )


def make_state(
    s_hat: ComplexMatrix,
    x_hat: ComplexMatrix,
    w_hat: ComplexMatrix,
    nu_w: float = 1.0,
    v_s: float | np.ndarray = 0.0,
    u_x: float | np.ndarray = 0.0,
    msg_x: MatrixGaussian | None = None,
    msg_s: MatrixGaussian | None = None,
) -> HvmpState:
    """Engine state built from explicit estimates; scalar variances become scaled identities."""
    k = s_hat.shape[1]
    v = HermitianPSD.from_diagonal(np.broadcast_to(np.asarray(v_s, dtype=np.float64), (k,)))
    u = HermitianPSD.from_diagonal(np.broadcast_to(np.asarray(u_x, dtype=np.float64), (k,)))
    eye = HermitianPSD.scaled_identity(k, 1.0)
    return HvmpState(
        s_hat=s_hat,
        x_hat=x_hat,
        v_s=v,
        u_x=u,
        w_hat=w_hat,
        nu_w=nu_w,
        w_bar=w_hat,
        nu_bar_w=nu_w,
        msg_x=msg_x or MatrixGaussian.with_row_cov(x_hat, eye),
        msg_s=msg_s or MatrixGaussian.with_col_cov(s_hat, eye),
    )
