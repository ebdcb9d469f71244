"""Exact vector-form messages, Monte-Carlo checks of the quadratic-form identity and a naive baseline."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from app.core.config import EngineConfig, LmmseConfig
from app.core.numcore import DEFAULT_KRON_GUARD, hermitian_part, kron, sqrt_psd, vec
from app.errors.exceptions import SingularityError, SizeGuardError
from app.models.matrix import ComplexMatrix, HermitianPSD, VectorMessage
from app.models.operator import LinearOperator
from app.models.state import Problem
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior
from app.service.hvmp_service import HvmpEngine
from app.service.prior_service import prior_variance, sample

log = logging.getLogger(__name__)

ORACLE_DIM = 256
SINGULAR_CONDITION = 1e14
MC_SIGMA = 4.0
MC_REL_SLACK = 1e-9


def _guard_oracle_dim(dim: int) -> None:
    if dim > ORACLE_DIM:
        raise SizeGuardError(dim, ORACLE_DIM)


def _gaussian_message(precision: ComplexMatrix, rhs: ComplexMatrix, scale: float, name: str) -> VectorMessage:
    """``CN(P^-1 rhs, scale P^-1)`` from a Hermitian precision-like matrix ``P``."""
    eigs, q = linalg.eigh(hermitian_part(precision))
    largest = float(eigs.max())
    if not largest > 0.0 or eigs.min() * SINGULAR_CONDITION < largest:
        raise SingularityError(name)
    inverse = (q / eigs) @ q.conj().T
    return VectorMessage(mean=inverse @ rhs, cov=HermitianPSD(hermitian_part(scale * inverse)))


def exact_msg_x(
    p: Problem,
    s_hat: ComplexMatrix,
    v_s: HermitianPSD,
    guard: int = DEFAULT_KRON_GUARD,
) -> VectorMessage:
    """
    Exact Gaussian message to ``x = vec(X)``.

    ``Sigma_x = sigma^2 ((I_T kron S)^H A^H A (I_T kron S) + A_ring^H A_ring kron V_S)^-1`` and
    ``x-bar = Sigma_x (I_T kron S)^H A^H y / sigma^2``.

    Raises:
        SizeGuardError: If KT exceeds 256 or a Kronecker factor exceeds ``guard``.
        SingularityError: If the precision matrix is numerically singular.
    """
    _guard_oracle_dim(p.k * p.t)
    a = p.op.matrix
    lifted = a @ kron(np.eye(p.t), s_hat, guard)
    ring = p.op.ring_matrix(guard)
    precision = lifted.conj().T @ lifted + kron(ring.conj().T @ ring, v_s.matrix, guard)
    return _gaussian_message(precision, lifted.conj().T @ p.y, p.noise_var, "exact Sigma_x")


def exact_msg_s(
    p: Problem,
    x_hat: ComplexMatrix,
    u_x: HermitianPSD,
    guard: int = DEFAULT_KRON_GUARD,
) -> VectorMessage:
    """
    Exact Gaussian message to ``s = vec(S)``.

    Mirrors ``exact_msg_x`` with ``(X^T kron I_L)`` and ``U_X kron sum_i A_(i)^H A_(i)``.

    Raises:
        SizeGuardError: If LK exceeds 256 or a Kronecker factor exceeds ``guard``.
        SingularityError: If the precision matrix is numerically singular.
    """
    _guard_oracle_dim(p.l * p.k)
    a = p.op.matrix
    lifted = a @ kron(x_hat.T, np.eye(p.l), guard)
    precision = lifted.conj().T @ lifted + kron(u_x.matrix.T, p.op.block_gram_sum(), guard)
    return _gaussian_message(precision, lifted.conj().T @ p.y, p.noise_var, "exact Sigma_s")


@dataclass(frozen=True, slots=True)
class QuadraticCheck:
    """Monte-Carlo estimate and closed form of ``E_S ||A vec(S X)||^2``."""

    mc_value: float
    closed_form: float
    stderr: float

    @property
    def passed(self) -> bool:
        """Agreement within four standard errors (plus round-off slack)."""
        return abs(self.mc_value - self.closed_form) <= MC_SIGMA * self.stderr + MC_REL_SLACK * abs(self.closed_form)


def quadratic_closed_form(
    s_hat: ComplexMatrix,
    v_s: HermitianPSD,
    x_fixed: ComplexMatrix,
    op: LinearOperator,
    guard: int = DEFAULT_KRON_GUARD,
) -> float:
    """``x^H ((I_T kron S)^H A^H A (I_T kron S) + A_ring^H A_ring kron V_S) x``."""
    x = vec(x_fixed)
    lifted = op.matrix @ kron(np.eye(op.t), s_hat, guard)
    ring = op.ring_matrix(guard)
    quad = lifted.conj().T @ lifted + kron(ring.conj().T @ ring, v_s.matrix, guard)
    return float(np.real(np.vdot(x, quad @ x)))


def mc_quadratic_check(
    s_hat: ComplexMatrix,
    v_s: HermitianPSD,
    x_fixed: ComplexMatrix,
    op: LinearOperator,
    samples: int,
    rng: np.random.Generator,
    batch: int = 10_000,
    guard: int = DEFAULT_KRON_GUARD,
) -> QuadraticCheck:
    """
    Average ``||A vec(S X)||^2`` over ``S ~ CMN(S-hat, I_L, V_S)`` and compare with the closed form.

    Samples are drawn as ``S = S-hat + Z V_S^(1/2)`` with ``Z`` i.i.d. ``CN(0, 1)``, in batches.
    A zero ``V_S`` makes every sample equal the closed form, which is returned as is.

    Raises:
        SizeGuardError: If a Kronecker factor of the closed form exceeds ``guard``.
    """
    closed = quadratic_closed_form(s_hat, v_s, x_fixed, op, guard)
    if not v_s.matrix.any():
        return QuadraticCheck(mc_value=closed, closed_form=closed, stderr=0.0)
    root = sqrt_psd(v_s)
    l, k = s_hat.shape  # noqa: E741
    t = x_fixed.shape[1]
    a_t = op.matrix.T
    chunks: list[np.ndarray] = []
    remaining = samples
    while remaining > 0:
        size = min(batch, remaining)
        z = (rng.standard_normal((size, l, k)) + 1j * rng.standard_normal((size, l, k))) / math.sqrt(2.0)
        draws = s_hat[None, :, :] + z @ root
        products = draws @ x_fixed
        flat = products.transpose(0, 2, 1).reshape(size, l * t)
        chunks.append(np.sum(np.abs(flat @ a_t) ** 2, axis=1))
        remaining -= size
    values = np.concatenate(chunks)
    stderr = float(values.std(ddof=1)) / math.sqrt(samples) if samples > 1 else 0.0
    return QuadraticCheck(mc_value=float(values.mean()), closed_form=closed, stderr=stderr)


def vec_identity_check(
    s: ComplexMatrix,
    x: ComplexMatrix,
    op: LinearOperator,
    guard: int = DEFAULT_KRON_GUARD,
) -> float:
    """
    Largest pairwise relative error between ``A vec(SX)``, ``A (X^T kron I_L) vec(S)`` and ``A (I_T kron S) vec(X)``.

    Raises:
        SizeGuardError: If a Kronecker factor exceeds ``guard``.
    """
    direct = op.apply(s @ x)
    via_s = op.matrix @ (kron(x.T, np.eye(op.l), guard) @ vec(s))
    via_x = op.matrix @ (kron(np.eye(op.t), s, guard) @ vec(x))
    forms = (direct, via_s, via_x)
    scale = max(float(linalg.norm(f)) for f in forms)
    if scale == 0.0:
        return 0.0
    return max(float(linalg.norm(a - b)) for a, b in ((direct, via_s), (direct, via_x), (via_s, via_x))) / scale


def _complex_gauss(re: float, im: float, mean: complex, var: float) -> float:
    return math.exp(-((re - mean.real) ** 2 + (im - mean.imag) ** 2) / var) / (math.pi * var)


def denoise_oracle(prior: BernoulliGaussianPrior, r: complex, v: float) -> tuple[complex, float]:
    """
    Posterior mean and variance of a Bernoulli-Gaussian entry by 2-D numerical integration.

    The slab part is integrated over a box of +-12 posterior standard deviations
    around the slab posterior mean; the spike contributes in closed form.
    """
    r = complex(r)
    gamma = prior.variance
    centre = r * gamma / (gamma + v)
    half = 12.0 * math.sqrt(gamma * v / (gamma + v))
    box = (centre.real - half, centre.real + half, centre.imag - half, centre.imag + half)

    def moment(weight: str) -> float:
        def integrand(im: float, re: float) -> float:
            density = _complex_gauss(re, im, 0j, gamma) * _complex_gauss(r.real, r.imag, complex(re, im), v)
            match weight:
                case "re":
                    return re * density
                case "im":
                    return im * density
                case "abs2":
                    return (re * re + im * im) * density
            return density

        value, _ = integrate.dblquad(
            integrand,
            box[0],
            box[1],
            box[2],
            box[3],
            epsabs=1e-14,
            epsrel=1e-12,
        )
        return float(value)

    spike = (1.0 - prior.rho) * _complex_gauss(r.real, r.imag, 0j, v)
    slab_mass = prior.rho * moment("one")
    evidence = spike + slab_mass
    mean = complex(prior.rho * moment("re"), prior.rho * moment("im")) / evidence
    second = prior.rho * moment("abs2") / evidence
    return mean, max(second - abs(mean) ** 2, 0.0)


def als_baseline(
    p: Problem,
    t_max: int,
    rng: np.random.Generator,
    ridge: float = 1e-2,
) -> tuple[ComplexMatrix, ComplexMatrix]:
    """
    Alternating ridge regressions on one LMMSE estimate of ``W = SX``.

    ``W-hat`` comes from a single LMMSE pass around ``W-bar = 0`` with
    ``nu-bar_w = K var(S) var(X)``. Each alternation solves for X with S fixed,
    then for S with X fixed and soft-thresholds S so that a fraction ``rho`` of
    its entries survives (no thresholding under a Gaussian S prior).

    Returns:
        tuple[ComplexMatrix, ComplexMatrix]: ``S-hat`` (L x K) and ``X-hat`` (K x T).
    """
    engine = HvmpEngine(p, lmmse=LmmseConfig(), engine=EngineConfig())
    nu_bar_w = p.k * prior_variance(p.prior_s) * prior_variance(p.prior_x)
    w_hat, _ = engine.lmmse_w(np.zeros((p.l, p.t), dtype=np.complex128), max(nu_bar_w, p.noise_var))

    s_hat = sample(p.prior_s, p.l, p.k, rng)
    x_hat = np.zeros((p.k, p.t), dtype=np.complex128)
    eye = np.eye(p.k)
    for _ in range(t_max):
        x_hat = linalg.solve(s_hat.conj().T @ s_hat + ridge * eye, s_hat.conj().T @ w_hat, assume_a="pos")
        gram = x_hat @ x_hat.conj().T + ridge * eye
        s_hat = linalg.solve(gram, x_hat @ w_hat.conj().T, assume_a="pos").conj().T
        s_hat = _soft_threshold(s_hat, p.prior_s)
    return s_hat, x_hat


def _soft_threshold(s: ComplexMatrix, prior: BernoulliGaussianPrior | GaussianPrior) -> ComplexMatrix:
    if isinstance(prior, GaussianPrior) or prior.rho >= 1.0:
        return s
    magnitude = np.abs(s)
    level = float(np.quantile(magnitude, 1.0 - prior.rho))
    shrink = np.maximum(1.0 - level / np.maximum(magnitude, np.finfo(np.float64).tiny), 0.0)
    return s * shrink
