import numpy as np
import numpy.typing as npt
from scipy.special import expit

from app.errors.exceptions import DomainError
from app.models.matrix import ComplexMatrix, RealArray, as_complex
from app.models.observation import PseudoObservation
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior

AnyPrior = BernoulliGaussianPrior | GaussianPrior


def prior_mean(prior: AnyPrior) -> complex:
    """``E x`` under the prior."""
    if isinstance(prior, GaussianPrior):
        return prior.mean
    return 0j


def prior_variance(prior: AnyPrior) -> float:
    """``E|x|^2 - |E x|^2``: ``variance`` for a Gaussian, ``rho * variance`` for Bernoulli-Gaussian."""
    if isinstance(prior, GaussianPrior):
        return prior.variance
    return prior.rho * prior.variance


def sample(prior: AnyPrior, rows: int, cols: int, rng: np.random.Generator) -> ComplexMatrix:
    """
    Draw a rows x cols matrix with i.i.d. entries from the prior.

    Circular convention: ``CN(0, g)`` has ``E|x|^2 = g``.
    """
    shape = (rows, cols)
    if isinstance(prior, GaussianPrior):
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return prior.mean + np.sqrt(prior.variance / 2) * noise
    active = rng.random(shape) < prior.rho
    noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return np.where(active, np.sqrt(prior.variance / 2) * noise, 0j)


def denoise_array(
    prior: AnyPrior,
    r: npt.ArrayLike,
    v: npt.ArrayLike,
) -> tuple[ComplexMatrix, RealArray]:
    """
    Entrywise posterior mean and variance of ``x`` given ``r = x + CN(0, v)``.

    ``v`` broadcasts against ``r``.

    Raises:
        DomainError: If any ``v`` is not strictly positive.
    """
    rr = as_complex(r)
    vv = np.broadcast_to(np.asarray(v, dtype=np.float64), rr.shape)
    if not np.all(vv > 0.0):
        msg = "denoiser noise variance must be strictly positive"
        raise DomainError(msg)

    gamma = prior.variance
    gain = gamma / (gamma + vv)
    slab_var = gamma * vv / (gamma + vv)

    if isinstance(prior, GaussianPrior):
        mean = prior.mean + (rr - prior.mean) * gain
        return mean, np.array(slab_var, dtype=np.float64)

    slab_mean = rr * gain
    if prior.rho == 0.0:
        return np.zeros_like(rr), np.zeros(rr.shape)
    if prior.rho == 1.0:
        return slab_mean, np.array(slab_var, dtype=np.float64)

    abs2 = np.abs(rr) ** 2
    log_ratio = abs2 / vv - abs2 / (gamma + vv) - np.log((gamma + vv) / vv)
    activity = expit(np.log(prior.rho) - np.log1p(-prior.rho) + log_ratio)
    mean = activity * slab_mean
    var = activity * (np.abs(slab_mean) ** 2 + slab_var) - np.abs(mean) ** 2
    return mean, np.maximum(var, 0.0)


def denoise(prior: AnyPrior, obs: PseudoObservation) -> tuple[complex, float]:
    """Scalar MMSE denoiser: posterior ``(mean, var)`` of one entry."""
    mean, var = denoise_array(prior, np.array([obs.r]), obs.v)
    return complex(mean[0]), float(var[0])
