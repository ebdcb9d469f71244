import logging

import numpy as np
from scipy import linalg

from app.core.config import AmpConfig
from app.errors.exceptions import DomainError, NumericDivergenceError
from app.models.amp import AmpProblem, AmpResult
from app.models.matrix import ComplexMatrix, RealArray
from app.service.prior_service import denoise_array, prior_mean, prior_variance

log = logging.getLogger(__name__)

DIAGONAL_GRAM_TOL = 1e-10


def _diagonal_gram(phi: ComplexMatrix) -> RealArray | None:
    """Return the diagonal of ``phi^H phi`` when the Gram matrix is diagonal, else None."""
    gram = phi.conj().T @ phi
    diag = np.real(np.diag(gram))
    if diag.min() <= 0.0:
        return None
    off = gram - np.diag(np.diag(gram))
    if np.abs(off).max(initial=0.0) > DIAGONAL_GRAM_TOL * diag.max():
        return None
    return diag


def _bypass(p: AmpProblem, gram_diag: RealArray) -> AmpResult:
    r = (p.phi.conj().T @ p.obs) / gram_diag[:, None]
    v = np.broadcast_to((p.noise_var / gram_diag)[:, None], r.shape).copy()
    mean, var = denoise_array(p.prior, r, v)
    return AmpResult(mean=mean, var=var, pseudo_mean=r, pseudo_var=v, iterations=0, converged=True)


def run_amp(
    p: AmpProblem,
    max_iter: int = 50,
    damping: float = 0.7,
    tol: float = 1e-8,
) -> AmpResult:
    """
    Decouple ``obs = phi X + E`` into per-entry pseudo-observations with AMP.

    Each column runs its own scalar-variance AMP; the columns are stacked so
    one matrix product serves all of them. ``phi`` is first scaled by its
    spectral norm, which leaves the fixed points unchanged. When ``phi^H phi``
    is diagonal the iteration is skipped and every entry is denoised directly.

    Args:
        p (AmpProblem): Whitened model.
        max_iter (int): Iteration cap, at least 1.
        damping (float): Weight of the new estimate and pseudo-noise variance, in (0, 1].
        tol (float): Relative change of the estimate under which the loop stops.

    Returns:
        AmpResult: Last iterate, converged or not.

    Raises:
        DomainError: On invalid iteration parameters.
        NumericDivergenceError: If an iterate becomes non-finite.
    """
    if max_iter < 1 or not 0.0 < damping <= 1.0:
        msg = f"invalid AMP parameters max_iter={max_iter}, damping={damping}"
        raise DomainError(msg)

    gram_diag = _diagonal_gram(p.phi)
    if gram_diag is not None:
        return _bypass(p, gram_diag)

    scale = float(linalg.norm(p.phi, 2))
    phi = p.phi / scale
    obs = p.obs / scale
    noise = p.noise_var / scale**2
    m, k = phi.shape
    ratio = k / m
    phi_h = phi.conj().T

    x = np.full((k, obs.shape[1]), prior_mean(p.prior), dtype=np.complex128)
    tau = noise + ratio * np.full(obs.shape[1], prior_variance(p.prior))
    z = obs - phi @ x

    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):  # noqa: B007
        r = x + phi_h @ z
        mean, var = denoise_array(p.prior, r, tau[None, :])
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(mean))):
            raise NumericDivergenceError(iteration)

        x_next = damping * mean + (1.0 - damping) * x
        avg_var = var.mean(axis=0)
        onsager = ratio * avg_var / tau
        z = obs - phi @ x_next + onsager[None, :] * z
        tau = damping * (noise + ratio * avg_var) + (1.0 - damping) * tau

        change = linalg.norm(x_next - x)
        x = x_next
        if not np.all(np.isfinite(tau)) or not np.isfinite(change):
            raise NumericDivergenceError(iteration)
        if change <= tol * max(float(linalg.norm(x)), np.finfo(np.float64).tiny):
            converged = True
            break

    r = x + phi_h @ z
    mean, var = denoise_array(p.prior, r, tau[None, :])
    if not np.all(np.isfinite(mean)):
        raise NumericDivergenceError(iteration)
    if not converged:
        log.debug("AMP stopped after %d iterations without converging", iteration)
    pseudo_var = np.broadcast_to(tau[None, :], r.shape).copy()
    return AmpResult(
        mean=mean,
        var=var,
        pseudo_mean=r,
        pseudo_var=pseudo_var,
        iterations=iteration,
        converged=converged,
    )


def run_amp_with(p: AmpProblem, config: AmpConfig) -> AmpResult:
    """Run AMP with the ``amp`` config section."""
    return run_amp(p, max_iter=config.max_iter, damping=config.damping, tol=config.tol)
