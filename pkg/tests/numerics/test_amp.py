import itertools

import numpy as np
import pytest

from app.core.config import AmpConfig
from app.errors.exceptions import DimensionError, DomainError
from app.models.amp import AmpProblem
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior
from app.service.amp_service import run_amp, run_amp_with
from app.service.prior_service import prior_variance, sample
from app.service.verify_service import random_unitary
from tests.helpers import complex_normal


def _map_support(phi: np.ndarray, obs: np.ndarray, prior: BernoulliGaussianPrior, noise_var: float) -> np.ndarray:
    """Exhaustive MAP support of one column under a Bernoulli-Gaussian prior."""
    m, k = phi.shape
    best, best_score = np.zeros(k, dtype=bool), -np.inf
    for pattern in itertools.product([False, True], repeat=k):
        support = np.array(pattern)
        cols = phi[:, support]
        cov = prior.variance * cols @ cols.conj().T + noise_var * np.eye(m)
        _, logdet = np.linalg.slogdet(cov)
        quad = np.real(np.vdot(obs, np.linalg.solve(cov, obs)))
        active = int(support.sum())
        score = active * np.log(prior.rho) + (k - active) * np.log1p(-prior.rho) - logdet - quad
        if score > best_score:
            best, best_score = support, score
    return best


class TestRunAmp:
    """Tests for the multi-column AMP solver."""

    def test_identity_whitening(self, rng) -> None:
        """With phi = I the result is the scalar denoiser applied to obs."""
        obs = complex_normal(rng, 5, 3)

        result = run_amp(AmpProblem(phi=np.eye(5, dtype=np.complex128), obs=obs, prior=GaussianPrior()))

        np.testing.assert_allclose(result.mean, obs / 2)
        np.testing.assert_allclose(result.var, 0.5)
        assert result.converged

    def test_gaussian_matches_joint_mmse(self, rng) -> None:
        """With a Gaussian prior the fixed point is the exact joint MMSE estimate."""
        phi = complex_normal(rng, 12, 6)
        obs = complex_normal(rng, 12, 4)
        gamma = 1.5

        result = run_amp(
            AmpProblem(phi=phi, obs=obs, prior=GaussianPrior(variance=gamma)),
            max_iter=500,
            damping=1.0,
            tol=1e-12,
        )
        expected = np.linalg.solve(np.eye(6) / gamma + phi.conj().T @ phi, phi.conj().T @ obs)

        assert result.converged
        np.testing.assert_allclose(result.mean, expected, atol=1e-5)

    def test_support_recovery_matches_exhaustive_map(self) -> None:
        """With a unitary phi the recovered support equals the exhaustive MAP support."""
        prior = BernoulliGaussianPrior(rho=0.2, variance=1.0)
        noise_var = 1e-4
        seeds = range(20)
        matches = 0
        for seed in seeds:
            rng = np.random.default_rng(seed)
            phi = random_unitary(8, rng)
            active = rng.random(8) < prior.rho
            x = np.where(active, complex_normal(rng, 8), 0j)
            obs = phi @ x + np.sqrt(noise_var) * complex_normal(rng, 8)

            result = run_amp(AmpProblem(phi=phi, obs=obs[:, None], prior=prior, noise_var=noise_var))

            r, v = result.pseudo_mean[:, 0], result.pseudo_var[:, 0]
            slab_mean = r * prior.variance / (prior.variance + v)
            recovered = np.abs(result.mean[:, 0]) > 0.5 * np.abs(slab_mean)
            matches += bool(np.array_equal(recovered, _map_support(phi, obs, prior, noise_var)))

        assert matches >= 0.95 * len(seeds)

    def test_damping_keeps_the_fixed_point(self, rng) -> None:
        """Damping 1.0 and 0.7 settle on the same estimate."""
        phi = complex_normal(rng, 12, 6)
        obs = complex_normal(rng, 12, 4)
        p = AmpProblem(phi=phi, obs=obs, prior=GaussianPrior(variance=1.5))

        plain = run_amp(p, max_iter=500, damping=1.0, tol=1e-12)
        damped = run_amp(p, max_iter=2000, damping=0.7, tol=1e-12)

        assert plain.converged
        assert damped.converged
        np.testing.assert_allclose(damped.mean, plain.mean, atol=1e-6)
        np.testing.assert_allclose(damped.var, plain.var, atol=1e-6)

    def test_gaussian_variance_below_prior(self, rng) -> None:
        """Every output variance lies in [0, prior variance] under a Gaussian prior."""
        phi = complex_normal(rng, 12, 6)
        obs = 3.0 * complex_normal(rng, 12, 4)

        result = run_amp(AmpProblem(phi=phi, obs=obs, prior=GaussianPrior(variance=1.5), noise_var=0.2))

        assert result.var.min() >= 0.0
        assert result.var.max() <= 1.5 + 1e-9

    def test_bernoulli_gaussian_variance_below_prior_on_average(self) -> None:
        """On data drawn from the model the mean output variance stays under the prior variance."""
        rng = np.random.default_rng(3)
        prior = BernoulliGaussianPrior(rho=0.2, variance=1.0)
        phi = complex_normal(rng, 24, 12) / np.sqrt(24)
        x = sample(prior, 12, 200, rng)
        obs = phi @ x + np.sqrt(0.05) * complex_normal(rng, 24, 200)

        result = run_amp(AmpProblem(phi=phi, obs=obs, prior=prior, noise_var=0.05))

        assert result.var.min() >= 0.0
        assert result.var.mean() <= prior_variance(prior) + 1e-9

    def test_deterministic(self, rng) -> None:
        """The same problem gives bitwise identical results."""
        p = AmpProblem(phi=complex_normal(rng, 6, 6), obs=complex_normal(rng, 6, 2), prior=BernoulliGaussianPrior())

        a = run_amp(p)
        b = run_amp(p)

        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.var, b.var)
        assert a.iterations == b.iterations

    def test_iteration_cap(self, rng) -> None:
        """A single iteration on a non-diagonal Gram matrix does not report convergence."""
        p = AmpProblem(phi=complex_normal(rng, 6, 4), obs=complex_normal(rng, 6, 2), prior=GaussianPrior())

        result = run_amp_with(p, AmpConfig(max_iter=1, damping=0.7, tol=1e-8))

        assert result.iterations == 1
        assert not result.converged
        assert result.pseudo_var.shape == (4, 2)

    def test_invalid_parameters(self, rng) -> None:
        """A damping outside (0, 1] is rejected."""
        p = AmpProblem(phi=complex_normal(rng, 3, 3), obs=complex_normal(rng, 3, 1), prior=GaussianPrior())

        with pytest.raises(DomainError):
            run_amp(p, damping=0.0)

    def test_problem_validation(self, rng) -> None:
        """phi and obs must share their row dimension and phi must be finite."""
        with pytest.raises(DimensionError):
            AmpProblem(phi=complex_normal(rng, 3, 3), obs=complex_normal(rng, 4, 1), prior=GaussianPrior())
        with pytest.raises(DomainError):
            AmpProblem(phi=np.full((2, 2), np.nan + 0j), obs=complex_normal(rng, 2, 1), prior=GaussianPrior())
