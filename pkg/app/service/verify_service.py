import logging
from collections.abc import Callable

import numpy as np
from scipy import linalg

from app.core import numcore
from app.core.config import AmpConfig, EngineConfig, LmmseConfig, RunConfig
from app.models.matrix import ComplexMatrix, HermitianPSD, MatrixGaussian
from app.models.state import HvmpState, Problem
from app.schemas.experiment import CheckResult
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior
from app.service import reference_service
from app.service.hvmp_service import HvmpEngine
from app.service.operator_service import make_gaussian_operator, make_partial_dft, svd_prefactor
from app.service.prior_service import denoise_array

log = logging.getLogger(__name__)

VEC_IDENTITY_TOL = 1e-12
MC_SIGMAS = 4.0
INV_SQRT_TOL = 1e-8
INV_SQRT_MAX_LOG_COND = 6.0
GAUSSIAN_CONSISTENCY_TOL = 1e-4
FAST_PATH_TOL = 1e-9
DENOISER_TOL = 1e-6

Suite = Callable[[RunConfig, np.random.Generator], list[CheckResult]]


def _complex_normal(rng: np.random.Generator, *shape: int) -> ComplexMatrix:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_unitary(dim: int, rng: np.random.Generator) -> ComplexMatrix:
    """Haar-distributed unitary from the QR of a complex Gaussian matrix."""
    q, r = linalg.qr(_complex_normal(rng, dim, dim))
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases


def random_psd(dim: int, rng: np.random.Generator, eigs: np.ndarray) -> HermitianPSD:
    """Hermitian PSD matrix with the given spectrum and random eigenvectors."""
    q = random_unitary(dim, rng)
    return HermitianPSD(numcore.hermitian_part((q * eigs) @ q.conj().T))


def check_vec_identity(cfg: RunConfig, rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for i in range(cfg.verify.instances):
        l, k, t = (int(v) for v in rng.integers(1, 5, size=3))  # noqa: E741
        if i % 2 == 0:
            n = int(rng.integers(1, 2 * l * t + 1))
            op = make_partial_dft(n, l, t, rng)
            kind = "partial_dft"
        else:
            n = int(rng.integers(1, 13))
            op = make_gaussian_operator(n, l, t, rng)
            kind = "gaussian"
        error = reference_service.vec_identity_check(
            _complex_normal(rng, l, k),
            _complex_normal(rng, k, t),
            op,
            cfg.numcore.kron_guard,
        )
        results.append(
            CheckResult(
                suite="vec_identity",
                check=f"{kind} #{i} (L={l}, K={k}, T={t}, N={n})",
                passed=error <= VEC_IDENTITY_TOL,
                value=error,
                threshold=VEC_IDENTITY_TOL,
            ),
        )
    return results


def check_quadratic_mc(cfg: RunConfig, rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for i in range(cfg.verify.instances):
        l, k, t = (int(v) for v in rng.integers(1, 4, size=3))  # noqa: E741
        n = int(rng.integers(1, 9))
        op = make_gaussian_operator(n, l, t, rng)
        v_s = random_psd(k, rng, rng.uniform(0.05, 1.0, size=k))
        check = reference_service.mc_quadratic_check(
            _complex_normal(rng, l, k),
            v_s,
            _complex_normal(rng, k, t),
            op,
            cfg.verify.mc_samples,
            rng,
            guard=cfg.numcore.kron_guard,
        )
        gap = abs(check.mc_value - check.closed_form)
        z_score = gap / check.stderr if check.stderr > 0.0 else 0.0
        results.append(
            CheckResult(
                suite="quadratic_mc",
                check=f"instance #{i} (L={l}, K={k}, T={t}, N={n})",
                passed=check.passed,
                value=z_score,
                threshold=MC_SIGMAS,
                detail=f"mc={check.mc_value:.6g} closed={check.closed_form:.6g} stderr={check.stderr:.3g}",
            ),
        )
    return results


def check_inv_sqrt(cfg: RunConfig, rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for i in range(cfg.verify.instances):
        dim = int(rng.integers(1, 17))
        log_cond = float(rng.uniform(0.0, INV_SQRT_MAX_LOG_COND))
        cov = random_psd(dim, rng, np.logspace(0.0, -log_cond, dim))
        r = numcore.inv_sqrt(cov, "random covariance")
        residual = float(linalg.norm(r @ cov.matrix @ r.conj().T - np.eye(dim)) / np.sqrt(dim))
        results.append(
            CheckResult(
                suite="inv_sqrt",
                check=f"dim {dim}, condition 1e{log_cond:.1f} #{i}",
                passed=residual < INV_SQRT_TOL,
                value=residual,
                threshold=INV_SQRT_TOL,
            ),
        )
    return results


def _posterior_state(problem: Problem, x_bar: ComplexMatrix, sigma: HermitianPSD) -> HvmpState:
    k, t = x_bar.shape
    l = problem.l  # noqa: E741
    eye = HermitianPSD.scaled_identity(k, 1.0)
    w = np.zeros((l, t), dtype=np.complex128)
    return HvmpState(
        s_hat=np.zeros((l, k), dtype=np.complex128),
        x_hat=np.zeros((k, t), dtype=np.complex128),
        v_s=eye,
        u_x=eye,
        w_hat=w,
        nu_w=1.0,
        w_bar=w,
        nu_bar_w=1.0,
        msg_x=MatrixGaussian.with_row_cov(x_bar, sigma),
        msg_s=MatrixGaussian.with_col_cov(np.zeros((l, k), dtype=np.complex128), eye),
    )


def check_gaussian_consistency(cfg: RunConfig, rng: np.random.Generator) -> list[CheckResult]:
    results = []
    amp = AmpConfig(max_iter=2000, damping=1.0, tol=1e-13)
    for i in range(min(cfg.verify.instances, 10)):
        k = int(rng.integers(2, 9))
        t = int(rng.integers(1, 9))
        op = make_gaussian_operator(4, 2, t, rng)
        problem = Problem(
            op=op,
            y=np.zeros(4, dtype=np.complex128),
            noise_var=1.0,
            k=k,
            prior_s=GaussianPrior(),
            prior_x=GaussianPrior(variance=float(rng.uniform(0.5, 2.0))),
        )
        sigma = random_psd(k, rng, np.logspace(-1.0, 1.0, k))
        state = _posterior_state(problem, _complex_normal(rng, k, t), sigma)
        closed, _, _ = HvmpEngine(problem, engine=EngineConfig(gaussian_closed_form=True)).msg_x_posterior(state)
        via_amp, _, _ = HvmpEngine(problem, amp=amp, engine=EngineConfig(gaussian_closed_form=False)).msg_x_posterior(
            state,
        )
        rel = float(linalg.norm(via_amp - closed) / linalg.norm(closed))
        results.append(
            CheckResult(
                suite="gaussian_consistency",
                check=f"state #{i} (K={k}, T={t})",
                passed=rel <= GAUSSIAN_CONSISTENCY_TOL,
                value=rel,
                threshold=GAUSSIAN_CONSISTENCY_TOL,
            ),
        )
    return results


def lmmse_path_gap(problem: Problem, w_bar: ComplexMatrix, nu_bar_w: float, mode: str) -> float:
    """Largest relative gap between the fast LMMSE path of ``problem.op`` and the dense solve."""
    lmmse_auto = LmmseConfig(variance_mode=mode, path="auto")
    lmmse_dense = LmmseConfig(variance_mode=mode, path="dense")
    w_fast, nu_fast = HvmpEngine(problem, lmmse=lmmse_auto).lmmse_w(w_bar, nu_bar_w)
    w_dense, nu_dense = HvmpEngine(problem, lmmse=lmmse_dense).lmmse_w(w_bar, nu_bar_w)
    gap_w = float(linalg.norm(w_fast - w_dense) / max(float(linalg.norm(w_dense)), np.finfo(np.float64).tiny))
    return max(gap_w, abs(nu_fast - nu_dense) / abs(nu_dense))


def check_lmmse_fast_paths(cfg: RunConfig, rng: np.random.Generator) -> list[CheckResult]:
    results = []
    for i in range(min(cfg.verify.instances, 10)):
        l, t = int(rng.integers(2, 9)), int(rng.integers(2, 17))  # noqa: E741
        t = min(t, 128 // l)
        n = int(rng.integers(1, min(64, l * t) + 1))
        orthogonal = make_partial_dft(n, l, t, rng, "row")
        prefactored = svd_prefactor(make_gaussian_operator(n, l, t, rng))
        sigma2 = float(rng.uniform(0.05, 1.0))
        nu_bar_w = float(rng.uniform(0.1, 2.0))
        w_bar = _complex_normal(rng, l, t)
        for label, op in (("partial_orthogonal", orthogonal), ("svd", prefactored)):
            problem = Problem(
                op=op,
                y=_complex_normal(rng, n),
                noise_var=sigma2,
                k=1,
                prior_s=GaussianPrior(),
                prior_x=GaussianPrior(),
            )
            for mode in ("posterior", "literal"):
                gap = lmmse_path_gap(problem, w_bar, nu_bar_w, mode)
                results.append(
                    CheckResult(
                        suite="lmmse_fast_paths",
                        check=f"{label} {mode} #{i} (N={n}, LT={l * t})",
                        passed=gap <= FAST_PATH_TOL,
                        value=gap,
                        threshold=FAST_PATH_TOL,
                    ),
                )
    return results


DENOISER_GRID = [
    (rho, r, v)
    for rho, r in ((0.1, 0.3 + 0.1j), (0.2, 1.0 + 0j), (0.5, -0.7 + 1.2j), (0.9, 2.0 - 0.5j))
    for v in (0.05, 0.2, 0.5, 1.0, 3.0)
]


def check_denoiser(cfg: RunConfig, rng: np.random.Generator) -> list[CheckResult]:  # noqa: ARG001
    results = []
    for rho, r, v in DENOISER_GRID:
        prior = BernoulliGaussianPrior(rho=rho, variance=1.0)
        mean, var = denoise_array(prior, np.array([r]), v)
        oracle_mean, oracle_var = reference_service.denoise_oracle(prior, r, v)
        error = max(abs(complex(mean[0]) - oracle_mean), abs(float(var[0]) - oracle_var))
        results.append(
            CheckResult(
                suite="denoiser_oracle",
                check=f"rho={rho}, r={r}, v={v}",
                passed=error <= DENOISER_TOL,
                value=error,
                threshold=DENOISER_TOL,
            ),
        )
    return results


SUITES: dict[str, Suite] = {
    "vec_identity": check_vec_identity,
    "quadratic_mc": check_quadratic_mc,
    "inv_sqrt": check_inv_sqrt,
    "gaussian_consistency": check_gaussian_consistency,
    "lmmse_fast_paths": check_lmmse_fast_paths,
    "denoiser_oracle": check_denoiser,
}


def run_suites(cfg: RunConfig, names: list[str] | None = None) -> list[CheckResult]:
    """
    Run the oracle suites, each on its own stream derived from ``verify.seed``.

    Args:
        cfg (RunConfig): Supplies suite sizes and the seed.
        names (list[str] | None): Subset of suites; None runs all of them.

    Returns:
        list[CheckResult]: One row per check, in suite order.
    """
    selected = names or list(SUITES)
    streams = np.random.SeedSequence(cfg.verify.seed).spawn(len(SUITES))
    results: list[CheckResult] = []
    for index, (name, suite) in enumerate(SUITES.items()):
        if name not in selected:
            continue
        rows = suite(cfg, np.random.default_rng(streams[index]))
        failed = sum(not row.passed for row in rows)
        log.info("suite %s: %d checks, %d failed", name, len(rows), failed)
        results.extend(rows)
    return results


def format_report(results: list[CheckResult]) -> str:
    """Per-suite pass/fail table followed by every failing check."""
    lines = [f"{'suite':<22} {'checks':>6} {'failed':>6} {'worst':>12}  status"]
    suites: dict[str, list[CheckResult]] = {}
    for row in results:
        suites.setdefault(row.suite, []).append(row)
    for name, rows in suites.items():
        failed = [r for r in rows if not r.passed]
        worst = max(r.value / r.threshold for r in rows)
        status = "PASS" if not failed else "FAIL"
        lines.append(f"{name:<22} {len(rows):>6} {len(failed):>6} {worst:>12.3g}  {status}")
    for row in results:
        if not row.passed:
            lines.append(f"  FAIL {row.suite}: {row.check} value={row.value:.3g} > {row.threshold:.3g} {row.detail}")
    return "\n".join(lines)
