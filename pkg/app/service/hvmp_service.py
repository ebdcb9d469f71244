import logging
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from app.core.config import AmpConfig, EngineConfig, LmmseConfig, RunConfig
from app.core.numcore import eigh_floored, hermitian_part, inv_sqrt, relative_floor
from app.errors.exceptions import DomainError, EngineRunError, EngineStepError, HvmpError, SingularityError
from app.models.amp import AmpProblem
from app.models.matrix import ComplexMatrix, HermitianPSD, MatrixGaussian, RealArray
from app.models.operator import SvdPrefactored
from app.models.state import HvmpRun, HvmpState, IterationDiagnostics, Problem, StopReason
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior
from app.service.amp_service import run_amp_with
from app.service.prior_service import prior_variance, sample

log = logging.getLogger(__name__)

Observer = Callable[[HvmpState, IterationDiagnostics], bool]


@dataclass(frozen=True, slots=True)
class Posterior:
    """Posterior moments of a factor produced by one posterior step."""

    mean: ComplexMatrix
    row_var: RealArray
    amp_iterations: int


class HvmpEngine:
    """
    The message-passing engine.

    One iteration runs five steps in a fixed order: the LMMSE update of
    ``w = vec(SX)``, the message from the likelihood to X, the posterior of X,
    the message from the likelihood to S and the posterior of S. Every method
    is a pure function of the state it receives.
    """

    STEPS = ("lmmse_w", "msg_fy_to_x", "msg_x_posterior", "msg_fy_to_s", "msg_s_posterior")

    def __init__(
        self,
        problem: Problem,
        lmmse: LmmseConfig | None = None,
        amp: AmpConfig | None = None,
        engine: EngineConfig | None = None,
    ) -> None:
        """
        Initialize the engine.

        Args:
            problem: Operator, measurements, noise variance and priors.
            lmmse: LMMSE step switches.
            amp: Inner AMP parameters.
            engine: Engine switches (damping, closed form, debug checks, floor).
        """
        self.problem = problem
        self.lmmse = lmmse or LmmseConfig()
        self.amp = amp or AmpConfig()
        self.engine = engine or EngineConfig()

    @classmethod
    def from_config(cls, problem: Problem, config: RunConfig) -> "HvmpEngine":
        return cls(problem, lmmse=config.lmmse, amp=config.amp, engine=config.engine)

    def init(self, rng: np.random.Generator) -> HvmpState:
        """Draw S-hat and X-hat from their priors and evaluate the prior moments of w once."""
        p = self.problem
        s_hat = sample(p.prior_s, p.l, p.k, rng)
        x_hat = sample(p.prior_x, p.k, p.t, rng)
        v_s = HermitianPSD.scaled_identity(p.k, prior_variance(p.prior_s))
        u_x = HermitianPSD.scaled_identity(p.k, prior_variance(p.prior_x))
        w_bar = s_hat @ x_hat
        nu_bar_w = self._nu_bar_w()
        return HvmpState(
            s_hat=s_hat,
            x_hat=x_hat,
            v_s=v_s,
            u_x=u_x,
            w_hat=w_bar,
            nu_w=nu_bar_w,
            w_bar=w_bar,
            nu_bar_w=nu_bar_w,
            msg_x=MatrixGaussian.with_row_cov(x_hat, u_x),
            msg_s=MatrixGaussian.with_col_cov(s_hat, v_s),
        )

    def _nu_bar_w(self) -> float:
        p = self.problem
        return 2.0 * p.noise_var * p.n / p.op.fro_norm_sq

    def prior_w_moments(self, state: HvmpState) -> tuple[ComplexMatrix, float]:
        """``W-bar = S-hat X-hat`` and ``nu-bar_w = 2 sigma^2 N / ||A||_F^2``."""
        return state.s_hat @ state.x_hat, self._nu_bar_w()

    def lmmse_w(self, w_bar: ComplexMatrix, nu_bar_w: float) -> tuple[ComplexMatrix, float]:
        """
        LMMSE estimate of ``w`` under the prior ``CN(vec(W-bar), nu-bar_w I)``.

        Returns:
            tuple[ComplexMatrix, float]: ``W-hat`` (L x T) and ``nu_w``.

        Raises:
            DomainError: If ``nu_bar_w`` is not positive.
            SingularityError: If the N x N system cannot be solved.
        """
        if not nu_bar_w > 0.0:
            msg = f"nu_bar_w must be positive, got {nu_bar_w}"
            raise DomainError(msg)
        p = self.problem
        op = p.op
        sigma2 = p.noise_var
        residual = p.y - op.apply(w_bar)

        if self.lmmse.path == "auto" and op.partial_orthogonal:
            gain = nu_bar_w / (nu_bar_w + sigma2)
            w_hat = w_bar + gain * op.adjoint(residual)
            trace = nu_bar_w * gain * op.n
        elif self.lmmse.path == "auto" and isinstance(op.realization, SvdPrefactored):
            w_hat, trace = self._lmmse_svd(op.realization, w_bar, nu_bar_w, residual)
        else:
            system = nu_bar_w * op.gram + sigma2 * np.eye(op.n)
            try:
                solved = linalg.solve(system, np.column_stack([residual, op.gram]), assume_a="pos")
            except (linalg.LinAlgError, ValueError) as exc:
                raise SingularityError("nu_bar_w A A^H + sigma^2 I") from exc
            w_hat = w_bar + nu_bar_w * op.adjoint(solved[:, 0])
            trace = nu_bar_w**2 * float(np.real(np.trace(solved[:, 1:])))

        reduction = trace / (op.l * op.t)
        if self.lmmse.variance_mode == "literal":
            nu_w = reduction
        else:
            nu_w = nu_bar_w - reduction
        return w_hat, max(nu_w, self.engine.eig_floor * nu_bar_w)

    def _lmmse_svd(
        self,
        svd: SvdPrefactored,
        w_bar: ComplexMatrix,
        nu_bar_w: float,
        residual: ComplexMatrix,
    ) -> tuple[ComplexMatrix, float]:
        op = self.problem.op
        u, s, vh = svd.u, svd.s, svd.vh
        denom = nu_bar_w * s**2 + self.problem.noise_var
        if np.any(denom <= 0.0):
            msg = "nu_bar_w S^2 + sigma^2 I"
            raise SingularityError(msg)
        coef = nu_bar_w * s / denom
        update = vh.conj().T @ (coef * (u.conj().T @ residual))
        w_hat = w_bar + update.reshape((op.l, op.t), order="F")
        trace = nu_bar_w**2 * float(np.sum(s**2 / denom))
        return w_hat, trace

    def _normal_inverse(self, gram: ComplexMatrix, name: str) -> tuple[RealArray, ComplexMatrix]:
        return relative_floor(HermitianPSD(hermitian_part(gram)), self.engine.eig_floor, name)

    def msg_fy_to_x(self, state: HvmpState) -> tuple[ComplexMatrix, HermitianPSD]:
        """
        Message from the likelihood to X in matrix form.

        ``Sigma-bar_X = nu_w (S^H S + L V_S)^-1`` and
        ``X-bar = Sigma-bar_X S^H W-hat / nu_w``.
        """
        s = state.s_hat
        eigs, q = self._normal_inverse(s.conj().T @ s + self.problem.l * state.v_s.matrix, "S^H S + L V_S")
        sigma = HermitianPSD(hermitian_part((q * (state.nu_w / eigs)) @ q.conj().T))
        x_bar = (q / eigs) @ (q.conj().T @ (s.conj().T @ state.w_hat))
        return x_bar, sigma

    def msg_fy_to_s(self, state: HvmpState) -> tuple[ComplexMatrix, HermitianPSD]:
        """
        Message from the likelihood to S in matrix form.

        ``Sigma-bar_S = nu_w (X X^H + T U_X)^-1`` and
        ``S-bar = W-hat X^H Sigma-bar_S / nu_w``.
        """
        x = state.x_hat
        eigs, q = self._normal_inverse(x @ x.conj().T + self.problem.t * state.u_x.matrix, "X X^H + T U_X")
        sigma = HermitianPSD(hermitian_part((q * (state.nu_w / eigs)) @ q.conj().T))
        s_bar = ((state.w_hat @ x.conj().T) @ q / eigs) @ q.conj().T
        return s_bar, sigma

    def _posterior(
        self,
        mean_bar: ComplexMatrix,
        sigma: HermitianPSD,
        prior: BernoulliGaussianPrior | GaussianPrior,
        name: str,
    ) -> Posterior:
        """Posterior of a K x C factor whose columns are observed as ``CN(column, Sigma)``."""
        if isinstance(prior, GaussianPrior) and self.engine.gaussian_closed_form:
            gamma = prior.variance
            lam, q = eigh_floored(sigma.matrix, 0.0)
            shrink = (q * (gamma / (lam + gamma))) @ q.conj().T
            mean = shrink @ mean_bar
            if prior.mean != 0:
                pull = (q * (lam / (lam + gamma))) @ q.conj().T
                mean = mean + pull @ np.full(mean_bar.shape, prior.mean)
            cov_diag = np.real(np.einsum("ij,j,ij->i", q, gamma * lam / (lam + gamma), q.conj()))
            return Posterior(mean, np.maximum(cov_diag, 0.0), 0)

        whiten = inv_sqrt(sigma, name)
        result = run_amp_with(AmpProblem(phi=whiten, obs=whiten @ mean_bar, prior=prior), self.amp)
        return Posterior(result.mean, result.var.mean(axis=1), result.iterations)

    def msg_x_posterior(self, state: HvmpState) -> tuple[ComplexMatrix, HermitianPSD, int]:
        """
        Posterior mean of X and the diagonal ``U_X``.

        Returns:
            tuple: ``X-hat``, ``U_X`` and the number of AMP iterations used (0 on the closed form).
        """
        post = self._posterior(state.msg_x.mean, state.msg_x.covariance, self.problem.prior_x, "Sigma-bar_X")
        return post.mean, HermitianPSD.from_diagonal(post.row_var), post.amp_iterations

    def msg_s_posterior(self, state: HvmpState) -> tuple[ComplexMatrix, HermitianPSD, int]:
        """
        Posterior mean of S and the diagonal ``V_S``.

        Works on ``S-bar^H``, whose columns carry covariance ``Sigma-bar_S``,
        with the conjugated prior.
        """
        post = self._posterior(
            state.msg_s.mean.conj().T,
            state.msg_s.covariance,
            self.problem.prior_s.conjugate(),
            "Sigma-bar_S",
        )
        return post.mean.conj().T, HermitianPSD.from_diagonal(post.row_var), post.amp_iterations

    def _blend(self, new: ComplexMatrix, old: ComplexMatrix) -> ComplexMatrix:
        d = self.engine.damping
        if d == 1.0:
            return new
        return d * new + (1.0 - d) * old

    def _checked[T](self, index: int, func: Callable[[], T]) -> T:
        try:
            return func()
        except HvmpError as exc:
            raise EngineStepError(index + 1, self.STEPS[index], exc) from exc

    def step_with_counts(self, state: HvmpState) -> tuple[HvmpState, int, int]:
        """Run one iteration and report the AMP iterations spent on X and S."""
        w_bar, nu_bar_w = self.prior_w_moments(state)
        w_hat, nu_w = self._checked(0, lambda: self.lmmse_w(w_bar, nu_bar_w))
        current = replace(state, w_bar=w_bar, nu_bar_w=nu_bar_w, w_hat=w_hat, nu_w=nu_w)

        x_bar, sigma_x = self._checked(1, lambda: self.msg_fy_to_x(current))
        current = replace(current, msg_x=MatrixGaussian.with_row_cov(x_bar, sigma_x))

        x_hat, u_x, amp_x = self._checked(2, lambda: self.msg_x_posterior(current))
        current = replace(current, x_hat=self._blend(x_hat, state.x_hat), u_x=u_x)

        s_bar, sigma_s = self._checked(3, lambda: self.msg_fy_to_s(current))
        current = replace(current, msg_s=MatrixGaussian.with_col_cov(s_bar, sigma_s))

        s_hat, v_s, amp_s = self._checked(4, lambda: self.msg_s_posterior(current))
        current = replace(current, s_hat=self._blend(s_hat, state.s_hat), v_s=v_s, iteration=state.iteration + 1)

        if self.engine.debug_checks:
            self._debug_check(current)
        return current, amp_x, amp_s

    def step(self, state: HvmpState) -> HvmpState:
        """
        One full iteration; the input state is left untouched.

        Raises:
            EngineStepError: Naming the step that failed.
        """
        return self.step_with_counts(state)[0]

    def _debug_check(self, state: HvmpState) -> None:
        for name, cov in (
            ("V_S", state.v_s),
            ("U_X", state.u_x),
            ("Sigma-bar_X", state.msg_x.covariance),
            ("Sigma-bar_S", state.msg_s.covariance),
        ):
            try:
                HermitianPSD(cov.matrix.copy())
            except HvmpError as exc:
                msg = f"{name} violates the Hermitian PSD invariant at iteration {state.iteration}"
                raise DomainError(msg) from exc
        log.debug("iteration %d passed covariance checks", state.iteration)

    def residual(self, state: HvmpState) -> float:
        """``||y - A vec(S-hat X-hat)||``."""
        return float(linalg.norm(self.problem.y - self.problem.op.apply(state.s_hat @ state.x_hat)))

    def run(
        self,
        t_max: int,
        rng: np.random.Generator,
        rel_tol: float = 0.0,
        observer: Observer | None = None,
    ) -> HvmpRun:
        """
        Initialize and iterate until ``t_max``, the relative-change stop or the observer says so.

        Args:
            t_max (int): Iteration cap, at least 1.
            rng (np.random.Generator): Stream of the initialization.
            rel_tol (float): Stop once ``||X_new - X_old|| / ||X_new||`` drops below it; 0 disables.
            observer (Observer | None): Called after every iteration; returning True stops the run.

        Returns:
            HvmpRun: Final state, per-iteration diagnostics and why the loop ended.

        Raises:
            DomainError: If ``t_max`` is below 1.
            EngineRunError: Carrying the diagnostics recorded before the failure.
        """
        if t_max < 1:
            msg = f"t_max must be at least 1, got {t_max}"
            raise DomainError(msg)

        trajectory: list[IterationDiagnostics] = []
        try:
            state = self.init(rng)
        except HvmpError as exc:
            raise EngineRunError(exc, trajectory) from exc

        reason: StopReason = "t_max"
        for _ in range(t_max):
            try:
                new_state, amp_x, amp_s = self.step_with_counts(state)
            except HvmpError as exc:
                log.debug("engine failed at iteration %d: %s", state.iteration + 1, exc.message)
                raise EngineRunError(exc, trajectory) from exc

            norm_x = float(linalg.norm(new_state.x_hat))
            change = float(linalg.norm(new_state.x_hat - state.x_hat)) / max(norm_x, np.finfo(np.float64).tiny)
            diag = IterationDiagnostics(
                iteration=new_state.iteration,
                residual=self.residual(new_state),
                nu_w=new_state.nu_w,
                mean_u_x=float(new_state.u_x.diagonal().mean()),
                mean_v_s=float(new_state.v_s.diagonal().mean()),
                rel_change_x=change,
                amp_iterations_x=amp_x,
                amp_iterations_s=amp_s,
            )
            trajectory.append(diag)
            log.debug(
                "iteration %d: residual %.4e, nu_w %.4e, change %.3e",
                diag.iteration,
                diag.residual,
                diag.nu_w,
                diag.rel_change_x,
            )
            state = new_state
            if observer is not None and observer(state, diag):
                reason = "observer"
                break
            if rel_tol > 0.0 and change < rel_tol:
                reason = "rel_tol"
                break

        return HvmpRun(state=state, trajectory=trajectory, stop_reason=reason)
