"""
Full-scale reproduction runs.

These take minutes on a workstation and are deselected by default; run them
with ``pytest -m acceptance``.
"""

import numpy as np
import pytest

from app.core.config import CONFIG_DIR, load_run_config
from app.service.harness_service import gen_instance, nmse_db, phase_transition, run_trial, runtime_bench
from app.service.reference_service import als_baseline
from app.service.verify_service import run_suites
from app.utils.rng import derive_seed, engine_rng, instance_rng

pytestmark = pytest.mark.acceptance


class TestPhaseTransition:
    """NMSE of X against sparsity at K = 25."""

    def test_sparse_regime_recovers_and_dense_regime_degrades(self) -> None:
        """Medians reach -15 dB for rho <= 0.3 and lose at least 10 dB somewhere above rho = 0.4."""
        cfg = load_run_config(CONFIG_DIR / "fig2_phase_transition.conf")
        rho_grid = [round(0.1 * i, 1) for i in range(1, 10)]

        results = phase_transition(cfg, rho_grid, [25], cfg.sweep.trials_per_cell)

        medians = {rho: float(np.median([r.nmse_x_db for r in results if r.rho == rho])) for rho in rho_grid}
        assert all(medians[rho] <= -15.0 for rho in (0.1, 0.2, 0.3))
        assert max(medians[rho] for rho in rho_grid if rho >= 0.4) >= medians[0.1] + 10.0


class TestRuntime:
    """Wall time to reach -20 dB against K."""

    def test_target_reached_and_runtime_grows(self) -> None:
        """At least 8 of 10 trials reach the target and medians rise with K up to one inversion."""
        cfg = load_run_config(CONFIG_DIR / "fig3_runtime.conf")

        rows, _ = runtime_bench(cfg, cfg.bench.k_grid, cfg.bench.target_db, cfg.bench.trials)

        assert all(row.reached >= 8 for row in rows)
        walls = [row.median_wall_ms for row in rows]
        inversions = sum(b < a for a, b in zip(walls, walls[1:], strict=False))
        assert inversions <= 1


class TestOracleSuites:
    """Oracle suites at their full default sizes."""

    @pytest.mark.parametrize(
        "suite",
        ["vec_identity", "quadratic_mc", "inv_sqrt", "gaussian_consistency", "lmmse_fast_paths", "denoiser_oracle"],
    )
    def test_suite_passes(self, suite: str) -> None:
        """Every check of the suite passes."""
        cfg = load_run_config(None)

        results = run_suites(cfg, [suite])

        failing = [r.check for r in results if not r.passed]
        assert not failing


class TestBaseline:
    """The engine against alternating least squares."""

    def test_engine_beats_als(self) -> None:
        """At rho = 0.2 the engine's median NMSE of X beats the ALS baseline by 10 dB."""
        cfg = load_run_config(CONFIG_DIR / "fig2_phase_transition.conf").with_cell(0.2, 25)
        engine_db, als_db = [], []
        for trial in range(cfg.sweep.trials_per_cell):
            seed = derive_seed(cfg.seed, 0, trial)
            instance = gen_instance(cfg, instance_rng(seed), seed)
            engine_db.append(run_trial(cfg, seed, trial, instance=instance).nmse_x_db)
            _, x_hat = als_baseline(instance.problem(cfg), cfg.t_max, engine_rng(seed))
            als_db.append(nmse_db(x_hat, instance.x, cfg.harness.x_ambiguity))

        assert np.median(engine_db) <= np.median(als_db) - 10.0


class TestDeterminism:
    """Reproducibility of the sweep output."""

    def test_serial_and_parallel_agree(self) -> None:
        """A sweep repeated on one and on every core gives the same numeric fields."""
        cfg = load_run_config(CONFIG_DIR / "fig2_phase_transition.conf")

        serial = phase_transition(cfg, [0.2, 0.5], [10, 25], 3, jobs=1)
        parallel = phase_transition(cfg, [0.2, 0.5], [10, 25], 3)

        assert [r.model_dump(exclude={"wall_ms"}) for r in serial] == [
            r.model_dump(exclude={"wall_ms"}) for r in parallel
        ]
