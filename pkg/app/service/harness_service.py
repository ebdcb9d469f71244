import csv
import logging
import math
import subprocess
import sys
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linear_sum_assignment
from tqdm import tqdm

from app.core.config import BASE_DIR, AmbiguityMode, RunConfig
from app.errors.exceptions import (
    ConfigError,
    DimensionError,
    DomainError,
    EngineRunError,
    HvmpError,
    InstanceFormatError,
)
from app.models.matrix import ComplexMatrix, ComplexVector
from app.models.operator import LinearOperator
from app.models.state import HvmpState, IterationDiagnostics, Problem
from app.schemas.experiment import CSV_COLUMNS, BenchRow, CellSummary, RunSummary, TrialResult
from app.schemas.operator import OperatorSpec
from app.service.hvmp_service import HvmpEngine
from app.service.operator_service import generate_operator
from app.service.prior_service import sample
from app.utils.rng import derive_seed, engine_rng, instance_rng

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -120.0


@dataclass(frozen=True)
class Instance:
    """A synthetic problem together with its ground truth."""

    s: ComplexMatrix = field(repr=False)
    x: ComplexMatrix = field(repr=False)
    op: LinearOperator = field(repr=False)
    op_spec: OperatorSpec = field(repr=False)
    y: ComplexVector = field(repr=False)
    sigma2: float
    seed: int
    snr_db: float

    def problem(self, cfg: RunConfig) -> Problem:
        """The recovery problem seen by the engine (no ground truth)."""
        return Problem(
            op=self.op,
            y=self.y,
            noise_var=self.sigma2,
            k=self.s.shape[1],
            prior_s=cfg.s_prior,
            prior_x=cfg.prior_x,
        )


def noise_variance(clean: ComplexVector, snr_db: float) -> float:
    """
    ``||clean||^2 / (N 10^(snr_db / 10))``.

    Raises:
        DomainError: If the clean measurements are identically zero.
        ConfigError: If ``snr_db`` is so extreme that the variance is not a positive finite float.
    """
    energy = float(np.vdot(clean, clean).real)
    if energy == 0.0:
        msg = "clean measurements are identically zero; the SNR is undefined"
        raise DomainError(msg)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        sigma2 = float(energy / (clean.size * np.power(10.0, snr_db / 10.0)))
    if not (np.isfinite(sigma2) and sigma2 > 0.0):
        msg = f"snr_db={snr_db} gives noise variance {sigma2}, which is not a positive finite float"
        raise ConfigError(msg)
    return sigma2


def gen_instance(cfg: RunConfig, rng: np.random.Generator, seed: int = 0) -> Instance:
    """
    Draw S, X, the operator and noisy measurements, in that order.

    The noise variance is calibrated from the realized clean measurement energy.

    Raises:
        InfeasibleOperatorError: If the operator dimensions are infeasible.
        DomainError: If the clean measurements are identically zero.
        ConfigError: If the SNR leaves no usable noise variance.
    """
    s = sample(cfg.s_prior, cfg.l, cfg.k, rng)
    x = sample(cfg.prior_x, cfg.k, cfg.t, rng)
    op, spec = generate_operator(cfg.operator, cfg.n, cfg.l, cfg.t, rng)
    clean = op.apply(s @ x)
    sigma2 = noise_variance(clean, cfg.snr_db)
    noise = math.sqrt(sigma2 / 2.0) * (rng.standard_normal(cfg.n) + 1j * rng.standard_normal(cfg.n))
    return Instance(s=s, x=x, op=op, op_spec=spec, y=clean + noise, sigma2=sigma2, seed=seed, snr_db=cfg.snr_db)


def _match_rows(estimate: ComplexMatrix, truth: ComplexMatrix) -> ComplexMatrix:
    """Reorder the rows of ``estimate`` so row k best explains ``truth`` row k up to a complex scale."""
    energy = np.sum(np.abs(estimate) ** 2, axis=1)
    inner = estimate.conj() @ truth.T
    gain = np.divide(np.abs(inner) ** 2, energy[:, None], out=np.zeros(inner.shape), where=energy[:, None] > 0.0)
    est_idx, truth_idx = linear_sum_assignment(gain, maximize=True)
    matched = np.zeros_like(estimate)
    matched[truth_idx] = estimate[est_idx]
    return matched


def nmse_db(
    estimate: ComplexMatrix,
    truth: ComplexMatrix,
    resolve: AmbiguityMode = "none",
    floor_db: float = NMSE_FLOOR_DB,
) -> float:
    """
    Normalized squared error in dB after resolving the ambiguity of the factorization.

    ``row`` rescales every row of the estimate by its least-squares factor
    ``<est_k, truth_k> / ||est_k||^2`` (zero rows stay zero); ``col`` does the same
    per column. ``row_perm`` and ``col_perm`` first match estimate rows (columns)
    to truth rows (columns) by the assignment that removes the most squared
    error after that rescaling, since ``S X = (S P)(P^T X)`` for any permutation P.

    Raises:
        DimensionError: If the shapes differ.
        DomainError: If ``truth`` is zero.
    """
    if estimate.shape != truth.shape:
        msg = f"estimate {estimate.shape} and truth {truth.shape} differ in shape"
        raise DimensionError(msg)
    truth_energy = float(np.vdot(truth, truth).real)
    if truth_energy == 0.0:
        msg = "NMSE is undefined for a zero truth"
        raise DomainError(msg)

    aligned = estimate
    if resolve != "none":
        by_column = resolve in ("col", "col_perm")
        est_rows = estimate.T if by_column else estimate
        truth_rows = truth.T if by_column else truth
        if resolve.endswith("_perm"):
            est_rows = _match_rows(est_rows, truth_rows)
        energy = np.sum(np.abs(est_rows) ** 2, axis=1, keepdims=True)
        inner = np.sum(est_rows.conj() * truth_rows, axis=1, keepdims=True)
        scale = np.divide(inner, energy, out=np.zeros_like(inner), where=energy > 0.0)
        aligned = (est_rows * scale).T if by_column else est_rows * scale

    error = float(np.sum(np.abs(aligned - truth) ** 2))
    if error == 0.0:
        return floor_db
    return max(10.0 * math.log10(error / truth_energy), floor_db)


def _failed(cfg: RunConfig, seed: int, trial: int, reseeds: int) -> TrialResult:
    nan = float("nan")
    return TrialResult(
        rho=cfg.rho,
        k=cfg.k,
        l=cfg.l,
        t=cfg.t,
        n=cfg.n,
        snr_db=cfg.snr_db,
        seed=seed,
        trial=trial,
        nmse_x_db=nan,
        nmse_s_db=nan,
        iters=0,
        wall_ms=nan,
        converged=False,
        failed=True,
        reseeds=reseeds,
    )


class _TargetObserver:
    """Stops the engine the first iteration the NMSE of X reaches a target; keeps its own cost off the clock."""

    def __init__(self, truth: ComplexMatrix, target_db: float, resolve: AmbiguityMode) -> None:
        self.truth = truth
        self.target_db = target_db
        self.resolve = resolve
        self.elapsed = 0.0
        self.reached = False

    def __call__(self, state: HvmpState, _diag: IterationDiagnostics) -> bool:
        start = time.perf_counter()
        self.reached = nmse_db(state.x_hat, self.truth, self.resolve) <= self.target_db
        self.elapsed += time.perf_counter() - start
        return self.reached


def run_trial(
    cfg: RunConfig,
    seed: int,
    trial: int = 0,
    instance: Instance | None = None,
    target_db: float | None = None,
) -> TrialResult:
    """
    Generate an instance, run the engine and score it.

    Engine failures are retried with a fresh initialization (the instance is
    kept) up to ``harness.max_reseeds`` times before the trial is recorded as
    failed.

    Args:
        cfg (RunConfig): Configuration of the trial.
        seed (int): Seed of the trial; fixes the instance and every initialization.
        trial (int): Index of the trial within its cell.
        instance (Instance | None): Use a stored instance instead of drawing one.
        target_db (float | None): Benchmark mode: stop once the NMSE of X reaches this value.

    Returns:
        TrialResult: Metrics of the final attempt.
    """
    inst = instance if instance is not None else gen_instance(cfg, instance_rng(seed), seed)
    engine = HvmpEngine.from_config(inst.problem(cfg), cfg)
    harness = cfg.harness

    for attempt in range(harness.max_reseeds + 1):
        observer = None
        if target_db is not None:
            observer = _TargetObserver(inst.x, target_db, harness.x_ambiguity)
        start = time.perf_counter()
        try:
            run = engine.run(cfg.t_max, engine_rng(seed, attempt), cfg.stop.rel_tol, observer)
        except EngineRunError as exc:
            log.warning(
                "trial %d (seed %d) attempt %d failed after %d iterations: %s",
                trial,
                seed,
                attempt,
                len(exc.trajectory),
                exc.cause.message,
            )
            continue
        elapsed = time.perf_counter() - start - (observer.elapsed if observer else 0.0)

        final = run.trajectory[-1]
        converged = run.stop_reason != "t_max" or final.rel_change_x < cfg.stop.converged_tol
        if observer is not None:
            converged = observer.reached
        return TrialResult(
            rho=cfg.rho,
            k=cfg.k,
            l=cfg.l,
            t=cfg.t,
            n=cfg.n,
            snr_db=cfg.snr_db,
            seed=seed,
            trial=trial,
            nmse_x_db=nmse_db(run.state.x_hat, inst.x, harness.x_ambiguity, harness.nmse_floor_db),
            nmse_s_db=nmse_db(run.state.s_hat, inst.s, harness.s_ambiguity, harness.nmse_floor_db),
            nmse_x_raw_db=nmse_db(run.state.x_hat, inst.x, "none", harness.nmse_floor_db),
            nmse_s_raw_db=nmse_db(run.state.s_hat, inst.s, "none", harness.nmse_floor_db),
            iters=final.iteration,
            wall_ms=1000.0 * elapsed,
            converged=converged,
            reseeds=attempt,
        )

    log.warning("trial %d (seed %d) failed after %d reseeds", trial, seed, harness.max_reseeds)
    return _failed(cfg, seed, trial, harness.max_reseeds)


def _safe_trial(cfg: RunConfig, seed: int, trial: int, target_db: float | None = None) -> TrialResult:
    """Worker entry point: any library error marks the trial failed instead of aborting the pool."""
    try:
        return run_trial(cfg, seed, trial, target_db=target_db)
    except HvmpError as exc:
        log.warning("trial %d (seed %d) failed: %s", trial, seed, exc.message)
        return _failed(cfg, seed, trial, 0)


def run_pool(
    tasks: Sequence[tuple[RunConfig, int, int, float | None]],
    jobs: int | None,
    desc: str,
    *,
    progress: bool = True,
) -> list[TrialResult]:
    """
    Run trials on a joblib pool; results come back in task order.

    Args:
        tasks: ``(config, seed, trial, target_db)`` tuples.
        jobs: Worker cap; None uses every core.
        desc: Label of the progress line.
        progress: Show a tqdm line on an interactive stderr.
    """
    if not tasks:
        return []
    n_jobs = jobs if jobs is not None else -1
    results = Parallel(n_jobs=n_jobs, return_as="generator")(
        delayed(_safe_trial)(cfg, seed, trial, target) for cfg, seed, trial, target in tasks
    )
    show = progress and sys.stderr.isatty()
    return list(tqdm(results, total=len(tasks), desc=desc, disable=not show, file=sys.stderr))


def run_trials(cfg: RunConfig, jobs: int | None = None, instance: Instance | None = None) -> list[TrialResult]:
    """``cfg.trials`` seeded trials of a single configuration (the ``run`` command)."""
    seeds = [derive_seed(cfg.seed, 0, trial) for trial in range(cfg.trials)]
    if instance is not None:
        return [run_trial(cfg, seed, trial, instance=instance) for trial, seed in enumerate(seeds)]
    return run_pool([(cfg, seed, trial, None) for trial, seed in enumerate(seeds)], jobs, "run")


def _sort_key(result: TrialResult) -> tuple[float, int, int]:
    return result.rho, result.k, result.trial


def phase_transition(
    cfg: RunConfig,
    rho_grid: Sequence[float],
    k_grid: Sequence[int],
    trials_per_cell: int,
    jobs: int | None = None,
    completed: Iterable[TrialResult] = (),
) -> list[TrialResult]:
    """
    Sweep the (rho, K) grid; every cell runs ``trials_per_cell`` seeded trials.

    Cells fully present in ``completed`` are skipped and their rows reused.
    The output is sorted by (rho, K, trial), independent of the pool schedule.

    Raises:
        DomainError: If a grid is empty.
    """
    if not rho_grid or not k_grid:
        msg = "phase-transition grids must not be empty"
        raise DomainError(msg)

    done: dict[tuple[float, int], list[TrialResult]] = {}
    for row in completed:
        done.setdefault(row.cell, []).append(row)

    kept: list[TrialResult] = []
    tasks: list[tuple[RunConfig, int, int, float | None]] = []
    for i, rho in enumerate(rho_grid):
        for j, k in enumerate(k_grid):
            previous = done.get((rho, k), [])
            if len({row.trial for row in previous}) >= trials_per_cell:
                kept.extend(row for row in previous if row.trial < trials_per_cell)
                continue
            cell_cfg = cfg.with_cell(rho, k)
            cell = i * len(k_grid) + j
            tasks.extend(
                (cell_cfg, derive_seed(cfg.seed, cell, trial), trial, None) for trial in range(trials_per_cell)
            )

    if kept:
        log.info("resuming: %d completed rows reused, %d trials to run", len(kept), len(tasks))
    results = run_pool(tasks, jobs, "sweep")
    return sorted([*kept, *results], key=_sort_key)


def _median(values: Sequence[float]) -> float | None:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.median(finite)) if finite else None


def summarize_cells(results: Iterable[TrialResult]) -> list[CellSummary]:
    """Per-cell medians and means, in (rho, K) order."""
    cells: dict[tuple[float, int], list[TrialResult]] = {}
    for row in results:
        cells.setdefault(row.cell, []).append(row)
    summaries = []
    for (rho, k), rows in sorted(cells.items()):
        finite_x = [r.nmse_x_db for r in rows if math.isfinite(r.nmse_x_db)]
        summaries.append(
            CellSummary(
                rho=rho,
                k=k,
                trials=len(rows),
                failed=sum(r.failed for r in rows),
                median_nmse_x_db=_median([r.nmse_x_db for r in rows]),
                mean_nmse_x_db=float(np.mean(finite_x)) if finite_x else None,
                median_nmse_s_db=_median([r.nmse_s_db for r in rows]),
                median_nmse_x_raw_db=_median([r.nmse_x_raw_db for r in rows]),
                median_nmse_s_raw_db=_median([r.nmse_s_raw_db for r in rows]),
                reseeds=sum(r.reseeds for r in rows),
            ),
        )
    return summaries


def runtime_bench(
    cfg: RunConfig,
    k_grid: Sequence[int],
    target_db: float,
    trials: int,
    jobs: int | None = None,
) -> tuple[list[BenchRow], list[TrialResult]]:
    """
    Median wall time to reach ``target_db`` (NMSE of X) for every K.

    A K whose trials never reach the target is marked ``unreached``.

    Returns:
        tuple[list[BenchRow], list[TrialResult]]: One row per K and every trial.
    """
    tasks: list[tuple[RunConfig, int, int, float | None]] = []
    for j, k in enumerate(k_grid):
        cell_cfg = cfg.with_cell(cfg.rho, k)
        tasks.extend((cell_cfg, derive_seed(cfg.seed, j, trial), trial, target_db) for trial in range(trials))
    results = run_pool(tasks, jobs, "bench")

    rows = []
    for k in k_grid:
        cell = [r for r in results if r.k == k]
        reached = [r for r in cell if r.converged and not r.failed]
        rows.append(
            BenchRow(
                k=k,
                trials=len(cell),
                reached=len(reached),
                median_wall_ms=_median([r.wall_ms for r in reached]),
                median_iters=_median([float(r.iters) for r in reached]),
                status="reached" if reached else "unreached",
            ),
        )
    return rows, sorted(results, key=_sort_key)


def write_trials_csv(path: Path, results: Iterable[TrialResult]) -> None:
    """Write trial rows under the fixed CSV header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in results:
            writer.writerow(row.csv_row())


def read_trials_csv(path: Path) -> list[TrialResult]:
    """
    Read rows written by ``write_trials_csv``.

    Raises:
        InstanceFormatError: If the header differs from the fixed column list.
    """
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_COLUMNS:
            msg = f"{path}: unexpected CSV header {header}"
            raise InstanceFormatError(msg)
        rows = []
        for record in reader:
            values = dict(zip(CSV_COLUMNS, record, strict=True))
            nmse_x = float(values["nmse_x_db"])
            rows.append(
                TrialResult(
                    rho=float(values["rho"]),
                    k=int(values["K"]),
                    l=int(values["L"]),
                    t=int(values["T"]),
                    n=int(values["N"]),
                    snr_db=float(values["snr_db"]),
                    seed=int(values["seed"]),
                    trial=int(values["trial"]),
                    nmse_x_db=nmse_x,
                    nmse_s_db=float(values["nmse_s_db"]),
                    iters=int(values["iters"]),
                    wall_ms=float(values["wall_ms"]),
                    converged=values["converged"] == "1",
                    nmse_x_raw_db=float(values["nmse_x_raw_db"]),
                    nmse_s_raw_db=float(values["nmse_s_raw_db"]),
                    failed=math.isnan(nmse_x),
                    reseeds=int(values["reseeds"]),
                ),
            )
    return rows


def write_runtime_csv(path: Path, rows: Iterable[BenchRow]) -> None:
    """Write the runtime table, one row per K."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("K", "trials", "reached", "median_wall_ms", "median_iters", "status"))
        for row in rows:
            writer.writerow(
                (
                    row.k,
                    row.trials,
                    row.reached,
                    "" if row.median_wall_ms is None else repr(row.median_wall_ms),
                    "" if row.median_iters is None else repr(row.median_iters),
                    row.status,
                ),
            )


def git_describe() -> str:
    """``git describe --always --dirty`` of the source tree, or ``unknown``."""
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty"],  # noqa: S607
            cwd=BASE_DIR,
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    described = completed.stdout.strip()
    return described if completed.returncode == 0 and described else "unknown"


def build_summary(
    command: str,
    cfg: RunConfig,
    results: Sequence[TrialResult],
    bench: Sequence[BenchRow] = (),
) -> RunSummary:
    """Provenance record for the outputs of one command."""
    return RunSummary(
        command=command,
        git_describe=git_describe(),
        config=cfg.echo(),
        ambiguity={"x": cfg.harness.x_ambiguity, "s": cfg.harness.s_ambiguity, "raw": "none"},
        cells=summarize_cells(results),
        bench=list(bench),
        failed_trials=sum(r.failed for r in results),
        reseeds=sum(r.reseeds for r in results),
    )


def write_summary(path: Path, summary: RunSummary) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
