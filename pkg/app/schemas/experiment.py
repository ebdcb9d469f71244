from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.operator import OperatorSpec

CSV_COLUMNS = (
    "rho",
    "K",
    "L",
    "T",
    "N",
    "snr_db",
    "seed",
    "trial",
    "nmse_x_db",
    "nmse_s_db",
    "iters",
    "wall_ms",
    "converged",
    "nmse_x_raw_db",
    "nmse_s_raw_db",
    "reseeds",
)


class TrialResult(BaseModel):
    """
    Outcome of one seeded trial.

    A failed trial keeps NaN metrics and ``failed=True``.

    Attributes:
        rho (float): Sparsity of the cell.
        k (int): Inner dimension.
        l (int): Rows of S.
        t (int): Columns of X.
        n (int): Number of measurements.
        snr_db (float): Configured SNR.
        seed (int): Seed of the trial.
        trial (int): Index of the trial within its cell.
        nmse_x_db (float): NMSE of X under the configured ambiguity resolution.
        nmse_s_db (float): NMSE of S under the configured ambiguity resolution.
        nmse_x_raw_db (float): NMSE of X without ambiguity resolution.
        nmse_s_raw_db (float): NMSE of S without ambiguity resolution.
        iters (int): Engine iterations used.
        wall_ms (float): Wall time of the engine run in milliseconds.
        converged (bool): Stopped on a criterion or settled below ``stop.converged_tol``.
        failed (bool): Every attempt raised.
        reseeds (int): Extra engine initializations that were needed.
    """

    rho: float
    k: int
    l: int  # noqa: E741
    t: int
    n: int
    snr_db: float
    seed: int
    trial: int
    nmse_x_db: float
    nmse_s_db: float
    nmse_x_raw_db: float = float("nan")
    nmse_s_raw_db: float = float("nan")
    iters: int
    wall_ms: float
    converged: bool
    failed: bool = False
    reseeds: int = 0

    model_config = ConfigDict(frozen=True)

    @property
    def cell(self) -> tuple[float, int]:
        return self.rho, self.k

    def csv_row(self) -> list[str]:
        """Values of the CSV columns; floats are written with ``repr`` so they read back bitwise."""
        return [
            repr(self.rho),
            str(self.k),
            str(self.l),
            str(self.t),
            str(self.n),
            repr(self.snr_db),
            str(self.seed),
            str(self.trial),
            repr(self.nmse_x_db),
            repr(self.nmse_s_db),
            str(self.iters),
            repr(self.wall_ms),
            "1" if self.converged else "0",
            repr(self.nmse_x_raw_db),
            repr(self.nmse_s_raw_db),
            str(self.reseeds),
        ]


class CellSummary(BaseModel):
    """Aggregate of the trials of one (rho, K) cell."""

    rho: float
    k: int
    trials: int
    failed: int
    median_nmse_x_db: float | None
    mean_nmse_x_db: float | None
    median_nmse_s_db: float | None
    median_nmse_x_raw_db: float | None
    median_nmse_s_raw_db: float | None
    reseeds: int


class BenchRow(BaseModel):
    """Runtime to reach the NMSE target for one K."""

    k: int
    trials: int
    reached: int
    median_wall_ms: float | None
    median_iters: float | None
    status: Literal["reached", "unreached"]


class CheckResult(BaseModel):
    """One row of the oracle report."""

    suite: str
    check: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


class RunSummary(BaseModel):
    """
    Provenance and headline statistics written next to every CSV.

    Attributes:
        command (str): CLI command that produced the outputs.
        git_describe (str): ``git describe`` of the working tree, or ``unknown``.
        config (dict[str, Any]): Flat dotted-key echo of the configuration.
        noise_calibration (str): How the noise variance was derived.
        ambiguity (dict[str, str]): Resolution mode used for the CSV NMSE columns.
        cells (list[CellSummary]): Per-cell medians.
        bench (list[BenchRow]): Runtime rows of the ``bench`` command.
        failed_trials (int): Trials whose every attempt failed.
        reseeds (int): Total extra initializations.
    """

    command: str
    git_describe: str
    config: dict[str, Any]
    noise_calibration: str = "per-instance: sigma2 = ||A vec(SX)||^2 / (N 10^(snr_db/10))"
    ambiguity: dict[str, str]
    cells: list[CellSummary] = Field(default_factory=list)
    bench: list[BenchRow] = Field(default_factory=list)
    failed_trials: int = 0
    reseeds: int = 0


class PayloadDescriptor(BaseModel):
    """Layout of one binary matrix payload of an instance bundle."""

    file: str
    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    dtype: Literal["<c16"] = "<c16"
    order: Literal["F"] = "F"

    model_config = ConfigDict(frozen=True)

    @property
    def nbytes(self) -> int:
        return 16 * self.rows * self.cols


class InstanceManifest(BaseModel):
    """
    Manifest of an instance bundle.

    Payloads are raw little-endian complex128 (real and imaginary float64
    interleaved) in column-major order.
    """

    format_version: Literal[1] = 1
    l: int = Field(ge=1)  # noqa: E741
    k: int = Field(ge=1)
    t: int = Field(ge=1)
    n: int = Field(ge=1)
    seed: int
    snr_db: float
    sigma2: float = Field(gt=0.0)
    operator: OperatorSpec
    payloads: dict[Literal["S", "X", "y"], PayloadDescriptor]
