import math
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Literal, Self

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from app.errors.exception_handlers import config_error_from_validation
from app.errors.exceptions import ConfigError
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior, Prior

BASE_DIR = Path(__file__).resolve().parent.parent.parent
CONFIG_DIR = BASE_DIR / "configs"

AmbiguityMode = Literal["none", "row", "col", "row_perm", "col_perm"]


class ConfigSection(BaseModel):
    """Base of the dotted-key sections; unknown keys are errors."""

    model_config = ConfigDict(extra="forbid", frozen=True)


def _as_grid(value: Any) -> Any:
    return [value] if isinstance(value, str | int | float) else value


class OperatorConfig(ConfigSection):
    """
    Configuration of the measurement operator A.

    Attributes:
        kind (str): ``partial_dft`` (rows or columns of a unitary DFT) or ``gaussian``
            (dense i.i.d. CN(0, 1/N) entries).
        mode (str): DFT selection mode; ``auto`` picks rows when N <= LT, columns otherwise.
        svd (bool): Pre-factorize the operator with a thin SVD for the LMMSE step.
    """

    kind: Literal["partial_dft", "gaussian"] = "partial_dft"
    mode: Literal["auto", "row", "column"] = "auto"
    svd: bool = False


class StopConfig(ConfigSection):
    """
    Stopping rules of the engine loop.

    Attributes:
        rel_tol (float): Stop early once the relative change of X-hat drops below this value.
            Zero runs the full ``t_max`` iterations.
        converged_tol (float): Relative change under which a finished run is reported as converged.
    """

    rel_tol: float = Field(0.0, ge=0.0)
    converged_tol: float = Field(1e-3, gt=0.0)


class LmmseConfig(ConfigSection):
    """
    Configuration of the auxiliary LMMSE step on w = vec(SX).

    Attributes:
        variance_mode (str): ``posterior`` returns the prior variance minus the trace reduction;
            ``literal`` returns the trace term itself.
        path (str): ``auto`` uses the partial-orthogonal or SVD fast path when available,
            ``dense`` always solves the N x N system.
    """

    variance_mode: Literal["posterior", "literal"] = "posterior"
    path: Literal["auto", "dense"] = "auto"


class AmpConfig(ConfigSection):
    """
    Inner AMP loop parameters.

    Attributes:
        max_iter (int): Maximum number of AMP iterations.
        damping (float): Damping factor applied to the estimate and pseudo-noise variance.
        tol (float): Relative change of the estimate under which AMP stops.
    """

    max_iter: int = Field(50, ge=1)
    damping: float = Field(0.7, gt=0.0, le=1.0)
    tol: float = Field(1e-8, ge=0.0)


class EngineConfig(ConfigSection):
    """
    Engine switches.

    Attributes:
        damping (float): Outer damping of S-hat and X-hat; 1.0 disables it.
        gaussian_closed_form (bool): Combine a Gaussian prior with its message in closed form
            instead of whitening and running AMP.
        debug_checks (bool): Re-validate every covariance each iteration.
        eig_floor (float): Relative eigenvalue floor applied before inverting covariances.
    """

    damping: float = Field(1.0, gt=0.0, le=1.0)
    gaussian_closed_form: bool = True
    debug_checks: bool = False
    eig_floor: float = Field(1e-12, gt=0.0, lt=1.0)


class HarnessConfig(ConfigSection):
    """
    Trial bookkeeping.

    Attributes:
        max_reseeds (int): Number of fresh engine initializations tried after a failure.
        x_ambiguity (str): Ambiguity resolution used for the NMSE of X.
        s_ambiguity (str): Ambiguity resolution used for the NMSE of S.
        nmse_floor_db (float): Lower clamp of reported NMSE values.
    """

    max_reseeds: int = Field(3, ge=0)
    x_ambiguity: AmbiguityMode = "row_perm"
    s_ambiguity: AmbiguityMode = "col_perm"
    nmse_floor_db: float = -120.0


class SweepConfig(ConfigSection):
    """
    Phase-transition grid.

    Attributes:
        rho_grid (list[float]): Sparsity values.
        k_grid (list[int]): Inner dimensions K.
        trials_per_cell (int): Seeded trials per (rho, K) cell.
    """

    rho_grid: list[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)])
    k_grid: list[int] = Field(default_factory=lambda: [5, 10, 15, 20, 25, 30, 35, 40])
    trials_per_cell: int = Field(10, ge=1)

    @field_validator("rho_grid", "k_grid", mode="before")
    @classmethod
    def single_point(cls, value: Any) -> Any:
        """Accept a single grid point written without a comma."""
        return _as_grid(value)

    @field_validator("rho_grid", "k_grid")
    @classmethod
    def grid_not_empty(cls, value: list[Any]) -> list[Any]:
        """Validate that a grid has at least one point."""
        if not value:
            msg = "grid must not be empty"
            raise ValueError(msg)
        return value


class BenchConfig(ConfigSection):
    """
    Runtime benchmark grid.

    Attributes:
        k_grid (list[int]): Inner dimensions K.
        target_db (float): NMSE of X at which a trial stops the clock.
        trials (int): Seeded trials per K.
    """

    k_grid: list[int] = Field(default_factory=lambda: [8, 12, 16, 20])
    target_db: float = -20.0
    trials: int = Field(10, ge=1)

    @field_validator("k_grid", mode="before")
    @classmethod
    def single_point(cls, value: Any) -> Any:
        """Accept a single K written without a comma."""
        return _as_grid(value)


class NumcoreConfig(ConfigSection):
    """
    Dense-algebra guards.

    Attributes:
        kron_guard (int): Maximum number of entries of a Kronecker-scale allocation.
    """

    kron_guard: int = Field(4096 * 4096, ge=1)


class VerifyConfig(ConfigSection):
    """
    Oracle suite sizes.

    Attributes:
        instances (int): Random instances per identity or Monte-Carlo suite.
        mc_samples (int): Monte-Carlo samples per quadratic-form check.
        seed (int): Seed pinning every oracle suite.
    """

    instances: int = Field(20, ge=1)
    mc_samples: int = Field(100_000, ge=2)
    seed: int = 2024


class LoggingConfig(ConfigSection):
    """
    Logging output.

    Attributes:
        level (str): Root log level.
        format (str): Record format of the stderr handler.
    """

    level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    format: str = "%(levelname)-5.5s [%(name)s] %(message)s"


class RunConfig(BaseSettings):
    """
    Experiment configuration container.

    Attributes:
        l (int): Rows of S (and of W = SX).
        k (int): Inner dimension of the factorization.
        t (int): Columns of X.
        n (int): Total number of measurements, the length of y.
        rho (float): Sparsity of the Bernoulli-Gaussian prior of S.
        snr_db (float): Signal-to-noise ratio used to calibrate the noise variance per instance.
        t_max (int): Maximum number of engine iterations.
        seed (int): Master seed; every trial stream is derived from it.
        trials (int): Number of trials of the ``run`` command.
        jobs (int | None): Worker cap of the trial pool; None uses every core.
        prior_s (Prior | None): Prior of S; defaults to Bernoulli-Gaussian(rho, 1).
        prior_x (Prior): Prior of X.

        model_config (SettingsConfigDict): Pydantic model configuration.
    """

    l: int = Field(64, ge=1)  # noqa: E741
    k: int = Field(25, ge=1)
    t: int = Field(50, ge=1)
    n: int = Field(3200, ge=1)
    rho: float = Field(0.2, ge=0.0, le=1.0)
    snr_db: float = 20.0
    t_max: int = Field(100, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    trials: int = Field(10, ge=1)
    jobs: int | None = Field(None, ge=1)

    prior_s: Prior | None = None
    prior_x: Prior = GaussianPrior()

    operator: OperatorConfig = OperatorConfig()
    stop: StopConfig = StopConfig()
    lmmse: LmmseConfig = LmmseConfig()
    amp: AmpConfig = AmpConfig()
    engine: EngineConfig = EngineConfig()
    harness: HarnessConfig = HarnessConfig()
    sweep: SweepConfig = SweepConfig()
    bench: BenchConfig = BenchConfig()
    numcore: NumcoreConfig = NumcoreConfig()
    verify: VerifyConfig = VerifyConfig()
    logging: LoggingConfig = LoggingConfig()

    model_config = SettingsConfigDict(extra="forbid", frozen=True)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],  # noqa: ARG003
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,  # noqa: ARG003
        dotenv_settings: PydanticBaseSettingsSource,  # noqa: ARG003
        file_secret_settings: PydanticBaseSettingsSource,  # noqa: ARG003
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        """Only explicit values count: no environment, dotenv or secret sources."""
        return (init_settings,)

    @field_validator("snr_db")
    @classmethod
    def snr_is_finite(cls, value: float) -> float:
        """Validate that the SNR is a finite number of decibels."""
        if not math.isfinite(value):
            msg = "snr_db must be finite"
            raise ValueError(msg)
        return value

    @model_validator(mode="after")
    def operator_is_feasible(self) -> Self:
        """Validate that the requested DFT selection fits the dimensions."""
        if self.operator.kind != "partial_dft":
            return self
        lt = self.l * self.t
        if self.operator.mode == "row" and self.n > lt:
            msg = f"row-selected DFT needs n <= l*t ({self.n} > {lt})"
            raise ValueError(msg)
        if self.operator.mode == "column" and lt > self.n:
            msg = f"column-selected DFT needs l*t <= n ({lt} > {self.n})"
            raise ValueError(msg)
        return self

    @property
    def s_prior(self) -> BernoulliGaussianPrior | GaussianPrior:
        """Resolved prior of S."""
        if self.prior_s is None:
            return BernoulliGaussianPrior(rho=self.rho, variance=1.0)
        return self.prior_s

    def with_cell(self, rho: float, k: int) -> "RunConfig":
        """
        Build the configuration of one sweep cell.

        An explicit Bernoulli-Gaussian prior of S follows the cell's sparsity.
        """
        data = self.model_dump()
        data.update(rho=rho, k=k)
        if isinstance(self.prior_s, BernoulliGaussianPrior):
            data["prior_s"] = self.prior_s.model_copy(update={"rho": rho}).model_dump()
        return RunConfig(**data)

    def echo(self) -> dict[str, Any]:
        """Return the configuration as flat dotted keys."""
        flat: dict[str, Any] = {}
        _flatten(self.model_dump(mode="json"), "", flat)
        flat["prior_s"] = self.s_prior.model_dump(mode="json")
        return flat


def _flatten(node: dict[str, Any], prefix: str, out: dict[str, Any]) -> None:
    for key, value in node.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            _flatten(value, f"{dotted}.", out)
        else:
            out[dotted] = value


def _parse_value(raw: str) -> str | list[str]:
    value = raw.strip()
    if value.startswith("[") and value.endswith("]"):
        value = value[1:-1]
        return [item.strip() for item in value.split(",") if item.strip()]
    if "," in value:
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _assign(data: dict[str, Any], dotted_key: str, value: object, source: str) -> None:
    parts = dotted_key.split(".")
    if not all(part.isidentifier() for part in parts):
        msg = f"{source}: invalid key {dotted_key!r}"
        raise ConfigError(msg)
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            msg = f"{source}: key {part!r} is a value, not a section"
            raise ConfigError(msg)
        node = child
    node[parts[-1]] = value


def parse_config_text(text: str, source: str) -> dict[str, Any]:
    """
    Parse flat ``key = value`` lines into a nested dictionary.

    Args:
        text (str): File contents.
        source (str): Name used in diagnostics, usually the file path.

    Returns:
        dict[str, Any]: Nested mapping of sections to raw string values.

    Raises:
        ConfigError: If a line is not of the form ``key = value``.
    """
    data: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep or not key.strip():
            msg = f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}"
            raise ConfigError(msg)
        _assign(data, key.strip(), _parse_value(value), f"{source}:{lineno}")
    return data


def apply_overrides(data: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``--set KEY=VALUE`` overrides on top of parsed file data."""
    for override in overrides:
        key, sep, value = override.partition("=")
        if not sep or not key.strip():
            msg = f"--set {override!r}: expected KEY=VALUE"
            raise ConfigError(msg)
        _assign(data, key.strip(), _parse_value(value), f"--set {key.strip()}")
    return data


def load_run_config(
    path: Path | None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
) -> RunConfig:
    """
    Load a run configuration from a dotted-key file plus overrides.

    Args:
        path (Path | None): Config file; None starts from the defaults.
        overrides (Sequence[str]): ``KEY=VALUE`` strings applied after the file.
        seed (int | None): Master seed override (``--seed``).

    Returns:
        RunConfig: Validated configuration.

    Raises:
        ConfigError: If the file is missing, malformed, or any key or value is invalid.
    """
    data: dict[str, Any] = {}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            msg = f"cannot read config file {path}: {exc.strerror}"
            raise ConfigError(msg) from exc
        data = parse_config_text(text, source)
    apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig(**data)
    except ValidationError as exc:
        raise config_error_from_validation(exc, source) from exc
