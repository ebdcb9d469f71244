from collections.abc import Generator

import numpy as np
import pytest

from app.core.config import CONFIG_DIR, LoggingConfig, RunConfig, load_run_config
from app.core.log_helper import configure_logging


@pytest.fixture
def rng() -> np.random.Generator:
    """Seed-pinned generator for test data."""
    return np.random.default_rng(20240607)


@pytest.fixture
def smoke_config() -> RunConfig:
    """The shipped seconds-scale configuration."""
    return load_run_config(CONFIG_DIR / "smoke.conf")


@pytest.fixture
def tiny_config() -> RunConfig:
    """A configuration small enough for many trials per test."""
    return RunConfig(l=8, k=2, t=8, n=48, rho=0.5, snr_db=30.0, t_max=15, trials=2, seed=11)


@pytest.fixture(autouse=True)
def quiet_logging() -> Generator[None, None, None]:
    """Route library logs through a WARNING-level handler."""
    configure_logging(LoggingConfig(level="WARNING"))
    yield
