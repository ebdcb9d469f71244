from dataclasses import dataclass, field

import numpy as np

from app.errors.exceptions import DimensionError, DomainError
from app.models.matrix import ComplexMatrix, RealArray
from app.schemas.prior import BernoulliGaussianPrior, GaussianPrior


@dataclass(frozen=True, slots=True)
class AmpProblem:
    """
    Whitened multi-column linear model ``obs = phi X + E`` with i.i.d. ``CN(0, noise_var)`` noise.

    All columns of ``obs`` share ``phi``.
    """

    phi: ComplexMatrix = field(repr=False)
    obs: ComplexMatrix = field(repr=False)
    prior: BernoulliGaussianPrior | GaussianPrior
    noise_var: float = 1.0

    def __post_init__(self) -> None:
        if self.phi.ndim != 2 or self.obs.ndim != 2 or self.phi.shape[0] != self.obs.shape[0]:  # noqa: PLR2004
            msg = f"phi {self.phi.shape} and obs {self.obs.shape} do not share a row dimension"
            raise DimensionError(msg)
        if not self.noise_var > 0.0:
            msg = f"noise variance must be positive, got {self.noise_var}"
            raise DomainError(msg)
        if not np.all(np.isfinite(self.phi)):
            msg = "phi must be finite"
            raise DomainError(msg)


@dataclass(frozen=True, slots=True)
class AmpResult:
    """Posterior moments and final pseudo-observations of every entry."""

    mean: ComplexMatrix = field(repr=False)
    var: RealArray = field(repr=False)
    pseudo_mean: ComplexMatrix = field(repr=False)
    pseudo_var: RealArray = field(repr=False)
    iterations: int
    converged: bool
