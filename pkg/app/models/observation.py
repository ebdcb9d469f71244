import math
from dataclasses import dataclass

from app.errors.exceptions import DomainError


@dataclass(frozen=True, slots=True)
class PseudoObservation:
    """Scalar observation ``r = x + CN(0, v)`` of one matrix entry."""

    r: complex
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v) and self.v > 0.0):
            msg = f"pseudo-observation variance must be positive and finite, got {self.v}"
            raise DomainError(msg)
        if not (math.isfinite(self.r.real) and math.isfinite(self.r.imag)):
            msg = "pseudo-observation must be finite"
            raise DomainError(msg)
