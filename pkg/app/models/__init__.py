__all__ = (
    "AmpProblem",
    "AmpResult",
    "HermitianPSD",
    "Identity",
    "MatrixGaussian",
    "PseudoObservation",
    "VectorMessage",
)

from .amp import AmpProblem, AmpResult
from .matrix import HermitianPSD, Identity, MatrixGaussian, VectorMessage
from .observation import PseudoObservation
