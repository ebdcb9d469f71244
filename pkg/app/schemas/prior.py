from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field


class BernoulliGaussianPrior(BaseModel):
    """
    Spike-and-slab prior ``(1 - rho) delta(x) + rho CN(0, variance)``.

    Attributes:
        kind (str): Discriminator, always ``"bernoulli_gaussian"``.
        rho (float): Probability that an entry is active (the sparsity).
        variance (float): Variance of the active (slab) component.
    """

    kind: Literal["bernoulli_gaussian"] = "bernoulli_gaussian"
    rho: float = Field(0.2, ge=0.0, le=1.0)
    variance: float = Field(1.0, gt=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    def conjugate(self) -> "BernoulliGaussianPrior":
        """Prior of the complex conjugate of an entry; circular priors are their own conjugate."""
        return self


class GaussianPrior(BaseModel):
    """
    Circular complex Gaussian prior ``CN(mean, variance)``.

    Attributes:
        kind (str): Discriminator, always ``"gaussian"``.
        mean (complex): Prior mean.
        variance (float): Prior variance ``E|x - mean|^2``.
    """

    kind: Literal["gaussian"] = "gaussian"
    mean: complex = 0j
    variance: float = Field(1.0, gt=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    def conjugate(self) -> "GaussianPrior":
        """Prior of the complex conjugate of an entry."""
        return self.model_copy(update={"mean": self.mean.conjugate()})


Prior = Annotated[
    BernoulliGaussianPrior | GaussianPrior,
    Field(discriminator="kind"),
]
