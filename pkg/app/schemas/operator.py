from typing import Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class OperatorSpec(BaseModel):
    """
    Serializable description of a measurement operator.

    A partial DFT is stored through its selection; a dense Gaussian operator
    through the seed its entries are drawn from. No raw matrix is written.

    Attributes:
        kind (str): ``partial_dft`` or ``gaussian``.
        n (int): Number of measurements.
        l (int): Rows of the operator input.
        t (int): Columns of the operator input.
        mode (str | None): DFT selection mode.
        indices (list[int] | None): Selected DFT rows or columns, in order.
        seed (int | None): Seed of the Gaussian entries.
        svd (bool): Whether the operator is pre-factorized with an SVD.
    """

    kind: Literal["partial_dft", "gaussian"]
    n: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    t: int = Field(ge=1)
    mode: Literal["row", "column"] | None = None
    indices: list[int] | None = None
    seed: int | None = Field(None, ge=0)
    svd: bool = False

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def payload_matches_kind(self) -> Self:
        """Validate that each kind carries what it needs to be rebuilt."""
        if self.kind == "partial_dft" and (self.mode is None or self.indices is None):
            msg = "partial_dft operators need mode and indices"
            raise ValueError(msg)
        if self.kind == "gaussian" and self.seed is None:
            msg = "gaussian operators need a seed"
            raise ValueError(msg)
        return self
