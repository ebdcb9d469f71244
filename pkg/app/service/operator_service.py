import logging

import numpy as np
from scipy import linalg

from app.core.config import OperatorConfig
from app.errors.exceptions import InfeasibleOperatorError, NumericError
from app.models.operator import Dense, LinearOperator, PartialDft, SelectionMode, SvdPrefactored
from app.schemas.operator import OperatorSpec

log = logging.getLogger(__name__)

OPERATOR_SEED_BOUND = 2**63


def resolve_mode(n: int, l: int, t: int, mode: str = "auto") -> SelectionMode:  # noqa: E741
    """
    Pick the DFT selection mode for the given dimensions.

    Raises:
        InfeasibleOperatorError: If the requested mode does not fit.
    """
    lt = l * t
    if mode == "auto":
        return "row" if n <= lt else "column"
    if mode == "row" and n > lt:
        msg = f"row-selected DFT needs N <= LT, got N={n}, LT={lt}"
        raise InfeasibleOperatorError(msg)
    if mode == "column" and lt > n:
        msg = f"column-selected DFT needs LT <= N, got N={n}, LT={lt}"
        raise InfeasibleOperatorError(msg)
    return "row" if mode == "row" else "column"


def make_partial_dft(
    n: int,
    l: int,  # noqa: E741
    t: int,
    rng: np.random.Generator,
    mode: str = "auto",
) -> LinearOperator:
    """
    Select rows (or columns) of a unitary DFT uniformly at random without replacement.

    Row selection of a unitary DFT is partial-orthogonal: ``A A^H = I_N``.

    Args:
        n (int): Number of measurements.
        l (int): Rows of the operator input.
        t (int): Columns of the operator input.
        rng (np.random.Generator): Source of the selection.
        mode (str): ``auto``, ``row`` or ``column``.

    Returns:
        LinearOperator: Operator with a ``PartialDft`` realization.

    Raises:
        InfeasibleOperatorError: If the dimensions do not admit the mode.
    """
    selection = resolve_mode(n, l, t, mode)
    size = max(n, l * t)
    count = n if selection == "row" else l * t
    indices = np.sort(rng.choice(size, size=count, replace=False)).astype(np.int64)
    return LinearOperator(n, l, t, PartialDft(indices, selection, size))


def make_gaussian_operator(n: int, l: int, t: int, rng: np.random.Generator) -> LinearOperator:  # noqa: E741
    """Dense operator with i.i.d. CN(0, 1/N) entries."""
    shape = (n, l * t)
    matrix = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2 * n)
    return LinearOperator(n, l, t, Dense(matrix))


def svd_prefactor(op: LinearOperator) -> LinearOperator:
    """
    Store the thin SVD of an operator so the LMMSE step solves a diagonal system.

    Zero singular values are kept.

    Raises:
        NumericError: If the SVD does not converge.
    """
    try:
        u, s, vh = linalg.svd(op.matrix, full_matrices=False)
    except linalg.LinAlgError as exc:
        msg = f"SVD of the {op.n}x{op.l * op.t} operator failed: {exc}"
        raise NumericError(msg) from exc
    log.debug("svd prefactor: smallest singular value %.3e", s.min())
    return LinearOperator(op.n, op.l, op.t, SvdPrefactored(u, s, vh))


def build_operator(spec: OperatorSpec) -> LinearOperator:
    """Rebuild an operator from its serialized description."""
    if spec.kind == "partial_dft":
        assert spec.mode is not None  # noqa: S101
        assert spec.indices is not None  # noqa: S101
        size = max(spec.n, spec.l * spec.t)
        realization = PartialDft(np.asarray(spec.indices, dtype=np.int64), spec.mode, size)
        op = LinearOperator(spec.n, spec.l, spec.t, realization)
    else:
        assert spec.seed is not None  # noqa: S101
        op = make_gaussian_operator(spec.n, spec.l, spec.t, np.random.default_rng(spec.seed))
    return svd_prefactor(op) if spec.svd else op


def generate_operator(
    config: OperatorConfig,
    n: int,
    l: int,  # noqa: E741
    t: int,
    rng: np.random.Generator,
) -> tuple[LinearOperator, OperatorSpec]:
    """
    Draw an operator according to the ``operator`` config section.

    Returns:
        tuple[LinearOperator, OperatorSpec]: The operator and its serializable description.
    """
    if config.kind == "partial_dft":
        drawn = make_partial_dft(n, l, t, rng, config.mode)
        assert isinstance(drawn.realization, PartialDft)  # noqa: S101
        spec = OperatorSpec(
            kind="partial_dft",
            n=n,
            l=l,
            t=t,
            mode=drawn.realization.mode,
            indices=drawn.realization.indices.tolist(),
            svd=config.svd,
        )
    else:
        spec = OperatorSpec(
            kind="gaussian",
            n=n,
            l=l,
            t=t,
            seed=int(rng.integers(OPERATOR_SEED_BOUND)),
            svd=config.svd,
        )
    return build_operator(spec), spec
