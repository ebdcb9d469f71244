import numpy as np
import pytest

from app.core.config import OperatorConfig
from app.core.numcore import vec
from app.errors.exceptions import DimensionError, InfeasibleOperatorError
from app.models.operator import Dense, LinearOperator, SvdPrefactored
from app.service.operator_service import (
    build_operator,
    generate_operator,
    make_gaussian_operator,
    make_partial_dft,
    resolve_mode,
    svd_prefactor,
)
from tests.helpers import complex_normal, identity_operator


def _dense_copy(op: LinearOperator) -> LinearOperator:
    return LinearOperator(op.n, op.l, op.t, Dense(op.matrix.copy()))


class TestApplyAdjoint:
    """Tests for applying the operator and its adjoint."""

    def test_identity_apply_is_vec(self, rng) -> None:
        """With A = I the measurements are vec(W)."""
        op = identity_operator(3, 4)
        w = complex_normal(rng, 3, 4)

        np.testing.assert_array_equal(op.apply(w), vec(w))

    def test_identity_adjoint_is_unvec(self, rng) -> None:
        """With A = I the adjoint reshapes y column-major."""
        op = identity_operator(3, 4)
        y = complex_normal(rng, 12)

        np.testing.assert_array_equal(op.adjoint(y), y.reshape((3, 4), order="F"))

    def test_zero_input(self) -> None:
        """A zero input maps to zero measurements."""
        op = make_partial_dft(10, 3, 4, np.random.default_rng(0))

        assert not np.any(op.apply(np.zeros((3, 4))))

    @pytest.mark.parametrize("n", [5, 12, 20])
    def test_partial_dft_matches_dense(self, rng, n: int) -> None:
        """A partial DFT agrees with its dense materialization."""
        op = make_partial_dft(n, 3, 4, rng)
        dense = _dense_copy(op)
        w = complex_normal(rng, 3, 4)
        y = complex_normal(rng, n)

        np.testing.assert_allclose(op.apply(w), dense.apply(w), rtol=1e-10)
        np.testing.assert_allclose(op.adjoint(y), dense.adjoint(y), rtol=1e-10)

    def test_svd_matches_dense(self, rng) -> None:
        """An SVD-prefactored operator agrees with the dense original."""
        dense = make_gaussian_operator(7, 2, 5, rng)
        op = svd_prefactor(dense)
        w = complex_normal(rng, 2, 5)
        y = complex_normal(rng, 7)

        np.testing.assert_allclose(op.apply(w), dense.apply(w), rtol=1e-10)
        np.testing.assert_allclose(op.adjoint(y), dense.adjoint(y), rtol=1e-10)

    def test_adjoint_inner_product(self, rng) -> None:
        """<A w, y> equals <w, A^H y>."""
        op = make_gaussian_operator(9, 3, 2, rng)
        w = complex_normal(rng, 3, 2)
        y = complex_normal(rng, 9)

        lhs = np.vdot(y, op.apply(w))
        rhs = np.vdot(vec(op.adjoint(y)), vec(w))

        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_partial_orthogonal_round_trip(self, rng) -> None:
        """A A^H y = y for a row-selected DFT."""
        op = make_partial_dft(8, 4, 5, rng, "row")
        y = complex_normal(rng, 8)

        np.testing.assert_allclose(op.apply(op.adjoint(y)), y, atol=1e-12)

    def test_shape_mismatch(self, rng) -> None:
        """Inputs of the wrong shape are rejected."""
        op = make_gaussian_operator(4, 2, 3, rng)

        with pytest.raises(DimensionError):
            op.apply(np.zeros((3, 2)))
        with pytest.raises(DimensionError):
            op.adjoint(np.zeros(5))


class TestBlocks:
    """Tests for the block views of the matrix form."""

    def test_first_block(self, rng) -> None:
        """Block 1 is the first L columns."""
        op = make_gaussian_operator(4, 2, 3, rng)

        np.testing.assert_array_equal(op.block(1), op.matrix[:, :2])

    def test_blocks_partition(self, rng) -> None:
        """Concatenated blocks reconstruct A."""
        op = make_gaussian_operator(4, 2, 3, rng)

        np.testing.assert_array_equal(np.hstack([op.block(i) for i in range(1, 4)]), op.matrix)

    def test_partial_dft_block_matches_dense(self, rng) -> None:
        """A partial-DFT block equals the dense block."""
        op = make_partial_dft(6, 2, 3, rng)
        dense = _dense_copy(op)

        np.testing.assert_allclose(op.block(2), dense.block(2))

    def test_block_index_checked(self, rng) -> None:
        """Indices outside 1..T are rejected."""
        op = make_gaussian_operator(4, 2, 3, rng)

        with pytest.raises(DimensionError):
            op.block(0)
        with pytest.raises(DimensionError):
            op.block(4)

    def test_ring_single_column(self, rng) -> None:
        """With T = 1 the ring matrix is vec(A)."""
        op = make_gaussian_operator(4, 3, 1, rng)

        ring = op.ring_matrix()

        assert ring.shape == (12, 1)
        np.testing.assert_array_equal(ring[:, 0], vec(op.matrix))

    def test_ring_gram_diagonal(self, rng) -> None:
        """Diagonal entry i of the ring Gram matrix is ||A_(i)||_F^2."""
        op = make_gaussian_operator(5, 3, 4, rng)

        ring = op.ring_matrix()
        gram = ring.conj().T @ ring

        assert ring.shape == (15, 4)
        for i in range(1, 5):
            assert gram[i - 1, i - 1].real == pytest.approx(np.linalg.norm(op.block(i)) ** 2, rel=1e-12)

    def test_block_gram_sum(self, rng) -> None:
        """The block Gram sum adds A_(i)^H A_(i) over every block."""
        op = make_gaussian_operator(5, 3, 4, rng)

        expected = sum(op.block(i).conj().T @ op.block(i) for i in range(1, 5))

        np.testing.assert_allclose(op.block_gram_sum(), expected, atol=1e-13)


class TestPartialDft:
    """Tests for the partial-DFT generator."""

    def test_full_dft_is_unitary(self, rng) -> None:
        """With N = LT the operator is the full unitary DFT."""
        op = make_partial_dft(12, 3, 4, rng)

        np.testing.assert_allclose(op.gram, np.eye(12), atol=1e-12)
        np.testing.assert_allclose(op.matrix.conj().T @ op.matrix, np.eye(12), atol=1e-12)

    def test_default_shape_is_partial_orthogonal(self, rng) -> None:
        """N=128, L=64, T=50 selects rows and A A^H = I_128."""
        op = make_partial_dft(128, 64, 50, rng)

        assert op.realization.mode == "row"
        assert op.partial_orthogonal
        assert np.linalg.norm(op.gram - np.eye(128)) <= 1e-10 * np.sqrt(128)

    def test_frobenius_norm_is_n(self, rng) -> None:
        """Row mode has ||A||_F^2 = N."""
        op = make_partial_dft(10, 4, 5, rng)

        assert op.fro_norm_sq == pytest.approx(10.0, rel=1e-12)

    def test_column_mode_not_partial_orthogonal(self, rng) -> None:
        """Column selection with N > LT is flagged as not partial-orthogonal."""
        op = make_partial_dft(20, 2, 3, rng)

        assert op.realization.mode == "column"
        assert not op.partial_orthogonal

    def test_gaussian_not_partial_orthogonal(self, rng) -> None:
        """The flag is computed, not assumed."""
        assert not make_gaussian_operator(4, 3, 3, rng).partial_orthogonal

    def test_infeasible_mode(self) -> None:
        """Row selection needs N <= LT."""
        with pytest.raises(InfeasibleOperatorError):
            resolve_mode(13, 3, 4, "row")
        with pytest.raises(InfeasibleOperatorError):
            resolve_mode(11, 3, 4, "column")

    def test_large_operator_stays_implicit(self, rng) -> None:
        """A full-size DFT is applied without building its dense matrix."""
        op = make_partial_dft(3200, 64, 50, rng)
        w = complex_normal(rng, 64, 50)

        y = op.apply(w)

        assert op.partial_orthogonal
        assert op.fro_norm_sq == 3200.0
        np.testing.assert_allclose(op.adjoint(y), w, atol=1e-10)
        assert "matrix" not in vars(op)

    def test_selection_depends_only_on_seed(self) -> None:
        """The same seed draws the same selection."""
        a = make_partial_dft(16, 4, 8, np.random.default_rng(3))
        b = make_partial_dft(16, 4, 8, np.random.default_rng(3))

        np.testing.assert_array_equal(a.realization.indices, b.realization.indices)


class TestSvdPrefactor:
    """Tests for the SVD-prefactored realization."""

    def test_reconstruction(self, rng) -> None:
        """The factors reconstruct A."""
        dense = make_gaussian_operator(6, 2, 4, rng)

        op = svd_prefactor(dense)

        assert np.linalg.norm(op.matrix - dense.matrix) <= 1e-10 * np.linalg.norm(dense.matrix)

    def test_partial_orthogonal_singular_values(self, rng) -> None:
        """A partial-orthogonal operator has unit singular values."""
        op = svd_prefactor(make_partial_dft(6, 3, 4, rng, "row"))

        np.testing.assert_allclose(op.realization.s, 1.0, atol=1e-10)

    def test_rank_deficient_keeps_zeros(self) -> None:
        """Zero singular values are retained."""
        matrix = np.zeros((3, 4), dtype=np.complex128)
        matrix[0, 0] = 1.0
        op = svd_prefactor(LinearOperator(3, 2, 2, Dense(matrix)))

        assert op.realization.s.shape == (3,)
        assert np.count_nonzero(op.realization.s > 1e-12) == 1


class TestOperatorSpec:
    """Tests for generating and rebuilding operators from their description."""

    @pytest.mark.parametrize("kind", ["partial_dft", "gaussian"])
    @pytest.mark.parametrize("svd", [False, True])
    def test_rebuild_is_bitwise(self, rng, kind: str, svd: bool) -> None:  # noqa: FBT001
        """An operator rebuilt from its serialized description has the same matrix."""
        op, spec = generate_operator(OperatorConfig(kind=kind, svd=svd), 6, 2, 4, rng)

        rebuilt = build_operator(spec)

        np.testing.assert_array_equal(rebuilt.matrix, op.matrix)
        assert isinstance(rebuilt.realization, SvdPrefactored) is svd
