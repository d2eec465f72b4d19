import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from chebfsai import _kernels
from chebfsai.blockcore import (
    BlockLayout,
    BlockSparseMatrix,
    LowerPattern,
    NotPositiveDefinite,
    extract,
    small_cholesky,
    spmv,
    triple_product,
)
from chebfsai.matrix_io import MatrixFormatError, read_matrix, write_matrix

from helpers import random_layout, random_spd


def _random_general(rng, rl, cl, density=0.6):
    D = rng.standard_normal((rl.N, cl.N))
    mask = rng.uniform(size=(rl.n, cl.n)) < density
    D *= mask[np.ix_(rl.block_of, cl.block_of)]
    return BlockSparseMatrix.from_dense(D, rl, cl), D


class TestLayout:
    def test_offsets_and_blocks(self):
        lay = BlockLayout((2, 1, 3))
        assert lay.N == 6
        assert list(lay.offsets) == [0, 2, 3, 6]
        assert list(lay.block_of) == [0, 0, 1, 2, 2, 2]
        assert list(lay.indices([2, 0])) == [3, 4, 5, 0, 1]

    def test_rejects_empty_block(self):
        with pytest.raises(ValueError):
            BlockLayout((2, 0))


class TestBlockSparseMatrix:
    def test_block_shape_checked(self):
        lay = BlockLayout((2, 1))
        with pytest.raises(ValueError, match="shape"):
            BlockSparseMatrix.from_blocks({(0, 1): np.ones((2, 2))}, lay)

    def test_symmetric_flag_checked(self):
        lay = BlockLayout((1, 1))
        with pytest.raises(ValueError):
            BlockSparseMatrix.from_blocks(
                {(0, 0): [[1.0]], (0, 1): [[2.0]], (1, 1): [[1.0]]}, lay, symmetric=True
            )

    def test_pattern_is_stored_keys(self):
        lay = BlockLayout((1, 2))
        A = BlockSparseMatrix.from_blocks({(0, 0): [[1.0]], (1, 0): np.zeros((2, 1))}, lay)
        assert A.pattern() == {(0, 0), (1, 0)}

    def test_to_dense_roundtrip(self):
        rng = np.random.default_rng(0)
        rl, cl = random_layout(rng, 5), random_layout(rng, 4)
        A, D = _random_general(rng, rl, cl)
        np.testing.assert_array_equal(A.to_dense(), D)
        np.testing.assert_array_equal(A.to_scipy().toarray(), D)
        np.testing.assert_array_equal(A.T.to_dense(), D.T)


class TestExtract:
    def test_single_block(self):
        rng = np.random.default_rng(1)
        lay = random_layout(rng, 4)
        A = random_spd(rng, lay, density=0.7)
        for i in range(lay.n):
            np.testing.assert_array_equal(extract(A, [i], [i]), A.block(i, i))

    def test_block_diagonal_has_zero_off_diagonal(self):
        lay = BlockLayout((2, 3, 1))
        blocks = [np.eye(2) * 2, np.eye(3) * 3, np.eye(1) * 4]
        A = BlockSparseMatrix.block_diagonal(blocks, lay, symmetric=True)
        E = extract(A, [1, 2], [1, 2])
        np.testing.assert_array_equal(E, np.diag([3.0, 3, 3, 4]))

    def test_matches_dense_expansion(self):
        rng = np.random.default_rng(2)
        lay = BlockLayout((2, 3, 2))
        A, D = _random_general(rng, lay, lay, density=1.0)
        E = extract(A, [2], [0, 1])
        np.testing.assert_array_equal(E, D[5:7, 0:5])

    def test_index_out_of_range(self):
        A = BlockSparseMatrix.identity(BlockLayout((1, 1)))
        with pytest.raises(IndexError):
            extract(A, [2], [0])


class TestSpmv:
    def test_identity(self):
        lay = BlockLayout((1, 3, 2))
        x = np.arange(6.0)
        np.testing.assert_array_equal(spmv(BlockSparseMatrix.identity(lay), x), x)

    def test_scalar(self):
        A = BlockSparseMatrix.from_blocks({(0, 0): [[2.0]]}, BlockLayout((1,)))
        np.testing.assert_array_equal(A @ np.array([3.0]), [6.0])

    def test_wrong_length(self):
        A = BlockSparseMatrix.identity(BlockLayout((2,)))
        with pytest.raises(ValueError):
            A @ np.ones(3)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), nr=st.integers(1, 6), nc=st.integers(1, 6))
    def test_matches_dense(self, seed, nr, nc):
        rng = np.random.default_rng(seed)
        rl, cl = random_layout(rng, nr), random_layout(rng, nc)
        A, D = _random_general(rng, rl, cl)
        x = rng.standard_normal(cl.N)
        ref = D @ x
        np.testing.assert_allclose(A @ x, ref, rtol=1e-14, atol=1e-14 * max(1.0, np.abs(ref).max()))

    def test_numba_and_numpy_paths_agree(self, monkeypatch):
        rng = np.random.default_rng(3)
        lay = random_layout(rng, 8)
        A = random_spd(rng, lay, density=0.5)
        x = rng.standard_normal(lay.N)
        monkeypatch.setattr(_kernels, "USE_NUMBA", True)
        y_nb = A @ x
        monkeypatch.setattr(_kernels, "USE_NUMBA", False)
        y_np = A @ x
        np.testing.assert_allclose(y_nb, y_np, rtol=1e-14)


def test_env_flag_disables_numba():
    code = "from chebfsai import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, CHEBFSAI_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_scatter_kernels_agree():
    rng = np.random.default_rng(4)
    ids = rng.integers(0, 5, 50)
    local = rng.standard_normal((50, 3, 3))
    a = _kernels.scatter_blocks_np(np.zeros((5, 3, 3)), ids, local)
    b = _kernels.scatter_blocks_nb(np.zeros((5, 3, 3)), ids, local)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


def test_shepard_kernels_agree():
    rng = np.random.default_rng(5)
    tx = rng.uniform(0.2, 1.0, (6, 4, 4, 3))
    ty = rng.uniform(0.2, 1.0, (6, 4, 4, 5))
    mask = rng.uniform(size=(6, 4)) < 0.7
    mask[:, 0] = True
    a = _kernels.shepard_jets_np(tx, ty, mask, 3)
    b = _kernels.shepard_jets_nb(tx, ty, mask, 3)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


class TestTripleProduct:
    def test_identity(self):
        rng = np.random.default_rng(6)
        lay = random_layout(rng, 4)
        A = random_spd(rng, lay)
        B = triple_product(BlockSparseMatrix.identity(lay), A)
        np.testing.assert_array_equal(B.to_dense(), A.to_dense())

    def test_hand_example(self):
        lay = BlockLayout((1, 1))
        A = BlockSparseMatrix.from_dense([[4.0, 1.0], [1.0, 3.0]], lay, symmetric=True)
        F = BlockSparseMatrix.from_blocks({(0, 0): [[1.0]], (1, 0): [[-0.25]], (1, 1): [[1.0]]}, lay)
        B = triple_product(F, A).to_dense()
        np.testing.assert_allclose(np.diag(B), [4.0, 11.0 / 4.0], rtol=1e-15)
        assert abs(B[0, 1]) < 1e-15

    def test_random_matches_dense(self):
        rng = np.random.default_rng(7)
        lay = random_layout(rng, 6)
        A = random_spd(rng, lay, density=0.5)
        F, Fd = _random_general(rng, lay, lay)
        B = triple_product(F, A)
        ref = Fd @ A.to_dense() @ Fd.T
        np.testing.assert_allclose(B.to_dense(), ref, rtol=1e-13, atol=1e-13 * np.abs(ref).max())
        Bd = B.to_dense()
        assert np.abs(Bd - Bd.T).max() <= 1e-14 * np.abs(Bd).max()


class TestSmallCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(small_cholesky(np.eye(3)).L, np.eye(3))

    def test_hand_example(self):
        L = small_cholesky(np.array([[4.0, 2.0], [2.0, 5.0]])).L
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]], rtol=1e-15)

    def test_indefinite_reports_pivot(self):
        with pytest.raises(NotPositiveDefinite) as exc:
            small_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert exc.value.pivot == 2

    def test_cap(self):
        with pytest.raises(ValueError, match="cap"):
            small_cholesky(np.eye(5), cap=4)


class TestLowerPattern:
    def test_requires_diagonal(self):
        with pytest.raises(ValueError):
            LowerPattern(((0,), (0,)))

    def test_rejects_upper_entry(self):
        with pytest.raises(ValueError):
            LowerPattern(((0, 1), (1,)))

    def test_full_and_diagonal(self):
        assert LowerPattern.full(3).rows == ((0,), (0, 1), (0, 1, 2))
        assert LowerPattern.diagonal(2).tilde(1) == ()


class TestMatrixIO:
    def test_one_block_roundtrip(self, tmp_path):
        A = BlockSparseMatrix.from_blocks({(0, 0): [[1.5, -2.0], [0.0, 3.0]]}, BlockLayout((2,)))
        write_matrix(tmp_path / "a.mtx", A)
        B = read_matrix(tmp_path / "a.mtx")
        assert B.row_layout == A.row_layout
        np.testing.assert_array_equal(B.to_dense(), A.to_dense())

    def test_random_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(8)
        rl, cl = random_layout(rng, 5), random_layout(rng, 3)
        A, _ = _random_general(rng, rl, cl)
        write_matrix(tmp_path / "p.mtx", A)
        B = read_matrix(tmp_path / "p.mtx")
        assert B.pattern() == A.pattern()
        assert B.col_layout == cl
        np.testing.assert_array_equal(B.data, A.data)

    def test_layout_mismatch(self, tmp_path):
        A = BlockSparseMatrix.identity(BlockLayout((2, 1)))
        write_matrix(tmp_path / "a.mtx", A)
        (tmp_path / "a.blocks").write_text("2\n2\n")
        with pytest.raises(MatrixFormatError, match="layout"):
            read_matrix(tmp_path / "a.mtx")

    def test_bad_triplet_line_number(self, tmp_path):
        A = BlockSparseMatrix.identity(BlockLayout((1,)))
        write_matrix(tmp_path / "a.mtx", A)
        (tmp_path / "a.mtx").write_text("%%block-matrix 1 1 1\n1 x 2\n")
        with pytest.raises(MatrixFormatError) as exc:
            read_matrix(tmp_path / "a.mtx")
        assert exc.value.lineno == 2


def test_from_scipy_drops_zero_blocks():
    S = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
    S[0, 1] = 0.0  # explicit zero
    A = BlockSparseMatrix.from_scipy(S, BlockLayout((1, 1)), drop_zero_blocks=True)
    assert A.pattern() == {(0, 0), (1, 1)}
