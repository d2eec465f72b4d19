"""Random instance generators shared by the test modules."""

import numpy as np

from chebfsai.blockcore import BlockLayout, BlockSparseMatrix, LowerPattern


def random_layout(rng, n, m_max=4):
    return BlockLayout(tuple(int(m) for m in rng.integers(1, m_max + 1, n)))


def random_block_mask(rng, n, density):
    """Symmetric boolean block mask with a full diagonal."""
    B = rng.uniform(size=(n, n)) < density
    B = B | B.T
    np.fill_diagonal(B, True)
    return B


def random_spd(rng, layout, density=1.0, dominance=0.5):
    """Random s.p.d. block matrix with a random block sparsity pattern.

    Off-diagonal blocks are Gaussian.  The diagonal is shifted to make the
    matrix diagonally dominant by a factor ``1 + dominance`` so that it is
    s.p.d. whatever the pattern.
    """
    n = layout.n
    mask = random_block_mask(rng, n, density)
    N = layout.N
    X = rng.standard_normal((N, N))
    blk = layout.block_of
    X *= mask[np.ix_(blk, blk)]
    X = 0.5 * (X + X.T)
    np.fill_diagonal(X, 0.0)
    X += np.diag((1.0 + dominance) * np.abs(X).sum(axis=1) + 1.0)
    return BlockSparseMatrix.from_dense(X, layout, symmetric=True)


def random_dense_spd(rng, layout, cond_shift=0.1):
    """Dense s.p.d. block matrix ``Q diag(lam) Q^T`` with all blocks stored."""
    N = layout.N
    Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
    lam = cond_shift + rng.uniform(0.0, 1.0, N)
    D = (Q * lam) @ Q.T
    D = 0.5 * (D + D.T)
    return BlockSparseMatrix.from_dense(D, layout, symmetric=True)


def random_lower_pattern(rng, A, density=0.5):
    """Random lower pattern drawn from the block pattern of ``A``."""
    n = A.row_layout.n
    rows = []
    for i in range(n):
        cand = [int(j) for j in A.row_indices(i) if j < i]
        keep = [j for j in cand if rng.uniform() < density]
        rows.append(tuple(keep) + (i,))
    return LowerPattern(tuple(rows))


def dense_lower_random_pattern(rng, n, density=0.5):
    rows = []
    for i in range(n):
        keep = [j for j in range(i) if rng.uniform() < density]
        rows.append(tuple(keep) + (i,))
    return LowerPattern(tuple(rows))
