"""Variable-block sparse matrices and the small dense kernels built on them.

A :class:`BlockSparseMatrix` is stored as block CSR: for each block row the
sorted block-column indices, and for each stored block a dense row-major
slab of ``m_i * m_j`` values inside one flat data array.  Matrices with
unit blocks are ordinary scalar CSR matrices and go through the same code.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack, solve_triangular

from . import _kernels

__all__ = [
    "BlockLayout",
    "BlockSparseMatrix",
    "LowerPattern",
    "Cholesky",
    "NotPositiveDefinite",
    "DEFAULT_BLOCK_CAP",
    "extract",
    "spmv",
    "triple_product",
    "small_cholesky",
]

DEFAULT_BLOCK_CAP = 4096


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky met a non-positive pivot.

    ``pivot`` is the 1-based order of the leading minor that failed, as
    reported by LAPACK; ``row`` optionally names the block row whose local
    system was being factorised.
    """

    def __init__(self, pivot, row=None, message=None):
        self.pivot = int(pivot)
        self.row = row
        if message is None:
            message = f"matrix is not positive definite (pivot {self.pivot})"
            if row is not None:
                message += f" in local system of block row {row}"
        super().__init__(message)


@dataclass(frozen=True)
class BlockLayout:
    """Partition of ``N`` indices into ``n`` contiguous blocks."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.sizes)
        if any(m < 1 for m in sizes):
            raise ValueError("block sizes must be positive")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def uniform(cls, n, m=1):
        return cls((m,) * n)

    @property
    def n(self):
        return len(self.sizes)

    @cached_property
    def offsets(self):
        off = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(self.sizes, out=off[1:])
        return off

    @property
    def N(self):
        return int(self.offsets[-1])

    @cached_property
    def block_of(self):
        """Block index of every scalar index."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.sizes)

    def slice(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def indices(self, blocks):
        """Scalar indices covered by a sequence of block indices, in order."""
        blocks = list(blocks)
        if not blocks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(
            [np.arange(self.offsets[b], self.offsets[b + 1]) for b in blocks]
        )

    def check_index(self, i):
        if not 0 <= i < self.n:
            raise IndexError(f"block index {i} out of range for {self.n} blocks")


class BlockSparseMatrix:
    """Real matrix with a block structure on rows and columns.

    Parameters
    ----------
    row_layout, col_layout : BlockLayout
    indptr, indices : ndarray
        Block CSR structure; ``indices`` must be sorted within each row.
    data : ndarray
        Flat storage, block ``p`` occupying ``data[blk_ptr[p]:blk_ptr[p+1]]``.
    symmetric : bool
        Validation contract: the matrix is square with equal layouts and
        value-equal mirrored blocks.  Both triangles are always stored.
    """

    def __init__(self, row_layout, col_layout, indptr, indices, data, symmetric=False):
        self.row_layout = row_layout
        self.col_layout = col_layout
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        rows = np.repeat(np.arange(row_layout.n), np.diff(self.indptr))
        sizes = (
            np.asarray(row_layout.sizes, dtype=np.int64)[rows]
            * np.asarray(col_layout.sizes, dtype=np.int64)[self.indices]
        )
        self.blk_ptr = np.zeros(len(self.indices) + 1, dtype=np.int64)
        np.cumsum(sizes, out=self.blk_ptr[1:])
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if self.data.shape != (self.blk_ptr[-1],):
            raise ValueError("data length does not match block structure")
        self._block_rows = rows
        self.symmetric = bool(symmetric)
        if self.symmetric and row_layout != col_layout:
            raise ValueError("symmetric matrix needs equal row and column layouts")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_blocks(cls, blocks, row_layout, col_layout=None, symmetric=False):
        """Build from a mapping ``(i, j) -> dense m_i x m_j array``."""
        col_layout = row_layout if col_layout is None else col_layout
        keys = sorted(blocks)
        indptr = np.zeros(row_layout.n + 1, dtype=np.int64)
        indices = []
        chunks = []
        for i, j in keys:
            row_layout.check_index(i)
            col_layout.check_index(j)
            b = np.asarray(blocks[(i, j)], dtype=np.float64)
            if b.shape != (row_layout.sizes[i], col_layout.sizes[j]):
                raise ValueError(
                    f"block ({i}, {j}) has shape {b.shape}, expected "
                    f"{(row_layout.sizes[i], col_layout.sizes[j])}"
                )
            indptr[i + 1] += 1
            indices.append(j)
            chunks.append(b.ravel())
        np.cumsum(indptr, out=indptr)
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        A = cls(row_layout, col_layout, indptr, indices, data, symmetric=symmetric)
        if symmetric:
            A.check_symmetric()
        return A

    @classmethod
    def from_coo(cls, rows, cols, vals, row_layout, col_layout=None, symmetric=False):
        """Build from scalar triplets; a block is stored if any triplet hits it.

        Duplicate triplets are summed.
        """
        col_layout = row_layout if col_layout is None else col_layout
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= row_layout.N):
            raise IndexError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= col_layout.N):
            raise IndexError("column index out of range")
        br = row_layout.block_of[rows]
        bc = col_layout.block_of[cols]
        key = br * col_layout.n + bc
        ukey, inv = np.unique(key, return_inverse=True)
        ubr = ukey // col_layout.n
        ubc = ukey % col_layout.n
        indptr = np.zeros(row_layout.n + 1, dtype=np.int64)
        np.add.at(indptr, ubr + 1, 1)
        np.cumsum(indptr, out=indptr)
        rsz = np.asarray(row_layout.sizes, dtype=np.int64)
        csz = np.asarray(col_layout.sizes, dtype=np.int64)
        bsz = rsz[ubr] * csz[ubc]
        blk_ptr = np.zeros(len(ukey) + 1, dtype=np.int64)
        np.cumsum(bsz, out=blk_ptr[1:])
        data = np.zeros(blk_ptr[-1])
        local = (rows - row_layout.offsets[br]) * csz[bc] + (cols - col_layout.offsets[bc])
        np.add.at(data, blk_ptr[inv] + local, vals)
        A = cls(row_layout, col_layout, indptr, ubc, data, symmetric=False)
        if symmetric:
            A.symmetric = True
            A.check_symmetric()
        return A

    @classmethod
    def from_scipy(cls, S, row_layout, col_layout=None, symmetric=False, drop_zero_blocks=False):
        """Block a scalar sparse matrix.  Optionally drop all-zero blocks."""
        col_layout = row_layout if col_layout is None else col_layout
        S = sp.coo_matrix(S)
        if S.shape != (row_layout.N, col_layout.N):
            raise ValueError(f"shape {S.shape} does not match layouts")
        A = cls.from_coo(S.row, S.col, S.data, row_layout, col_layout)
        if drop_zero_blocks:
            A = A.drop_zero_blocks()
        if symmetric:
            A.symmetric = True
            A.check_symmetric()
        return A

    @classmethod
    def from_dense(cls, D, row_layout, col_layout=None, symmetric=False):
        """Store every block of ``D`` that is not identically zero."""
        col_layout = row_layout if col_layout is None else col_layout
        D = np.asarray(D, dtype=np.float64)
        blocks = {}
        for i in range(row_layout.n):
            for j in range(col_layout.n):
                b = D[row_layout.slice(i), col_layout.slice(j)]
                if np.any(b != 0.0):
                    blocks[(i, j)] = b
        return cls.from_blocks(blocks, row_layout, col_layout, symmetric=symmetric)

    @classmethod
    def identity(cls, layout):
        return cls.from_blocks(
            {(i, i): np.eye(m) for i, m in enumerate(layout.sizes)}, layout, symmetric=True
        )

    @classmethod
    def block_diagonal(cls, diag_blocks, layout, symmetric=False):
        return cls.from_blocks(
            {(i, i): b for i, b in enumerate(diag_blocks)}, layout, symmetric=symmetric
        )

    # -- structure ----------------------------------------------------------

    @property
    def shape(self):
        return (self.row_layout.N, self.col_layout.N)

    @property
    def nnzb(self):
        return len(self.indices)

    def _ptr(self, i, j):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        k = lo + np.searchsorted(self.indices[lo:hi], j)
        if k < hi and self.indices[k] == j:
            return int(k)
        return -1

    def has_block(self, i, j):
        return self._ptr(i, j) >= 0

    def block(self, i, j):
        """Dense view of block (i, j), or ``None`` if it is not stored."""
        self.row_layout.check_index(i)
        self.col_layout.check_index(j)
        p = self._ptr(i, j)
        if p < 0:
            return None
        return self._block_at(p, i)

    def _block_at(self, p, i):
        j = self.indices[p]
        return self.data[self.blk_ptr[p] : self.blk_ptr[p + 1]].reshape(
            self.row_layout.sizes[i], self.col_layout.sizes[j]
        )

    def row_indices(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def row_blocks(self, i):
        """Iterate ``(j, block)`` over the stored blocks of block row ``i``."""
        for p in range(self.indptr[i], self.indptr[i + 1]):
            yield int(self.indices[p]), self._block_at(p, i)

    @cached_property
    def _row_maps(self):
        maps = []
        for i in range(self.row_layout.n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            maps.append(dict(zip(self.indices[lo:hi].tolist(), range(lo, hi))))
        return maps

    def block_map(self, i):
        """``{j: block}`` for block row ``i`` (views)."""
        return {j: self._block_at(p, i) for j, p in self._row_maps[i].items()}

    def pattern(self):
        """Stored block pattern as a set of ``(i, j)`` pairs."""
        return set(zip(self._block_rows.tolist(), self.indices.tolist()))

    def diag(self):
        """Diagonal blocks (zeros where absent)."""
        out = []
        for i in range(self.row_layout.n):
            b = self.block(i, i)
            m = self.row_layout.sizes[i]
            out.append(np.zeros((m, m)) if b is None else b.copy())
        return out

    def diag_part(self):
        """diag_B(A) as a block-diagonal matrix."""
        return BlockSparseMatrix.block_diagonal(
            self.diag(), self.row_layout, symmetric=self.symmetric
        )

    # -- conversions ----------------------------------------------------------

    @cached_property
    def _coo(self):
        rsz = np.asarray(self.row_layout.sizes, dtype=np.int64)
        csz = np.asarray(self.col_layout.sizes, dtype=np.int64)
        br = self._block_rows
        bc = self.indices
        mi = rsz[br]
        mj = csz[bc]
        cnt = mi * mj
        blk = np.repeat(np.arange(len(bc)), cnt)
        local = np.arange(self.blk_ptr[-1]) - self.blk_ptr[blk]
        rows = self.row_layout.offsets[br][blk] + local // mj[blk]
        cols = self.col_layout.offsets[bc][blk] + local % mj[blk]
        return rows, cols

    def to_scipy(self):
        """Scalar CSR copy (cached)."""
        if "_csr" not in self.__dict__:
            rows, cols = self._coo
            self.__dict__["_csr"] = sp.csr_matrix(
                (self.data, (rows, cols)), shape=self.shape
            )
        return self.__dict__["_csr"]

    def to_dense(self):
        D = np.zeros(self.shape)
        rows, cols = self._coo
        D[rows, cols] = self.data
        return D

    def transpose(self):
        blocks = {}
        for i in range(self.row_layout.n):
            for j, b in self.row_blocks(i):
                blocks[(j, i)] = b.T
        return BlockSparseMatrix.from_blocks(
            blocks, self.col_layout, self.row_layout, symmetric=self.symmetric
        )

    @property
    def T(self):
        if "_T" not in self.__dict__:
            self.__dict__["_T"] = self if self.symmetric else self.transpose()
        return self.__dict__["_T"]

    def drop_zero_blocks(self):
        """Copy without blocks whose Frobenius norm is exactly zero."""
        keep = np.array(
            [
                np.any(self.data[self.blk_ptr[p] : self.blk_ptr[p + 1]] != 0.0)
                for p in range(self.nnzb)
            ],
            dtype=bool,
        )
        if keep.all():
            return self
        blocks = {}
        for p in np.nonzero(keep)[0]:
            i = int(self._block_rows[p])
            blocks[(i, int(self.indices[p]))] = self._block_at(p, i)
        return BlockSparseMatrix.from_blocks(blocks, self.row_layout, self.col_layout)

    # -- algebra ----------------------------------------------------------------

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.col_layout.N,):
            raise ValueError(
                f"vector of length {x.shape} incompatible with {self.shape} matrix"
            )
        if _kernels.USE_NUMBA:
            y = np.zeros(self.row_layout.N)
            return _kernels.bsr_matvec_nb(
                self.row_layout.offsets,
                self.col_layout.offsets,
                self.indptr,
                self.indices,
                self.blk_ptr,
                self.data,
                np.ascontiguousarray(x),
                y,
            )
        rows, cols = self._coo
        return _kernels.bsr_matvec_np(rows, cols, self.data, x, self.row_layout.N)

    def __matmul__(self, x):
        if isinstance(x, np.ndarray) and x.ndim == 1:
            return self.matvec(x)
        if isinstance(x, np.ndarray) and x.ndim == 2:
            return self.to_scipy() @ x
        return NotImplemented

    def check_symmetric(self, rtol=0.0):
        """Raise ``ValueError`` unless mirrored blocks are value-equal."""
        if self.row_layout != self.col_layout:
            raise ValueError("non-square block layout cannot be symmetric")
        scale = np.abs(self.data).max() if self.data.size else 0.0
        for i in range(self.row_layout.n):
            for j, b in self.row_blocks(i):
                bt = self.block(j, i)
                if bt is None:
                    raise ValueError(f"block ({i}, {j}) stored without its mirror")
                if np.max(np.abs(b - bt.T), initial=0.0) > rtol * scale:
                    raise ValueError(f"blocks ({i}, {j}) and ({j}, {i}) are not transposes")

    def __repr__(self):
        return (
            f"BlockSparseMatrix({self.row_layout.n}x{self.col_layout.n} blocks, "
            f"shape={self.shape}, nnzb={self.nnzb}, symmetric={self.symmetric})"
        )


@dataclass(frozen=True)
class LowerPattern:
    """Lower-triangular block pattern containing the diagonal.

    ``rows[i]`` is the sorted tuple P_i with ``i`` as its last element.
    """

    rows: tuple

    def __post_init__(self):
        rows = tuple(tuple(sorted({int(j) for j in r})) for r in self.rows)
        for i, r in enumerate(rows):
            if not r or r[-1] != i:
                raise ValueError(f"row {i} must contain the diagonal and only j <= i")
            if r[0] < 0:
                raise ValueError(f"row {i} has a negative column index")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def diagonal(cls, n):
        return cls(tuple((i,) for i in range(n)))

    @classmethod
    def full(cls, n):
        return cls(tuple(tuple(range(i + 1)) for i in range(n)))

    @classmethod
    def from_pairs(cls, n, pairs):
        rows = [{i} for i in range(n)]
        for i, j in pairs:
            rows[i].add(j)
        return cls(tuple(rows))

    @classmethod
    def from_matrix(cls, A):
        """Lower triangle of the block pattern of ``A``."""
        n = A.row_layout.n
        return cls(tuple({i} | {int(j) for j in A.row_indices(i) if j <= i} for i in range(n)))

    @property
    def n(self):
        return len(self.rows)

    def tilde(self, i):
        """P_i without the diagonal index."""
        return self.rows[i][:-1]

    def pairs(self):
        return {(i, j) for i, r in enumerate(self.rows) for j in r}

    def with_entry(self, i, j):
        rows = list(self.rows)
        rows[i] = rows[i] + (j,)
        return LowerPattern(tuple(rows))


def extract(A, I, J):
    """Dense restriction A[I, J] with blocks ordered as the index sequences."""
    I = [int(i) for i in I]
    J = [int(j) for j in J]
    for i in I:
        A.row_layout.check_index(i)
    for j in J:
        A.col_layout.check_index(j)
    rs = A.row_layout.sizes
    cs = A.col_layout.sizes
    roff = np.concatenate([[0], np.cumsum([rs[i] for i in I])]).astype(int)
    coff = np.concatenate([[0], np.cumsum([cs[j] for j in J])]).astype(int)
    out = np.zeros((roff[-1], coff[-1]))
    pos = {}
    for b, j in enumerate(J):
        pos.setdefault(j, []).append(b)
    for a, i in enumerate(I):
        rmap = A._row_maps[i]
        if len(rmap) <= len(pos):
            items = ((j, p) for j, p in rmap.items() if j in pos)
        else:
            items = ((j, rmap[j]) for j in pos if j in rmap)
        for j, p in items:
            blk = A._block_at(p, i)
            for b in pos[j]:
                out[roff[a] : roff[a + 1], coff[b] : coff[b + 1]] = blk
    return out


def spmv(A, x):
    """y = A x."""
    return A.matvec(x)


def triple_product(F, A):
    """F A F^T for symmetric ``A``, as a symmetric block matrix.

    The scalar product is formed with scipy, symmetrised to remove rounding
    skew, and blocks that are exactly zero are not stored.
    """
    if F.col_layout != A.row_layout or A.row_layout != A.col_layout:
        raise ValueError("incompatible layouts for triple product")
    Fs = F.to_scipy()
    B = (Fs @ A.to_scipy() @ Fs.T).tocsr()
    B = 0.5 * (B + B.T)
    return BlockSparseMatrix.from_scipy(
        B, F.row_layout, F.row_layout, symmetric=True, drop_zero_blocks=True
    )


class Cholesky:
    """Dense Cholesky factor B = L L^T of a small s.p.d. matrix."""

    def __init__(self, B, cap=DEFAULT_BLOCK_CAP, row=None):
        B = np.asarray(B, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ValueError("Cholesky needs a square matrix")
        if B.shape[0] > cap:
            raise ValueError(f"dimension {B.shape[0]} exceeds block cap {cap}")
        if B.shape[0] == 0:
            self.L = np.zeros((0, 0))
            return
        c, info = lapack.dpotrf(B, lower=1, clean=1)
        if info > 0:
            raise NotPositiveDefinite(info, row=row)
        if info < 0:  # pragma: no cover - argument error in LAPACK call
            raise ValueError(f"dpotrf argument {-info} invalid")
        self.L = c

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, b):
        """B^{-1} b for a vector or matrix right-hand side."""
        if self.n == 0:
            return np.zeros_like(b, dtype=float)
        x, info = lapack.dpotrs(self.L, b, lower=1)
        return x

    def solve_lower(self, b):
        """L^{-1} b."""
        if self.n == 0:
            return np.zeros_like(b, dtype=float)
        return solve_triangular(self.L, b, lower=True, check_finite=False)

    def solve_upper(self, b):
        """L^{-T} b."""
        if self.n == 0:
            return np.zeros_like(b, dtype=float)
        return solve_triangular(self.L, b, lower=True, trans="T", check_finite=False)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def inv_lower(self):
        """Explicit L^{-1}."""
        return self.solve_lower(np.eye(self.n))


def small_cholesky(B, cap=DEFAULT_BLOCK_CAP):
    """Factor a small s.p.d. matrix; raises :class:`NotPositiveDefinite`."""
    return Cholesky(B, cap=cap)
