"""Block factorized sparse approximate inverses.

For a lower block pattern P the factor F has identity diagonal blocks and
rows ``F[i, P~_i] = -A[i, P~_i] A[P~_i, P~_i]^{-1}``; ``S`` is the block
diagonal of ``F A F^T`` and the preconditioner is ``M = F^T S^{-1} F``.
Patterns can be fixed, grown adaptively by determinant-ratio scoring, and
chained ("nested") on the transformed matrices ``F A F^T``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .blockcore import (
    BlockSparseMatrix,
    Cholesky,
    LowerPattern,
    NotPositiveDefinite,
    extract,
    triple_product,
)

__all__ = [
    "FsaiFactors",
    "NestedFsai",
    "AdaptiveState",
    "build_fsai",
    "apply_fsai",
    "delta_ratio",
    "adaptive_build",
    "nested_build",
    "kaporin",
    "preconditioned_dense",
    "preconditioner_pattern",
]

DROP_TOL = 1e-12


def _row_factor(A, i, tilde):
    """F[i, P~_i], S_ii and the Cholesky factor of A[P~_i, P~_i]."""
    A_ii = A.block(i, i)
    if A_ii is None:
        raise NotPositiveDefinite(1, row=i, message=f"block row {i} has no diagonal block")
    if not tilde:
        return np.zeros((A_ii.shape[0], 0)), A_ii.copy(), None
    A_pp = extract(A, tilde, tilde)
    A_pi = extract(A, tilde, [i])
    try:
        chol = Cholesky(A_pp, row=i)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(exc.pivot, row=i) from None
    X = chol.solve(A_pi)
    S = A_ii - A_pi.T @ X
    return -X.T, 0.5 * (S + S.T), chol


@dataclass(eq=False)
class FsaiFactors:
    """F, the diagonal blocks S_ii and their Cholesky factors."""

    F: BlockSparseMatrix
    S: list
    chol: list
    pattern: LowerPattern

    @property
    def layout(self):
        return self.F.row_layout

    def logdet_S(self):
        return sum(c.logdet() for c in self.chol)

    @cached_property
    def S_inv(self):
        blocks = []
        for c in self.chol:
            Li = c.inv_lower()
            blocks.append(Li.T @ Li)
        return BlockSparseMatrix.block_diagonal(blocks, self.layout, symmetric=True)

    @cached_property
    def L_inv(self):
        return BlockSparseMatrix.block_diagonal(
            [c.inv_lower() for c in self.chol], self.layout
        )

    def apply(self, r):
        return apply_fsai(self, r)


@dataclass(eq=False)
class NestedFsai:
    """Chain F_0, ..., F_nl with the final block-Jacobi step.

    ``M = Fh^T Sh^{-1} Fh`` where ``Fh = F_nl ... F_0`` and ``Sh`` is the S of
    the last factorisation, i.e. diag_B(Fh A Fh^T).
    """

    chain: list = field(default_factory=list)

    @property
    def layout(self):
        return self.chain[0].layout

    @property
    def final(self):
        return self.chain[-1]

    @property
    def depth(self):
        return len(self.chain) - 1

    def forward(self, r):
        """Fh r."""
        v = r
        for fac in self.chain:
            v = fac.F @ v
        return v

    def backward(self, w):
        """Fh^T w."""
        for fac in reversed(self.chain):
            w = fac.F.T @ w
        return w

    def apply(self, r):
        return self.backward(self.final.S_inv @ self.forward(r))

    def apply_G(self, r):
        """Lh^{-1} Fh r, with Sh = Lh Lh^T."""
        return self.final.L_inv @ self.forward(r)

    def apply_GT(self, w):
        """Fh^T Lh^{-T} w."""
        return self.backward(self.final.L_inv.T @ w)

    def Fhat_dense(self):
        D = np.eye(self.layout.N)
        for fac in self.chain:
            D = fac.F.to_dense() @ D
        return D


def build_fsai(A, P):
    """Block-FSAI factors of symmetric ``A`` on the lower pattern ``P``."""
    n = A.row_layout.n
    if P.n != n:
        raise ValueError(f"pattern has {P.n} rows, matrix has {n} block rows")
    blocks = {}
    S = []
    chol = []
    for i in range(n):
        tilde = P.tilde(i)
        Frow, S_i, _ = _row_factor(A, i, tilde)
        m = A.row_layout.sizes[i]
        blocks[(i, i)] = np.eye(m)
        off = 0
        for j in tilde:
            mj = A.row_layout.sizes[j]
            blocks[(i, j)] = Frow[:, off : off + mj]
            off += mj
        S.append(S_i)
        try:
            chol.append(Cholesky(S_i, row=i))
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(exc.pivot, row=i) from None
    F = BlockSparseMatrix.from_blocks(blocks, A.row_layout)
    return FsaiFactors(F=F, S=S, chol=chol, pattern=P)


def apply_fsai(fac, r):
    """F^T S^{-1} F r for :class:`FsaiFactors` or :class:`NestedFsai`."""
    if isinstance(fac, FsaiFactors):
        fac = NestedFsai([fac])
    r = np.asarray(r, dtype=float)
    if r.shape != (fac.layout.N,):
        raise ValueError("vector length does not match preconditioner layout")
    return fac.apply(r)


class AdaptiveState:
    """Working state of the adaptive pattern search.

    Holds the growing pattern, the set of rows that may still grow, and for
    each refreshed row the Cholesky factor of ``A[P~_k, P~_k]``, the row of
    ``F``, ``S_k = H_kk`` and the nonzero left blocks of ``H = F A``.
    """

    def __init__(self, A, pattern=None, t_max=1, tau=1.0, drop_tol=DROP_TOL):
        if t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        n = A.row_layout.n
        pattern = LowerPattern.diagonal(n) if pattern is None else pattern
        if pattern.n != n:
            raise ValueError("pattern size does not match matrix")
        self.A = A
        self.rows = [list(r) for r in pattern.rows]
        self.active = set(range(n))
        self.t_max = int(t_max)
        self.tau = float(tau)
        self.drop_tol = float(drop_tol)
        self._cache = {}

    def tilde(self, k):
        return self.rows[k][:-1]

    def pattern(self):
        return LowerPattern(tuple(tuple(r) for r in self.rows))

    def refresh(self, k):
        """Recompute row k of F and H = F A from the current pattern."""
        A = self.A
        tilde = sorted(self.tilde(k))
        Frow, S_k, chol = _row_factor(A, k, tilde)
        S_chol = Cholesky(S_k, row=k)
        H = {}
        sizes = A.row_layout.sizes
        coeffs = [(k, None)]
        off = 0
        for j in tilde:
            coeffs.append((j, Frow[:, off : off + sizes[j]]))
            off += sizes[j]
        for j, Fkj in coeffs:
            for c, blk in A.row_blocks(j):
                if c >= k:
                    continue
                contrib = blk if Fkj is None else Fkj @ blk
                if c in H:
                    H[c] = H[c] + contrib
                else:
                    H[c] = np.array(contrib, dtype=float)
        in_row = set(self.rows[k])
        thresh = self.drop_tol * np.linalg.norm(S_k)
        cand = {
            c: H[c] for c in sorted(H) if c not in in_row and np.linalg.norm(H[c]) > thresh
        }
        self._cache[k] = dict(tilde=tilde, chol=chol, S=S_k, S_chol=S_chol, H=cand)
        return self._cache[k]

    def _entry(self, k):
        ent = self._cache.get(k)
        if ent is None or ent["tilde"] != sorted(self.tilde(k)):
            ent = self.refresh(k)
        return ent

    def candidates(self, k):
        """``{c: H_kc}`` for admissible columns c < k with numerically nonzero H_kc."""
        return self._entry(k)["H"]

    def _schur_W(self, ent, c_list):
        A = self.A
        W = []
        if ent["tilde"]:
            A_pc = extract(A, ent["tilde"], c_list)
            Y = ent["chol"].solve(A_pc)
        off = 0
        for c in c_list:
            mc = A.row_layout.sizes[c]
            Wc = A.block(c, c).copy()
            if ent["tilde"]:
                Wc -= A_pc[:, off : off + mc].T @ Y[:, off : off + mc]
            W.append(0.5 * (Wc + Wc.T))
            off += mc
        return W

    def ratios(self, k):
        """``{c: rho_c}`` for every candidate column of row k."""
        ent = self._entry(k)
        C = list(ent["H"])
        if not C:
            return {}
        W = self._schur_W(ent, C)
        out = {}
        for c, Wc in zip(C, W):
            Hkc = ent["H"][c]
            U = Wc - Hkc.T @ ent["S_chol"].solve(Hkc)
            out[c] = float(np.exp(Cholesky(0.5 * (U + U.T), row=k).logdet() - Cholesky(Wc, row=k).logdet()))
        return out

    def delta_ratio(self, k, c):
        """Determinant ratio Delta^(c) / Delta for adding column c to row k."""
        if not 0 <= c < k:
            raise ValueError("candidate column must satisfy c < k")
        if c in self.rows[k]:
            raise ValueError(f"column {c} already in row {k} of the pattern")
        ent = self._entry(k)
        if c not in ent["H"]:
            return 1.0
        (Wc,) = self._schur_W(ent, [c])
        Hkc = ent["H"][c]
        U = Wc - Hkc.T @ ent["S_chol"].solve(Hkc)
        return float(np.exp(Cholesky(0.5 * (U + U.T), row=k).logdet() - Cholesky(Wc, row=k).logdet()))

    def step(self):
        """One outer sweep over the active rows; returns the number of admissions."""
        added = 0
        for k in sorted(self.active):
            rho = self.ratios(k)
            if not rho:
                self.active.discard(k)
                continue
            cols = sorted(rho)
            vals = np.array([rho[c] for c in cols])
            best = int(np.argmin(vals))
            if vals[best] < self.tau:
                self.rows[k].insert(-1, cols[best])
                self.rows[k][:-1] = sorted(self.rows[k][:-1])
                added += 1
            else:
                self.active.discard(k)
        return added


def delta_ratio(state, A, k, c):
    """rho_c for row k and column c given an :class:`AdaptiveState`."""
    if state.A is not A:
        raise ValueError("state was built for a different matrix")
    return state.delta_ratio(k, c)


def adaptive_build(A, t_max, tau=1.0, P0=None, drop_tol=DROP_TOL, callback=None):
    """Adaptive block-FSAI.

    Each of the ``t_max`` outer steps refreshes every active row, scores
    the admissible columns by Delta^(c)/Delta and admits the minimiser if
    its ratio is below ``tau``; otherwise (or with no candidates) the row is
    retired for good.  ``callback(t, pattern)`` is called after step ``t``.
    """
    state = AdaptiveState(A, P0, t_max=t_max, tau=tau, drop_tol=drop_tol)
    for t in range(1, state.t_max + 1):
        if not state.active:
            break
        state.step()
        if callback is not None:
            callback(t, state.pattern())
    return build_fsai(A, state.pattern())


def nested_build(A, t_max, tau=1.0, n_levels=0, P0=None, drop_tol=DROP_TOL):
    """Chain of adaptive factorisations on A_k = F_{k-1} A_{k-1} F_{k-1}^T."""
    if n_levels < 0:
        raise ValueError("n_levels must be >= 0")
    chain = []
    Ak = A
    for lvl in range(n_levels + 1):
        fac = adaptive_build(Ak, t_max, tau, P0=P0, drop_tol=drop_tol)
        chain.append(fac)
        if lvl < n_levels:
            Ak = triple_product(fac.F, Ak)
    return NestedFsai(chain)


def preconditioned_dense(A, fac):
    """Dense G A G^T with G = Lh^{-1} Fh."""
    if isinstance(fac, FsaiFactors):
        fac = NestedFsai([fac])
    Ad = A.to_dense() if isinstance(A, BlockSparseMatrix) else np.asarray(A)
    G = fac.final.L_inv.to_dense() @ fac.Fhat_dense()
    B = G @ Ad @ G.T
    return 0.5 * (B + B.T)


def kaporin(B, mode="direct", factors=None):
    """Kaporin number trace(B) / (N det(B)^{1/N}).

    ``mode="direct"`` evaluates it on the s.p.d. matrix ``B`` (dense or
    block).  ``mode="via-dets"`` treats ``B`` as the system matrix ``A``
    and returns beta(G A G^T) = (det S / det A)^{1/N} from the factors.
    """
    Bd = B.to_dense() if isinstance(B, BlockSparseMatrix) else np.asarray(B, dtype=float)
    N = Bd.shape[0]
    if mode == "direct":
        logdet = Cholesky(Bd, cap=max(N, 1)).logdet()
        return float(np.trace(Bd) / N * np.exp(-logdet / N))
    if mode == "via-dets":
        if factors is None:
            raise ValueError("via-dets mode needs the FSAI factors")
        if isinstance(factors, NestedFsai):
            factors = factors.final if factors.depth == 0 else None
            if factors is None:
                raise ValueError("via-dets mode applies to a single factorisation")
        logdet_A = Cholesky(Bd, cap=max(N, 1)).logdet()
        return float(np.exp((factors.logdet_S() - logdet_A) / N))
    raise ValueError(f"unknown mode {mode!r}")


def _block_bool(F):
    n = F.row_layout.n
    rows = np.repeat(np.arange(n), np.diff(F.indptr))
    return sp.csr_matrix(
        (np.ones(len(rows), dtype=bool), (rows, F.indices)), shape=(n, F.col_layout.n)
    )


def preconditioner_pattern(fac):
    """Structural block pattern of Fh^T Sh^{-1} Fh as a boolean n x n CSR."""
    if isinstance(fac, FsaiFactors):
        fac = NestedFsai([fac])
    Fh = None
    for f in fac.chain:
        B = _block_bool(f.F).astype(np.int64)
        Fh = B if Fh is None else (B @ Fh)
        Fh.data[:] = 1
    S = (Fh.T @ Fh).tocsr()
    S.data[:] = 1
    return S.astype(bool)
