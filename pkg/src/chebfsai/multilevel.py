"""Multilevel V-cycles with FSAI-preconditioned polynomial smoothing.

The hierarchy is built from a fine operator and a chain of prolongations by
Galerkin products.  Every level above the coarsest gets its own (nested)
FSAI preconditioner and a Lanczos bound for the spectrum of ``M_l A_l``;
the coarsest level is solved by dense Cholesky.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, eigh_tridiagonal

from .blockcore import BlockSparseMatrix, NotPositiveDefinite
from .chebyshev import (
    SmootherKind,
    cheb_first_apply,
    cheb_fourth_apply,
    richardson_apply,
)
from .fsai import NestedFsai, nested_build

__all__ = [
    "Level",
    "Hierarchy",
    "CycleSpec",
    "galerkin_coarsen",
    "lanczos",
    "lanczos_lambda_max",
    "setup",
    "v_cycle",
    "MAX_COARSE_SIZE",
    "CHEB1_INTERVAL_RATIO",
]

MAX_COARSE_SIZE = 5000
# lower end of the first-kind interval as a fraction of the upper bound
CHEB1_INTERVAL_RATIO = 1.0 / 30.0


def make_rng(seed):
    """Counter-based Philox generator; used for every random start vector."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _scalar(P):
    return P.to_scipy() if isinstance(P, BlockSparseMatrix) else sp.csr_matrix(P)


def galerkin_coarsen(A, P):
    """Symmetrised ``P^T A P`` on the column layout of ``P``."""
    if not isinstance(P, BlockSparseMatrix):
        raise TypeError("prolongation must be a BlockSparseMatrix")
    if P.row_layout != A.row_layout or A.row_layout != A.col_layout:
        raise ValueError("prolongation row layout does not match the operator")
    Ps = P.to_scipy()
    B = (Ps.T @ A.to_scipy() @ Ps).tocsr()
    B = 0.5 * (B + B.T)
    return BlockSparseMatrix.from_scipy(
        B, P.col_layout, P.col_layout, symmetric=True, drop_zero_blocks=True
    )


def lanczos(op, n, iters=100, seed=0, v0=None):
    """Plain symmetric Lanczos without reorthogonalisation.

    Returns the diagonal and off-diagonal of the tridiagonal matrix.  The
    iteration stops early on breakdown (a vanishing off-diagonal).
    """
    if v0 is None:
        v0 = make_rng(seed).uniform(-1.0, 1.0, n)
    q = np.asarray(v0, dtype=float) / np.linalg.norm(v0)
    q_prev = np.zeros(n)
    b_prev = 0.0
    alphas, betas = [], []
    scale = 0.0
    for _ in range(int(iters)):
        w = op(q) - b_prev * q_prev
        a = float(q @ w)
        w -= a * q
        alphas.append(a)
        b = float(np.linalg.norm(w))
        scale = max(scale, abs(a), b)
        if b <= 1e-14 * scale:
            break
        betas.append(b)
        q_prev, q = q, w / b
        b_prev = b
    return np.array(alphas), np.array(betas[: len(alphas) - 1])


def ritz_values(alphas, betas):
    if len(alphas) == 1:
        return alphas.copy()
    return eigh_tridiagonal(alphas, betas, eigvals_only=True)


def lanczos_lambda_max(A, fsai=None, iters=100, safety=1.01, seed=0):
    """Safety-scaled Lanczos estimate of ``lambda_max(M A)``.

    With ``M = Fh^T Sh^{-1} Fh`` and ``Sh = Lh Lh^T`` the iteration runs on
    the symmetric operator ``Lh^{-1} Fh A Fh^T Lh^{-T}``.  ``fsai=None``
    means ``M = I``.
    """
    if fsai is None:
        op = lambda v: A @ v
    else:
        op = lambda v: fsai.apply_G(A @ fsai.apply_GT(v))
    alphas, betas = lanczos(op, A.shape[0], iters, seed)
    return safety * float(ritz_values(alphas, betas)[-1])


@dataclass(frozen=True)
class CycleSpec:
    """Smoothing degrees and smoother kind of one cycle.

    ``CycleSpec.vkk(k)`` is the symmetric V(k, k) cycle and
    ``CycleSpec.v2k0(k)`` the V(2k, 0) cycle without post-smoothing.
    """

    k_pre: int
    k_post: int
    smoother: SmootherKind = SmootherKind.CHEB_FOURTH
    omega: float = 1.0
    alpha_ratio: float = CHEB1_INTERVAL_RATIO

    def __post_init__(self):
        object.__setattr__(self, "smoother", SmootherKind(self.smoother))
        if self.k_pre < 0 or self.k_post < 0 or self.k_pre + self.k_post < 1:
            raise ValueError("need nonnegative degrees with k_pre + k_post >= 1")

    @classmethod
    def vkk(cls, k, smoother=SmootherKind.CHEB_FOURTH, **kw):
        return cls(k, k, smoother, **kw)

    @classmethod
    def v2k0(cls, k, smoother=SmootherKind.CHEB_FOURTH, **kw):
        return cls(2 * k, 0, smoother, **kw)

    @classmethod
    def from_name(cls, name, k, smoother=SmootherKind.CHEB_FOURTH, **kw):
        if name == "vkk":
            return cls.vkk(k, smoother, **kw)
        if name == "v2k0":
            return cls.v2k0(k, smoother, **kw)
        raise ValueError(f"unknown cycle {name!r}")


@dataclass(eq=False)
class Level:
    A: BlockSparseMatrix
    P: object = None  # scipy CSR prolongation from the next coarser level
    fsai: NestedFsai = None
    beta: float = None


@dataclass(eq=False)
class Hierarchy:
    """Levels ordered coarsest first; ``levels[-1]`` is the finest."""

    levels: list = field(default_factory=list)
    coarse_factor: tuple = None

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]

    def coarse_solve(self, b):
        return cho_solve(self.coarse_factor, b)

    def smooth(self, l, b, x, k, spec):
        lev = self.levels[l]
        if spec.smoother is SmootherKind.CHEB_FOURTH:
            return cheb_fourth_apply(lev.A, lev.fsai, b, x, lev.beta, k)
        if spec.smoother is SmootherKind.CHEB_FIRST:
            return cheb_first_apply(lev.A, lev.fsai, b, x, spec.alpha_ratio * lev.beta, lev.beta, k)
        return richardson_apply(lev.A, lev.fsai, b, x, spec.omega, k)


def setup(
    A,
    prolongations=(),
    t_max=4,
    tau=1.0,
    n_nest=0,
    P0=None,
    lanczos_iters=100,
    safety=1.01,
    seed=0,
    max_coarse=MAX_COARSE_SIZE,
):
    """Build a hierarchy from the finest operator.

    Parameters
    ----------
    A : BlockSparseMatrix
        Finest-level s.p.d. operator.
    prolongations : sequence of BlockSparseMatrix
        ``P_1, ..., P_J`` with ``P_l`` mapping level ``l - 1`` to ``l``;
        empty for a one-level (direct) solver.
    t_max, tau, n_nest, P0
        Adaptive FSAI parameters used on every smoothed level.
    lanczos_iters, safety, seed
        Spectral bound protocol.

    Returns
    -------
    Hierarchy
    """
    prolongations = list(prolongations)
    ops = [A]
    for P in reversed(prolongations):
        ops.append(galerkin_coarsen(ops[-1], P))
    ops.reverse()
    levels = []
    for l, Al in enumerate(ops):
        P = _scalar(prolongations[l - 1]) if l > 0 else None
        lev = Level(A=Al, P=P)
        if l > 0:
            lev.fsai = nested_build(Al, t_max, tau, n_levels=n_nest, P0=P0)
            lev.beta = lanczos_lambda_max(Al, lev.fsai, lanczos_iters, safety, seed)
        levels.append(lev)
    A0 = ops[0]
    if A0.shape[0] > max_coarse:
        raise ValueError(f"coarsest level has {A0.shape[0]} unknowns, limit is {max_coarse}")
    D = A0.to_dense()
    try:
        factor = cho_factor(0.5 * (D + D.T), lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(0, message="coarsest Galerkin operator is not positive definite")
    if len(ops) > 1:
        d = np.abs(np.diag(factor[0]))
        if d.min() < 1e-8 * d.max():
            warnings.warn("coarsest Galerkin operator is nearly singular", RuntimeWarning)
    return Hierarchy(levels=levels, coarse_factor=factor)


def v_cycle(h, spec, l, b, x):
    """One V-cycle on level ``l`` for ``A_l x = b`` starting from ``x``."""
    if not 0 <= l < h.n_levels:
        raise IndexError(f"level {l} outside hierarchy of {h.n_levels} levels")
    if l == 0:
        return h.coarse_solve(b)
    lev = h.levels[l]
    x = np.array(x, dtype=float, copy=True)
    if spec.k_pre > 0:
        x = h.smooth(l, b, x, spec.k_pre, spec)
    r = b - lev.A @ x
    rc = lev.P.T @ r
    ec = v_cycle(h, spec, l - 1, rc, np.zeros_like(rc))
    x += lev.P @ ec
    if spec.k_post > 0:
        x = h.smooth(l, b, x, spec.k_post, spec)
    return x
