"""Convergence-rate measurement, FSAI neighbourhood statistics and a
finite-difference biharmonic test problem."""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .blockcore import BlockLayout, BlockSparseMatrix
from .multilevel import make_rng, v_cycle

__all__ = [
    "Status",
    "RateReport",
    "FdProblem",
    "NeighborhoodHistogram",
    "measure_rates",
    "random_initial_error",
    "fd_biharmonic",
    "fd_biharmonic_matrix",
    "bilinear_prolongation",
    "neighborhood_histogram",
    "DIVERGENCE_FACTOR",
]

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6
DEFAULT_SEED = 42


class Status(str, Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    DIVERGED = "Diverged"


@dataclass
class RateReport:
    """Averaged contraction rates over ``iterations`` cycles.

    ``history`` holds one ``(e^T M e, e^T A e, ||r||)`` triple per iterate,
    starting with the initial error.
    """

    rho_L2: float
    rho_A: float
    rho_r: float
    iterations: int
    status: Status
    history: list = field(default_factory=list)
    blowup_iteration: int = None


def random_initial_error(mass, seed=DEFAULT_SEED):
    """Uniform(-1, 1) coefficients scaled to unit mass norm."""
    n = mass.shape[0]
    e = make_rng(seed).uniform(-1.0, 1.0, n)
    return e / np.sqrt(e @ (mass @ e))


def _rates(hist, n):
    if n == 0:
        return 0.0, 0.0, 0.0
    m0, a0, r0 = hist[0]
    mn, an, rn = hist[n]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rho_L2 = (mn / m0) ** (1.0 / (2 * n))
        rho_A = (an / a0) ** (1.0 / (2 * n))
        rho_r = (rn / r0) ** (1.0 / n)
    return float(rho_L2), float(rho_A), float(rho_r)


def measure_rates(
    h, system, spec, seed=DEFAULT_SEED, tol=1e-8, max_iter=50, initial_error=None
):
    """Run V-cycles on the error equation and report averaged rates.

    The cycle is affine, so iterating ``x <- V(b, x)`` from ``u + e_0`` and
    iterating on ``A e = 0`` from ``e_0`` produce the same errors; the
    latter is used so the reference solution's rounding does not pollute
    the measured errors.

    Parameters
    ----------
    h : Hierarchy
    system : object with ``A`` and ``mass`` operators
    spec : CycleSpec
    seed : int
        Seed of the counter-based generator for ``e_0``.
    tol : float
        Stop once the mass norm of the error drops below ``tol``.
    max_iter : int
    initial_error : ndarray, optional
        Overrides the random initial error (used as given).
    """
    A = system.A
    M = system.mass
    if initial_error is None:
        e = random_initial_error(M, seed)
    else:
        e = np.array(initial_error, dtype=float, copy=True)
    top = h.n_levels - 1
    zero = np.zeros_like(e)

    def norms(e):
        Ae = A @ e
        return float(e @ (M @ e)), float(e @ Ae), float(np.linalg.norm(Ae))

    hist = [norms(e)]
    status = Status.MAX_ITER
    blowup = None
    n = 0
    if np.sqrt(max(hist[0][0], 0.0)) < tol:
        status = Status.CONVERGED
    else:
        for n in range(1, max_iter + 1):
            e = v_cycle(h, spec, top, zero, e)
            hist.append(norms(e))
            logger.debug("iter %d: eMe=%.3e eAe=%.3e |r|=%.3e", n, *hist[-1])
            r = hist[-1][2]
            if not np.isfinite(r) or r > DIVERGENCE_FACTOR * hist[0][2]:
                status = Status.DIVERGED
                blowup = n
                break
            if np.sqrt(max(hist[-1][0], 0.0)) < tol:
                status = Status.CONVERGED
                break
    rho = _rates(hist, n)
    return RateReport(*rho, iterations=n, status=status, history=hist, blowup_iteration=blowup)


# --------------------------------------------------------------------------
# finite-difference biharmonic


@dataclass(eq=False)
class FdProblem:
    """Clamped 13-point biharmonic problem on the interior grid points."""

    n_grid: int
    A: BlockSparseMatrix
    mass: BlockSparseMatrix
    b: np.ndarray
    u_ref: np.ndarray = None

    @property
    def h(self):
        return 1.0 / self.n_grid


def fd_biharmonic_matrix(n_grid):
    """Scalar CSR of the clamped biharmonic on an ``n_grid`` x ``n_grid`` mesh."""
    if n_grid < 4:
        raise ValueError("n_grid must be >= 4")
    m = n_grid - 1
    h = 1.0 / n_grid
    T = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h**2
    I = sp.identity(m)
    L = sp.kron(T, I) + sp.kron(I, T)
    E = sp.diags(np.r_[1.0, np.zeros(m - 2), 1.0])
    A = L @ L + (2.0 / h**4) * (sp.kron(E, I) + sp.kron(I, E))
    return sp.csr_matrix(A)


def bilinear_prolongation(n_coarse):
    """Bilinear interpolation from the interior of an ``n_coarse`` mesh to ``2 n_coarse``."""
    mc = n_coarse - 1
    mf = 2 * n_coarse - 1
    rows, cols, vals = [], [], []
    for j in range(mc):
        i = 2 * j + 1
        rows += [i - 1, i, i + 1]
        cols += [j, j, j]
        vals += [0.5, 1.0, 0.5]
    P1 = sp.csr_matrix((vals, (rows, cols)), shape=(mf, mc))
    return sp.csr_matrix(sp.kron(P1, P1))


def fd_biharmonic(n_grid, levels=1):
    """Finest FD problem and the prolongation chain for ``levels`` nested grids."""
    n_grid = int(n_grid)
    if n_grid < 4 or n_grid & (n_grid - 1):
        raise ValueError("n_grid must be a power of two >= 4")
    if levels < 1 or n_grid >> (levels - 1) < 4:
        raise ValueError("too many levels for this grid (coarsest needs n_grid >= 4)")
    A = fd_biharmonic_matrix(n_grid)
    N = A.shape[0]
    lay = BlockLayout.uniform(N)
    A_b = BlockSparseMatrix.from_scipy(A, lay, symmetric=True)
    mass = BlockSparseMatrix.from_scipy(sp.identity(N, format="csr") / n_grid**2, lay, symmetric=True)
    b = np.ones(N)
    prob = FdProblem(n_grid=n_grid, A=A_b, mass=mass, b=b, u_ref=spsolve(A.tocsc(), b))
    Ps = []
    nc = n_grid >> (levels - 1)
    while nc < n_grid:
        P = bilinear_prolongation(nc)
        Ps.append(
            BlockSparseMatrix.from_scipy(
                P, BlockLayout.uniform(P.shape[0]), BlockLayout.uniform(P.shape[1])
            )
        )
        nc *= 2
    return prob, Ps


# --------------------------------------------------------------------------
# neighbourhoods


@dataclass
class NeighborhoodHistogram:
    """Frequencies of cell offsets over all rows of a block pattern."""

    frequencies: dict
    moment: np.ndarray
    principal_angle: float = None  # radians in [0, pi), None if isotropic
    eigenvalue_ratio: float = 1.0

    @property
    def isotropic(self):
        return self.principal_angle is None

    def rows(self):
        """``(dx, dy, frequency)`` sorted by offset."""
        return [(dx, dy, f) for (dx, dy), f in sorted(self.frequencies.items())]


def _cell_coords(space):
    if isinstance(space, (int, np.integer)):
        n_side = int(space)
    else:
        n_side = space.cover.n_side
    idx = np.arange(n_side * n_side)
    return n_side, idx % n_side, idx // n_side


def neighborhood_histogram(space, pattern):
    """Average offset histogram of a symmetric block pattern.

    Parameters
    ----------
    space : PuSpace or int
        The cover (or the number of cells per side of a row-major grid).
    pattern : scipy sparse matrix
        Block pattern, e.g. from :func:`chebfsai.fsai.preconditioner_pattern`.
    """
    n_side, cx, cy = _cell_coords(space)
    n = n_side * n_side
    P = sp.csr_matrix(pattern)
    if P.shape != (n, n):
        raise ValueError(f"pattern shape {P.shape} does not match a cover of {n} patches")
    rows = np.repeat(np.arange(n), np.diff(P.indptr))
    cols = P.indices
    dx = cx[cols] - cx[rows]
    dy = cy[cols] - cy[rows]
    keys, counts = np.unique(np.stack([dx, dy], axis=1), axis=0, return_counts=True)
    freqs = {(int(a), int(b)): c / n for (a, b), c in zip(keys, counts)}
    if (0, 0) not in freqs:
        raise ValueError("pattern has no diagonal")
    f = counts / n
    D = keys.astype(float)
    moment = (D.T * f) @ D / f.sum()
    w, V = np.linalg.eigh(moment)
    if w[-1] <= 1e-14 or abs(w[-1] - w[0]) <= 1e-12 * w[-1]:
        return NeighborhoodHistogram(freqs, moment, None, 1.0)
    ang = float(np.arctan2(V[1, -1], V[0, -1]) % np.pi)
    ratio = float(w[-1] / w[0]) if w[0] > 1e-14 else float("inf")
    return NeighborhoodHistogram(freqs, moment, ang, ratio)


# --------------------------------------------------------------------------
# PUM problem chains


def default_weight_degree(problem):
    return 4 if problem == "triharmonic" else 3


def pum_problem(
    problem,
    levels,
    p=2,
    boundary_refine=True,
    stretch=None,
    aniso=None,
    q=None,
    penalty="eigen",
):
    """Finest assembled PUM system and the prolongation chain.

    Parameters
    ----------
    problem : {"biharmonic", "anisotropic", "triharmonic"}
    levels : (int, int)
        Coarsest and finest cover levels.

    Returns
    -------
    system : AssembledSystem
    prolongations : list of BlockSparseMatrix
    spaces : list of PuSpace, coarsest first
    """
    from .pum import Cover, PuSpace, assemble, build_prolongation
    from .pum.cover import DEFAULT_STRETCH

    lo, hi = levels
    if not 0 <= lo <= hi:
        raise ValueError("need 0 <= coarsest <= finest level")
    stretch = DEFAULT_STRETCH if stretch is None else stretch
    q = default_weight_degree(problem) if q is None else q
    spaces = [
        PuSpace(Cover(l, stretch), q=q, p=p, boundary_refine=boundary_refine)
        for l in range(lo, hi + 1)
    ]
    system = assemble(spaces[-1], problem, aniso=aniso, penalty=penalty)
    Ps = [build_prolongation(spaces[i], spaces[i + 1]) for i in range(len(spaces) - 1)]
    return system, Ps, spaces
