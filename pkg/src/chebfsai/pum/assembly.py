"""Nitsche assembly of the biharmonic, anisotropic biharmonic and triharmonic
problems on a PU space, with locally estimated penalty parameters."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import eigsh, spsolve

from .. import _kernels
from ..blockcore import BlockSparseMatrix, NotPositiveDefinite
from .cover import PuSpace
from .operators import (
    DX,
    DY,
    IDENTITY,
    LAPLACE,
    AnisotropySpec,
    compose,
    directional,
    manufactured,
)
from .quadrature import boundary_segments, chunks, operator_values, volume_rects

__all__ = [
    "NitscheForm",
    "NitscheParams",
    "AssembledSystem",
    "nitsche_form",
    "assemble",
    "estimate_penalties",
    "evaluate",
    "l2_error",
    "local_projection",
    "quadrature_points",
]


@dataclass(frozen=True)
class NitscheForm:
    """Symmetric Nitsche form as lists of operator products.

    ``a(u, v) = sum_c int D_c u D_c v + sum_t int_dO c_t (A_t u)(B_t v)``
    where a boundary coefficient is either a number or ``"g0"``/``"g1"``/
    ``"g2"`` for the corresponding penalty.  ``rhs`` lists
    ``(j, coef, op)`` for ``int_dO g_j coef (op v)``; ``flux`` names the
    operator whose boundary trace each penalty must dominate.
    """

    problem: str
    volume: tuple
    boundary_ops: object  # callable(normal) -> {name: op}
    terms: tuple
    rhs: tuple
    flux: dict
    m: int
    aniso: AnisotropySpec = None

    @property
    def n_penalties(self):
        return len(self.flux)


def nitsche_form(problem, aniso=None):
    """Form for ``"biharmonic"``, ``"anisotropic"`` or ``"triharmonic"``."""
    if problem in ("biharmonic", "anisotropic"):
        if problem == "anisotropic":
            aniso = AnisotropySpec() if aniso is None else aniso
            L = aniso.operator
            conormal = aniso.conormal
        else:
            aniso = None
            L = LAPLACE
            conormal = lambda n: np.asarray(n, dtype=float)

        def bops(n):
            dn = directional(conormal(n))
            return {"u": IDENTITY, "dn": dn, "L": L, "dnL": compose(dn, L)}

        terms = (
            ("g0", "u", "u"), ("g1", "dn", "dn"),
            (1.0, "dnL", "u"), (1.0, "u", "dnL"),
            (-1.0, "L", "dn"), (-1.0, "dn", "L"),
        )
        rhs = ((0, "g0", "u"), (0, 1.0, "dnL"), (1, "g1", "dn"), (1, -1.0, "L"))
        flux = {"g0": "dnL", "g1": "L"}
        return NitscheForm(problem, (L,), bops, terms, rhs, flux, 2, aniso)
    if problem == "triharmonic":

        def bops(n):
            dn = directional(n)
            L2 = compose(LAPLACE, LAPLACE)
            return {
                "u": IDENTITY, "dn": dn, "L": LAPLACE, "dnL": compose(dn, LAPLACE),
                "L2": L2, "dnL2": compose(dn, L2),
            }

        terms = (
            ("g0", "u", "u"), (-1.0, "dnL2", "u"), (-1.0, "u", "dnL2"),
            ("g1", "dn", "dn"), (1.0, "L2", "dn"), (1.0, "dn", "L2"),
            ("g2", "L", "L"), (-1.0, "dnL", "L"), (-1.0, "L", "dnL"),
        )
        rhs = (
            (0, "g0", "u"), (0, -1.0, "dnL2"),
            (1, "g1", "dn"), (1, 1.0, "L2"),
            (2, "g2", "L"), (2, -1.0, "dnL"),
        )
        flux = {"g0": "dnL2", "g1": "L2", "g2": "dnL"}
        volume = (compose(DX, LAPLACE), compose(DY, LAPLACE))
        return NitscheForm(problem, volume, bops, terms, rhs, flux, 3)
    raise ValueError(f"unknown problem {problem!r}")


@dataclass
class NitscheParams:
    """Penalties per patch: ``gamma[i, j]`` is gamma^(j) (zero off the boundary)."""

    gamma: np.ndarray
    mode: str = "eigen"


@dataclass(eq=False)
class AssembledSystem:
    space: PuSpace
    problem: str
    A: BlockSparseMatrix
    mass: BlockSparseMatrix
    b: np.ndarray
    params: NitscheParams
    solution: object = None
    u_ref: np.ndarray = None
    form: NitscheForm = None

    def solve_reference(self):
        """Direct sparse solve for the discrete solution."""
        self.u_ref = spsolve(self.A.to_scipy().tocsc(), self.b)
        return self.u_ref


# --------------------------------------------------------------------------
# accumulation helpers


class _PairBuffer:
    """Dense ``m_max x m_max`` slabs for every overlapping patch pair."""

    def __init__(self, space, pairs=None):
        self.space = space
        n = space.n
        self.pairs = space.cover.overlap_pairs if pairs is None else pairs
        self.keys = self.pairs[:, 0] * n + self.pairs[:, 1]
        M = space.m_max
        self.acc = np.zeros((len(self.pairs) + 1, M, M))

    def index(self, I, J, valid):
        key = I * self.space.n + J
        pos = np.searchsorted(self.keys, key)
        pos = np.minimum(pos, len(self.keys) - 1)
        ok = valid & (self.keys[pos] == key)
        if np.any(valid & ~ok):
            raise RuntimeError("contribution to a non-overlapping patch pair")
        return np.where(ok, pos, len(self.keys))

    def add(self, ids, mask, local):
        """``local (R, S, M, S, M)`` for slot pairs of each cell."""
        R, S = ids.shape
        I = np.repeat(ids[:, :, None], S, axis=2)
        J = np.repeat(ids[:, None, :], S, axis=1)
        valid = mask[:, :, None] & mask[:, None, :]
        idx = self.index(I, J, valid).ravel()
        M = local.shape[-1]
        loc = np.ascontiguousarray(local.transpose(0, 1, 3, 2, 4)).reshape(R * S * S, M, M)
        _kernels.scatter_blocks(self.acc, idx, loc)

    def matrix(self, symmetric=False):
        dims = self.space.dims
        blocks = {}
        for p, (i, j) in enumerate(self.pairs.tolist()):
            blocks[(i, j)] = self.acc[p, : dims[i], : dims[j]]
        A = BlockSparseMatrix.from_blocks(blocks, self.space.layout, symmetric=symmetric)
        return A


def _local_gram(VA, VB, w):
    """``sum_q w VA[r,s,k,q] VB[r,t,l,q]`` as (R, S, M, S, M)."""
    R, S, M, Q = VA.shape
    X = (VA * w[:, None, None, :]).reshape(R, S * M, Q)
    Y = VB.reshape(R, S * M, Q)
    return np.matmul(X, Y.transpose(0, 2, 1)).reshape(R, S, M, S, M)


def _add_vector(space, acc, ids, mask, local):
    """``local (R, S, M)`` into ``acc (n + 1, M)``."""
    idx = np.where(mask, ids, space.n)
    np.add.at(acc, idx.ravel(), local.reshape(-1, local.shape[-1]))


def _vector_from(space, acc):
    return np.concatenate([acc[i, : space.dims[i]] for i in range(space.n)])


def _nq(space):
    return space.p_max + space.q + 2


def _per_item(space, batch, n_ops):
    R, S = batch.ids.shape
    return S * space.m_max * batch.gx.shape[1] * batch.gy.shape[1] * max(n_ops, 1) * 3


def _boundary_groups(batches):
    """``(normal, batch)`` per boundary edge."""
    for b in batches:
        if len(b):
            yield tuple(float(v) for v in b.normal[0]), b


# --------------------------------------------------------------------------
# penalties


def _fallback_gamma(space, form, C=None):
    C = 10.0 * (space.p + 1) ** 2 if C is None else C
    h = space.cover.h
    return np.array([C * h ** (-(2 * form.m - 2 * j - 1)) for j in range(form.n_penalties)])


def _max_generalized_eig(B, V, rtol=1e-10):
    s, U = np.linalg.eigh(0.5 * (V + V.T))
    if s[-1] <= 0.0:
        raise np.linalg.LinAlgError("volume form vanishes on the local space")
    keep = s > rtol * s[-1]
    T = U[:, keep] / np.sqrt(s[keep])
    G = T.T @ (0.5 * (B + B.T)) @ T
    return float(np.linalg.eigvalsh(G)[-1])


def estimate_penalties(space, form, mode="eigen", safety=4.0, C=None):
    """Penalty parameters for every boundary patch.

    In ``"eigen"`` mode each boundary patch ``i`` uses its grid cell ``K``
    and the boundary edges ``E`` of ``K``: with ``V`` the volume form on
    ``K`` and ``B_j`` the ``L^2(E)`` form of the j-th flux operator, both on
    all shape functions overlapping ``K``, ``gamma^(j) = safety *
    lambda_max(B_j, V)`` on the range of ``V``.  ``"power"`` mode, and the
    fallback for a degenerate local problem, is ``C h^-(2m - 2j - 1)``.
    """
    cov = space.cover
    npen = form.n_penalties
    gamma = np.zeros((space.n, npen))
    bnd = cov.boundary_patches
    if mode == "power":
        gamma[bnd] = _fallback_gamma(space, form, C)
        return NitscheParams(gamma, "power")
    if mode != "eigen":
        raise ValueError(f"unknown penalty mode {mode!r}")

    nq = _nq(space)
    M = space.m_max
    vol = volume_rects(space, nq)
    vol = vol.take(np.isin(vol.owner, bnd))
    bdy = boundary_segments(space, nq)
    slot = {int(i): k for k, i in enumerate(bnd)}
    nb = len(bnd)
    # local spaces: the up to 9 patches overlapping the owner's cell
    neigh = np.full((nb, 9), -1, dtype=np.int64)
    for k, i in enumerate(bnd):
        ix, iy = cov.cell(int(i))
        c = 0
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                jx, jy = ix + dx, iy + dy
                if 0 <= jx < cov.n_side and 0 <= jy < cov.n_side:
                    neigh[k, c] = jy * cov.n_side + jx
                    c += 1
    Vloc = np.zeros((nb, 9 * M + 1, 9 * M + 1))
    Bloc = np.zeros((npen, nb, 9 * M + 1, 9 * M + 1))

    def local_index(owner_slots, ids, mask):
        # position of each active patch inside the owner's local space
        nb_ids = neigh[owner_slots]  # (R, 9)
        hit = ids[:, :, None] == nb_ids[:, None, :]
        pos = np.argmax(hit, axis=2)
        ok = mask & hit.any(axis=2)
        base = np.where(ok, pos * M, -1)
        idx = base[:, :, None] + np.arange(M)[None, None, :]
        return np.where(ok[:, :, None], idx, 9 * M)  # (R, S, M)

    def scatter(dst, owner_slots, idx, local):
        R, S, _ = idx.shape
        I = idx.reshape(R, -1)
        flat = local.reshape(R, S * M, S * M)
        for r in range(R):
            dst[owner_slots[r]][np.ix_(I[r], I[r])] += flat[r]

    for sl in chunks(len(vol), _per_item(space, vol, len(form.volume))):
        b = vol.take(sl)
        Vs = operator_values(space, b, list(form.volume))
        loc = sum(_local_gram(V, V, b.w) for V in Vs)
        owners = np.array([slot[int(o)] for o in b.owner])
        scatter(Vloc, owners, local_index(owners, b.ids, b.mask), loc)

    for n, bb in _boundary_groups(bdy):
        ops = form.boundary_ops(n)
        names = list(form.flux.values())
        for sl in chunks(len(bb), _per_item(space, bb, len(names))):
            b = bb.take(sl)
            Vs = dict(zip(names, operator_values(space, b, [ops[k] for k in names])))
            owners = np.array([slot[int(o)] for o in b.owner])
            idx = local_index(owners, b.ids, b.mask)
            for j, key in enumerate(form.flux):
                V = Vs[form.flux[key]]
                scatter(Bloc[j], owners, idx, _local_gram(V, V, b.w))

    fallback = _fallback_gamma(space, form, C)
    warned = False
    for k, i in enumerate(bnd):
        active = np.zeros(9 * M, dtype=bool)
        for c, j in enumerate(neigh[k]):
            if j >= 0:
                active[c * M : c * M + space.dims[j]] = True
        sel = np.flatnonzero(active)
        V = Vloc[k][np.ix_(sel, sel)]
        try:
            for j in range(npen):
                B = Bloc[j, k][np.ix_(sel, sel)]
                gamma[i, j] = safety * _max_generalized_eig(B, V)
        except np.linalg.LinAlgError:
            if not warned:
                warnings.warn(
                    "singular local volume form; using power-law penalties", RuntimeWarning
                )
                warned = True
            gamma[i] = fallback
    return NitscheParams(gamma, "eigen")


# --------------------------------------------------------------------------
# assembly


def assemble(
    space,
    problem="biharmonic",
    solution=None,
    aniso=None,
    penalty="eigen",
    penalty_safety=4.0,
    penalty_C=None,
    probe=True,
):
    """Stiffness, mass and load of the Nitsche discretisation.

    Parameters
    ----------
    space : PuSpace
    problem : {"biharmonic", "anisotropic", "triharmonic"}
    solution : ManufacturedSolution, optional
        Source and boundary data; defaults to the trigonometric solution.
    aniso : AnisotropySpec, optional
        Tensor of the anisotropic problem.
    penalty : {"eigen", "power"} or NitscheParams
    probe : bool
        Check positive definiteness of the stiffness matrix.

    Returns
    -------
    AssembledSystem
    """
    form = nitsche_form(problem, aniso)
    if solution is None:
        solution = manufactured(problem, form.aniso)
    if isinstance(penalty, NitscheParams):
        params = penalty
    else:
        params = estimate_penalties(space, form, penalty, penalty_safety, penalty_C)

    nq = _nq(space)
    M = space.m_max
    Kbuf = _PairBuffer(space)
    Mbuf = _PairBuffer(space)
    bvec = np.zeros((space.n + 1, M))

    vol = volume_rects(space, nq)
    ops = list(form.volume) + [IDENTITY]
    for sl in chunks(len(vol), _per_item(space, vol, len(ops))):
        b = vol.take(sl)
        Vs = operator_values(space, b, ops)
        Kbuf.add(b.ids, b.mask, sum(_local_gram(V, V, b.w) for V in Vs[:-1]))
        Mbuf.add(b.ids, b.mask, _local_gram(Vs[-1], Vs[-1], b.w))
        X, Y = b.points
        f = solution.f(X, Y)
        _add_vector(space, bvec, b.ids, b.mask, np.einsum("rskq,rq->rsk", Vs[-1], f * b.w))

    gamma_of = {f"g{j}": j for j in range(form.n_penalties)}
    bdy = boundary_segments(space, nq)
    for n, bb in _boundary_groups(bdy):
        bops = form.boundary_ops(n)
        names = list(bops)
        for sl in chunks(len(bb), _per_item(space, bb, len(names))):
            b = bb.take(sl)
            Vs = dict(zip(names, operator_values(space, b, [bops[k] for k in names])))
            g_seg = params.gamma[b.owner]  # (R, npen)
            loc = 0.0
            for coef, a, c in form.terms:
                if isinstance(coef, str):
                    w = b.w * g_seg[:, gamma_of[coef], None]
                else:
                    w = b.w * coef
                loc = loc + _local_gram(Vs[a], Vs[c], w)
            Kbuf.add(b.ids, b.mask, loc)
            X, Y = b.points
            data = {j: solution.g(j, n, X, Y) for j in {t[0] for t in form.rhs}}
            rhs = 0.0
            for j, coef, op in form.rhs:
                c = g_seg[:, gamma_of[coef], None] if isinstance(coef, str) else coef
                rhs = rhs + np.einsum("rskq,rq->rsk", Vs[op], data[j] * c * b.w)
            _add_vector(space, bvec, b.ids, b.mask, rhs)

    A = Kbuf.matrix()
    A = _symmetrised(A, space)
    Mass = _symmetrised(Mbuf.matrix(), space)
    sys = AssembledSystem(
        space=space, problem=problem, A=A, mass=Mass, b=_vector_from(space, bvec),
        params=params, solution=solution, form=form,
    )
    if probe:
        _coercivity_probe(A)
    return sys


def _symmetrised(A, space):
    S = A.to_scipy()
    S = 0.5 * (S + S.T)
    return BlockSparseMatrix.from_scipy(S.tocsr(), space.layout, symmetric=True)


def _coercivity_probe(A):
    S = A.to_scipy().tocsc()
    try:
        lam = eigsh(S, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    except Exception as exc:  # pragma: no cover - ARPACK failure
        raise NotPositiveDefinite(0, message=f"coercivity probe failed: {exc}") from None
    if not lam > 0.0:
        raise NotPositiveDefinite(
            0,
            message=(
                f"stiffness matrix is not positive definite (eigenvalue {lam:.3e}); "
                "increase the penalty safety factor or constant"
            ),
        )


# --------------------------------------------------------------------------
# evaluation of discrete functions


def quadrature_points(space, nq=None):
    """All volume quadrature points and weights (flattened)."""
    vol = volume_rects(space, _nq(space) if nq is None else nq)
    X, Y = vol.points
    return X.ravel(), Y.ravel(), vol.w.ravel()


def _coef_table(space, coef):
    coef = np.asarray(coef, dtype=float)
    table = np.zeros((space.n + 1, space.m_max))
    off = space.layout.offsets
    for i in range(space.n):
        table[i, : space.dims[i]] = coef[off[i] : off[i + 1]]
    return table


def _apply_coef(space, batch, coef, ops):
    table = _coef_table(space, coef)
    idx = np.where(batch.mask, batch.ids, space.n)
    C = table[idx]  # (R, S, M)
    return [np.einsum("rskq,rsk->rq", V, C) for V in operator_values(space, batch, ops)]


def evaluate(space, coef, x, y, op=IDENTITY):
    """Values of ``op(u_h)`` at the points ``(x, y)``."""
    from .quadrature import RectBatch

    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ids, mask = space.cover.patches_at(x, y)
    if not mask.any(axis=1).all():
        raise ValueError("point outside the cover")
    b = RectBatch(x[:, None], y[:, None], np.ones((len(x), 1)), x, y, ids, mask)
    return _apply_coef(space, b, coef, [op])[0][:, 0]


def l2_error(space, coef, func, nq=None):
    """``||u_h - func||_{L^2}`` with ``func(x, y)`` vectorised."""
    vol = volume_rects(space, _nq(space) if nq is None else nq)
    err2 = 0.0
    for sl in chunks(len(vol), _per_item(space, vol, 1)):
        b = vol.take(sl)
        (uh,) = _apply_coef(space, b, coef, [IDENTITY])
        X, Y = b.points
        err2 += float(np.sum(b.w * (uh - func(X, Y)) ** 2))
    return np.sqrt(err2)


def local_projection(space, func, nq=None):
    """Per-patch L^2 projection of ``func`` onto the local polynomial space.

    For ``func`` a polynomial of degree at most ``p_i`` on every patch this
    returns coefficients whose PU combination reproduces ``func``.
    """
    cov = space.cover
    nq = space.p_max + 4 if nq is None else nq
    t, wt = np.polynomial.legendre.leggauss(nq)
    ka, kb = space.basis
    out = []
    for i in range(space.n):
        x0, x1, y0, y1 = cov.box(i)
        x0, y0 = max(x0, 0.0), max(y0, 0.0)
        x1, y1 = min(x1, 1.0), min(y1, 1.0)
        gx = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * t
        gy = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * t
        w = np.outer(0.5 * (x1 - x0) * wt, 0.5 * (y1 - y0) * wt).ravel()
        cx, cy = cov.centers[i]
        Lx = space.legendre_jets(gx, cx, 0)[..., 0]  # (nq, P+1)
        Ly = space.legendre_jets(gy, cy, 0)[..., 0]
        m = space.dims[i]
        Th = (Lx[:, None, ka[:m]] * Ly[None, :, kb[:m]]).reshape(-1, m)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        rhs = Th.T @ (w * func(X.ravel(), Y.ravel()))
        G = Th.T @ (w[:, None] * Th)
        out.append(np.linalg.solve(G, rhs))
    return np.concatenate(out)
