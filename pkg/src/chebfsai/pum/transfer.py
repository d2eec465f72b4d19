"""Global-to-local L^2 projection between consecutive PU levels."""

import numpy as np

from ..blockcore import BlockSparseMatrix
from .quadrature import _rect_batch, breakpoints, chunks, gauss, operator_values
from .operators import IDENTITY

__all__ = ["build_prolongation"]


def _fine_rects(coarse, fine, nq):
    """Sub-rectangles of every clipped fine patch, split at coarse breakpoints."""
    cb = breakpoints(coarse)
    cov = fine.cover
    X0, X1, Y0, Y1, owner = [], [], [], [], []
    for i in range(fine.n):
        x0, x1, y0, y1 = cov.box(i)
        xs = np.unique(np.r_[max(x0, 0.0), cb[(cb > x0) & (cb < x1)], min(x1, 1.0)])
        ys = np.unique(np.r_[max(y0, 0.0), cb[(cb > y0) & (cb < y1)], min(y1, 1.0)])
        gx0, gy0 = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
        gx1, gy1 = np.meshgrid(xs[1:], ys[1:], indexing="ij")
        X0.append(gx0.ravel())
        X1.append(gx1.ravel())
        Y0.append(gy0.ravel())
        Y1.append(gy1.ravel())
        owner.append(np.full(gx0.size, i))
    t, wt = gauss(nq)
    batch = _rect_batch(
        coarse, np.concatenate(X0), np.concatenate(X1), np.concatenate(Y0), np.concatenate(Y1), t, wt
    )
    batch.owner = np.concatenate(owner)
    return batch


def _fine_basis(fine, batch):
    """Fine-owner Legendre basis at the batch points: (R, M_f, Q)."""
    C = fine.cover.centers[batch.owner]
    Lx = fine.legendre_jets(batch.gx, C[:, 0:1], 0)[..., 0]  # (R, nx, P+1)
    Ly = fine.legendre_jets(batch.gy, C[:, 1:2], 0)[..., 0]
    ka, kb = fine.basis
    T = Lx[:, :, ka][:, :, None, :] * Ly[:, None, :, kb]  # (R, nx, ny, M)
    R = len(batch)
    T = T.reshape(R, -1, len(ka)).transpose(0, 2, 1)
    valid = np.arange(len(ka))[None, :] < fine.dims[batch.owner][:, None]
    return T * valid[:, :, None]


def build_prolongation(coarse, fine):
    """Prolongation ``P`` (fine layout x coarse layout) by local L^2 projection.

    Row block ``i`` is ``M_i^{-1} C_i`` with ``M_i`` the Gram matrix of the
    fine local basis on ``omega_i`` clipped to the domain and ``C_i`` the
    moments of the coarse shape functions against it.
    """
    if fine.cover.level != coarse.cover.level + 1:
        raise ValueError("fine space must be exactly one level finer than the coarse space")
    nq = max(coarse.p_max, fine.p_max) + coarse.q + 2
    batch = _fine_rects(coarse, fine, nq)
    Mf, Mc = fine.m_max, coarse.m_max
    gram = np.zeros((fine.n, Mf, Mf))
    keys, locs = [], []
    for sl in chunks(len(batch), 4 * Mc * batch.gx.shape[1] ** 2 * 3):
        b = batch.take(sl)
        (V,) = operator_values(coarse, b, [IDENTITY])  # (R, S, Mc, Q)
        T = _fine_basis(fine, b)  # (R, Mf, Q)
        Tw = T * b.w[:, None, :]
        np.add.at(gram, b.owner, Tw @ T.transpose(0, 2, 1))
        loc = np.einsum("rkq,rslq->rskl", Tw, V)
        r, s_ = np.nonzero(b.mask)
        keys.append(b.owner[r] * coarse.n + b.ids[r, s_])
        locs.append(loc[r, s_])
    keys = np.concatenate(keys)
    locs = np.concatenate(locs)
    uniq, inv = np.unique(keys, return_inverse=True)
    moments = np.zeros((len(uniq), Mf, Mc))
    np.add.at(moments, inv, locs)

    blocks = {}
    factors = {}
    for key, Cm in zip(uniq.tolist(), moments):
        i, j = divmod(key, coarse.n)
        mi, mj = fine.dims[i], coarse.dims[j]
        if i not in factors:
            G = gram[i, :mi, :mi]
            try:
                factors[i] = np.linalg.cholesky(0.5 * (G + G.T))
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError(f"singular local mass matrix on fine patch {i}") from None
        L = factors[i]
        blocks[(i, j)] = np.linalg.solve(L.T, np.linalg.solve(L, Cm[:mi, :mj]))
    return BlockSparseMatrix.from_blocks(blocks, fine.layout, coarse.layout)
