"""Quadrature cells and batched evaluation of ``D(phi_i theta_i^k)``.

Cells are the rectangles between consecutive breakpoints, where the
breakpoints per direction are the grid lines and every knot of every patch
weight.  Inside a cell each active PU function is a smooth rational
function, so tensor Gauss-Legendre rules converge quickly.
"""

from dataclasses import dataclass

import numpy as np

from .cover import pu_jets

__all__ = [
    "breakpoints",
    "RectBatch",
    "volume_rects",
    "boundary_segments",
    "operator_values",
    "gauss",
    "chunks",
]

_MERGE_TOL = 1e-13


def gauss(n):
    return np.polynomial.legendre.leggauss(n)


def _unique_sorted(v):
    v = np.sort(np.asarray(v, dtype=float))
    keep = np.r_[True, np.diff(v) > _MERGE_TOL]
    return v[keep]


def breakpoints(space, lo=0.0, hi=1.0):
    """Sorted 1-D breakpoints in ``[lo, hi]`` (identical in x and y)."""
    cov = space.cover
    c = (np.arange(cov.n_side) + 0.5) * cov.h
    knots = (c[:, None] + cov.radius * space.weight.knots[None, :]).ravel()
    grid = np.arange(cov.n_side + 1) * cov.h
    v = np.concatenate([knots, grid, [lo, hi]])
    v = v[(v >= lo - _MERGE_TOL) & (v <= hi + _MERGE_TOL)]
    return _unique_sorted(np.clip(v, lo, hi))


@dataclass
class RectBatch:
    """Tensor point sets on a batch of cells or boundary segments.

    ``gx (R, nx)``, ``gy (R, ny)`` hold the points, ``w (R, nx * ny)`` the
    weights, ``hint_x``/``hint_y`` select the polynomial piece of each
    weight, and ``ids``/``mask`` list the active patches.  Boundary batches
    also carry the outward ``normal (R, 2)``.
    """

    gx: np.ndarray
    gy: np.ndarray
    w: np.ndarray
    hint_x: np.ndarray
    hint_y: np.ndarray
    ids: np.ndarray
    mask: np.ndarray
    normal: np.ndarray = None
    owner: np.ndarray = None

    def __len__(self):
        return self.gx.shape[0]

    def take(self, sel):
        f = lambda a: None if a is None else a[sel]
        return RectBatch(
            self.gx[sel], self.gy[sel], self.w[sel], self.hint_x[sel], self.hint_y[sel],
            self.ids[sel], self.mask[sel], f(self.normal), f(self.owner),
        )

    @property
    def points(self):
        X = np.repeat(self.gx[:, :, None], self.gy.shape[1], axis=2)
        Y = np.repeat(self.gy[:, None, :], self.gx.shape[1], axis=1)
        R = len(self)
        return X.reshape(R, -1), Y.reshape(R, -1)


def _owner(space, x, y):
    cov = space.cover
    ix = np.clip(np.floor(x / cov.h).astype(int), 0, cov.n_side - 1)
    iy = np.clip(np.floor(y / cov.h).astype(int), 0, cov.n_side - 1)
    return iy * cov.n_side + ix


def rects_from_intervals(space, xb, yb, nq):
    """Tensor cells from breakpoint lists ``xb``, ``yb``."""
    t, wt = gauss(nq)
    x0, x1 = xb[:-1], xb[1:]
    y0, y1 = yb[:-1], yb[1:]
    X0, Y0 = np.meshgrid(x0, y0, indexing="ij")
    X1, Y1 = np.meshgrid(x1, y1, indexing="ij")
    X0, X1, Y0, Y1 = X0.ravel(), X1.ravel(), Y0.ravel(), Y1.ravel()
    return _rect_batch(space, X0, X1, Y0, Y1, t, wt)


def _rect_batch(space, X0, X1, Y0, Y1, t, wt):
    mx, my = 0.5 * (X0 + X1), 0.5 * (Y0 + Y1)
    hx, hy = 0.5 * (X1 - X0), 0.5 * (Y1 - Y0)
    gx = mx[:, None] + hx[:, None] * t
    gy = my[:, None] + hy[:, None] * t
    w = ((hx[:, None] * wt)[:, :, None] * (hy[:, None] * wt)[:, None, :]).reshape(len(mx), -1)
    ids, mask = space.cover.patches_at(mx, my)
    return RectBatch(gx, gy, w, mx, my, ids, mask, owner=_owner(space, mx, my))


def volume_rects(space, nq):
    b = breakpoints(space)
    return rects_from_intervals(space, b, b, nq)


def boundary_segments(space, nq):
    """Gauss points on the four edges, split at the breakpoints.

    Returns one batch per edge (bottom, top, left, right).
    """
    b = breakpoints(space)
    t, wt = gauss(nq)
    a0, a1 = b[:-1], b[1:]
    mid, half = 0.5 * (a0 + a1), 0.5 * (a1 - a0)
    along = mid[:, None] + half[:, None] * t
    wa = half[:, None] * wt
    inner_lo = 0.5 * (b[0] + b[1])
    inner_hi = 0.5 * (b[-2] + b[-1])
    S = len(mid)
    batches = []
    for edge in ("bottom", "top", "left", "right"):
        if edge in ("bottom", "top"):
            fixed, hint_f = (0.0, inner_lo) if edge == "bottom" else (1.0, inner_hi)
            n = (0.0, -1.0) if edge == "bottom" else (0.0, 1.0)
            gx, gy = along, np.full((S, 1), fixed)
            hx, hy = mid, np.full(S, hint_f)
        else:
            fixed, hint_f = (0.0, inner_lo) if edge == "left" else (1.0, inner_hi)
            n = (-1.0, 0.0) if edge == "left" else (1.0, 0.0)
            gx, gy = np.full((S, 1), fixed), along
            hx, hy = np.full(S, hint_f), mid
        ids, mask = space.cover.patches_at(hx, hy)
        batches.append(
            RectBatch(
                gx, gy, wa.copy(), hx, hy, ids, mask,
                normal=np.tile(np.array(n), (S, 1)), owner=_owner(space, hx, hy),
            )
        )
    return batches


def concat(batches):
    f = lambda name: (
        None if getattr(batches[0], name) is None
        else np.concatenate([getattr(b, name) for b in batches])
    )
    return RectBatch(*(f(k) for k in (
        "gx", "gy", "w", "hint_x", "hint_y", "ids", "mask", "normal", "owner"
    )))


def chunks(R, per_item, budget=4_000_000):
    step = max(1, budget // max(per_item, 1))
    for s in range(0, R, step):
        yield slice(s, min(R, s + step))


def operator_values(space, batch, ops):
    """Values of each operator applied to every local shape function.

    Returns a list (one entry per operator) of arrays ``(R, S, M, Q)`` with
    ``M = space.m_max`` and ``Q = nx * ny``; entries of padded slots and of
    basis functions beyond a patch's degree are zero.
    """
    K = max(max(a + b for a, b in op) for op in ops)
    R, S = batch.ids.shape
    nx, ny = batch.gx.shape[1], batch.gy.shape[1]
    phi = pu_jets(space, batch.ids, batch.mask, batch.gx, batch.gy, K, batch.hint_x, batch.hint_y)
    C = space.cover.centers[batch.ids]
    Lx = space.legendre_jets(batch.gx[:, None, :], C[..., 0:1], K)  # (R,S,nx,P+1,K+1)
    Ly = space.legendre_jets(batch.gy[:, None, :], C[..., 1:2], K)
    ka, kb = space.basis
    Lx = np.moveaxis(Lx[:, :, :, ka, :], 2, -1)  # (R,S,M,K+1,nx)
    Ly = np.moveaxis(Ly[:, :, :, kb, :], 2, -1)
    M = len(ka)
    valid = (np.arange(M)[None, None, :] < space.dims[batch.ids][:, :, None]) & batch.mask[:, :, None]
    fact = np.cumprod(np.r_[1.0, np.arange(1, K + 1)])
    out = []
    cache = {}
    for op in ops:
        grouped = {}
        for (a, b), coef in op.items():
            s = coef * fact[a] * fact[b]
            for i in range(a + 1):
                for j in range(b + 1):
                    key = (a - i, b - j)
                    term = s * phi[:, :, i, j]
                    grouped[key] = grouped[key] + term if key in grouped else term
        V = np.zeros((R, S, M, nx, ny))
        for (c, d), Phi in grouped.items():
            if (c, d) not in cache:
                cache[(c, d)] = Lx[:, :, :, c, :, None] * Ly[:, :, :, d, None, :]
            V += Phi[:, :, None] * cache[(c, d)]
        V *= valid[..., None, None]
        out.append(V.reshape(R, S, M, nx * ny))
    return out
