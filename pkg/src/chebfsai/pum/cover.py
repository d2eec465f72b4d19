"""Regular-grid covers, B-spline Shepard partitions of unity and local
Legendre bases.

Patch ``i = iy * n_side + ix`` is grid cell ``(ix, iy)`` of the unit square
stretched by ``stretch`` about its centre.  The weight of a patch is the
tensor product of a cardinal B-spline of degree ``q`` mapped to the patch;
its PU function is the Shepard quotient ``W_i / sum_j W_j``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.interpolate import BSpline, PPoly
from scipy.special import comb

from .. import _kernels
from ..blockcore import BlockLayout

__all__ = [
    "Cover",
    "PuSpace",
    "BSplineWeight",
    "basis_indices",
    "local_dim",
    "taylor_coefficients",
    "evaluate_pu",
    "MAX_PATCHES_PER_POINT",
    "DEFAULT_STRETCH",
]

MAX_PATCHES_PER_POINT = 4
DEFAULT_STRETCH = 1.5


def local_dim(p):
    return (p + 1) * (p + 2) // 2


def basis_indices(p):
    """Exponent pairs ``(a, b)`` with ``a + b <= p``, ordered by total degree.

    Any prefix of length ``local_dim(p')`` is the basis of degree ``p'``.
    """
    return [(d - b, b) for d in range(p + 1) for b in range(d + 1)]


def taylor_coefficients(C, s, K, shared=False):
    """Taylor coefficients ``f^(c)(s) / c!`` for ``c = 0..K``.

    ``C[..., n]`` are monomial coefficients (low order first).  By default
    ``C`` has one coefficient row per point (``C.shape[:-1] == s.shape``)
    and the result is ``s.shape + (K + 1,)``.  With ``shared=True`` ``C``
    is a table ``(npoly, D + 1)`` applied at every point and the result is
    ``s.shape + (npoly, K + 1)``.
    """
    C = np.asarray(C, dtype=float)
    D = C.shape[-1] - 1
    s = np.asarray(s, dtype=float)
    pw = s[..., None] ** np.arange(D + 1)
    lead = s.shape + C.shape[:-1] if shared else s.shape
    out = []
    for c in range(K + 1):
        if c > D:
            out.append(np.zeros(lead))
            continue
        Bc = comb(np.arange(D + 1 - c) + c, c) * C[..., c:]
        if shared:
            out.append(pw[..., : D + 1 - c] @ Bc.T)
        else:
            out.append(np.sum(pw[..., : D + 1 - c] * Bc, axis=-1))
    return np.stack(out, axis=-1)


class BSplineWeight:
    """Cardinal B-spline of degree ``q`` supported on [-1, 1].

    Stored as one monomial table per knot interval in the variable
    ``xi - t_j`` so derivatives are exact within each piece.
    """

    def __init__(self, q):
        if q < 1:
            raise ValueError("weight degree must be >= 1")
        self.q = q
        self.knots = np.linspace(-1.0, 1.0, q + 2)
        pp = PPoly.from_spline(BSpline.basis_element(self.knots, extrapolate=False))
        coefs = []
        for j in range(q + 1):
            x0 = self.knots[j]
            col = int(np.argmin(np.abs(pp.x[:-1] - x0)))
            coefs.append(pp.c[::-1, col])
        self.norm = 1.0
        self.coefs = np.array(coefs)
        self.norm = 1.0 / self(np.array([0.0]))[0]

    def piece(self, xi):
        j = np.floor((np.asarray(xi) + 1.0) * (self.q + 1) / 2.0).astype(int)
        return np.clip(j, 0, self.q)

    def jets(self, xi, K, hint=None):
        """Taylor coefficients of the (peak-normalised) weight at ``xi``.

        The polynomial piece is chosen from ``hint`` (default ``xi``) so a
        point on a knot can be evaluated from a chosen side.  Outside
        (-1, 1) the result is zero.
        """
        xi = np.asarray(xi, dtype=float)
        hint = xi if hint is None else np.broadcast_to(hint, xi.shape)
        j = self.piece(hint)
        t = taylor_coefficients(self.coefs[j], xi - self.knots[j], K) * self.norm
        inside = (hint > -1.0) & (hint < 1.0)
        return np.where(inside[..., None], t, 0.0)

    def __call__(self, xi):
        return self.jets(xi, 0)[..., 0]


@dataclass(frozen=True)
class Cover:
    """Cover of the unit square by stretched grid cells."""

    level: int
    stretch: float = DEFAULT_STRETCH

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if not 1.0 < self.stretch < 2.0:
            raise ValueError("stretch factor must lie in (1, 2)")

    @property
    def n_side(self):
        return 2**self.level

    @property
    def n(self):
        return self.n_side**2

    @property
    def h(self):
        return 1.0 / self.n_side

    @property
    def radius(self):
        return 0.5 * self.stretch * self.h

    def cell(self, i):
        return i % self.n_side, i // self.n_side

    @cached_property
    def centers(self):
        idx = np.arange(self.n)
        return np.stack(
            [(idx % self.n_side + 0.5) * self.h, (idx // self.n_side + 0.5) * self.h], axis=1
        )

    def box(self, i):
        """Unclipped patch rectangle ``(x0, x1, y0, y1)``."""
        cx, cy = self.centers[i]
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r

    @cached_property
    def boundary_patches(self):
        """Patches whose closure meets the boundary (the outer ring of cells)."""
        ix, iy = np.arange(self.n) % self.n_side, np.arange(self.n) // self.n_side
        last = self.n_side - 1
        return np.flatnonzero((ix == 0) | (iy == 0) | (ix == last) | (iy == last))

    def is_boundary(self, i):
        ix, iy = self.cell(i)
        return ix in (0, self.n_side - 1) or iy in (0, self.n_side - 1)

    def patches_at(self, x, y):
        """Patches whose open rectangle contains each point.

        Returns ``(ids, mask)`` of shape ``(npts, 4)``; unused slots hold
        patch 0 with ``mask`` False.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ns = self.n_side
        ix = np.clip(np.floor(x / self.h).astype(int), 0, ns - 1)
        iy = np.clip(np.floor(y / self.h).astype(int), 0, ns - 1)
        r = self.radius
        ids = np.zeros((x.size, MAX_PATCHES_PER_POINT), dtype=np.int64)
        mask = np.zeros((x.size, MAX_PATCHES_PER_POINT), dtype=bool)
        count = np.zeros(x.size, dtype=int)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                jx, jy = ix + dx, iy + dy
                ok = (jx >= 0) & (jx < ns) & (jy >= 0) & (jy < ns)
                cx = (jx + 0.5) * self.h
                cy = (jy + 0.5) * self.h
                ok &= (np.abs(x - cx) < r) & (np.abs(y - cy) < r)
                if np.any(count[ok] >= MAX_PATCHES_PER_POINT):
                    raise RuntimeError("more patches overlap a point than expected")
                sel = np.flatnonzero(ok)
                ids[sel, count[sel]] = jy[sel] * ns + jx[sel]
                mask[sel, count[sel]] = True
                count[sel] += 1
        return ids, mask

    @cached_property
    def overlap_pairs(self):
        """Sorted array of all ``(i, j)`` with overlapping patches (incl. i = j)."""
        ns = self.n_side
        pairs = []
        for i in range(self.n):
            ix, iy = self.cell(i)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    jx, jy = ix + dx, iy + dy
                    if 0 <= jx < ns and 0 <= jy < ns:
                        pairs.append((i, jy * ns + jx))
        return np.array(sorted(pairs), dtype=np.int64)


@dataclass(frozen=True)
class PuSpace:
    """PU space: cover, weight degree and per-patch polynomial degrees."""

    cover: Cover
    q: int = 3
    p: int = 2
    boundary_refine: bool = False

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("polynomial degree must be >= 0")

    @property
    def n(self):
        return self.cover.n

    @cached_property
    def degrees(self):
        d = np.full(self.cover.n, self.p, dtype=int)
        if self.boundary_refine:
            d[self.cover.boundary_patches] += 1
        return d

    @property
    def p_max(self):
        return int(self.degrees.max())

    @cached_property
    def dims(self):
        return np.array([local_dim(int(p)) for p in self.degrees])

    @property
    def m_max(self):
        return local_dim(self.p_max)

    @cached_property
    def layout(self):
        return BlockLayout(tuple(int(m) for m in self.dims))

    @cached_property
    def weight(self):
        return BSplineWeight(self.q)

    @cached_property
    def basis(self):
        """Exponent index arrays ``(ka, kb)`` of the degree ``p_max`` basis."""
        idx = basis_indices(self.p_max)
        return np.array([a for a, _ in idx]), np.array([b for _, b in idx])

    @cached_property
    def legendre_monomials(self):
        """Row ``a`` holds the monomial coefficients of ``P_a``."""
        P = self.p_max
        C = np.zeros((P + 1, P + 1))
        for a in range(P + 1):
            c = npleg.leg2poly(np.eye(P + 1)[a])
            C[a, : len(c)] = c
        return C

    def weight_jets(self, u, c, K, hint=None):
        """Physical Taylor coefficients of the 1-D weight factor (..., K+1)."""
        r = self.cover.radius
        xi = (u - c) / r
        xh = None if hint is None else (hint - c) / r
        return self.weight.jets(xi, K, xh) / r ** np.arange(K + 1)

    def legendre_jets(self, u, c, K):
        """Physical Taylor coefficients of ``P_a((u - c) / r)``: (..., p_max+1, K+1)."""
        r = self.cover.radius
        xi = (np.asarray(u) - c) / r
        return taylor_coefficients(self.legendre_monomials, xi, K, shared=True) / r ** np.arange(K + 1)


def pu_jets(space, ids, mask, gx, gy, K, hint_x=None, hint_y=None):
    """Taylor coefficients of the PU functions on tensor point sets.

    Parameters
    ----------
    ids, mask : (R, S)
        Active patches per cell.
    gx : (R, nx), gy : (R, ny)
        Point coordinates per cell.
    hint_x, hint_y : (R,), optional
        Coordinates selecting the weight polynomial piece.

    Returns
    -------
    phi : (R, S, K+1, K+1, nx, ny)
    """
    C = space.cover.centers[ids]
    hx = None if hint_x is None else hint_x[:, None, None]
    hy = None if hint_y is None else hint_y[:, None, None]
    tx = space.weight_jets(gx[:, None, :], C[..., 0:1], K, hx)
    ty = space.weight_jets(gy[:, None, :], C[..., 1:2], K, hy)
    tx = np.moveaxis(tx, -1, 2)
    ty = np.moveaxis(ty, -1, 2)
    return _kernels.shepard_jets(tx, ty, mask, K)


def evaluate_pu(space, x, order=0):
    """PU functions and their partial derivatives at one point.

    Returns ``{i: D}`` over the patches containing ``x`` with
    ``D[a, b] = d^{a+b} phi_i / dx^a dy^b`` for ``a + b <= order``
    (entries with ``a + b > order`` are zero).
    """
    x0, y0 = float(x[0]), float(x[1])
    if not (0.0 <= x0 <= 1.0 and 0.0 <= y0 <= 1.0):
        raise ValueError("point outside the unit square")
    ids, mask = space.cover.patches_at([x0], [y0])
    if not mask.any():
        raise ValueError("point not covered by any patch")
    phi = pu_jets(space, ids, mask, np.array([[x0]]), np.array([[y0]]), order)
    fact = np.array([float(np.prod(np.arange(1, a + 1))) for a in range(order + 1)])
    scale = fact[:, None] * fact[None, :]
    out = {}
    for s in np.flatnonzero(mask[0]):
        D = phi[0, s, :, :, 0, 0] * scale
        D[np.add.outer(np.arange(order + 1), np.arange(order + 1)) > order] = 0.0
        out[int(ids[0, s])] = D
    return out
