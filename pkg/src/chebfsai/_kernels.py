"""Hot numeric kernels, each in a numba-compiled and a pure-numpy flavour.

The numba path is used when numba imports and the environment variable
``CHEBFSAI_NUMBA`` is not set to ``0``.  Both flavours are always importable
under explicit names (``*_nb`` / ``*_np``) so they can be benchmarked and
cross-checked in the same process.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CHEBFSAI_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def _jit(func):
    if HAVE_NUMBA:
        return njit(cache=True)(func)
    return func


# --------------------------------------------------------------------------
# variable-block CSR matrix-vector product


def bsr_matvec_np(rows, cols, data, x, n_out):
    """y = A x from the scalar coordinate expansion of a block matrix."""
    return np.bincount(rows, weights=data * x[cols], minlength=n_out)


def _bsr_matvec_loop(row_off, col_off, indptr, indices, blk_ptr, data, x, y):
    nb = indptr.shape[0] - 1
    for bi in range(nb):
        r0 = row_off[bi]
        mi = row_off[bi + 1] - r0
        for p in range(indptr[bi], indptr[bi + 1]):
            bj = indices[p]
            c0 = col_off[bj]
            mj = col_off[bj + 1] - c0
            off = blk_ptr[p]
            for a in range(mi):
                s = 0.0
                base = off + a * mj
                for b in range(mj):
                    s += data[base + b] * x[c0 + b]
                y[r0 + a] += s
    return y


bsr_matvec_nb = _jit(_bsr_matvec_loop)


# --------------------------------------------------------------------------
# Shepard partition-of-unity Taylor jets
#
# Inputs are truncated 1-D Taylor coefficients t[..., a, :] = W^(a) / a! of
# tensor-product weights.  The output holds the 2-D Taylor coefficients of
# phi_s = W_s / sum_t W_t for total degree <= order.


def shepard_jets_np(tx, ty, mask, order):
    """Vectorised quotient-rule jets.

    tx : (R, S, K+1, nx), ty : (R, S, K+1, ny), mask : (R, S)
    returns (R, S, K+1, K+1, nx, ny)
    """
    R, S, K1, nx = tx.shape
    ny = ty.shape[3]
    K = order
    m = mask.astype(float)[:, :, None, None]
    w = np.zeros((R, S, K + 1, K + 1, nx, ny))
    for a in range(K + 1):
        for b in range(K + 1 - a):
            w[:, :, a, b] = m * tx[:, :, a, :, None] * ty[:, :, b, None, :]
    tot = w.sum(axis=1)
    inv = np.zeros((R, K + 1, K + 1, nx, ny))
    inv[:, 0, 0] = 1.0 / tot[:, 0, 0]
    for d in range(1, K + 1):
        for a in range(d + 1):
            b = d - a
            acc = np.zeros((R, nx, ny))
            for i in range(a + 1):
                for j in range(b + 1):
                    if i == 0 and j == 0:
                        continue
                    acc += tot[:, i, j] * inv[:, a - i, b - j]
            inv[:, a, b] = -inv[:, 0, 0] * acc
    phi = np.zeros_like(w)
    for a in range(K + 1):
        for b in range(K + 1 - a):
            acc = np.zeros((R, S, nx, ny))
            for i in range(a + 1):
                for j in range(b + 1):
                    acc += w[:, :, i, j] * inv[:, None, a - i, b - j]
            phi[:, :, a, b] = acc
    return phi


def _shepard_jets_loop(tx, ty, mask, order):
    R, S, K1, nx = tx.shape
    ny = ty.shape[3]
    K = order
    phi = np.zeros((R, S, K + 1, K + 1, nx, ny))
    w = np.zeros((S, K + 1, K + 1))
    tot = np.zeros((K + 1, K + 1))
    inv = np.zeros((K + 1, K + 1))
    for r in range(R):
        for px in range(nx):
            for py in range(ny):
                tot[:, :] = 0.0
                for s in range(S):
                    for a in range(K + 1):
                        for b in range(K + 1 - a):
                            v = 0.0
                            if mask[r, s]:
                                v = tx[r, s, a, px] * ty[r, s, b, py]
                            w[s, a, b] = v
                            tot[a, b] += v
                inv[:, :] = 0.0
                inv[0, 0] = 1.0 / tot[0, 0]
                for d in range(1, K + 1):
                    for a in range(d + 1):
                        b = d - a
                        acc = 0.0
                        for i in range(a + 1):
                            for j in range(b + 1):
                                if i + j > 0:
                                    acc += tot[i, j] * inv[a - i, b - j]
                        inv[a, b] = -inv[0, 0] * acc
                for s in range(S):
                    if not mask[r, s]:
                        continue
                    for a in range(K + 1):
                        for b in range(K + 1 - a):
                            acc = 0.0
                            for i in range(a + 1):
                                for j in range(b + 1):
                                    acc += w[s, i, j] * inv[a - i, b - j]
                            phi[r, s, a, b, px, py] = acc
    return phi


shepard_jets_nb = _jit(_shepard_jets_loop)


# --------------------------------------------------------------------------
# scatter-accumulation of dense local blocks into a padded block buffer


def scatter_blocks_np(acc, ids, local):
    np.add.at(acc, ids, local)
    return acc


def _scatter_blocks_loop(acc, ids, local):
    E = ids.shape[0]
    ma = local.shape[1]
    mb = local.shape[2]
    for e in range(E):
        t = ids[e]
        for a in range(ma):
            for b in range(mb):
                acc[t, a, b] += local[e, a, b]
    return acc


scatter_blocks_nb = _jit(_scatter_blocks_loop)


def shepard_jets(tx, ty, mask, order):
    if USE_NUMBA:
        return shepard_jets_nb(
            np.ascontiguousarray(tx, dtype=np.float64),
            np.ascontiguousarray(ty, dtype=np.float64),
            np.ascontiguousarray(mask, dtype=np.bool_),
            int(order),
        )
    return shepard_jets_np(tx, ty, mask, order)


def scatter_blocks(acc, ids, local):
    if USE_NUMBA:
        return scatter_blocks_nb(
            acc, np.ascontiguousarray(ids, dtype=np.int64), np.ascontiguousarray(local)
        )
    return scatter_blocks_np(acc, ids, local)
