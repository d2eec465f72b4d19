"""Coordinate text format for block matrices.

``<name>.<ext>`` holds a header ``%%block-matrix <n_rows> <n_cols> <nnz>``
followed by 1-based ``i j value`` triplets written with 17 significant
digits.  The block layout lives in the sidecar ``<name>.blocks`` (one block
size per line); a non-square matrix adds ``<name>.colblocks`` for its
columns.  Every entry of every stored block is written, zeros included, so
the block pattern survives the round trip.
"""

from pathlib import Path

import numpy as np

from .blockcore import BlockLayout, BlockSparseMatrix

HEADER = "%%block-matrix"


class MatrixFormatError(ValueError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


def sidecar_paths(path):
    path = Path(path)
    return path.with_suffix(".blocks"), path.with_suffix(".colblocks")


def write_matrix(path, A):
    path = Path(path)
    rows, cols = A._coo
    order = np.lexsort((cols, rows))
    lines = [f"{HEADER} {A.shape[0]} {A.shape[1]} {len(order)}"]
    lines.extend(
        f"{r + 1} {c + 1} {v:.17g}"
        for r, c, v in zip(rows[order].tolist(), cols[order].tolist(), A.data[order].tolist())
    )
    path.write_text("\n".join(lines) + "\n")
    rb, cb = sidecar_paths(path)
    rb.write_text("".join(f"{m}\n" for m in A.row_layout.sizes))
    if A.row_layout != A.col_layout:
        cb.write_text("".join(f"{m}\n" for m in A.col_layout.sizes))
    elif cb.exists():
        cb.unlink()


def _read_layout(path):
    sizes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        try:
            m = int(s)
        except ValueError:
            raise MatrixFormatError(path, lineno, f"expected an integer block size, got {s!r}")
        if m < 1:
            raise MatrixFormatError(path, lineno, "block size must be positive")
        sizes.append(m)
    return BlockLayout(tuple(sizes))


def read_matrix(path):
    path = Path(path)
    rb, cb = sidecar_paths(path)
    if not rb.exists():
        raise FileNotFoundError(f"missing layout sidecar {rb}")
    row_layout = _read_layout(rb)
    col_layout = _read_layout(cb) if cb.exists() else row_layout

    text = path.read_text().splitlines()
    if not text:
        raise MatrixFormatError(path, 1, "empty file")
    head = text[0].split()
    if len(head) != 4 or head[0] != HEADER:
        raise MatrixFormatError(path, 1, f"expected '{HEADER} <rows> <cols> <nnz>'")
    try:
        nr, nc, nnz = (int(t) for t in head[1:])
    except ValueError:
        raise MatrixFormatError(path, 1, "non-integer header field")
    if nr != row_layout.N:
        raise MatrixFormatError(
            rb, 1, f"layout sums to {row_layout.N} but matrix has {nr} rows"
        )
    if nc != col_layout.N:
        raise MatrixFormatError(
            cb if cb.exists() else rb,
            1,
            f"layout sums to {col_layout.N} but matrix has {nc} columns",
        )
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    k = 0
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise MatrixFormatError(path, lineno, "expected 'i j value'")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixFormatError(path, lineno, "malformed triplet")
        if not (1 <= i <= nr and 1 <= j <= nc):
            raise MatrixFormatError(path, lineno, f"index ({i}, {j}) out of range")
        if k >= nnz:
            raise MatrixFormatError(path, lineno, f"more than {nnz} entries")
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
        k += 1
    if k != nnz:
        raise MatrixFormatError(path, len(text), f"header announced {nnz} entries, found {k}")
    A = BlockSparseMatrix.from_coo(rows, cols, vals, row_layout, col_layout)
    if row_layout == col_layout:
        try:
            A.check_symmetric()
            A.symmetric = True
        except ValueError:
            pass
    return A
