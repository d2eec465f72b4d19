"""Timing of the numba kernels against their pure-numpy counterparts.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel
is called once untimed so compilation is excluded, then the median of
``N`` calls is reported for both flavours together with the relative max
difference of the results.
"""

import argparse
import statistics
import time

import numpy as np

from chebfsai import _kernels as K
from chebfsai.pum import Cover, PuSpace, assemble


def _median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_matvec(repeat):
    A = assemble(PuSpace(Cover(5), p=3), probe=False).A
    x = np.random.default_rng(0).standard_normal(A.shape[1])
    rows, cols = A._coo
    args_nb = (
        A.row_layout.offsets, A.col_layout.offsets, A.indptr, A.indices, A.blk_ptr, A.data, x,
    )
    nb = lambda: K.bsr_matvec_nb(*args_nb, np.zeros(A.shape[0]))
    npy = lambda: K.bsr_matvec_np(rows, cols, A.data, x, A.shape[0])
    return f"bsr_matvec n={A.shape[0]} nnz={A.data.size}", nb, npy


def bench_shepard(repeat):
    rng = np.random.default_rng(1)
    R, S, order, nq = 400, 4, 4, 8
    tx = rng.uniform(0.1, 1.0, (R, S, order + 1, nq))
    ty = rng.uniform(0.1, 1.0, (R, S, order + 1, nq))
    mask = rng.uniform(size=(R, S)) < 0.8
    mask[:, 0] = True
    nb = lambda: K.shepard_jets_nb(tx, ty, mask, order)
    npy = lambda: K.shepard_jets_np(tx, ty, mask, order)
    return f"shepard_jets R={R} order={order} nq={nq}", nb, npy


def bench_scatter(repeat):
    rng = np.random.default_rng(2)
    T, E, m = 5000, 200_000, 10
    ids = rng.integers(0, T, E)
    local = rng.standard_normal((E, m, m))
    nb = lambda: K.scatter_blocks_nb(np.zeros((T, m, m)), ids, local)
    npy = lambda: K.scatter_blocks_np(np.zeros((T, m, m)), ids, local)
    return f"scatter_blocks E={E} m={m}", nb, npy


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable")
    print(f"{'kernel':<45} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8} {'rel diff':>10}")
    for make in (bench_matvec, bench_shepard, bench_scatter):
        name, nb, npy = make(args.repeat)
        ref = npy()
        diff = float(np.max(np.abs(nb() - ref)) / max(np.max(np.abs(ref)), 1e-300))
        t_nb = _median_time(nb, args.repeat)
        t_np = _median_time(npy, args.repeat)
        print(f"{name:<45} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
