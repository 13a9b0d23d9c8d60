"""Time the compiled kernels against the numpy/scipy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Prints one
line per kernel with the median time of each backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from kcrec import kernels
from kcrec.sparse import SparseMatrix


def cases(g):
    n, d, nnz = 2000, 64, 40000
    a = SparseMatrix.from_coo(g.integers(n, size=nnz), g.integers(n, size=nnz), g.random(nnz), (n, n))
    x = g.standard_normal((n, d))
    m = g.standard_normal((400, d))
    b = g.standard_normal(d)
    pts = g.standard_normal((5000, d))
    ctr = g.standard_normal((10, d))
    return {
        "csr_matmul": lambda k: k.csr_matmul(a.indptr, a.indices, a.data, x, n),
        "csr_matmul_t": lambda k: k.csr_matmul_t(a.indptr, a.indices, a.data, x, n),
        "csr_sddmm": lambda k: k.csr_sddmm(a.indptr, a.indices, x, x),
        "circ_corr": lambda k: k.circ_corr(m, b),
        "circ_corr_grad_a": lambda k: k.circ_corr_grad_a(m, b),
        "circ_corr_grad_b": lambda k: k.circ_corr_grad_b(m, m),
        "sq_dist_argmin": lambda k: k.sq_dist_argmin(pts, ctr),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    if "compiled" not in kernels.BACKENDS:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<18}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {}
        for backend, mod in kernels.BACKENDS.items():
            t = timeit.repeat(lambda: fn(mod), number=3, repeat=args.repeat)
            row[backend] = 1e3 * float(np.median(t)) / 3
        comp = row.get("compiled")
        speed = f"{row['python'] / comp:9.2f}x" if comp else "      n/a"
        comp_s = f"{comp:14.3f}" if comp else f"{'-':>14}"
        print(f"{name:<18}{row['python']:12.3f}{comp_s}{speed}")


if __name__ == "__main__":
    main()
