"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--seed S]

Both backends are run on identical inputs; outputs are checked for exact
agreement before timings are reported.
"""
import argparse
import sys
import timeit

import numpy as np

from cvtnet import kernels


def random_graph(n, rng, density=0.3):
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return w + w.T


def cases(rng):
    for n in (20, 60, 150):
        adj = random_graph(n, rng)
        order = rng.permutation(n).astype(np.int64)
        init = np.arange(n, dtype=np.int64)
        yield f"local_move n={n}", "local_move", (adj, order, init, 1e-12)
    for shape in ((4, 3, 8, 8), (16, 8, 16, 16)):
        x = rng.standard_normal(shape)
        yield f"im2col {shape}", "im2col", (x, 3, 1)
        n, c, h, w = shape
        cols = rng.standard_normal((n * h * w, c * 9))
        yield f"col2im {shape}", "col2im", (cols, shape, 3, 1)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        print("compiled kernels are not built; only the python backend is available")
        return 1
    py, cc = kernels.get_backend("python"), kernels.get_backend("compiled")
    rng = np.random.default_rng(args.seed)
    print(f"{'case':32s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}  identical")
    for label, fn, inputs in cases(rng):
        fp, fc = getattr(py, fn), getattr(cc, fn)
        identical = same(fp(*inputs), fc(*inputs))
        tp = min(timeit.repeat(lambda: fp(*inputs), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(lambda: fc(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:32s} {tp:10.3f} {tc:12.3f} {tp / tc:8.1f}  {identical}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
