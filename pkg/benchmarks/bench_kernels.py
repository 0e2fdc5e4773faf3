"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from contra_cluster import _kernels
from contra_cluster._kernels import _pykernels


def cases(rng):
    x = np.ascontiguousarray(rng.normal(size=(256, 32, 16, 16)).astype(np.float32))
    cols = _pykernels.im2col(x, 4, 2, 7, 7)
    pts = rng.normal(size=(5000, 128))
    cents = rng.normal(size=(10, 128))
    t = rng.normal(size=(1000, 128))
    d = np.ascontiguousarray(_pykernels.sq_dists(t, t))
    cond, _ = _pykernels.tsne_binary_search(d, 30.0, 1e-5, 100)
    p = np.ascontiguousarray((cond + cond.T) / (2 * len(t)))
    y = np.ascontiguousarray(rng.normal(size=(1000, 2)))
    return {
        "im2col (256x32x16x16, k4 s2)": ("im2col", (x, 4, 2, 7, 7)),
        "col2im (same shape)": ("col2im", (cols, 16, 16, 2)),
        "sq_dists (5000x128 vs 10)": ("sq_dists", (pts, cents)),
        "kmeans_assign (5000x128, k=10)": ("kmeans_assign", (pts, cents)),
        "tsne_binary_search (N=1000)": ("tsne_binary_search", (d, 30.0, 1e-5, 100)),
        "tsne_grad (N=1000)": ("tsne_grad", (p, y)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    compiled = _kernels._ckernels
    if compiled is None:
        print("compiled kernels not built; run `python3 setup.py build_ext --inplace` first")
    print(f"{'kernel':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (name, argv) in cases(np.random.default_rng(0)).items():
        py = min(timeit.repeat(lambda: getattr(_pykernels, name)(*argv), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{label:34s} {py:10.2f} {'-':>10s} {'-':>8s}")
            continue
        cy = min(timeit.repeat(lambda: getattr(compiled, name)(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:34s} {py:10.2f} {cy:10.2f} {py / cy:7.2f}x")


if __name__ == "__main__":
    main()
