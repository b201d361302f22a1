#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Each kernel runs on a representative workload; results are checked for
agreement between backends before timing.
"""

import argparse
import time

import numpy as np

from bubforge._kernels import pure

try:
    from bubforge._kernels import _native as native
except ImportError:
    native = None


def timeit(fn, repeats):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench(name, make_args, pure_fn, native_fn, repeats, check=np.array_equal):
    args = make_args()
    ref = pure_fn(*args)
    if native_fn is not None:
        got = native_fn(*args)
        if isinstance(ref, tuple):
            agree = all(check(a, b) for a, b in zip(ref, got))
        else:
            agree = check(ref, got)
        if not agree:
            raise AssertionError(f"{name}: backends disagree")
    tp = timeit(lambda: pure_fn(*args), repeats)
    if native_fn is not None:
        tn = timeit(lambda: native_fn(*args), repeats)
        print(f"{name:<22} pure {tp * 1e3:8.2f} ms   native {tn * 1e3:8.2f} ms   "
              f"speedup {tp / tn:5.2f}x")
    else:
        print(f"{name:<22} pure {tp * 1e3:8.2f} ms   native (unavailable)")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    if native is None:
        print("compiled backend not importable; timing the fallback only")

    blob = rng.random((256, 256)) < 0.55
    x = rng.standard_normal((64, 32, 32, 16)).astype(np.float32)
    cols = pure.im2col(x, 3, 3, 1, 1)
    g = rng.standard_normal(cols.shape).astype(np.float32)
    dist = rng.random((256, 256))
    markers, _ = pure.label_components((dist > 0.98) & blob, 8)

    table = [
        ("im2col 64x32x32x16", lambda: (x, 3, 3, 1, 1), pure.im2col,
         native.im2col if native else None),
        ("col2im 64x32x32x16", lambda: (g, 64, 32, 32, 16, 3, 3, 1, 1), pure.col2im,
         native.col2im if native else None),
        ("edt 256x256", lambda: (blob,), pure.edt_sq,
         native.edt_sq if native else None),
        ("thin 256x256", lambda: (blob,), pure.thin,
         native.thin if native else None),
        ("label 256x256", lambda: (blob, 8), pure.label_components,
         native.label_components if native else None),
        ("reconstruct 256x256", lambda: (dist - 0.1, dist), pure.reconstruct,
         native.reconstruct if native else None),
        ("flood 256x256", lambda: (dist, blob, markers), pure.watershed_flood,
         native.watershed_flood if native else None),
    ]
    for name, make_args, pfn, nfn in table:
        bench(name, make_args, pfn, nfn, args.repeats)


if __name__ == "__main__":
    main()
