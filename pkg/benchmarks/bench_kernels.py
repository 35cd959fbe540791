"""Time the compiled and pure-Python kernels on the same inputs.

Usage: python benchmarks/bench_kernels.py [--size 128] [--repeat 3]
"""
import argparse
import time

import numpy as np

from polsarclf import _kernels
from polsarclf.data import MultiBandImage
from polsarclf.decompositions import extract_features
from polsarclf.superpixels import init_centers


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def random_coherency(n, rng):
    a = rng.normal(size=(n, 3, 4)) + 1j * rng.normal(size=(n, 3, 4))
    return a @ np.conj(np.swapaxes(a, 1, 2)) / 4


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=128, help="image side in pixels")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = _kernels.backends()
    n = args.size * args.size
    t = random_coherency(n, rng)
    field = rng.normal(size=(args.size, args.size, 5))
    seeds = init_centers(field, max(1, n // 256))
    cy, cx = seeds.rows.astype(np.float64), seeds.cols.astype(np.float64)
    cfeat = field[seeds.rows, seeds.cols]
    blocks = (np.add.outer(np.arange(args.size) // 7, np.arange(args.size) // 7) % 3).astype(np.int32)

    print(f"active backend: {_kernels.BACKEND}; available: {', '.join(sorted(backends))}")
    print(f"{'kernel':<22}{'backend':<10}{'seconds':>10}{'speedup':>10}")
    results = {}
    for name, run in (
        ("jacobi_eigh3", lambda k: k.jacobi_eigh3(t, 0)),
        ("slic_assign", lambda k: k.slic_assign(field, cy, cx, cfeat, seeds.s, 10.0)),
        ("connected_components", lambda k: k.connected_components(blocks)),
    ):
        base = None
        for bname in ("python", "cython"):
            if bname not in backends:
                continue
            sec, out = best_of(lambda: run(backends[bname]), args.repeat)
            results[(name, bname)] = out
            base = base or sec
            print(f"{name:<22}{bname:<10}{sec:>10.4f}{base / sec:>9.1f}x")
    if ("jacobi_eigh3", "cython") in results:
        dv = np.max(np.abs(np.sort(results[("jacobi_eigh3", "python")][0], -1)
                           - np.sort(results[("jacobi_eigh3", "cython")][0], -1)))
        same_labels = np.array_equal(results[("slic_assign", "python")][0], results[("slic_assign", "cython")][0])
        print(f"max eigenvalue difference between backends: {dv:.2e}; slic labels identical: {same_labels}")

    img = MultiBandImage(["L"], (rng.normal(size=(1, args.size, args.size, 3))
                                 + 1j * rng.normal(size=(1, args.size, args.size, 3))).astype(np.complex64))
    sec, _ = best_of(lambda: extract_features(img), 1)
    print(f"extract_features ({args.size}x{args.size}, 1 band, {_kernels.BACKEND}): {sec:.3f} s")


if __name__ == "__main__":
    main()
