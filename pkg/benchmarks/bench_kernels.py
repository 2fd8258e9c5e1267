"""Compiled vs pure-Python kernel timings.

Runs each hot kernel on both back ends with identical inputs, checks that
the outputs agree, and prints the median wall time and speed-up.

    python benchmarks/bench_kernels.py [--size 48] [--repeat 3]
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from lapse3d import kernels


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def flood_case(n, rng):
    prob = rng.random((n, n, n)).astype(np.float32)
    seeds = np.zeros((n, n, n), dtype=np.uint32)
    pts = rng.integers(0, n, size=(max(2, n // 4), 3))
    for k, (z, y, x) in enumerate(pts, start=1):
        seeds[z, y, x] = k

    def run(mod):
        labels = seeds.copy()
        levels = np.zeros(prob.shape, dtype=np.float32)
        mod.priority_flood(prob, labels, levels)
        return labels

    return f"priority_flood {n}^3", run, np.array_equal


def frechet_case(n, rng):
    a = rng.random((n, 3))
    b = rng.random((n, 3))
    dist = np.ascontiguousarray(np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)))
    return f"frechet_table {n}x{n}", lambda mod: mod.frechet_table(dist), np.array_equal


def lattice_case(n, rng):
    pos = np.ascontiguousarray(rng.random((n, 4)) * 8.0)
    idx = np.arange(n, dtype=np.intp)
    vals = rng.random(n)
    lo = np.full(4, -1, dtype=np.intp)
    dims = (11, 11, 11, 11)
    strides = np.array([int(np.prod(dims[d + 1 :])) for d in range(4)], dtype=np.intp)

    def run(mod):
        grid = np.zeros(int(np.prod(dims)))
        mod.lattice_splat(pos, idx, vals, lo, strides, grid)
        out = np.empty(n)
        mod.lattice_slice(pos, idx, lo, strides, grid, out)
        return out

    return f"lattice splat+slice {n} pts, 4D", run, lambda x, y: np.allclose(x, y, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32, help="flood grid edge length")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    core = kernels.compiled()
    if core is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    cases = [
        flood_case(args.size, rng),
        frechet_case(400, rng),
        lattice_case(200_000, rng),
    ]
    print(f"{'kernel':34s} {'compiled':>10s} {'python':>10s} {'speed-up':>9s}  agree")
    ok = True
    for name, run, same in cases:
        agree = same(run(core), run(kernels.python))
        ok &= bool(agree)
        tc = _median_time(lambda: run(core), args.repeat)
        tp = _median_time(lambda: run(kernels.python), args.repeat)
        print(f"{name:34s} {tc:9.4f}s {tp:9.4f}s {tp / tc:8.1f}x  {agree}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
