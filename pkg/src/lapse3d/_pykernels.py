"""Pure-Python implementations of the compiled kernels in ``_core.pyx``."""

import heapq

import numpy as np

_OFFSETS = [
    (dz, dy, dx)
    for dz in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
    if (dz, dy, dx) != (0, 0, 0)
]


def priority_flood(prob, labels, levels):
    nz, ny, nx = prob.shape
    heap = []
    for idx in np.flatnonzero(labels):
        z, rem = divmod(int(idx), ny * nx)
        y, x = divmod(rem, nx)
        lvl = float(prob[z, y, x])
        levels[z, y, x] = lvl
        heap.append((lvl, int(idx)))
    heapq.heapify(heap)
    # float32 storage, float64 ordering: same as the compiled kernel
    while heap:
        lvl, idx = heapq.heappop(heap)
        cz, rem = divmod(idx, ny * nx)
        cy, cx = divmod(rem, nx)
        lab = labels[cz, cy, cx]
        for dz, dy, dx in _OFFSETS:
            z, y, x = cz + dz, cy + dy, cx + dx
            if z < 0 or z >= nz or y < 0 or y >= ny or x < 0 or x >= nx:
                continue
            if labels[z, y, x]:
                continue
            labels[z, y, x] = lab
            nl = max(float(prob[z, y, x]), lvl)
            levels[z, y, x] = nl
            heapq.heappush(heap, (nl, (z * ny + y) * nx + x))


def frechet_table(dist):
    p, q = dist.shape
    ca = np.empty((p, q), dtype=np.float64)
    ca[0, 0] = dist[0, 0]
    for i in range(1, p):
        ca[i, 0] = max(ca[i - 1, 0], dist[i, 0])
    for j in range(1, q):
        ca[0, j] = max(ca[0, j - 1], dist[0, j])
    for i in range(1, p):
        for j in range(1, q):
            ca[i, j] = max(min(ca[i - 1, j], ca[i, j - 1], ca[i - 1, j - 1]), dist[i, j])
    return ca


def _corners(pos, idx, lo, strides):
    g = pos[idx]
    base = np.floor(g).astype(np.intp)
    frac = g - base
    flat = (base - lo) @ strides
    D = pos.shape[1]
    for c in range(1 << D):
        bits = np.array([(c >> d) & 1 for d in range(D)], dtype=bool)
        w = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
        yield flat + strides[bits].sum(), w


def lattice_splat(pos, idx, values, lo, strides, grid):
    for off, w in _corners(pos, idx, lo, strides):
        grid += np.bincount(off, weights=w * values, minlength=grid.size)


def lattice_slice(pos, idx, lo, strides, grid, out):
    out[:] = 0.0
    for off, w in _corners(pos, idx, lo, strides):
        out += w * grid[off]
