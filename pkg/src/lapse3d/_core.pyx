# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Signatures mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free
from libc.math cimport fmax, fmin, floor

cnp.import_array()


cdef struct HeapItem:
    double key
    Py_ssize_t idx


cdef inline bint _less(HeapItem a, HeapItem b) nogil:
    if a.key < b.key:
        return True
    if a.key > b.key:
        return False
    return a.idx < b.idx


cdef struct Heap:
    HeapItem* items
    Py_ssize_t size
    Py_ssize_t cap


cdef int _heap_push(Heap* h, double key, Py_ssize_t idx) nogil:
    cdef Py_ssize_t i, parent
    cdef HeapItem item, tmp
    cdef HeapItem* grown
    if h.size == h.cap:
        grown = <HeapItem*> realloc(h.items, 2 * h.cap * sizeof(HeapItem))
        if grown == NULL:
            return -1
        h.items = grown
        h.cap *= 2
    item.key = key
    item.idx = idx
    i = h.size
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(item, h.items[parent]):
            h.items[i] = h.items[parent]
            i = parent
        else:
            break
    h.items[i] = item
    return 0


cdef HeapItem _heap_pop(Heap* h) nogil:
    cdef HeapItem top = h.items[0]
    cdef HeapItem last
    cdef Py_ssize_t i = 0, child, n
    h.size -= 1
    n = h.size
    if n > 0:
        last = h.items[n]
        while True:
            child = 2 * i + 1
            if child >= n:
                break
            if child + 1 < n and _less(h.items[child + 1], h.items[child]):
                child += 1
            if _less(h.items[child], last):
                h.items[i] = h.items[child]
                i = child
            else:
                break
        h.items[i] = last
    return top


def priority_flood(const float[:, :, ::1] prob, unsigned int[:, :, ::1] labels,
                   float[:, :, ::1] levels):
    """Seeded 26-connected flooding, in place on ``labels`` and ``levels``.

    Nonzero entries of ``labels`` are seeds. A voxel is claimed by the
    neighbour that reaches it first; its flood level is
    ``max(prob, level of claimer)``. Heap order is (level, flat index), so
    ties pop in (z, y, x) lexicographic order.
    """
    cdef Py_ssize_t nz = prob.shape[0], ny = prob.shape[1], nx = prob.shape[2]
    cdef Py_ssize_t n = nz * ny * nx
    cdef Py_ssize_t z, y, x, idx, nidx, cz, cy, cx
    cdef int dz, dy, dx
    cdef double lvl, nl
    cdef unsigned int lab
    cdef HeapItem item
    cdef Heap heap
    heap.cap = 1024
    heap.size = 0
    heap.items = <HeapItem*> malloc(heap.cap * sizeof(HeapItem))
    if heap.items == NULL:
        raise MemoryError()
    try:
        with nogil:
            for z in range(nz):
                for y in range(ny):
                    for x in range(nx):
                        if labels[z, y, x] != 0:
                            levels[z, y, x] = prob[z, y, x]
                            if _heap_push(&heap, prob[z, y, x], (z * ny + y) * nx + x) != 0:
                                with gil:
                                    raise MemoryError()
            while heap.size > 0:
                item = _heap_pop(&heap)
                idx = item.idx
                lvl = item.key
                cx = idx % nx
                cy = (idx // nx) % ny
                cz = idx // (nx * ny)
                lab = labels[cz, cy, cx]
                for dz in range(-1, 2):
                    z = cz + dz
                    if z < 0 or z >= nz:
                        continue
                    for dy in range(-1, 2):
                        y = cy + dy
                        if y < 0 or y >= ny:
                            continue
                        for dx in range(-1, 2):
                            x = cx + dx
                            if x < 0 or x >= nx:
                                continue
                            if labels[z, y, x] != 0:
                                continue
                            labels[z, y, x] = lab
                            nl = fmax(<double> prob[z, y, x], lvl)
                            levels[z, y, x] = <float> nl
                            if _heap_push(&heap, nl, (z * ny + y) * nx + x) != 0:
                                with gil:
                                    raise MemoryError()
    finally:
        free(heap.items)


def frechet_table(const double[:, ::1] dist):
    """Coupling table of the discrete Fréchet recursion."""
    cdef Py_ssize_t p = dist.shape[0], q = dist.shape[1], i, j
    out = np.empty((p, q), dtype=np.float64)
    cdef double[:, ::1] ca = out
    cdef double best
    with nogil:
        ca[0, 0] = dist[0, 0]
        for i in range(1, p):
            ca[i, 0] = fmax(ca[i - 1, 0], dist[i, 0])
        for j in range(1, q):
            ca[0, j] = fmax(ca[0, j - 1], dist[0, j])
        for i in range(1, p):
            for j in range(1, q):
                best = fmin(fmin(ca[i - 1, j], ca[i, j - 1]), ca[i - 1, j - 1])
                ca[i, j] = fmax(best, dist[i, j])
    return out


cdef inline Py_ssize_t _corner_setup(const double[:, ::1] pos, Py_ssize_t i,
                                     const Py_ssize_t[::1] lo, const Py_ssize_t[::1] strides,
                                     double* frac, Py_ssize_t* offs) nogil:
    cdef Py_ssize_t d, D = pos.shape[1], base = 0, b
    cdef double g
    for d in range(D):
        g = pos[i, d]
        b = <Py_ssize_t> floor(g)
        frac[d] = g - b
        base += (b - lo[d]) * strides[d]
        offs[d] = strides[d]
    return base


def lattice_splat(const double[:, ::1] pos, const Py_ssize_t[::1] idx, const double[::1] values,
                  const Py_ssize_t[::1] lo, const Py_ssize_t[::1] strides, double[::1] grid):
    """Accumulate ``values`` at lattice points ``pos[idx]`` with multilinear weights."""
    cdef Py_ssize_t k, i, c, d, D = pos.shape[1], base, off
    cdef double frac[8]
    cdef Py_ssize_t offs[8]
    cdef double w, v
    if D > 8:
        raise ValueError("at most 8 lattice dimensions")
    with nogil:
        for k in range(idx.shape[0]):
            i = idx[k]
            v = values[k]
            base = _corner_setup(pos, i, lo, strides, frac, offs)
            for c in range(1 << D):
                w = v
                off = base
                for d in range(D):
                    if (c >> d) & 1:
                        w = w * frac[d]
                        off = off + offs[d]
                    else:
                        w = w * (1.0 - frac[d])
                grid[off] += w


def lattice_slice(const double[:, ::1] pos, const Py_ssize_t[::1] idx,
                  const Py_ssize_t[::1] lo, const Py_ssize_t[::1] strides,
                  const double[::1] grid, double[::1] out):
    """Multilinear interpolation of ``grid`` at lattice points ``pos[idx]``."""
    cdef Py_ssize_t k, i, c, d, D = pos.shape[1], base, off
    cdef double frac[8]
    cdef Py_ssize_t offs[8]
    cdef double w, acc
    if D > 8:
        raise ValueError("at most 8 lattice dimensions")
    with nogil:
        for k in range(idx.shape[0]):
            i = idx[k]
            base = _corner_setup(pos, i, lo, strides, frac, offs)
            acc = 0.0
            for c in range(1 << D):
                w = 1.0
                off = base
                for d in range(D):
                    if (c >> d) & 1:
                        w = w * frac[d]
                        off = off + offs[d]
                    else:
                        w = w * (1.0 - frac[d])
                acc += w * grid[off]
            out[k] = acc
