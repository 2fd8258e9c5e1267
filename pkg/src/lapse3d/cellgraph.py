"""Weighted cell adjacency graph from iterated 3D dilation.

Two cells are ``w`` apart when dilating both of them ``w`` times with the
full 3x3x3 cube makes their union a single 26-connected component.

For two 26-connected sets ``A`` and ``B`` the dilated sets merge exactly
when their chessboard distance ``D`` satisfies ``D <= 2w + 1``, so
``w = max(1, ceil((D - 1) / 2))``. Cells that are themselves fragmented
need the same condition along a bottleneck spanning tree over their
fragments; :func:`build_adjacency` handles both cases from per-fragment
chessboard distance transforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .errors import IsolatedVertex, LabelMissing
from .stackio import VoxelGrid

CUBE = np.ones((3, 3, 3), dtype=bool)
DEFAULT_MAXD = 10


def rounds_for_gap(d_inf) -> int:
    """Dilation rounds (each cell dilated) needed to join sets at chessboard distance ``d_inf``."""
    return max(1, -(-(int(d_inf) - 1) // 2))


@dataclass
class AdjacencyGraph:
    vertices: tuple[int, ...]
    edges: dict[tuple[int, int], int]
    max_d: int = DEFAULT_MAXD
    _nbrs: dict[int, dict[int, int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = tuple(sorted(int(v) for v in self.vertices))
        clean = {}
        for (i, j), w in self.edges.items():
            i, j, w = int(i), int(j), int(w)
            if i == j or w < 1:
                raise ValueError(f"bad edge ({i}, {j}, {w})")
            clean[(min(i, j), max(i, j))] = w
        self.edges = dict(sorted(clean.items()))
        self._nbrs = {v: {} for v in self.vertices}
        for (i, j), w in self.edges.items():
            self._nbrs.setdefault(i, {})[j] = w
            self._nbrs.setdefault(j, {})[i] = w

    def _check(self, i):
        if i not in self._nbrs:
            raise LabelMissing(f"label {i} is not a vertex")

    def weight(self, i: int, j: int) -> int | None:
        self._check(i)
        self._check(j)
        return self._nbrs[i].get(j)

    def neighbors(self, i: int, max_weight: int | None = None) -> list[int]:
        """Sorted neighbours of ``i``; ``max_weight=1`` gives the touching cells."""
        self._check(i)
        return sorted(j for j, w in self._nbrs[i].items() if max_weight is None or w <= max_weight)

    def deg(self, i: int) -> int:
        self._check(i)
        return sum(1 for w in self._nbrs[i].values() if w == 1)

    def weight_sum(self, i: int) -> int:
        self._check(i)
        return sum(self._nbrs[i].values())

    def wdeg(self, i: int) -> float:
        return weighted_degree(self, i)


def weighted_degree(g: AdjacencyGraph, i: int) -> float:
    """Sum of stored incident weights over the number of weight-1 neighbours."""
    d = g.deg(i)
    if d == 0:
        raise IsolatedVertex(f"cell {i} has no touching neighbour")
    return g.weight_sum(i) / d


def _present(labels: np.ndarray, i: int) -> np.ndarray:
    mask = labels == i
    if i == 0 or not mask.any():
        raise LabelMissing(f"label {i} not present")
    return mask


def cell_distance(labels: VoxelGrid, i: int, j: int, max_d: int = DEFAULT_MAXD) -> int | None:
    """Smallest dilation count ``<= max_d`` that joins cells ``i`` and ``j``, else ``None``.

    This is the literal construction (dilate, union, count components) and is
    meant as a reference; use :func:`build_adjacency` for whole grids.
    """
    data = np.asarray(labels.data if isinstance(labels, VoxelGrid) else labels)
    if i == j:
        raise ValueError("i and j must differ")
    a = _present(data, i)
    b = _present(data, j)
    for d in range(1, max_d + 1):
        a = ndi.binary_dilation(a, CUBE)
        b = ndi.binary_dilation(b, CUBE)
        _, n = ndi.label(a | b, structure=CUBE)
        if n == 1:
            return d
    return None


def _fragments(data: np.ndarray):
    """Split every label into 26-connected fragments.

    Returns ``(frag, owner)``: a fragment-id grid (0 = background) and the
    owning cell label of each fragment id.
    """
    frag = np.zeros(data.shape, dtype=np.int64)
    owner = [0]
    objs = ndi.find_objects(data.astype(np.int64, copy=False))
    for lab, sl in enumerate(objs, start=1):
        if sl is None:
            continue
        sub, n = ndi.label(data[sl] == lab, structure=CUBE)
        view = frag[sl]
        view[sub > 0] = sub[sub > 0] + (len(owner) - 1)
        owner.extend([lab] * n)
    return frag, np.asarray(owner, dtype=np.int64)


def _fragment_gaps(frag: np.ndarray, n_frag: int, reach: int) -> dict[tuple[int, int], int]:
    """Chessboard distance between fragment pairs closer than ``reach``."""
    gaps: dict[tuple[int, int], int] = {}
    objs = ndi.find_objects(frag)
    shape = frag.shape
    for f, sl in enumerate(objs, start=1):
        if sl is None:
            continue
        box = tuple(
            slice(max(s.start - reach, 0), min(s.stop + reach, n)) for s, n in zip(sl, shape)
        )
        sub = frag[box]
        dist = ndi.distance_transform_cdt(sub != f, metric="chessboard")
        others = np.unique(sub[(sub > f) & (dist <= reach)])
        if len(others) == 0:
            continue
        mins = ndi.minimum(dist, labels=sub, index=others)
        for o, d in zip(others.tolist(), np.atleast_1d(mins).tolist()):
            gaps[(f, o)] = int(d)
    return gaps


def _bottleneck(nodes, gaps_of) -> int | None:
    """Largest edge on a minimum bottleneck spanning tree, ``None`` if disconnected."""
    nodes = list(nodes)
    if len(nodes) == 1:
        return 0
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    joined, worst = 1, 0
    for d, a, b in sorted(gaps_of):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            worst = d
            joined += 1
            if joined == len(nodes):
                return worst
    return None


def build_adjacency(labels: VoxelGrid, max_d: int = DEFAULT_MAXD) -> AdjacencyGraph:
    """Adjacency graph with an edge for every cell pair at distance ``<= max_d``."""
    data = np.asarray(labels.data if isinstance(labels, VoxelGrid) else labels)
    if max_d < 1:
        raise ValueError("max_d must be >= 1")
    verts = [int(v) for v in np.unique(data) if v != 0]
    frag, owner = _fragments(data)
    reach = 2 * max_d + 1
    gaps = _fragment_gaps(frag, len(owner) - 1, reach)

    frags_of: dict[int, list[int]] = {}
    for f in range(1, len(owner)):
        frags_of.setdefault(int(owner[f]), []).append(f)
    within: dict[int, list] = {}
    between: dict[tuple[int, int], list] = {}
    for (a, b), d in gaps.items():
        la, lb = int(owner[a]), int(owner[b])
        item = (d, a, b)
        if la == lb:
            within.setdefault(la, []).append(item)
        else:
            between.setdefault((min(la, lb), max(la, lb)), []).append(item)

    edges = {}
    for (i, j), items in between.items():
        if len(frags_of[i]) == 1 and len(frags_of[j]) == 1:
            gap = min(d for d, _, _ in items)
        else:
            gap = _bottleneck(frags_of[i] + frags_of[j], items + within.get(i, []) + within.get(j, []))
            if gap is None:
                continue
        w = rounds_for_gap(gap)
        if w <= max_d:
            edges[(i, j)] = w
    return AdjacencyGraph(tuple(verts), edges, max_d)


def write_edges_csv(g: AdjacencyGraph, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "j", "w"])
        for (i, j), w in g.edges.items():
            out.writerow([i, j, w])


def write_vertices_csv(g: AdjacencyGraph, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "deg", "wdeg"])
        for v in g.vertices:
            d = g.deg(v)
            out.writerow([v, d, f"{g.weight_sum(v) / d:.6g}" if d else 0])
