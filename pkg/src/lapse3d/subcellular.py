"""Per-cell and sub-cellular features of a labeled stack.

Coordinates are reported as ``(x, y, z)`` in voxel units; lengths, areas
and volumes use the grid spacing.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import ConvexHull, QhullError

from .cellgraph import AdjacencyGraph, build_adjacency
from .errors import DisconnectedWall, LabelMissing, NotAdjacent
from .geometry import Junction, Polyline, polyline_length
from .stackio import VoxelGrid

CUBE = np.ones((3, 3, 3), dtype=bool)
SIMPLIFY_TOL = 1.0  # voxels; absorbs the lattice staircase
END_TRIM = 1.0  # voxels


def _data(labels):
    return np.asarray(labels.data if isinstance(labels, VoxelGrid) else labels)


def _spacing(labels, spacing=None):
    if spacing is not None:
        return tuple(float(s) for s in spacing)
    return labels.spacing if isinstance(labels, VoxelGrid) else (1.0, 1.0, 1.0)


def _mask(data, i):
    m = data == i
    if i == 0 or not m.any():
        raise LabelMissing(f"label {i} not present")
    return m


def _zyx_to_xyz(idx):
    return np.asarray(idx)[:, ::-1].astype(np.float64)


# ---------------------------------------------------------------- whole-cell


def cell_volume(labels: VoxelGrid, i: int) -> tuple[int, float]:
    """``(voxel count, volume in µm³)``."""
    n = int(_mask(_data(labels), i).sum())
    return n, n * float(np.prod(_spacing(labels)))


def cell_center(labels: VoxelGrid, i: int) -> np.ndarray:
    """Mean member-voxel position ``(x, y, z)``."""
    zyx = np.argwhere(_mask(_data(labels), i))
    return zyx.mean(axis=0)[::-1]


def cell_surface(labels: VoxelGrid, i: int) -> np.ndarray:
    """Member voxels with a face neighbour outside the cell (grid edge counts
    as outside), as ``(x, y, z)`` rows in (z, y, x) order."""
    m = _mask(_data(labels), i)
    inner = ndi.binary_erosion(m, ndi.generate_binary_structure(3, 1), border_value=0)
    zyx = np.argwhere(m & ~inner)
    return zyx[:, ::-1].copy()


# ---------------------------------------------------------------- neighbourhoods


class _Presence:
    """Lazy per-label "label occurs in my 3x3x3 neighbourhood" masks on bounding boxes."""

    def __init__(self, data):
        self.data = data
        self.objs = ndi.find_objects(data.astype(np.int64, copy=False))
        self.cache = {}

    def box(self, i):
        sl = self.objs[i - 1] if 0 < i <= len(self.objs) else None
        if sl is None:
            raise LabelMissing(f"label {i} not present")
        return tuple(slice(max(s.start - 1, 0), min(s.stop + 1, n)) for s, n in zip(sl, self.data.shape))

    def get(self, i):
        if i not in self.cache:
            box = self.box(i)
            self.cache[i] = (box, ndi.binary_dilation(self.data[box] == i, CUBE))
        return self.cache[i]

    def common(self, labs):
        """Voxel indices (z, y, x) whose neighbourhood holds every label in ``labs``."""
        parts = [self.get(i) for i in labs]
        lo = [max(b[d].start for b, _ in parts) for d in range(3)]
        hi = [min(b[d].stop for b, _ in parts) for d in range(3)]
        if any(h <= l for l, h in zip(lo, hi)):
            return np.empty((0, 3), dtype=np.int64)
        acc = None
        for box, m in parts:
            sub = m[tuple(slice(l - b.start, h - b.start) for l, h, b in zip(lo, hi, box))]
            acc = sub if acc is None else acc & sub
        return np.argwhere(acc) + np.asarray(lo)


def _components(points_zyx):
    """26-connected components of a voxel list; returns a list of index arrays."""
    if len(points_zyx) == 0:
        return []
    lo = points_zyx.min(axis=0)
    shape = tuple(points_zyx.max(axis=0) - lo + 1)
    grid = np.zeros(shape, dtype=bool)
    local = points_zyx - lo
    grid[tuple(local.T)] = True
    comp, n = ndi.label(grid, structure=CUBE)
    ids = comp[tuple(local.T)]
    return [np.flatnonzero(ids == c) for c in range(1, n + 1)]


# ---------------------------------------------------------------- junctions


def junction_triples(g: AdjacencyGraph):
    """Sorted triples ``i < j < k`` with j in N(i) and k in N(i) ∩ N(j)."""
    out = []
    for i in g.vertices:
        ni = set(g.neighbors(i, max_weight=1))
        for j in sorted(n for n in ni if n > i):
            nj = set(g.neighbors(j, max_weight=1))
            for k in sorted(n for n in ni & nj if n > j):
                out.append((i, j, k))
    return out


def detect_junctions(labels: VoxelGrid, g: AdjacencyGraph | None = None) -> list[Junction]:
    """Three-cell junctions, one per 26-connected cluster of junction voxels."""
    data = _data(labels)
    if g is None:
        g = build_adjacency(labels)
    pres = _Presence(data)
    out = []
    for tri in junction_triples(g):
        pts = pres.common(tri)
        for comp in _components(pts):
            out.append(Junction(tri, _zyx_to_xyz(pts[comp]).mean(axis=0)))
    return out


# ---------------------------------------------------------------- segments


def wall_voxels(labels: VoxelGrid, i: int, j: int) -> np.ndarray:
    """Voxels ``(z, y, x)`` on the i/j interface: members of either cell with
    a 26-neighbour in the other."""
    data = _data(labels)
    pres = _Presence(data)
    pts = pres.common((i, j))
    pts = pts[np.isin(data[tuple(pts.T)], (i, j))] if len(pts) else pts
    if len(pts) == 0:
        raise NotAdjacent(f"cells {i} and {j} do not touch")
    return pts


def _walk(points, start, goal):
    """Greedy chain over a voxel set, falling back to BFS when it stalls."""
    index = {tuple(p): n for n, p in enumerate(points.tolist())}
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)]
    target = points[goal].astype(np.float64)

    def nbrs(n):
        z, y, x = points[n]
        for a, b, c in offsets:
            m = index.get((z + a, y + b, x + c))
            if m is not None:
                yield m

    path, seen, cur = [start], {start}, start
    while cur != goal:
        cand = [m for m in nbrs(cur) if m not in seen]
        if not cand:
            return _bfs(nbrs, start, goal)
        cur = min(cand, key=lambda m: (float(((points[m] - target) ** 2).sum()), m))
        seen.add(cur)
        path.append(cur)
    return path


def _bfs(nbrs, start, goal):
    prev = {start: None}
    todo = deque([start])
    while todo:
        n = todo.popleft()
        if n == goal:
            break
        for m in nbrs(n):
            if m not in prev:
                prev[m] = n
                todo.append(m)
    path, n = [], goal
    while n is not None:
        path.append(n)
        n = prev[n]
    return path[::-1]


def _simplify(points, tol=SIMPLIFY_TOL):
    """Douglas-Peucker simplification; keeps the endpoints."""
    if len(points) <= 2:
        return points
    keep = np.zeros(len(points), dtype=bool)
    keep[[0, -1]] = True
    stack = [(0, len(points) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        a, b = points[lo], points[hi]
        seg = b - a
        rel = points[lo + 1 : hi] - a
        norm = float(seg @ seg)
        if norm == 0:
            dist = np.sqrt((rel**2).sum(axis=1))
        else:
            t = np.clip(rel @ seg / norm, 0.0, 1.0)
            dist = np.sqrt(((rel - t[:, None] * seg) ** 2).sum(axis=1))
        k = int(np.argmax(dist))
        if dist[k] > tol:
            mid = lo + 1 + k
            keep[mid] = True
            stack += [(lo, mid), (mid, hi)]
    return points[keep]


def _resample(points, step=1.0):
    """Insert points so no two consecutive ones are more than ``step`` apart."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, int(np.ceil(np.sqrt(((b - a) ** 2).sum()) / step)))
        for t in range(1, n + 1):
            out.append(a + (b - a) * (t / n))
    return np.asarray(out)


def _bounding_pair(cands):
    """The two most distant junction locations."""
    best, pair = -1.0, None
    for a in range(len(cands)):
        for b in range(a + 1, len(cands)):
            d = float(((cands[a] - cands[b]) ** 2).sum())
            if d > best:
                best, pair = d, (cands[a], cands[b])
    return pair


def _plane(xyz, z):
    """Wall voxels on the z section nearest ``z`` (the open end of a wall
    is sought in the plane of its junction)."""
    zs = xyz[:, 2]
    near = zs[np.argmin(np.abs(zs - z))]
    return xyz[zs == near]


def _far_end(plane, score):
    """Centroid of the wall voxels within half a voxel of the top ``score``;
    a two-voxel-thick wall then ends on its mid-surface."""
    return plane[score >= score.max() - 0.5].mean(axis=0)


def extract_segment(labels: VoxelGrid, i: int, j: int, junctions=(), spacing=None) -> Polyline:
    """Polyline along the i/j wall between its bounding junctions.

    With a single bounding junction the chain ends at the wall's far end on
    the junction's z section; with none it spans the section through the
    middle of the wall along its long axis.
    """
    sp = _spacing(labels, spacing)
    pts = wall_voxels(labels, i, j)
    comps = _components(pts)
    if len(comps) > 1:
        raise DisconnectedWall(
            f"wall between {i} and {j} has {len(comps)} components",
            [_zyx_to_xyz(pts[c]) for c in comps],
        )
    xyz = _zyx_to_xyz(pts)
    ends = [np.asarray(jn.location, dtype=np.float64) for jn in junctions if i in jn.cells and j in jn.cells]
    if len(ends) >= 2:
        a, b = _bounding_pair(ends)
    elif len(ends) == 1:
        a = ends[0]
        plane = _plane(xyz, a[2])
        b = _far_end(plane, np.sqrt(((plane - a) ** 2).sum(axis=1)))
    else:
        plane = _plane(xyz, xyz[:, 2].mean())
        rel = plane - plane.mean(axis=0)
        axis = np.linalg.svd(rel, full_matrices=False)[2][0] if len(plane) > 1 else np.zeros(3)
        proj = rel @ axis
        a = _far_end(plane, -proj)
        b = _far_end(plane, proj)
    s = int(np.argmin(((xyz - a) ** 2).sum(axis=1)))
    t = int(np.argmin(((xyz - b) ** 2).sum(axis=1)))
    chain = xyz[_walk(pts, s, t)]
    # wall voxels hugging an end would double back; the end point replaces them
    keep = np.sqrt(((chain - a) ** 2).sum(axis=1)) > END_TRIM
    keep &= np.sqrt(((chain - b) ** 2).sum(axis=1)) > END_TRIM
    chain = np.vstack([a, chain[keep], b])
    chain = _resample(_simplify(chain))
    return Polyline((i, j), chain, polyline_length(chain, sp))


def extract_segments(labels: VoxelGrid, g: AdjacencyGraph, junctions, spacing=None):
    """Segments for every touching pair; returns ``(segments, failures)``
    where failures maps a pair to the raised error."""
    segs, failed = [], {}
    for (i, j), w in g.edges.items():
        if w != 1:
            continue
        try:
            segs.append(extract_segment(labels, i, j, junctions, spacing))
        except (DisconnectedWall, NotAdjacent) as err:
            failed[(i, j)] = err
    return segs, failed


# ---------------------------------------------------------------- 2D shape


@dataclass(frozen=True)
class ShapeDescriptors:
    z_plane: int
    area: float
    perimeter: float
    circularity: float
    aspect_ratio: float
    solidity: float


def max_area_shape(labels: VoxelGrid, i: int, spacing=None) -> ShapeDescriptors:
    """2D descriptors of cell ``i`` on its largest z section.

    Perimeter counts exposed pixel edges; solidity uses the convex hull of
    the member pixels' corners, so a single pixel has solidity 1.
    """
    data = _data(labels)
    sx, sy, _ = _spacing(labels, spacing)
    m = _mask(data, i)
    counts = m.reshape(m.shape[0], -1).sum(axis=1)
    z = int(np.argmax(counts))
    sl = m[z]
    n = int(sl.sum())
    area = n * sx * sy
    padded = np.pad(sl, 1)
    along_x = np.count_nonzero(padded[1:, :] != padded[:-1, :])  # edges of length sx
    along_y = np.count_nonzero(padded[:, 1:] != padded[:, :-1])  # edges of length sy
    perim = along_x * sx + along_y * sy
    circ = 4 * np.pi * area / perim**2

    yx = np.argwhere(sl).astype(np.float64)
    px, py = yx[:, 1] * sx, yx[:, 0] * sy
    cov = np.cov(np.vstack([px, py]), bias=True) if n > 1 else np.zeros((2, 2))
    cov = cov + np.diag([sx**2 / 12.0, sy**2 / 12.0])
    ev = np.linalg.eigvalsh(cov)
    aspect = float(np.sqrt(ev[1] / ev[0]))

    corners = np.unique(
        np.concatenate([yx + np.array(o) for o in ((-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5))]),
        axis=0,
    )
    try:
        hull_area = ConvexHull(corners[:, ::-1] * np.array([sx, sy])).volume
    except QhullError:  # pragma: no cover - corners always span an area
        hull_area = area
    return ShapeDescriptors(z, area, float(perim), float(circ), aspect, float(area / hull_area))


# ---------------------------------------------------------------- export


FEATURE_COLUMNS = [
    "cell", "volume_vox", "volume_um3", "cx", "cy", "cz", "deg", "wdeg",
    "z_plane", "area", "perimeter", "circularity", "aspect", "solidity",
]


def feature_rows(labels: VoxelGrid, g: AdjacencyGraph):
    data = _data(labels)
    sp = _spacing(labels)
    vox = float(np.prod(sp))
    counts = np.bincount(data.ravel().astype(np.int64))
    idx = list(g.vertices)
    centres = ndi.center_of_mass(np.ones(data.shape), data, idx) if idx else []
    rows = []
    for lab, (cz, cy, cx) in zip(idx, centres):
        d = g.deg(lab)
        shp = max_area_shape(labels, lab)
        rows.append([
            lab, int(counts[lab]), counts[lab] * vox, cx, cy, cz, d,
            g.weight_sum(lab) / d if d else 0.0,
            shp.z_plane, shp.area, shp.perimeter, shp.circularity, shp.aspect_ratio, shp.solidity,
        ])
    return rows


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


def write_features_csv(rows, path):
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(FEATURE_COLUMNS)
        for r in rows:
            out.writerow([_fmt(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_junctions_csv(junctions, path):
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "j", "k", "x", "y", "z"])
        for jn in junctions:
            out.writerow([*jn.cells, *(f"{v:.6g}" for v in jn.location)])


def write_segments_csv(segments, path, points_path=None):
    """``segments.csv`` plus a sidecar point list (default ``<stem>_points.csv``)."""
    path = Path(path)
    points_path = Path(points_path) if points_path else path.with_name(path.stem + "_points.csv")
    with open(path, "w", newline="") as fh, open(points_path, "w", newline="") as ph:
        out, pts = csv.writer(fh), csv.writer(ph)
        out.writerow(["i", "j", "n_points", "length_um"])
        pts.writerow(["i", "j", "index", "x", "y", "z"])
        for s in segments:
            out.writerow([*s.cells, len(s.points), f"{s.length:.6g}"])
            for n, p in enumerate(s.points):
                pts.writerow([*s.cells, n, *(f"{v:.6g}" for v in p)])


def read_junctions_csv(path) -> list[Junction]:
    with open(Path(path), newline="") as fh:
        return [
            Junction((int(r["i"]), int(r["j"]), int(r["k"])), (float(r["x"]), float(r["y"]), float(r["z"])))
            for r in csv.DictReader(fh)
        ]


def read_segments_csv(path, points_path=None, spacing=(1.0, 1.0, 1.0)) -> list[Polyline]:
    path = Path(path)
    points_path = Path(points_path) if points_path else path.with_name(path.stem + "_points.csv")
    pts: dict = {}
    with open(points_path, newline="") as ph:
        for r in csv.DictReader(ph):
            key = (int(r["i"]), int(r["j"]))
            pts.setdefault(key, []).append((int(r["index"]), float(r["x"]), float(r["y"]), float(r["z"])))
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (int(r["i"]), int(r["j"]))
            rows = sorted(pts.get(key, []))
            arr = np.array([p[1:] for p in rows]) if rows else np.empty((0, 3))
            out.append(Polyline(key, arr, float(r["length_um"])))
    return out
