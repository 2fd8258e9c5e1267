"""Synthetic ground truth: single-layer Voronoi tissues and time-lapses.

A tissue is one layer of columnar cells: a 2D Voronoi partition computed in
physical x-y units (so anisotropic spacing is honoured) and extruded through
a z slab. A jittered ring of background generators closes the partition, so
the outer tissue boundary is made of ordinary bisectors at varied angles; it
then grows as smoothly as the interior walls when a time-lapse scales the
tissue, instead of jumping a voxel at a time like an axis-aligned face.
Bright walls enclose every cell, including the outer boundary and the slab
caps. Because the walls are vertical, the true three-cell junctions and wall
segments are exact: Voronoi vertices and Voronoi edges, placed at the slab's
mid-plane.

Random numbers come from numpy's counter-based Philox generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .errors import SeedsTooCrowded
from .geometry import Junction, Polyline
from .stackio import VoxelGrid
from .tracking import TrackGraph


@dataclass(frozen=True)
class SynthParams:
    dims: tuple[int, int, int] = (96, 96, 96)  # (nx, ny, nz)
    n_cells: int = 25
    seed: int = 0
    wall_width: float = 3.0  # voxels along x
    noise_sigma: float = 0.0  # fraction of the intensity range
    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)  # voxels per frame
    growth: float = 1.0  # per-frame cell volume factor
    n_frames: int = 1
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    margin: int | None = None  # background voxels around the tissue; default 2*wall_width
    relax: int = 2  # Lloyd iterations after dart throwing
    min_edge: float | None = None  # shortest allowed wall, voxels; default 2*wall_width

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if self.wall_width < 1:
            raise ValueError("wall_width must be >= 1")
        if not 0.0 <= self.noise_sigma <= 1.0:
            raise ValueError("noise_sigma must lie in [0, 1]")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.growth <= 0:
            raise ValueError("growth must be positive")

    @property
    def margin_vox(self) -> int:
        return int(self.margin) if self.margin is not None else int(round(2 * self.wall_width))

    @property
    def min_edge_vox(self) -> float:
        return float(self.min_edge) if self.min_edge is not None else 2.0 * self.wall_width


@dataclass(eq=False)
class Tissue:
    labels: VoxelGrid
    membrane: VoxelGrid
    junctions: list[Junction]
    segments: list[Polyline]
    generators: np.ndarray = field(repr=False)  # (n, 2) physical x, y
    ring: np.ndarray = field(default=None, repr=False)  # background generators


@dataclass(eq=False)
class Timelapse:
    frames: list[Tissue]
    images: list[VoxelGrid]
    tracks: TrackGraph


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _outline(p: SynthParams):
    """Physical x-y rectangle the tissue outline follows at frame 0.

    The rectangle leaves room for the whole sequence: it is pulled in on the
    sides the tissue drifts towards and shrunk so the last frame's growth
    still fits inside the margins.
    """
    m = p.margin_vox
    sp = np.asarray(p.spacing[:2], dtype=np.float64)
    total = np.asarray(p.drift[:2], dtype=np.float64) * (p.n_frames - 1)
    lo = m + np.maximum(0.0, -total)
    hi = np.asarray(p.dims[:2], dtype=np.float64) - 1 - m - np.maximum(0.0, total)
    grow = max(1.0, p.growth ** (0.5 * (p.n_frames - 1)))
    centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo) / grow
    return (centre - half) * sp, (centre + half) * sp


def _slab(p: SynthParams, t: int):
    """z extent of the slab in frame t, as voxel-face coordinates."""
    m = p.margin_vox
    total = p.drift[2] * (p.n_frames - 1)
    dz = p.drift[2] * t
    return m - 0.5 + max(0.0, -total) + dz, p.dims[2] - m - 0.5 - max(0.0, total) + dz


def _typical_spacing(lo, hi, n):
    return float(np.sqrt(np.prod(hi - lo) / max(n, 1)))


def _make_ring(rng, lo, hi, s):
    """Background generators along the rectangle ``[lo, hi]``, jittered."""
    w, h = hi - lo
    perim = 2.0 * (w + h)
    count = max(8, int(np.ceil(perim / (0.8 * s))))
    gap = perim / count
    arc = (rng.random() + np.arange(count)) * gap + rng.uniform(-0.2, 0.2, count) * gap
    arc = np.mod(arc, perim)
    normal_jitter = rng.uniform(-0.1, 0.1, count) * s
    pts = np.empty((count, 2))
    for k, a in enumerate(arc):
        if a < w:
            pts[k] = (lo[0] + a, lo[1] - normal_jitter[k])
        elif a < w + h:
            pts[k] = (hi[0] + normal_jitter[k], lo[1] + a - w)
        elif a < 2 * w + h:
            pts[k] = (hi[0] - (a - w - h), hi[1] + normal_jitter[k])
        else:
            pts[k] = (lo[0] - normal_jitter[k], hi[1] - (a - 2 * w - h))
    return pts


def _voronoi_parts(cells, ring):
    """Voronoi of cells plus ring.

    Returns ``(vertices, ridges, outer, vertex_cells, vor)``: ``ridges`` are
    ``(i, j, v0, v1)`` between two cells, ``outer`` are ``(i, v0, v1)``
    between cell ``i`` and the background, and ``vertex_cells`` maps a vertex
    to the generator indices meeting there (ring indices are ``>= n``).
    """
    n = len(cells)
    vor = Voronoi(np.concatenate([cells, ring]))
    vertex_cells: dict[int, set] = {}
    ridges, outer = [], []
    for (a, b), verts in zip(vor.ridge_points, vor.ridge_vertices):
        a, b = sorted((int(a), int(b)))
        if a >= n:
            continue
        if -1 in verts:
            # a cell ridge escaping to infinity means the ring failed to close it
            outer.append((a, -1, -1))
            continue
        for v in verts:
            vertex_cells.setdefault(v, set()).update((a, b))
        if b < n:
            ridges.append((a, b, verts[0], verts[1]))
        else:
            outer.append((a, verts[0], verts[1]))
    return vor.vertices, ridges, outer, vertex_cells, vor


def _lloyd(cells, ring, lo, hi, iterations):
    n = len(cells)
    for _ in range(iterations):
        vor = Voronoi(np.concatenate([cells, ring]))
        new = cells.copy()
        for i in range(n):
            region = vor.regions[vor.point_region[i]]
            if -1 in region or len(region) < 3:
                continue
            poly = vor.vertices[region]
            c = poly.mean(axis=0)
            order = np.argsort(np.arctan2(poly[:, 1] - c[1], poly[:, 0] - c[0]))
            poly = poly[order]
            xs, ys = poly[:, 0], poly[:, 1]
            xn, yn = np.roll(xs, -1), np.roll(ys, -1)
            cross = xs * yn - xn * ys
            area = cross.sum() / 2
            if abs(area) < 1e-12:
                continue
            new[i] = [((xs + xn) * cross).sum() / (6 * area), ((ys + yn) * cross).sum() / (6 * area)]
        cells = np.clip(new, lo, hi)
    return cells


def _throw_darts(rng, n, lo, hi, min_sep, attempts_per_cell=2000):
    pts = []
    budget = attempts_per_cell * n
    while len(pts) < n and budget > 0:
        budget -= 1
        cand = lo + rng.random(2) * (hi - lo)
        if all(np.hypot(*(cand - q)) >= min_sep for q in pts):
            pts.append(cand)
    if len(pts) < n:
        raise SeedsTooCrowded(
            f"cannot place {n} generators with separation {min_sep:.2f} µm in the tissue footprint"
        )
    return np.array(pts)


def _edge_deficit(cells, ring, min_edge_um):
    """Total shortfall of walls below ``min_edge_um``, plus the cells around
    the shortest one.

    Walls between two cells count individually. A cell's contact with the
    background counts as one wall: when it is short, the cells on either
    side nearly touch along the outline.
    """
    n = len(cells)
    if n < 2:
        return 0.0, ()
    verts, ridges, outer, vertex_cells, _ = _voronoi_parts(cells, ring)
    deficit, worst, worst_len = 0.0, (), np.inf

    def near(vs):
        return tuple(sorted({c for v in vs for c in vertex_cells.get(v, ()) if c < n}))

    for i, j, v0, v1 in ridges:
        length = float(np.hypot(*(verts[v0] - verts[v1])))
        deficit += max(0.0, min_edge_um - length)
        if length < worst_len:
            worst_len, worst = length, near((v0, v1))
    contact: dict[int, float] = {}
    touching: dict[int, set] = {}
    for i, v0, v1 in outer:
        if v0 < 0:
            return np.inf, (i,)
        contact[i] = contact.get(i, 0.0) + float(np.hypot(*(verts[v0] - verts[v1])))
        touching.setdefault(i, set()).update((v0, v1))
    for i, length in contact.items():
        deficit += max(0.0, min_edge_um - length)
        if length < worst_len:
            worst_len, worst = length, near(touching[i])
    return deficit, worst


def _spread_edges(rng, cells, ring, lo, hi, min_sep, min_edge_um, steps=3000):
    """Local search that nudges cell generators until every wall is at least
    ``min_edge_um`` long. Returns ``None`` on failure."""
    score, worst = _edge_deficit(cells, ring, min_edge_um)
    step = 0.25 * min_sep
    for _ in range(steps):
        if score == 0.0:
            return cells
        k = worst[int(rng.integers(len(worst)))]
        trial = cells.copy()
        trial[k] = np.clip(trial[k] + rng.normal(0.0, step, 2), lo, hi)
        sep = np.hypot(*(np.delete(trial, k, axis=0) - trial[k]).T)
        if sep.size and sep.min() < min_sep:
            continue
        s, w = _edge_deficit(trial, ring, min_edge_um)
        if s < score:
            cells, score, worst = trial, s, w
    return cells if score == 0.0 else None


def place_generators(p: SynthParams):
    """Cell and ring generators (physical x, y) at frame 0, deterministic in ``p.seed``."""
    lo, hi = _outline(p)
    if np.any(hi <= lo):
        raise SeedsTooCrowded("tissue footprint is empty; margin too large for dims")
    s = _typical_spacing(lo, hi, p.n_cells)
    min_sep = 3.0 * p.wall_width * p.spacing[0]
    # keep cells off the ring so the outer cells are not slivers
    inset = np.minimum(max(0.5 * s, min_sep), 0.45 * (hi - lo))
    clo, chi = lo + inset, hi - inset
    rng = _rng(p.seed)
    for _ in range(50):
        ring = _make_ring(rng, lo, hi, s)
        cells = _throw_darts(rng, p.n_cells, clo, chi, min_sep)
        cells = _lloyd(cells, ring, clo, chi, p.relax)
        cells = _spread_edges(rng, cells, ring, clo, chi, min_sep, p.min_edge_vox * p.spacing[0])
        if cells is not None:
            return cells, ring
    raise SeedsTooCrowded("no generator layout satisfies the minimum wall length")


def _frame_points(p: SynthParams, pts: np.ndarray, t: int) -> np.ndarray:
    """Generators of frame t: scaled about the outline centre, then drifted."""
    lo, hi = _outline(p)
    centre = 0.5 * (lo + hi)
    lin = p.growth ** (0.5 * t)  # columnar cells: volume scales with footprint
    shift = np.asarray(p.drift[:2], dtype=np.float64) * t * np.asarray(p.spacing[:2])
    return centre + lin * (pts - centre) + shift


def render(p: SynthParams, cells: np.ndarray, ring: np.ndarray, t: int = 0) -> Tissue:
    """Rasterise labels and membrane for frame t; also emit exact junctions
    and segments."""
    nx, ny, nz = p.dims
    sx, sy, _ = p.spacing
    n = len(cells)
    half_wall = 0.5 * p.wall_width
    gens = np.concatenate([cells, ring])

    iy, ix = np.mgrid[0:ny, 0:nx]
    pts = np.column_stack([(ix * sx).ravel(), (iy * sy).ravel()])
    k = min(len(gens), 4)
    dist, idx = cKDTree(gens).query(pts, k=k)
    nearest = idx[:, 0]
    label2d = np.where(nearest < n, nearest + 1, 0).reshape(ny, nx).astype(np.uint32)
    g1 = gens[nearest]
    wall_um = np.full(len(pts), np.inf)
    for c in range(1, k):
        other = idx[:, c]
        gc = gens[other]
        sep = np.hypot(*(gc - g1).T)
        bis = (dist[:, c] ** 2 - dist[:, 0] ** 2) / (2.0 * np.maximum(sep, 1e-12))
        # background-background bisectors are not walls
        bis = np.where((nearest < n) | (other < n), bis, np.inf)
        wall_um = np.minimum(wall_um, bis)
    wall2d = (wall_um < half_wall * sx).reshape(ny, nx)

    zlo, zhi = _slab(p, t)
    z = np.arange(nz, dtype=np.float64)
    in_z = (z > zlo) & (z < zhi)
    cap_z = (np.abs(z - zlo) < half_wall) | (np.abs(z - zhi) < half_wall)

    labels = np.zeros((nz, ny, nx), dtype=np.uint32)
    labels[in_z] = label2d
    membrane = np.zeros((nz, ny, nx), dtype=np.float32)
    membrane[in_z] = wall2d.astype(np.float32)
    cap = ((label2d > 0) | wall2d).astype(np.float32)
    membrane[cap_z] = np.maximum(membrane[cap_z], cap)

    junctions, segments = [], []
    zc = 0.5 * (zlo + zhi)
    verts, ridges, _, vertex_cells, _ = _voronoi_parts(cells, ring)
    for v, owners in sorted(vertex_cells.items()):
        if len(owners) == 3 and all(c < n for c in owners):
            vx, vy = verts[v]
            junctions.append(Junction(tuple(c + 1 for c in owners), (vx / sx, vy / sy, zc)))
    for i, j, v0, v1 in ridges:
        a, b = verts[v0], verts[v1]
        pts3 = np.array([[a[0] / sx, a[1] / sy, zc], [b[0] / sx, b[1] / sy, zc]])
        segments.append(Polyline((i + 1, j + 1), pts3, float(np.hypot(*(a - b)))))
    segments.sort(key=lambda s: s.cells)
    return Tissue(
        VoxelGrid(labels, p.spacing),
        VoxelGrid(membrane, p.spacing),
        junctions,
        segments,
        cells,
        ring,
    )


def gen_tissue(p: SynthParams) -> Tissue:
    """Frame-0 tissue: GT labels, clean membrane render, junctions, segments."""
    cells, ring = place_generators(p)
    return render(p, cells, ring, 0)


def add_noise(image: VoxelGrid, sigma: float, seed: int = 0) -> VoxelGrid:
    """Additive Gaussian noise with std ``sigma`` times the dtype range,
    clipped back into range (``[0, 1]`` for float images)."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    data = np.asarray(image.data)
    if sigma == 0:
        return VoxelGrid(data.copy(), image.spacing)
    rng = _rng(seed)
    if data.dtype.kind == "f":
        top = 1.0
    else:
        top = float(np.iinfo(data.dtype).max)
    noisy = data.astype(np.float64) + rng.normal(0.0, sigma * top, size=data.shape)
    np.clip(noisy, 0.0, top, out=noisy)
    if data.dtype.kind != "f":
        noisy = np.rint(noisy)
    return VoxelGrid(noisy.astype(data.dtype), image.spacing)


def gen_timelapse(p: SynthParams) -> Timelapse:
    """Frames with cumulative drift and growth applied to the generators.

    Cell ``k`` keeps label ``k`` in every frame, so GT tracks are the
    identity chains over labels present in consecutive frames.
    """
    cells0, ring0 = place_generators(p)
    frames, images = [], []
    for t in range(p.n_frames):
        tissue = render(p, _frame_points(p, cells0, t), _frame_points(p, ring0, t), t)
        frames.append(tissue)
        images.append(add_noise(tissue.membrane, p.noise_sigma, seed=p.seed * 1000003 + t + 1))
    return Timelapse(frames, images, TrackGraph.from_label_sequence([f.labels for f in frames]))


def with_frames(p: SynthParams, n_frames: int) -> SynthParams:
    return replace(p, n_frames=n_frames)
