"""Evaluation metrics: boundary F-score, counting, junction and segment
errors, and tracking accuracy via acyclic oriented graph matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from . import kernels
from .errors import (
    EmptyGroundTruth,
    EmptyGroundTruthGraph,
    EmptyPolyline,
    EmptySequence,
    GeometryMismatch,
    ZeroLengthGroundTruth,
)
from .geometry import Polyline
from .stackio import VoxelGrid
from .tracking import TrackGraph

BOUNDARY_TOL = 5.0
JUNCTION_TOL = 5.0


def _arr(x):
    return np.asarray(x.data if isinstance(x, VoxelGrid) else x)


# ---------------------------------------------------------------- boundaries


def boundary_voxels(labels) -> np.ndarray:
    """Voxels with a face neighbour carrying a different label."""
    a = _arr(labels)
    out = np.zeros(a.shape, dtype=bool)
    for ax in range(a.ndim):
        diff = np.diff(a, axis=ax) != 0
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out[tuple(lo)] |= diff
        out[tuple(hi)] |= diff
    return out


def f_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def boundary_prf(gt, pred, tol: float = BOUNDARY_TOL):
    """Boundary precision, recall and F at a Euclidean tolerance in voxels.

    A predicted boundary voxel counts as correct when a ground-truth boundary
    voxel lies within ``tol``; recall swaps the roles. An empty boundary set
    contributes a vacuous 1 to its own ratio.
    """
    g, p = _arr(gt), _arr(pred)
    if g.shape != p.shape:
        raise GeometryMismatch(f"ground truth {g.shape} vs prediction {p.shape}")
    bg, bp = boundary_voxels(g), boundary_voxels(p)
    if not bg.any() and not bp.any():
        return 1.0, 1.0, 1.0
    if not bg.any() or not bp.any():
        precision = 1.0 if not bp.any() else 0.0
        recall = 1.0 if not bg.any() else 0.0
        return precision, recall, f_score(precision, recall)
    to_gt = ndi.distance_transform_edt(~bg)
    to_pred = ndi.distance_transform_edt(~bp)
    precision = float(np.count_nonzero(to_gt[bp] <= tol) / np.count_nonzero(bp))
    recall = float(np.count_nonzero(to_pred[bg] <= tol) / np.count_nonzero(bg))
    return precision, recall, f_score(precision, recall)


# ---------------------------------------------------------------- counting


def count_cells(labels) -> int:
    a = _arr(labels)
    return int(np.count_nonzero(np.unique(a)))


def count_stats(sequence):
    """Mean and population standard deviation of per-frame cell counts."""
    if len(sequence) == 0:
        raise EmptySequence("no frames to count")
    counts = np.array([count_cells(f) for f in sequence], dtype=np.float64)
    return float(counts.mean()), float(counts.std())


# ---------------------------------------------------------------- junctions


def _locations(items, planar):
    pts = np.array([np.asarray(getattr(j, "location", j), dtype=np.float64) for j in items]).reshape(-1, 3)
    return pts[:, :2] if planar else pts


def match_points(gt, pred, tol: float):
    """Greedy nearest matching within ``tol``; returns ``(gt_index, pred_index)`` pairs."""
    if len(gt) == 0 or len(pred) == 0:
        return []
    d = np.sqrt(((gt[:, None, :] - pred[None, :, :]) ** 2).sum(-1))
    gi, pi = np.nonzero(d <= tol)
    order = np.lexsort((pi, gi, d[gi, pi]))
    used_g, used_p, pairs = set(), set(), []
    for k in order:
        a, b = int(gi[k]), int(pi[k])
        if a in used_g or b in used_p:
            continue
        used_g.add(a)
        used_p.add(b)
        pairs.append((a, b))
    return pairs


def junction_error(gt, pred, tol: float = JUNCTION_TOL, planar: bool = False):
    """``(FP, FN, E)`` with ``E = (FP + FN) / |GT|``."""
    if len(gt) == 0:
        raise EmptyGroundTruth("no ground-truth junctions; E is undefined")
    g, p = _locations(gt, planar), _locations(pred, planar)
    m = len(match_points(g, p, tol))
    fp, fn = len(p) - m, len(g) - m
    return fp, fn, (fp + fn) / len(g)


# ---------------------------------------------------------------- segments


def _points(line, planar):
    pts = np.asarray(line.points if isinstance(line, Polyline) else line, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise EmptyPolyline("polyline has no points")
    return pts[:, :2] if planar else pts


def endpoint_error(gt, pred, planar: bool = False):
    """Distances between corresponding endpoints ``(start, end)`` of ``gt``.

    Orientation is chosen to minimise the summed distance.
    """
    g, p = _points(gt, planar), _points(pred, planar)
    gs, ge, ps, pe = g[0], g[-1], p[0], p[-1]
    same = (np.linalg.norm(gs - ps), np.linalg.norm(ge - pe))
    flip = (np.linalg.norm(gs - pe), np.linalg.norm(ge - ps))
    pick = same if sum(same) <= sum(flip) else flip
    return float(pick[0]), float(pick[1])


def frechet(p, q, planar: bool = False) -> float:
    """Discrete Fréchet distance between two polylines."""
    a, b = _points(p, planar), _points(q, planar)
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(kernels.frechet_table(np.ascontiguousarray(dist))[-1, -1])


def _length(x):
    return float(x.length) if isinstance(x, Polyline) else float(x)


def length_metrics(gt, pred):
    """``(LD, DP)``: absolute length difference and its percentage of the GT length."""
    lg, lp = _length(gt), _length(pred)
    if lg <= 0:
        raise ZeroLengthGroundTruth("ground-truth length must be positive")
    ld = abs(lg - lp)
    return ld, 100.0 * ld / lg


@dataclass(frozen=True)
class SegmentScore:
    ede_start: float
    ede_end: float
    fd: float
    ld: float
    dp: float


def score_segment(gt: Polyline, pred: Polyline, planar: bool = False) -> SegmentScore:
    es, ee = endpoint_error(gt, pred, planar)
    ld, dp = length_metrics(gt, pred)
    return SegmentScore(es, ee, frechet(gt, pred, planar), ld, dp)


# ---------------------------------------------------------------- tracking


@dataclass(frozen=True)
class AogmWeights:
    ns: float = 5.0
    fn_: float = 10.0
    fp: float = 1.0
    ed: float = 1.0
    ea: float = 1.5
    ec: float = 1.0

    def __post_init__(self):
        if min(self.ns, self.fn_, self.fp, self.ed, self.ea, self.ec) < 0:
            raise ValueError("AOGM weights must be >= 0")


@dataclass(frozen=True)
class AogmCounts:
    ns: int
    fn: int
    fp: int
    ed: int
    ea: int
    ec: int

    def cost(self, w: AogmWeights) -> float:
        return (
            w.ns * self.ns + w.fn_ * self.fn + w.fp * self.fp + w.ed * self.ed + w.ea * self.ea + w.ec * self.ec
        )


def match_graph_nodes(gt_frames, pred_frames) -> dict:
    """GT node ``(t, g)`` -> predicted node ``(t, p)`` when ``p`` covers more
    than half of ``g``'s voxels."""
    if len(gt_frames) != len(pred_frames):
        raise GeometryMismatch("ground truth and prediction differ in frame count")
    out = {}
    for t, (g, p) in enumerate(zip(gt_frames, pred_frames)):
        ga, pa = _arr(g), _arr(p)
        if ga.shape != pa.shape:
            raise GeometryMismatch(f"frame {t}: {ga.shape} vs {pa.shape}")
        fg = ga.ravel().astype(np.int64)
        fp = pa.ravel().astype(np.int64)
        inside = fg != 0
        sizes = np.bincount(fg[inside])
        pair = fg[inside] * (int(fp.max()) + 1) + fp[inside]
        keys, counts = np.unique(pair, return_counts=True)
        gl, pl = np.divmod(keys, int(fp.max()) + 1)
        for a, b, c in zip(gl.tolist(), pl.tolist(), counts.tolist()):
            if b != 0 and 2 * c > sizes[a]:
                out[(t, a)] = (t, b)
    return out


def aogm_counts(gt: TrackGraph, pred: TrackGraph, matching: dict | None = None) -> AogmCounts:
    """Edit operations turning ``pred`` into ``gt`` given the node matching.

    Without a matching, nodes with identical ``(frame, label)`` keys match.
    """
    if matching is None:
        matching = {n: n for n in gt.nodes if n in pred.nodes}
    inverse: dict = {}
    for g, p in matching.items():
        inverse.setdefault(p, []).append(g)
    fn = sum(1 for n in gt.nodes if n not in matching)
    fp = sum(1 for n in pred.nodes if n not in inverse)
    ns = sum(len(v) - 1 for v in inverse.values())
    ea = 0
    for a, b in gt.edges:
        pa, pb = matching.get(a), matching.get(b)
        if pa is None or pb is None or (pa, pb) not in pred.edges:
            ea += 1
    ed = 0
    for a, b in pred.edges:
        ga, gb = inverse.get(a, ()), inverse.get(b, ())
        if not any((x, y) in gt.edges for x in ga for y in gb):
            ed += 1
    # no divisions are modelled, so every kept edge has the right semantics
    return AogmCounts(ns, fn, fp, ed, ea, 0)


def aogm(gt: TrackGraph, pred: TrackGraph, w: AogmWeights = AogmWeights(), matching=None) -> float:
    return aogm_counts(gt, pred, matching).cost(w)


def tra(gt: TrackGraph, pred: TrackGraph, w: AogmWeights = AogmWeights(), matching=None) -> float:
    """``1 - min(AOGM, AOGM0) / AOGM0`` where AOGM0 builds ``gt`` from nothing."""
    if len(gt.nodes) == 0:
        raise EmptyGroundTruthGraph("ground-truth track graph has no nodes")
    a0 = w.fn_ * len(gt.nodes) + w.ea * len(gt.edges)
    if a0 == 0:
        raise EmptyGroundTruthGraph("AOGM0 is zero under these weights")
    return 1.0 - min(aogm(gt, pred, w, matching), a0) / a0
