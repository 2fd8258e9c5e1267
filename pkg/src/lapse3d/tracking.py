"""Cell tracking from size and neighbourhood features.

Each cell is summarised by its physical volume ``S``, its number of
touching neighbours ``deg`` and its weighted degree ``wdeg``. Consecutive
frames are linked greedily by ascending dissimilarity, and links chain
cells into tracks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cellgraph import AdjacencyGraph, build_adjacency
from .errors import EmptySequence
from .stackio import VoxelGrid

DEFAULT_THRESHOLD = 0.3


@dataclass(frozen=True)
class CellRecord:
    frame: int
    label: int
    S: float
    deg: int
    wdeg: float
    isolated: bool = False

    def __post_init__(self):
        if self.S <= 0:
            raise ValueError("S must be positive")
        if self.deg < 0:
            raise ValueError("deg must be >= 0")
        if self.deg >= 1 and self.wdeg < 1:
            raise ValueError("wdeg must be >= 1 when deg >= 1")


def track_features(labels: VoxelGrid, g: AdjacencyGraph | None = None, spacing=None, frame: int = 0):
    """One :class:`CellRecord` per cell, sorted by label.

    Isolated cells (no touching neighbour) get ``deg = 0``, ``wdeg = 0`` and
    ``isolated = True``.
    """
    data = np.asarray(labels.data)
    if spacing is None:
        spacing = labels.spacing
    if g is None:
        g = build_adjacency(labels)
    vox = float(np.prod(spacing))
    counts = np.bincount(data.ravel().astype(np.int64))
    out = []
    for lab in g.vertices:
        d = g.deg(lab)
        wd = g.weight_sum(lab) / d if d else 0.0
        out.append(CellRecord(frame, lab, float(counts[lab]) * vox, d, wd, d == 0))
    return out


def similarity(a: CellRecord, b: CellRecord) -> float:
    """Dissimilarity of ``b`` (frame t+1) to ``a`` (frame t), normalised by ``a``.

    A zero denominator falls back to the plain absolute difference.
    """
    return float(
        _rel(a.S, b.S) + _rel(a.deg, b.deg) + _rel(a.wdeg, b.wdeg)
    )


def _rel(x, y):
    diff = abs(x - y)
    return diff / x if x > 0 else diff


def _sim_matrix(prev, nxt):
    def cols(recs):
        return [np.array([getattr(r, f) for r in recs], dtype=np.float64) for f in ("S", "deg", "wdeg")]

    total = np.zeros((len(prev), len(nxt)))
    for a, b in zip(cols(prev), cols(nxt)):
        diff = np.abs(a[:, None] - b[None, :])
        den = np.where(a > 0, a, 1.0)[:, None]
        total += diff / den
    return total


def link_frames(prev, nxt, threshold: float = DEFAULT_THRESHOLD) -> list[tuple[int, int]]:
    """Greedy global matching between two frames' records.

    Pairs are taken in ascending ``(sim, prev label, next label)`` order while
    ``sim <= threshold``; each label is used at most once.
    """
    if not prev or not nxt:
        return []
    sims = _sim_matrix(prev, nxt)
    pl = np.array([r.label for r in prev])
    nl = np.array([r.label for r in nxt])
    ii, jj = np.nonzero(sims <= threshold)
    order = np.lexsort((nl[jj], pl[ii], sims[ii, jj]))
    used_p, used_n, links = set(), set(), []
    for k in order:
        a, b = int(pl[ii[k]]), int(nl[jj[k]])
        if a in used_p or b in used_n:
            continue
        used_p.add(a)
        used_n.add(b)
        links.append((a, b))
    return sorted(links)


@dataclass
class TrackGraph:
    """Nodes are ``(frame, label)``; edges join linked nodes in frames t and t+1."""

    nodes: dict = field(default_factory=dict)  # (frame, label) -> CellRecord | None
    edges: set = field(default_factory=set)  # {((t, a), (t + 1, b))}
    track_id: dict = field(default_factory=dict)  # (frame, label) -> int

    @property
    def n_frames(self) -> int:
        return 1 + max((t for t, _ in self.nodes), default=-1)

    def frame_nodes(self, t: int) -> list[tuple[int, int]]:
        return sorted(n for n in self.nodes if n[0] == t)

    def predecessor(self, node):
        for a, b in self.edges:
            if b == node:
                return a
        return None

    def tracks(self) -> dict[int, list]:
        out: dict[int, list] = {}
        for node in sorted(self.nodes):
            out.setdefault(self.track_id[node], []).append(node)
        return out

    def validate(self) -> None:
        outs, ins = {}, {}
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge {a}->{b} references a missing node")
            if b[0] != a[0] + 1:
                raise ValueError(f"edge {a}->{b} skips frames")
            outs[a] = outs.get(a, 0) + 1
            ins[b] = ins.get(b, 0) + 1
        if any(v > 1 for v in outs.values()) or any(v > 1 for v in ins.values()):
            raise ValueError("a node has more than one link in one direction")
        if set(self.track_id) != set(self.nodes):
            raise ValueError("track ids do not cover the nodes")
        for a, b in self.edges:
            if self.track_id[a] != self.track_id[b]:
                raise ValueError("linked nodes carry different track ids")

    @classmethod
    def from_links(cls, frames_nodes, links, records=None) -> "TrackGraph":
        """Assemble from per-frame label lists and per-pair link lists.

        Frame-0 cells get ids in label order; a linked cell inherits its
        predecessor's id; every other cell opens a new track.
        """
        g = cls()
        for t, labs in enumerate(frames_nodes):
            for lab in sorted(int(x) for x in labs):
                g.nodes[(t, lab)] = None if records is None else records[t][lab]
        next_id = 1
        for t, labs in enumerate(frames_nodes):
            back = {}
            if t > 0:
                for a, b in links[t - 1]:
                    g.edges.add(((t - 1, int(a)), (t, int(b))))
                    back[int(b)] = int(a)
            for lab in sorted(int(x) for x in labs):
                if lab in back:
                    g.track_id[(t, lab)] = g.track_id[(t - 1, back[lab])]
                else:
                    g.track_id[(t, lab)] = next_id
                    next_id += 1
        return g

    @classmethod
    def from_label_sequence(cls, frames) -> "TrackGraph":
        """Identity tracks: label ``k`` in frame t links to label ``k`` in t+1."""
        labs = [[int(v) for v in np.unique(np.asarray(f.data if isinstance(f, VoxelGrid) else f)) if v] for f in frames]
        links = [sorted(set(a) & set(b)) for a, b in zip(labs[:-1], labs[1:])]
        return cls.from_links(labs, [[(k, k) for k in ln] for ln in links])


def build_tracks(sequence, threshold: float = DEFAULT_THRESHOLD, max_d: int = 10) -> TrackGraph:
    """Track cells through ``sequence`` of ``labels`` or ``(labels, graph)`` items."""
    if len(sequence) == 0:
        raise EmptySequence("no frames to track")
    recs = []
    for t, item in enumerate(sequence):
        if isinstance(item, tuple):
            labels, g = item
        else:
            labels, g = item, None
        if g is None:
            g = build_adjacency(labels, max_d)
        recs.append(track_features(labels, g, frame=t))
    links = [link_frames(a, b, threshold) for a, b in zip(recs[:-1], recs[1:])]
    by_label = [{r.label: r for r in rs} for rs in recs]
    return TrackGraph.from_links([[r.label for r in rs] for rs in recs], links, by_label)


def write_tracks_csv(tg: TrackGraph, path) -> None:
    back = {b: a for a, b in tg.edges}
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "label", "track_id", "S", "deg", "wdeg", "matched_prev_label"])
        for node in sorted(tg.nodes):
            r = tg.nodes[node]
            prev = back.get(node)
            row = [node[0], node[1], tg.track_id[node]]
            row += [f"{r.S:.6g}", r.deg, f"{r.wdeg:.6g}"] if r is not None else ["", "", ""]
            row.append(prev[1] if prev else "")
            out.writerow(row)


def read_tracks_csv(path) -> TrackGraph:
    """Inverse of :func:`write_tracks_csv`; records are restored when present."""
    g = TrackGraph()
    prev = {}
    with open(Path(path), newline="") as fh:
        for r in csv.DictReader(fh):
            node = (int(r["frame"]), int(r["label"]))
            rec = None
            if r["S"]:
                deg = int(r["deg"])
                rec = CellRecord(node[0], node[1], float(r["S"]), deg, float(r["wdeg"]), deg == 0)
            g.nodes[node] = rec
            g.track_id[node] = int(r["track_id"])
            if r["matched_prev_label"]:
                prev[node] = (node[0] - 1, int(r["matched_prev_label"]))
    g.edges = {(a, b) for b, a in prev.items()}
    return g
