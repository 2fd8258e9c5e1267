import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from lapse3d.errors import (
    EmptyGroundTruth,
    EmptyGroundTruthGraph,
    EmptyPolyline,
    EmptySequence,
    GeometryMismatch,
    ZeroLengthGroundTruth,
)
from lapse3d.geometry import Junction, Polyline
from lapse3d.metrics import (
    AogmWeights,
    aogm_counts,
    boundary_prf,
    boundary_voxels,
    count_stats,
    endpoint_error,
    f_score,
    frechet,
    junction_error,
    length_metrics,
    match_graph_nodes,
    score_segment,
    tra,
)
from lapse3d.tracking import TrackGraph

label_grids = hnp.arrays(np.uint32, hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=6), elements=st.integers(0, 3))


# ---------------------------------------------------------------- boundaries


@given(label_grids)
def test_boundary_identity(a):
    assert boundary_prf(a, a) == (1.0, 1.0, 1.0)


def test_f_score_table_row():
    assert f_score(0.961, 0.973) == pytest.approx(0.967, abs=0.0005)
    assert f_score(0.0, 0.0) == 0.0


def _prf_reference(gt, pred, tol):
    bg = np.argwhere(boundary_voxels(gt))
    bp = np.argwhere(boundary_voxels(pred))

    def hits(src, dst):
        if len(src) == 0:
            return 1.0
        if len(dst) == 0:
            return 0.0
        d = np.sqrt(((src[:, None] - dst[None]) ** 2).sum(-1)).min(axis=1)
        return float(np.mean(d <= tol))

    if len(bg) == 0 and len(bp) == 0:
        return 1.0, 1.0, 1.0
    p, r = hits(bp, bg), hits(bg, bp)
    return p, r, f_score(p, r)


@given(st.data(), st.sampled_from([0.0, 1.0, 1.5, 2.0, 5.0]))
def test_boundary_prf_brute_force(data, tol):
    shape = data.draw(hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=6))
    gt = data.draw(hnp.arrays(np.uint32, shape, elements=st.integers(0, 3)))
    pred = data.draw(hnp.arrays(np.uint32, shape, elements=st.integers(0, 3)))
    assert boundary_prf(gt, pred, tol) == pytest.approx(_prf_reference(gt, pred, tol))


def test_boundary_shifted_wall():
    gt = np.zeros((4, 10, 10), dtype=np.uint32)
    gt[..., :5] = 1
    gt[..., 5:] = 2
    pred = np.zeros_like(gt)
    pred[..., :8] = 1
    pred[..., 8:] = 2
    assert boundary_prf(gt, pred, 5) == (1.0, 1.0, 1.0)
    p, r, f = boundary_prf(gt, pred, 1)
    assert (p, r, f) == (0.0, 0.0, 0.0)


def test_boundary_shape_mismatch():
    with pytest.raises(GeometryMismatch):
        boundary_prf(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


# ---------------------------------------------------------------- counting


def _frame_with(n):
    a = np.zeros((1, 1, 2 * n + 1), dtype=np.uint32)
    a[0, 0, 1::2] = np.arange(1, n + 1)
    return a


def test_count_stats():
    assert count_stats([_frame_with(23), _frame_with(24)]) == (23.5, 0.5)
    assert count_stats([_frame_with(7)] * 4) == (7.0, 0.0)
    with pytest.raises(EmptySequence):
        count_stats([])


def test_count_stats_synth(small_tissue):
    n = len(np.unique(np.asarray(small_tissue.labels.data))) - 1
    assert count_stats([small_tissue.labels]) == (float(n), 0.0)


# ---------------------------------------------------------------- junctions


def _junctions(pts):
    return [Junction((1, 2, 3), np.asarray(p, dtype=float)) for p in pts]


def test_junction_identity():
    js = _junctions(np.arange(30, dtype=float).reshape(10, 3) * 10)
    assert junction_error(js, js) == (0, 0, 0.0)


def test_junction_one_spurious_one_missed():
    gt = np.arange(30, dtype=float).reshape(10, 3) * 10
    pred = gt.copy()
    pred[0] = (500.0, 500.0, 500.0)
    assert junction_error(_junctions(gt), _junctions(pred)) == (1, 1, pytest.approx(0.2))


def test_junction_jitter_within_tolerance():
    rng = np.random.default_rng(4)
    gt = rng.uniform(0, 200, size=(40, 3))
    gt = gt[np.all(np.linalg.norm(gt[:, None] - gt[None], axis=-1) + 100 * np.eye(len(gt)) > 12, axis=1)]
    jitter = rng.normal(size=gt.shape)
    jitter *= rng.uniform(0, 4.9, size=(len(gt), 1)) / np.linalg.norm(jitter, axis=1, keepdims=True)
    assert junction_error(_junctions(gt), _junctions(gt + jitter), tol=5) == (0, 0, 0.0)


def test_junction_planar_ignores_z():
    gt = _junctions([(0.0, 0.0, 0.0)])
    pred = _junctions([(1.0, 0.0, 9.0)])
    assert junction_error(gt, pred, tol=2) == (1, 1, 2.0)
    assert junction_error(gt, pred, tol=2, planar=True) == (0, 0, 0.0)


def test_junction_empty_gt():
    with pytest.raises(EmptyGroundTruth):
        junction_error([], _junctions([(0.0, 0.0, 0.0)]))


# ---------------------------------------------------------------- segments


def test_endpoint_table_row():
    gt = np.array([[392.7, 216.2, 0.0], [481.8, 203.3, 0.0]])
    det = np.array([[391.0, 215.0, 0.0], [485.0, 203.0, 0.0]])
    es, ee = endpoint_error(gt, det, planar=True)
    assert es == pytest.approx(2.08, abs=0.005)
    assert ee == pytest.approx(3.21, abs=0.005)
    # the table reports these as 2.0 and 3.2
    assert es == pytest.approx(2.0, abs=0.1)
    assert ee == pytest.approx(3.2, abs=0.05)


def test_endpoint_orientation_free():
    gt = np.array([[0.0, 0, 0], [10, 0, 0]])
    assert endpoint_error(gt, gt[::-1]) == (0.0, 0.0)
    assert endpoint_error(gt, gt) == (0.0, 0.0)


def test_empty_polyline():
    with pytest.raises(EmptyPolyline):
        endpoint_error(np.zeros((0, 3)), np.zeros((1, 3)))
    with pytest.raises(EmptyPolyline):
        frechet(np.zeros((1, 3)), np.zeros((0, 3)))


def test_frechet_examples():
    p = np.array([[0.0, 0, 0], [1, 0, 0]])
    q = np.array([[0.0, 1, 0], [1, 1, 0]])
    assert frechet(p, p) == 0.0
    assert frechet(p, q) == 1.0


def _frechet_couplings(a, b):
    """Minimum over all monotone couplings, by explicit enumeration."""
    n, m = len(a), len(b)
    d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    best = np.inf

    def walk(i, j, worst):
        nonlocal best
        worst = max(worst, d[i, j])
        if worst >= best:
            return
        if i == n - 1 and j == m - 1:
            best = worst
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, worst)

    walk(0, 0, 0.0)
    return best


polylines = hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.just(3)), elements=st.floats(-10, 10, width=16))


@given(polylines, polylines)
def test_frechet_matches_exhaustive_couplings(a, b):
    assert frechet(a, b) == _frechet_couplings(a, b)
    assert frechet(a, b) == frechet(b, a)
    ends = max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1]))
    assert frechet(a, b) >= ends


def test_length_table_rows():
    ld, dp = length_metrics(95.1, 93.4)
    assert (round(ld, 1), round(dp, 1)) == (1.7, 1.8)
    ld, dp = length_metrics(101.3, 101.2)
    assert (round(ld, 1), round(dp, 1)) == (0.1, 0.1)
    assert length_metrics(5.0, 5.0) == (0.0, 0.0)
    with pytest.raises(ZeroLengthGroundTruth):
        length_metrics(0.0, 1.0)


def test_score_segment():
    pts = np.array([[0.0, 0, 0], [3, 4, 0]])
    gt = Polyline((1, 2), pts, 5.0)
    s = score_segment(gt, gt)
    assert (s.ede_start, s.ede_end, s.fd, s.ld, s.dp) == (0, 0, 0, 0, 0)


# ---------------------------------------------------------------- tracking


def _chain(n):
    return TrackGraph.from_links([[1]] * n, [[(1, 1)]] * (n - 1))


def test_match_identical_labelings(small_tissue):
    lab = np.asarray(small_tissue.labels.data)
    m = match_graph_nodes([lab], [lab])
    assert m == {(0, int(v)): (0, int(v)) for v in np.unique(lab) if v}


def test_match_needs_majority_overlap():
    gt = np.zeros((1, 1, 10), dtype=np.uint32)
    gt[..., :] = 1
    pred = np.zeros_like(gt)
    pred[..., :4] = 5
    assert match_graph_nodes([gt], [pred]) == {}
    pred[..., :6] = 5
    assert match_graph_nodes([gt], [pred]) == {(0, 1): (0, 5)}


def test_match_exactly_half_is_not_a_match():
    gt = np.ones((1, 1, 10), dtype=np.uint32)
    pred = np.zeros_like(gt)
    pred[..., :5] = 2
    assert match_graph_nodes([gt], [pred]) == {}


@pytest.mark.parametrize("seed", range(5))
def test_match_recovers_relabeling(small_tissue, seed):
    lab = np.asarray(small_tissue.labels.data)
    n = int(lab.max())
    perm = np.concatenate([[0], np.random.default_rng(seed).permutation(n) + 1]).astype(np.uint32)
    m = match_graph_nodes([lab, lab], [lab, perm[lab]])
    assert len(m) == 2 * n
    assert all(m[(1, k)] == (1, int(perm[k])) for k in range(1, n + 1))


def test_match_geometry_mismatch():
    with pytest.raises(GeometryMismatch):
        match_graph_nodes([np.zeros((2, 2, 2))], [])
    with pytest.raises(GeometryMismatch):
        match_graph_nodes([np.zeros((2, 2, 2))], [np.zeros((2, 2, 1))])


def test_tra_identity_and_empty():
    g = _chain(3)
    assert tra(g, g) == 1.0
    assert tra(g, TrackGraph()) == 0.0
    with pytest.raises(EmptyGroundTruthGraph):
        tra(TrackGraph(), g)


def test_tra_missing_second_node():
    gt = _chain(2)
    pred = TrackGraph.from_links([[1], []], [[]])
    c = aogm_counts(gt, pred)
    assert (c.fn, c.ea, c.fp, c.ed, c.ns) == (1, 1, 0, 0, 0)
    assert tra(gt, pred) == pytest.approx(1 - 11.5 / 21.5)
    assert tra(gt, pred) == pytest.approx(0.465, abs=0.0005)


def test_tra_wrong_link_and_split():
    gt = TrackGraph.from_links([[1, 2], [1, 2]], [[(1, 1), (2, 2)]])
    swapped = TrackGraph.from_links([[1, 2], [1, 2]], [[(1, 2), (2, 1)]])
    c = aogm_counts(gt, swapped)
    assert (c.ed, c.ea) == (2, 2)
    # two GT cells covered by one prediction
    merged = TrackGraph.from_links([[1, 2], [1]], [[(1, 1)]])
    c = aogm_counts(gt, merged, {(0, 1): (0, 1), (0, 2): (0, 2), (1, 1): (1, 1), (1, 2): (1, 1)})
    assert c.ns == 1


def test_aogm_weights_validated():
    with pytest.raises(ValueError):
        AogmWeights(fp=-1)


track_graphs = st.lists(st.lists(st.integers(1, 4), unique=True, max_size=4), min_size=1, max_size=4).map(
    lambda labs: TrackGraph.from_links(
        labs, [[(k, k) for k in sorted(set(a) & set(b))] for a, b in zip(labs[:-1], labs[1:])]
    )
)


@given(track_graphs, track_graphs)
def test_tra_bounds(g, h):
    if not g.nodes:
        return
    assert tra(g, g) == 1.0
    assert 0.0 <= tra(g, h) <= 1.0


def test_tra_identity_on_synth_tracks():
    from lapse3d.synth import SynthParams, gen_timelapse

    tl = gen_timelapse(SynthParams(dims=(64, 64, 16), n_cells=6, seed=2, drift=(1.0, 0, 0), n_frames=3))
    frames = [f.labels for f in tl.frames]
    m = match_graph_nodes(frames, frames)
    assert tra(tl.tracks, tl.tracks, matching=m) == 1.0


def test_permutations_of_nodes_do_not_change_counts():
    gt = TrackGraph.from_links([[1, 2, 3], [1, 2, 3]], [[(1, 1), (2, 2), (3, 3)]])
    for perm in itertools.permutations([1, 2, 3]):
        pred = TrackGraph.from_links([list(perm), list(perm)], [[(k, k) for k in perm]])
        assert tra(gt, pred) == 1.0


def test_segment_table_consistent_with_input_rounding():
    # GT coordinates and lengths are printed to 0.1, so each recomputed column
    # may differ from its printed value by the propagated input rounding plus
    # the output rounding, but never more
    import csv
    from pathlib import Path

    with open(Path(__file__).parent / "data" / "segment_table.csv") as fh:
        rows = [{k: (v if k == "segment" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]
    assert len(rows) == 58
    ede_bound = 0.05 + np.hypot(0.05, 0.05)
    for r in rows:
        gt = np.array([[r["gt_start_x"], r["gt_start_y"], 0], [r["gt_end_x"], r["gt_end_y"], 0]])
        det = np.array([[r["det_start_x"], r["det_start_y"], 0], [r["det_end_x"], r["det_end_y"], 0]])
        es, ee = endpoint_error(gt, det, planar=True)
        assert abs(es - r["ede_start"]) <= ede_bound, r["segment"]
        assert abs(ee - r["ede_end"]) <= ede_bound, r["segment"]
        g = r["gt_length"]
        ld, dp = length_metrics(g, r["det_length"])
        assert abs(ld - r["ld"]) <= 0.15, r["segment"]
        dp_bound = 100 * 0.1 / (g - 0.05) + dp * 0.05 / g + 0.05
        assert abs(dp - r["dp"]) <= dp_bound, r["segment"]
