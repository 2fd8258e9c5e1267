import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lapse3d.errors import EmptySeeds, GeometryMismatch, NoSeedsFound
from lapse3d.stackio import VoxelGrid, intensity_to_probability
from lapse3d.synth import SynthParams, gen_tissue
from lapse3d.watershed import BACKGROUND_SEED, SeedParams, generate_seeds, run_watershed

FLAT = SeedParams(smooth_sigma=0.0, h_min=0.1, border_bg_threshold=0.0)


def _two_wells(n=16):
    x = np.arange(n)
    row = np.minimum(np.abs(x - 3), np.abs(x - (n - 4))) / 4.0
    row[n // 2 - 1 : n // 2 + 1] = 1.0  # ridge
    return VoxelGrid(np.broadcast_to(np.clip(row, 0, 1), (4, 4, n)).astype(np.float32).copy())


def test_two_wells_two_seeds():
    seeds = generate_seeds(_two_wells(), FLAT).data
    assert set(np.unique(seeds)) == {0, 1, 2}


def test_constant_map_has_no_seeds():
    with pytest.raises(NoSeedsFound):
        generate_seeds(VoxelGrid(np.full((5, 5, 5), 0.4, np.float32)))


def test_border_background_seed(small_tissue):
    seeds = generate_seeds(intensity_to_probability(small_tissue.membrane)).data
    assert np.any(seeds == BACKGROUND_SEED)
    assert seeds[0, 0, 0] == BACKGROUND_SEED


def test_seed_count_on_random_tissues():
    hits = 0
    for k in range(100):
        n = 6 + k % 6
        t = gen_tissue(SynthParams(dims=(64, 64, 24), n_cells=n, seed=1000 + k))
        seeds = generate_seeds(intensity_to_probability(t.membrane)).data
        interior = len(np.unique(seeds[(seeds != 0) & (seeds != BACKGROUND_SEED)]))
        hits += interior == n and np.any(seeds == BACKGROUND_SEED)
    assert hits >= 95


def test_single_seed_floods_everything(rng):
    prob = VoxelGrid(rng.random((6, 7, 8)).astype(np.float32))
    seeds = np.zeros((6, 7, 8), np.uint32)
    seeds[3, 3, 3] = 5
    assert np.all(run_watershed(prob, VoxelGrid(seeds)).data == 5)


def test_symmetric_seeds_split_at_ridge():
    n = 15
    prob = np.zeros((5, 5, n), np.float32)
    prob[..., n // 2] = 1.0
    seeds = np.zeros(prob.shape, np.uint32)
    seeds[2, 2, 0], seeds[2, 2, -1] = 1, 2
    out = run_watershed(VoxelGrid(prob), VoxelGrid(seeds)).data
    left = np.count_nonzero(out == 1)
    right = np.count_nonzero(out == 2)
    assert abs(left - right) <= 25  # one 5x5 layer at the tie
    assert np.all(out[..., : n // 2] == 1) and np.all(out[..., n // 2 + 1 :] == 2)


def test_background_seed_maps_to_zero():
    prob = np.zeros((3, 3, 6), np.float32)
    seeds = np.zeros(prob.shape, np.uint32)
    seeds[1, 1, 0] = BACKGROUND_SEED
    seeds[1, 1, 5] = 1
    out = run_watershed(VoxelGrid(prob), VoxelGrid(seeds)).data
    assert set(np.unique(out)) == {0, 1}


def test_errors():
    prob = VoxelGrid(np.zeros((3, 3, 3), np.float32))
    with pytest.raises(GeometryMismatch):
        run_watershed(prob, VoxelGrid(np.ones((3, 3, 4), np.uint32)))
    with pytest.raises(EmptySeeds):
        run_watershed(prob, VoxelGrid(np.zeros((3, 3, 3), np.uint32)))


_OFF = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)]


def _bottleneck(prob, sources):
    """Minimax path level from ``sources`` by plain relaxation to a fixed point."""
    level = np.where(sources, prob, np.inf)
    pad = np.pad(level, 1, constant_values=np.inf)
    while True:
        best = np.full(prob.shape, np.inf)
        for dz, dy, dx in _OFF:
            nz, ny, nx = prob.shape
            best = np.minimum(best, pad[1 + dz : 1 + dz + nz, 1 + dy : 1 + dy + ny, 1 + dx : 1 + dx + nx])
        new = np.where(sources, prob, np.maximum(prob, best))
        new = np.minimum(new, level)
        if np.array_equal(new, level):
            return level
        level = new
        pad[1:-1, 1:-1, 1:-1] = level


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(3, 10), st.integers(1, 4))
def test_flood_matches_bottleneck_oracle(seed, n, k):
    rng = np.random.default_rng(seed)
    prob = (rng.integers(0, 5, size=(n, n, n)) / 4).astype(np.float32)
    seeds = np.zeros(prob.shape, np.uint32)
    for lab, (z, y, x) in enumerate(rng.integers(0, n, size=(k, 3)), start=1):
        seeds[z, y, x] = lab
    labels, levels = run_watershed(VoxelGrid(prob), VoxelGrid(seeds), return_levels=True)
    p64 = prob.astype(np.float64)
    overall = _bottleneck(p64, seeds != 0)
    assert np.array_equal(levels, overall.astype(np.float32))
    # each voxel carries a label that reaches it at the optimal level
    for lab in np.unique(seeds[seeds != 0]):
        own = _bottleneck(p64, seeds == lab)
        mine = labels.data == lab
        assert np.all(own[mine] == overall[mine])


def _ious(gt, out, keep=None):
    keep = np.ones(gt.shape, bool) if keep is None else keep
    ious = []
    for g in np.unique(gt[gt != 0]):
        m = (gt == g) & keep
        pm = (out == np.bincount(out[m]).argmax()) & keep
        ious.append(np.count_nonzero(m & pm) / np.count_nonzero(m | pm))
    return np.array(ious)


def _flood_tissue(tissue):
    prob = intensity_to_probability(tissue.membrane)
    return run_watershed(prob, generate_seeds(prob)).data


@pytest.mark.xfail(
    strict=True,
    reason="lexicographic tie-break hands each flat 3-voxel wall plateau to one side; mean IoU ~0.91",
)
def test_iou_on_clean_render(tissue25):
    gt = np.asarray(tissue25.labels.data)
    assert _ious(gt, _flood_tissue(tissue25)).mean() >= 0.95


def test_iou_loss_is_confined_to_wall_plateaus(tissue25):
    gt = np.asarray(tissue25.labels.data)
    out = _flood_tissue(tissue25)
    off_wall = tissue25.membrane.data < 0.5
    assert np.all(_ious(gt, out, off_wall) == 1.0)
