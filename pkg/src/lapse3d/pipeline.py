"""Per-frame segmentation chain shared by the CLI and the test suites:
probability map, seeds, watershed, CRF refinement, label compaction."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .crf import CrfParams, mean_field_refine
from .equivconv import predict_probability
from .stackio import VoxelGrid, compact_labels, intensity_to_probability
from .watershed import SeedParams, generate_seeds, run_watershed

# Pipeline refinement: small kernel weights keep the pairwise term on the scale
# of the unary (at most -log eps ~ 13.8) so it settles ambiguous wall voxels
# instead of growing large regions; band 2 and a unit lattice keep it fast.
PIPELINE_CRF = CrfParams(gamma1=0.01, gamma2=0.01, mode="truncated", band=2, grid_step=1.0)


@dataclass(frozen=True)
class PipelineParams:
    seeds: SeedParams = SeedParams()
    crf: CrfParams | None = PIPELINE_CRF  # None skips refinement
    invert: bool = False  # classical frontend: dark walls
    layers: list | None = field(default=None, repr=False)  # network frontend weights


def probability(image: VoxelGrid, p: PipelineParams = PipelineParams()) -> VoxelGrid:
    if p.layers is not None:
        return predict_probability(intensity_to_probability(image, p.invert), p.layers)
    return intensity_to_probability(image, p.invert)


def segment(image: VoxelGrid, p: PipelineParams = PipelineParams(), timings: dict | None = None) -> VoxelGrid:
    """Label grid for one intensity stack. Stage durations (seconds) are
    stored in ``timings`` when given."""
    clock = {}
    t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        now = time.perf_counter()
        clock[name] = now - t0
        t0 = now

    prob = probability(image, p)
    lap("probability")
    seeds = generate_seeds(prob, p.seeds)
    lap("seeds")
    labels = run_watershed(prob, seeds)
    lap("watershed")
    if p.crf is not None:
        labels = mean_field_refine(prob, labels, p.crf)
        lap("crf")
    out = VoxelGrid(compact_labels(np.asarray(labels.data)).astype(np.uint32), image.spacing)
    lap("compact")
    if timings is not None:
        timings.update(clock)
    return out
