"""Automatic seeding and seeded 3D watershed on a wall-probability map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import h_minima, local_minima

from . import kernels
from .errors import EmptySeeds, GeometryMismatch, InvalidGrid, NoSeedsFound
from .stackio import VoxelGrid

# Seed value reserved for the background; resolved to 0 after flooding.
BACKGROUND_SEED = np.uint32(0xFFFFFFFF)

CUBE = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class SeedParams:
    smooth_sigma: float = 2.0
    h_min: float = 0.1
    border_bg_threshold: float = 0.3

    def __post_init__(self):
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")
        if not 0.0 <= self.h_min <= 1.0:
            raise ValueError("h_min must lie in [0, 1]")
        if not 0.0 <= self.border_bg_threshold <= 1.0:
            raise ValueError("border_bg_threshold must lie in [0, 1]")


def _border_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    for axis in range(3):
        idx = [slice(None)] * 3
        idx[axis] = 0
        mask[tuple(idx)] = True
        idx[axis] = -1
        mask[tuple(idx)] = True
    return mask


def background_mask(smoothed: np.ndarray, threshold: float) -> np.ndarray:
    """Sub-threshold 26-connected components that touch the stack border."""
    if threshold <= 0:
        return np.zeros(smoothed.shape, dtype=bool)
    comps, n = ndi.label(smoothed < threshold, structure=CUBE)
    if n == 0:
        return np.zeros(smoothed.shape, dtype=bool)
    touching = np.unique(comps[_border_mask(comps.shape)])
    touching = touching[touching != 0]
    return np.isin(comps, touching)


def generate_seeds(prob: VoxelGrid, p: SeedParams = SeedParams()) -> VoxelGrid:
    """Seed labels for :func:`run_watershed`.

    Smooths the map, keeps regional minima at least ``h_min`` deep, and
    labels each 26-connected minimum ``1..K``. Low-probability components
    touching the border become one background seed (``BACKGROUND_SEED``).
    """
    data = np.asarray(prob.data, dtype=np.float64)
    if p.smooth_sigma > 0:
        data = ndi.gaussian_filter(data, p.smooth_sigma, mode="nearest")
    if data.max() - data.min() < max(p.h_min, 1e-12):
        raise NoSeedsFound("probability map has no minima deeper than h_min")
    if p.h_min > 0:
        minima = h_minima(data, p.h_min, footprint=CUBE).astype(bool)
    else:
        minima = local_minima(data, footprint=CUBE, allow_borders=True)
    bg = background_mask(data, p.border_bg_threshold)
    seeds, n = ndi.label(minima & ~bg, structure=CUBE)
    if n == 0:
        raise NoSeedsFound("no interior minima survive h-minima suppression")
    seeds = seeds.astype(np.uint32)
    seeds[bg] = BACKGROUND_SEED
    return VoxelGrid(seeds, prob.spacing)


def run_watershed(prob: VoxelGrid, seeds: VoxelGrid, return_levels: bool = False):
    """Priority-flood every voxel from the seeds.

    Voxels pop in ascending flood level (the running maximum of probability
    along the flooding path), ties in (z, y, x) order, so the result is
    reproducible. The background seed is mapped to 0 on output.
    """
    if prob.shape != seeds.shape:
        raise GeometryMismatch(f"probability {prob.shape} vs seeds {seeds.shape}")
    if seeds.data.dtype.kind not in "iu":
        raise InvalidGrid("seeds must be an integer grid")
    labels = np.ascontiguousarray(seeds.data, dtype=np.uint32).copy()
    if not labels.any():
        raise EmptySeeds("seed grid has no nonzero voxel")
    levels = np.zeros(labels.shape, dtype=np.float32)
    data = np.ascontiguousarray(prob.data, dtype=np.float32)
    kernels.priority_flood(data, labels, levels)
    labels[labels == BACKGROUND_SEED] = 0
    out = VoxelGrid(labels, prob.spacing)
    if return_levels:
        return out, levels
    return out
