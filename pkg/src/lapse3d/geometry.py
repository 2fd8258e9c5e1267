"""Small value types shared by feature extraction, synthesis and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Junction:
    """Meeting point of three cell walls.

    ``cells`` is the sorted label triple; ``location`` is ``(x, y, z)`` in
    voxel units (fractional allowed).
    """

    cells: tuple[int, int, int]
    location: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(sorted(int(c) for c in self.cells)))
        object.__setattr__(self, "location", np.asarray(self.location, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered ``(x, y, z)`` voxel-coordinate points along a wall segment.

    ``length`` is in micrometres.
    """

    cells: tuple[int, int]
    points: np.ndarray
    length: float

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(sorted(int(c) for c in self.cells)))
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "length", float(self.length))

    @classmethod
    def from_points(cls, cells, points, spacing=(1.0, 1.0, 1.0)) -> "Polyline":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(cells, pts, polyline_length(pts, spacing))

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


def polyline_length(points, spacing=(1.0, 1.0, 1.0)) -> float:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return 0.0
    steps = np.diff(pts, axis=0) * np.asarray(spacing, dtype=np.float64)
    return float(np.sqrt((steps**2).sum(axis=1)).sum())
