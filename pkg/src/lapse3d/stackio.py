"""Volumetric grid types and the VXG1 on-disk format.

Arrays are stored numpy-style as ``(nz, ny, nx)`` so that x is the fastest
varying axis in memory, matching the file payload order. Headers and CSV
exports talk about ``(x, y, z)``; only the array indexing is reversed.

VXG1 layout (little-endian)::

    0-3    magic b"VXG1"
    4      dtype code (0=u8, 1=u16, 2=f32, 3=u32)
    5-7    zero
    8-19   nx, ny, nz as u32
    20-31  sx, sy, sz as f32 (micrometres per voxel)
    32-    raw voxels, x fastest
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InvalidGrid,
    IoFailure,
    NonPositiveSpacing,
    TruncatedPayload,
    UnknownDtype,
)

MAGIC = b"VXG1"
HEADER = struct.Struct("<4sB3x3I3f")
HEADER_SIZE = HEADER.size  # 32

DTYPE_CODES = {
    0: np.dtype("<u1"),
    1: np.dtype("<u2"),
    2: np.dtype("<f4"),
    3: np.dtype("<u4"),
}
CODE_FOR_DTYPE = {dt.newbyteorder("="): code for code, dt in DTYPE_CODES.items()}


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense 3D scalar field with anisotropic voxel spacing.

    ``data`` has shape ``(nz, ny, nx)``; ``spacing`` is ``(sx, sy, sz)`` in
    micrometres. The array is exposed read-only.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidGrid(f"expected a 3D array, got shape {data.shape}")
        if data.dtype.newbyteorder("=") not in CODE_FOR_DTYPE:
            raise InvalidGrid(f"unsupported dtype {data.dtype}")
        if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
            raise InvalidGrid("float grid contains NaN or Inf")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3:
            raise InvalidGrid("spacing must have three components")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise NonPositiveSpacing(f"spacing must be strictly positive, got {spacing}")
        view = data.view()
        view.flags.writeable = False
        object.__setattr__(self, "data", view)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Voxel counts as ``(nx, ny, nz)``."""
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def with_data(self, data) -> "VoxelGrid":
        """Same geometry, new payload."""
        return VoxelGrid(np.asarray(data), self.spacing)

    def __getitem__(self, xyz):
        x, y, z = xyz
        return self.data[z, y, x]

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def label_grid(data, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    """Wrap an integer array as a u32 label grid."""
    data = np.asarray(data)
    if data.dtype.kind not in "iub":
        raise InvalidGrid(f"labels must be integers, got {data.dtype}")
    if data.size and data.min() < 0:
        raise InvalidGrid("labels must be non-negative")
    return VoxelGrid(data.astype(np.uint32, copy=False), spacing)


def probability_map(data, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    """Wrap a float array as a wall-probability map, checking ``[0, 1]``."""
    data = np.asarray(data, dtype=np.float32)
    if data.size and (data.min() < 0.0 or data.max() > 1.0):
        raise InvalidGrid("probabilities must lie in [0, 1]")
    return VoxelGrid(data, spacing)


def read_stack(path) -> VoxelGrid:
    """Read a VXG1 file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a VXG1 file")
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayload(f"{path}: header truncated ({len(raw)} bytes)")
    _, code, nx, ny, nz, sx, sy, sz = HEADER.unpack_from(raw)
    if code not in DTYPE_CODES:
        raise UnknownDtype(f"{path}: unknown dtype code {code}")
    spacing = (sx, sy, sz)
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NonPositiveSpacing(f"{path}: spacing {spacing}")
    dtype = DTYPE_CODES[code]
    expected = nx * ny * nz * dtype.itemsize
    payload = len(raw) - HEADER_SIZE
    if payload < expected:
        raise TruncatedPayload(f"{path}: payload has {payload} bytes, expected {expected}")
    if payload > expected:
        raise InvalidGrid(f"{path}: {payload - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype=dtype, count=nx * ny * nz, offset=HEADER_SIZE)
    data = data.reshape(nz, ny, nx).astype(dtype.newbyteorder("="))
    return VoxelGrid(data, spacing)


def encode_stack(grid: VoxelGrid) -> bytes:
    data = grid.data
    code = CODE_FOR_DTYPE[data.dtype.newbyteorder("=")]
    nx, ny, nz = grid.dims
    header = HEADER.pack(MAGIC, code, nx, ny, nz, *grid.spacing)
    return header + np.ascontiguousarray(data, dtype=DTYPE_CODES[code]).tobytes()


def write_stack(grid: VoxelGrid, path) -> None:
    """Write ``grid`` as VXG1; the grid was validated at construction."""
    if not isinstance(grid, VoxelGrid):
        raise InvalidGrid("write_stack expects a VoxelGrid")
    payload = encode_stack(grid)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def intensity_to_probability(grid: VoxelGrid, invert: bool = False) -> VoxelGrid:
    """Min-max rescale intensities into a wall-probability map.

    Bright voxels map to high wall probability unless ``invert`` is set.
    A constant input maps to 0.5 everywhere.
    """
    data = np.asarray(grid.data, dtype=np.float64)
    lo = data.min() if data.size else 0.0
    hi = data.max() if data.size else 0.0
    if hi <= lo:
        prob = np.full(data.shape, 0.5, dtype=np.float32)
    else:
        prob = ((data - lo) / (hi - lo)).astype(np.float32)
        np.clip(prob, 0.0, 1.0, out=prob)
        if invert:
            prob = np.float32(1.0) - prob
    return VoxelGrid(prob, grid.spacing)


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber nonzero labels to ``1..L`` preserving their order."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    present = present[present != 0]
    lut = np.zeros(int(labels.max()) + 1 if labels.size else 1, dtype=np.uint32)
    lut[present] = np.arange(1, len(present) + 1, dtype=np.uint32)
    return lut[labels]
