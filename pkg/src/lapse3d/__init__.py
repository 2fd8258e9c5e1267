"""Time-lapse 3D cell analysis: segmentation, sub-cellular features,
graph-feature tracking and evaluation metrics."""

from .stackio import VoxelGrid, intensity_to_probability, read_stack, write_stack

__version__ = "0.1.0"

__all__ = ["VoxelGrid", "read_stack", "write_stack", "intensity_to_probability"]
