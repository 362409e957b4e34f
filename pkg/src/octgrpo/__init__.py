"""Octant voxel tokens, vector quantization, reward critics and group-relative
policy training at desk scale."""

__version__ = "0.1.0"
