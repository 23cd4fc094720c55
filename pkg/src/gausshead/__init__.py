"""Editable 3D Gaussian head avatars: parametric geometry, UV-space Gaussian
generation, tile-based splatting, SH relighting, and hand-rolled gradients."""

__version__ = "0.1.0"
