"""Voxel displacement-field networks and baselines for non-rigid point set registration."""

__version__ = "0.1.0"
