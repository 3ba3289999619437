"""Memory-aware goal navigation in a deterministic 2D simulator."""

__version__ = "0.1.0"
