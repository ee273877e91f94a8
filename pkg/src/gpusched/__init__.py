"""Server-based GPU access control for multi-core real-time systems: analysis, baseline and simulation."""

__version__ = "0.1.0"
