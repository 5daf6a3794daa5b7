"""Multi-behavior recommendation with graph propagation and whole-data training."""

__version__ = "0.1.0"
