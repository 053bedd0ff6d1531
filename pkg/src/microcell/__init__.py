"""Level set design of periodic microstructures with prescribed effective elasticity."""

__version__ = "0.1.0"
