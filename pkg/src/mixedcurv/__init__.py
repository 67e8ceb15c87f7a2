"""Extrinsic geometry and mixed scalar curvature on almost-product charts."""

__version__ = "0.1.0"
