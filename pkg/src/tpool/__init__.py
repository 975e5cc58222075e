"""Learnable local temporal bilinear pooling for frame-wise action parsing."""
__version__ = "0.1.0"
