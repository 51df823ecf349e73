"""Hierarchical generalized category discovery on precomputed embeddings."""

__version__ = "0.1.0"
