"""Composed-video-retrieval benchmark engine on precomputed embeddings."""

__version__ = "0.1.0"
