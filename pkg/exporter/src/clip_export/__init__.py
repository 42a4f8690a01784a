"""Frozen text-encoder export of category embeddings to TARTXT1 files."""

__version__ = "0.1.0"
