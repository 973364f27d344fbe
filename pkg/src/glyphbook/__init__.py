"""Glyph codebook generation for pattern-matching document image compression."""
__version__ = "0.1.0"
