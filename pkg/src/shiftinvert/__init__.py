"""Top eigenvector of A^T A by shifted-and-inverted power iteration."""

__version__ = "0.1.0"
