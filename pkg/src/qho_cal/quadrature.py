"""Small numeric helpers: Gauss-Legendre nodes and stable CSV float formatting."""

from __future__ import annotations

import numpy as np

__all__ = ["gauss_legendre", "csv_float"]

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for [lo, hi]. Degenerate intervals get zero weights."""
    if n < 1:
        raise ValueError(f"need at least one node, got {n}")
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    x, w = _GL_CACHE[n]
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    return mid + half * x, half * w


def csv_float(x: float) -> str:
    """Deterministic short float formatting for CSV emission."""
    return f"{float(x):.12g}"
