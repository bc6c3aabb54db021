"""Dense complex linear algebra on a truncated Fock basis.

Conventions: natural units (hbar = 1, oscillator frequency = 1), zero-point
energy dropped, so level n carries energy n. States are complex vectors of
length ``dim``; operators are dense ``dim x dim`` complex matrices. A
normalized state has unit squared norm; conditional (no-jump) evolution
produces subnormalized states whose squared norm is a trajectory probability.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg
from scipy.special import eval_genlaguerre, gammaln

from .errors import PrecisionLossWarning

__all__ = [
    "ladder_operators",
    "number_operator",
    "quadratures",
    "matrix_exponential",
    "displacement_element",
    "displacement_matrix",
]

# eval_genlaguerre and the log-domain prefactor stay accurate well past this,
# but the alternating Laguerre sums start shedding digits for large m + n.
_PRECISION_LEVEL_LIMIT = 170


def _readonly(m: np.ndarray) -> np.ndarray:
    m.flags.writeable = False
    return m


def ladder_operators(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (lowering, raising) operators on a ``dim``-level truncation.

    lowering[n-1, n] = sqrt(n); raising is the conjugate transpose. On the
    truncated basis [lowering, raising] equals the identity except for the
    bottom-right entry, which is 1 - dim.
    """
    if dim < 2:
        raise ValueError(f"Fock truncation needs dim >= 2, got {dim}")
    lowering = np.zeros((dim, dim), dtype=complex)
    ns = np.arange(1, dim)
    lowering[ns - 1, ns] = np.sqrt(ns)
    raising = lowering.conj().T.copy()
    return _readonly(lowering), _readonly(raising)


def number_operator(dim: int) -> np.ndarray:
    """diag(0, 1, ..., dim-1)."""
    if dim < 2:
        raise ValueError(f"Fock truncation needs dim >= 2, got {dim}")
    return _readonly(np.diag(np.arange(dim, dtype=float)).astype(complex))


def quadratures(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Dimensionless position and momentum: X = (a^+ + a)/sqrt(2),
    P = i(a^+ - a)/sqrt(2). Both are hermitian."""
    lowering, raising = ladder_operators(dim)
    x = (raising + lowering) / np.sqrt(2)
    p = 1j * (raising - lowering) / np.sqrt(2)
    return _readonly(x), _readonly(p)


def matrix_exponential(m: np.ndarray) -> np.ndarray:
    """exp(m) for a dense complex square matrix.

    Backed by scipy's scaling-and-squaring Pade implementation, which stays
    accurate for the non-normal generators used here. Rejects non-finite
    input instead of propagating NaNs.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix exponential of non-finite entries")
    return scipy.linalg.expm(m)


def displacement_element(m: int, n: int, alpha: complex) -> complex:
    """Exact matrix element <m|exp(alpha a^+ - alpha* a)|n> of the
    displacement operator on the untruncated Fock basis.

    Closed form for m >= n:
        sqrt(n!/m!) alpha^(m-n) exp(-|alpha|^2/2) L_n^(m-n)(|alpha|^2),
    with the m < n case obtained from the adjoint relation. Factorial
    ratios are evaluated in the log domain, so the only practical limit
    is Laguerre-polynomial precision at extreme quantum numbers.
    """
    if m < 0 or n < 0:
        raise ValueError(f"Fock labels must be non-negative, got m={m}, n={n}")
    alpha = complex(alpha)
    if not np.isfinite(abs(alpha) ** 2):
        raise ValueError("displacement amplitude must be finite")
    if m + n > _PRECISION_LEVEL_LIMIT:
        warnings.warn(
            f"displacement element at m+n={m + n} > {_PRECISION_LEVEL_LIMIT}: "
            "possible loss of precision",
            PrecisionLossWarning,
            stacklevel=2,
        )
    if alpha == 0:
        return 1.0 + 0j if m == n else 0j
    if n > m:
        m, n = n, m
        alpha = -alpha.conjugate()
    x = abs(alpha) ** 2
    log_pref = 0.5 * (gammaln(n + 1) - gammaln(m + 1)) - x / 2
    return complex(np.exp(log_pref) * alpha ** (m - n) * eval_genlaguerre(n, m - n, x))


def displacement_matrix(alpha: complex, dim: int) -> np.ndarray:
    """Displacement operator assembled element by element from the closed
    form, so every entry is free of truncation error (the matrix as a whole
    is still the top-left block of the infinite operator)."""
    if dim < 2:
        raise ValueError(f"Fock truncation needs dim >= 2, got {dim}")
    out = np.empty((dim, dim), dtype=complex)
    for mm in range(dim):
        for nn in range(dim):
            out[mm, nn] = displacement_element(mm, nn, alpha)
    return _readonly(out)
