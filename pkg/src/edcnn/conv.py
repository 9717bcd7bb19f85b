"""One-dimensional expansive and contracting convolution.

A filter ``w`` of length ``s`` holds ``s + 1`` taps ``w[0..s]``.  For a signal
``v`` of length ``D`` (indexed from 1 in the math, from 0 here)

    expansive:    out[j] = sum_l w[j - l] * v[l],   j = 0 .. D + s - 1
    contracting:  out[j] = expansive[j + s],        j = 0 .. D - s - 1

The contracting form keeps only positions where the filter fully overlaps the
signal.  Both are linear maps with banded Toeplitz matrices of shape
``(D + s, D)`` and ``(D - s, D)``.

Every output entry is accumulated in ascending signal index ``l``; the batched
and single-vector paths share that order so results agree bitwise.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_filter",
    "expansive_convolve",
    "contracting_convolve",
    "expansive_convolve_batch",
    "toeplitz_matrix_expansive",
    "toeplitz_matrix_contracting",
]


def as_filter(w) -> np.ndarray:
    """Validate and return filter taps as a 1-D float64 array of length s+1."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("filter must be a non-empty 1-D sequence of taps")
    if not np.all(np.isfinite(w)):
        raise ValueError("filter taps must be finite")
    return w


def _as_signal(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("signal must be 1-D")
    if v.size == 0:
        raise ValueError("signal must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError("signal entries must be finite")
    return v


def expansive_convolve_batch(w: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Expansive convolution of every row of ``V`` (shape ``(B, D)``) with ``w``.

    No validation; this is the hot path used by the network.
    """
    s = w.shape[0] - 1
    B, D = V.shape
    out = np.zeros((B, D + s))
    # Descending tap index == ascending signal index for a fixed output slot.
    for j in range(s, -1, -1):
        out[:, j:j + D] += w[j] * V
    return out


def expansive_convolve(w, v) -> np.ndarray:
    """Zero-padded convolution; output length ``D + s``."""
    w = as_filter(w)
    v = _as_signal(v)
    return expansive_convolve_batch(w, v[None, :])[0]


def contracting_convolve(w, v) -> np.ndarray:
    """Convolution without padding; output length ``D - s``.

    Raises ``ValueError`` unless ``D > s``.
    """
    w = as_filter(w)
    v = _as_signal(v)
    s = w.size - 1
    D = v.size
    if D <= s:
        raise ValueError(f"contracting convolution needs D > s, got D={D}, s={s}")
    return expansive_convolve_batch(w, v[None, :])[0, s:D]


def toeplitz_matrix_expansive(w, D: int) -> np.ndarray:
    """Dense ``(D + s, D)`` matrix ``T`` with ``T[j, l] = w[j - l]`` on the band."""
    w = as_filter(w)
    if int(D) != D or D < 1:
        raise ValueError(f"D must be a positive integer, got {D!r}")
    D = int(D)
    s = w.size - 1
    T = np.zeros((D + s, D))
    cols = np.arange(D)
    for k in range(s + 1):
        T[cols + k, cols] = w[k]
    return T


def toeplitz_matrix_contracting(w, D: int) -> np.ndarray:
    """Rows ``s .. D-1`` (0-based) of the expansive matrix, shape ``(D - s, D)``."""
    w = as_filter(w)
    s = w.size - 1
    if int(D) != D or D <= s:
        raise ValueError(f"contracting matrix needs integer D > s, got D={D!r}, s={s}")
    return toeplitz_matrix_expansive(w, D)[s:int(D)]
