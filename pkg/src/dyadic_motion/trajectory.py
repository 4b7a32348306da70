"""Trajectory-space coding: orthonormal DCT along time, and the
pad-and-replicate construction used to build decoder inputs.

The orthonormal DCT-II convention is used throughout so that the transform
matrix is orthogonal: round trips are exact to machine precision and signal
energy is preserved (Parseval), which also keeps decoder input scales stable.
"""

from __future__ import annotations

import numpy as np


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis as an (n, n) matrix; rows are basis vectors.

    Row 0 is the constant 1/sqrt(n); row i>0 is sqrt(2/n)*cos(pi*i*(2t+1)/(2n)).
    The matrix is orthogonal, so the inverse transform is its transpose.
    """
    if n < 1:
        raise ValueError(f"transform length must be >= 1, got {n}")
    t = np.arange(n)
    i = t[:, None]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * i * (2 * t + 1) / (2 * n))
    m[0] = np.sqrt(1.0 / n)
    return m


def dct_forward(seq: np.ndarray) -> np.ndarray:
    """Per-row DCT over the time axis: (K, T) poses -> (K, T) coefficients."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ValueError(f"expected (K, T) input, got shape {seq.shape}")
    if not np.isfinite(seq).all():
        raise ValueError("non-finite input to dct_forward")
    return seq @ dct_matrix(seq.shape[1]).T


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct_forward: (K, T) coefficients -> (K, T) poses."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2:
        raise ValueError(f"expected (K, T) input, got shape {coeffs.shape}")
    if not np.isfinite(coeffs).all():
        raise ValueError("non-finite input to dct_inverse")
    return coeffs @ dct_matrix(coeffs.shape[1])


def pad_replicate(last_window: np.ndarray, future_len: int) -> np.ndarray:
    """Extend a (T_l, K) window to (T_l + future_len, K) by repeating its
    last row. This padded window is the decoder's residual baseline."""
    last_window = np.asarray(last_window)
    if last_window.ndim != 2 or last_window.shape[0] < 1:
        raise ValueError(f"expected non-empty (T_l, K) window, got {last_window.shape}")
    tail = np.repeat(last_window[-1:, :], future_len, axis=0)
    return np.concatenate([last_window, tail], axis=0)


def make_value(sub_sequence: np.ndarray, expected_len: int | None = None) -> np.ndarray:
    """DCT-code one (T_l+T_f, K) sub-sequence into a (K, T_l+T_f) value matrix.

    Relative-motion values are produced by passing the difference of the two
    subjects' sub-sequences.
    """
    sub_sequence = np.asarray(sub_sequence, dtype=np.float64)
    if sub_sequence.ndim != 2:
        raise ValueError(f"expected (T, K) sub-sequence, got shape {sub_sequence.shape}")
    if expected_len is not None and sub_sequence.shape[0] != expected_len:
        raise ValueError(
            f"sub-sequence length {sub_sequence.shape[0]} != expected {expected_len}")
    return dct_forward(sub_sequence.T)
