"""Query/key encoders and the ratio-normalized self/pairwise attention.

A motion history of T_p frames is split into N = T_p - T_l - T_f + 1
overlapping sub-sequences. The first T_l frames of each sub-sequence act as
the key, the DCT coefficients of the whole sub-sequence act as the value, and
the last observed T_l frames act as the query. Similarity scores are plain
dot-product ratios (no softmax): a_t = q.k_t / sum_j q.k_j. The pairwise path
runs the same machinery with queries/keys/values built from the relative
motion between the two subjects.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .trajectory import dct_matrix

# Guard for the ratio normalization: a raw score ratio can hit a zero
# denominator on degenerate inputs (e.g. all-zero windows through zero-bias
# encoders). Below this magnitude we fall back to uniform weights and flag it.
ATTENTION_EPS = 1e-8


def enumerate_subsequences(history: np.ndarray, window_len: int,
                           future_len: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a (T_p, K) history into overlapping (key, value) windows.

    Returns N = T_p - window_len - future_len + 1 pairs; the key window holds
    the first window_len frames of each sub-sequence and the value window the
    full window_len + future_len frames.
    """
    history = np.asarray(history)
    if history.ndim != 2:
        raise ValueError(f"expected (T_p, K) history, got shape {history.shape}")
    value_len = window_len + future_len
    n = history.shape[0] - value_len + 1
    if n < 1:
        raise ValueError(
            f"history too short: T_p={history.shape[0]} < T_l+T_f={value_len}")
    return [(history[t:t + window_len], history[t:t + value_len]) for t in range(n)]


class SequenceEncoder(nn.Module):
    """f_q / f_k: two 1D temporal convolutions (kernel sizes 6 and 5 by
    default), each followed by a ReLU, mapping pose windows to d-vectors.

    With the default kernels a window of 10 frames reduces to a single
    latent vector (10 - 5 - 4 = 1); applied to a longer sequence the encoder
    emits one latent per window position, which is how all keys are computed
    in one pass.
    """

    def __init__(self, in_channels: int, latent_dim: int = 256,
                 kernel_sizes: tuple[int, int] = (6, 5), dtype=torch.float32):
        super().__init__()
        self.conv1 = nn.Conv1d(in_channels, latent_dim, kernel_sizes[0], dtype=dtype)
        self.conv2 = nn.Conv1d(latent_dim, latent_dim, kernel_sizes[1], dtype=dtype)
        self.kernel_sizes = tuple(kernel_sizes)
        self.latent_dim = latent_dim

    @property
    def window_len(self) -> int:
        """Input length that reduces to exactly one latent vector."""
        return sum(k - 1 for k in self.kernel_sizes) + 1

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        """(B, T, K) -> (B, N', d) with N' = T - window_len + 1."""
        x = seq.transpose(1, 2)
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        return x.transpose(1, 2)

    def encode_window(self, window: np.ndarray) -> np.ndarray:
        """Single (window_len, K) window -> (d,) latent, as numpy."""
        window = np.asarray(window)
        if window.shape[0] != self.window_len:
            raise ValueError(
                f"window length {window.shape[0]} != encoder window {self.window_len}")
        dtype = self.conv1.weight.dtype
        with torch.no_grad():
            out = self.forward(torch.as_tensor(window, dtype=dtype).unsqueeze(0))
        return out[0, 0].numpy()


def ratio_weights(scores: torch.Tensor,
                  eps: float = ATTENTION_EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalize raw (..., N) scores by their sum.

    Returns (weights, degenerate) where degenerate marks rows whose score sum
    had magnitude below eps; those rows get uniform 1/N weights. Weights of
    non-degenerate rows sum to 1 but are not constrained to be nonnegative.
    """
    denom = scores.sum(dim=-1, keepdim=True)
    degenerate = denom.abs() < eps
    n = scores.shape[-1]
    uniform = torch.full_like(scores, 1.0 / n)
    safe = torch.where(degenerate, torch.ones_like(denom), denom)
    weights = torch.where(degenerate, uniform, scores / safe)
    return weights, degenerate.squeeze(-1)


def attend(weights: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Weighted sum of values: (..., N) x (..., N, K, T) -> (..., K, T)."""
    if weights.shape[-1] != values.shape[-3]:
        raise ValueError(
            f"{weights.shape[-1]} weights for {values.shape[-3]} values")
    return torch.einsum("...n,...nkt->...kt", weights, values)


def attention_weights(q: np.ndarray, keys: np.ndarray,
                      eps: float = ATTENTION_EPS) -> tuple[np.ndarray, bool]:
    """Numpy single-instance form of ratio_weights: q (d,), keys (N, d)."""
    q = np.asarray(q, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or q.shape != (keys.shape[1],):
        raise ValueError(f"shape mismatch: q {q.shape}, keys {keys.shape}")
    scores = keys @ q
    denom = scores.sum()
    if abs(denom) < eps:
        return np.full(len(scores), 1.0 / len(scores)), True
    return scores / denom, False


def relative_motion(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Elementwise X1 - X2; invariant to any common global translation."""
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    if x1.shape != x2.shape:
        raise ValueError(f"shape mismatch: {x1.shape} vs {x2.shape}")
    return x1 - x2


class MergeBlock(nn.Module):
    """Concatenate coefficient matrices along the coefficient axis and
    project back to T_l+T_f coefficients with one learned map shared across
    the K joint-coordinate rows (a 1x1 convolution over the row axis).

    Initialized to average its inputs, so a freshly built merge is
    identity-like: merge(V, V) = V.
    """

    def __init__(self, num_inputs: int, length: int, dtype=torch.float32):
        super().__init__()
        self.num_inputs = num_inputs
        self.length = length
        self.proj = nn.Linear(num_inputs * length, length, dtype=dtype)
        with torch.no_grad():
            eye = torch.eye(length, dtype=dtype)
            self.proj.weight.copy_(eye.repeat(1, num_inputs) / num_inputs)
            self.proj.bias.zero_()

    def forward(self, inputs: list[torch.Tensor]) -> torch.Tensor:
        """List of num_inputs tensors (..., K, T) -> (..., K, T)."""
        if len(inputs) != self.num_inputs:
            raise ValueError(f"expected {self.num_inputs} inputs, got {len(inputs)}")
        base = inputs[0].shape
        for x in inputs[1:]:
            if x.shape != base:
                raise ValueError(f"merge input shapes differ: {x.shape} vs {base}")
        if base[-1] != self.length:
            raise ValueError(f"merge expects length {self.length}, got {base[-1]}")
        return self.proj(torch.cat(inputs, dim=-1))


class SubsequenceCoder(nn.Module):
    """Precomputed DCT basis for coding all value sub-sequences of a batch."""

    def __init__(self, value_len: int, dtype=torch.float32):
        super().__init__()
        self.value_len = value_len
        basis = torch.as_tensor(dct_matrix(value_len), dtype=dtype)
        self.register_buffer("dct", basis)

    def values(self, seq: torch.Tensor, count: int) -> torch.Tensor:
        """(B, T_p, K) -> (B, N, K, T) DCT-coded value windows, N = count."""
        windows = seq.unfold(1, self.value_len, 1)[:, :count]  # (B, N, K, T)
        return torch.einsum("bnkt,st->bnks", windows, self.dct)

    def encode(self, seq: torch.Tensor) -> torch.Tensor:
        """(B, T, K) time-domain -> (B, K, T) coefficients."""
        return torch.einsum("btk,st->bks", seq, self.dct)

    def decode(self, coeffs: torch.Tensor) -> torch.Tensor:
        """(B, K, T) coefficients -> (B, T, K) time-domain."""
        return torch.einsum("bks,st->btk", coeffs, self.dct)
