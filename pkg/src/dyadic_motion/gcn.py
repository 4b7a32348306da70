"""Graph-convolutional decoder over the K joint-coordinate nodes.

Each layer applies a fully learned adjacency (no skeleton mask, directed)
followed by a shared feature transform: out = A @ x @ W + b. The decoder
stacks an input projection, a configurable number of two-layer residual
blocks with tanh nonlinearities, and an output projection that is
zero-initialized so that a freshly built decoder is the identity in the
surrounding residual design.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class GraphConv(nn.Module):
    """out = adjacency @ features @ weight + bias, over (..., nodes, F_in)."""

    def __init__(self, in_features: int, out_features: int, node_count: int,
                 dtype=torch.float32):
        super().__init__()
        self.adjacency = nn.Parameter(torch.empty(node_count, node_count, dtype=dtype))
        self.weight = nn.Parameter(torch.empty(in_features, out_features, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=dtype))
        self.reset_parameters()

    def reset_parameters(self):
        stdv = 1.0 / math.sqrt(self.weight.shape[1])
        self.weight.data.uniform_(-stdv, stdv)
        self.adjacency.data.uniform_(-1.0 / math.sqrt(self.adjacency.shape[0]),
                                     1.0 / math.sqrt(self.adjacency.shape[0]))
        self.bias.data.zero_()

    def zero_(self):
        """Zero weight and bias; the layer then outputs zero for any input."""
        with torch.no_grad():
            self.weight.zero_()
            self.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValueError(
                f"expected {self.weight.shape[0]} input features, got {x.shape[-1]}")
        if x.shape[-2] != self.adjacency.shape[0]:
            raise ValueError(
                f"expected {self.adjacency.shape[0]} nodes, got {x.shape[-2]}")
        return self.adjacency @ x @ self.weight + self.bias


class ResidualGcnBlock(nn.Module):
    """Two graph convolutions, each followed by tanh, with a skip connection."""

    def __init__(self, features: int, node_count: int, dropout: float = 0.0,
                 dtype=torch.float32):
        super().__init__()
        self.gc1 = GraphConv(features, features, node_count, dtype=dtype)
        self.gc2 = GraphConv(features, features, node_count, dtype=dtype)
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.dropout(torch.tanh(self.gc1(x)))
        y = self.dropout(torch.tanh(self.gc2(y)))
        return x + y


class GcnDecoder(nn.Module):
    """Maps (..., K, 2*(T_l+T_f)) aggregate features to coefficient residuals.

    decode() adds the padded-last-window coefficients back, so with the
    zero-initialized output layer the decoder reproduces them exactly.
    """

    def __init__(self, node_count: int, seq_len: int, hidden: int = 256,
                 num_blocks: int = 12, dropout: float = 0.0, dtype=torch.float32):
        super().__init__()
        self.node_count = node_count
        self.seq_len = seq_len
        self.gc_in = GraphConv(2 * seq_len, hidden, node_count, dtype=dtype)
        self.blocks = nn.ModuleList(
            ResidualGcnBlock(hidden, node_count, dropout, dtype=dtype)
            for _ in range(num_blocks))
        self.gc_out = GraphConv(hidden, seq_len, node_count, dtype=dtype)
        self.gc_out.zero_()

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        y = torch.tanh(self.gc_in(features))
        for block in self.blocks:
            y = block(y)
        return self.gc_out(y)

    def decode(self, aggregate: torch.Tensor, dct_last: torch.Tensor) -> torch.Tensor:
        """(..., K, T) attended coefficients + (..., K, T) padded-window
        coefficients -> (..., K, T) predicted coefficients."""
        if aggregate.shape != dct_last.shape:
            raise ValueError(
                f"stream shapes differ: {aggregate.shape} vs {dct_last.shape}")
        if aggregate.shape[-1] != self.seq_len:
            raise ValueError(
                f"expected coefficient length {self.seq_len}, got {aggregate.shape[-1]}")
        return dct_last + self.forward(torch.cat([dct_last, aggregate], dim=-1))
