"""Shared network building blocks: sinusoidal index encoding, a post-norm
transformer encoder, and a residual cross-attention fusion block."""
from __future__ import annotations

import math

import torch
import torch.nn as nn


def sinusoidal_encoding(indices, embed_dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Classic sin/cos encoding evaluated at the given (possibly fractional) indices.

    Returns (len(indices), embed_dim); entries lie in [-1, 1].
    """
    if embed_dim % 2 != 0:
        raise ValueError("embed_dim must be even for sinusoidal encoding")
    pos = torch.as_tensor(indices, dtype=dtype, device=device).reshape(-1, 1)
    div = torch.exp(
        torch.arange(0, embed_dim, 2, dtype=dtype, device=device)
        * (-math.log(10000.0) / embed_dim)
    )
    out = torch.zeros(pos.shape[0], embed_dim, dtype=dtype, device=device)
    out[:, 0::2] = torch.sin(pos * div)
    out[:, 1::2] = torch.cos(pos * div)
    return out


def causal_mask(length: int, device=None) -> torch.Tensor:
    """Boolean attention mask with True above the diagonal (disallowed positions)."""
    return torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)


class EncoderBlock(nn.Module):
    """Post-norm transformer encoder layer: self-attention then a GELU MLP."""

    def __init__(self, embed_dim: int, heads: int, ff_dim: int, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(embed_dim, heads, dropout=dropout, batch_first=True)
        self.ff = nn.Sequential(
            nn.Linear(embed_dim, ff_dim),
            nn.GELU(),
            nn.Linear(ff_dim, embed_dim),
        )
        self.norm1 = nn.LayerNorm(embed_dim)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, attn_mask=None):
        attended, _ = self.attn(x, x, x, attn_mask=attn_mask, need_weights=False)
        x = self.norm1(x + self.drop(attended))
        return self.norm2(x + self.drop(self.ff(x)))


class TransformerEncoder(nn.Module):
    """A stack of :class:`EncoderBlock` applied along the token dimension."""

    def __init__(self, embed_dim: int, heads: int, layers: int, ff_dim: int,
                 dropout: float = 0.0):
        super().__init__()
        if embed_dim % heads != 0:
            raise ValueError(f"embed_dim {embed_dim} must be divisible by heads {heads}")
        self.blocks = nn.ModuleList(
            EncoderBlock(embed_dim, heads, ff_dim, dropout) for _ in range(layers)
        )

    def forward(self, x, attn_mask=None):
        for block in self.blocks:
            x = block(x, attn_mask=attn_mask)
        return x


class CrossAttentionFusion(nn.Module):
    """Residual cross-attention: queries from the current stage, keys/values
    from the previous stage's tokens (which may have a different length)."""

    def __init__(self, embed_dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = nn.MultiheadAttention(embed_dim, heads, dropout=dropout, batch_first=True)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, queries, context):
        attended, _ = self.attn(queries, context, context, need_weights=False)
        return self.norm(queries + attended)


def count_trainable(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
