"""Transformer building blocks shared by the protein encoder and the decoder LM."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ShapeError


def init_linear(module: nn.Linear) -> None:
    nn.init.trunc_normal_(module.weight, std=0.02)
    if module.bias is not None:
        nn.init.zeros_(module.bias)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over all heads, optionally causal."""

    def __init__(self, dim: int, num_heads: int, causal: bool, dtype: torch.dtype = torch.float64):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.causal = causal
        self.wq = nn.Linear(dim, dim, dtype=dtype)
        self.wk = nn.Linear(dim, dim, dtype=dtype)
        self.wv = nn.Linear(dim, dim, dtype=dtype)
        self.out_proj = nn.Linear(dim, dim, dtype=dtype)
        for m in (self.wq, self.wk, self.wv, self.out_proj):
            init_linear(m)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        # x: (B, T, d)
        b, t, _ = x.shape
        q = self.wq(x).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.wk(x).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.wv(x).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if self.causal:
            future = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)  # (B, H, T, T)

        out = (weights @ v).transpose(1, 2).contiguous().view(b, t, self.dim)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.fc1 = nn.Linear(dim, 4 * dim, dtype=dtype)
        self.fc2 = nn.Linear(4 * dim, dim, dtype=dtype)
        init_linear(self.fc1)
        init_linear(self.fc2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, num_heads: int, causal: bool, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, num_heads, causal=causal, dtype=dtype)
        self.ln2 = nn.LayerNorm(dim, dtype=dtype)
        self.ff = FeedForward(dim, dtype=dtype)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        if return_weights:
            attn_out, weights = self.attn(self.ln1(x), return_weights=True)
            x = x + attn_out
            x = x + self.ff(self.ln2(x))
            return x, weights
        x = x + self.attn(self.ln1(x))
        x = x + self.ff(self.ln2(x))
        return x
