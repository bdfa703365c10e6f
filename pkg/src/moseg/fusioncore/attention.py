"""Dense attention primitives: multi-head attention, FFN, pre-norm layer."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .counting import record_pairs


class MultiheadAttention(nn.Module):
    """Multi-head attention over (B, T, d) tokens with an optional boolean
    keep-mask (True = attend). Rows masked everywhere fall back to full
    attention instead of producing NaNs."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
        return_weights: bool = False,
    ):
        if not (torch.isfinite(query).all() and torch.isfinite(key).all() and torch.isfinite(value).all()):
            raise ValueError("attention inputs must be finite")
        b, t_q, _ = query.shape
        t_k = key.shape[1]
        record_pairs(b * t_q * t_k, "dense")

        def split(x):
            return x.view(b, -1, self.n_heads, self.d_head).transpose(1, 2)

        q = split(self.q_proj(query))
        k = split(self.k_proj(key))
        v = split(self.v_proj(value))
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if mask is not None:
            if mask.shape != (b, t_q, t_k):
                raise ValueError("mask must be (B, T_q, T_k)")
            keep = mask
            empty = ~keep.any(dim=-1, keepdim=True)  # rows with nothing to see
            keep = keep | empty
            logits = logits.masked_fill(~keep[:, None], float("-inf"))
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t_q, self.d_model)
        out = self.out_proj(out)
        if return_weights:
            return out, attn
        return out

    def self_attention(self, x, mask=None, return_weights=False):
        return self.forward(x, x, x, mask=mask, return_weights=return_weights)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, hidden)
        self.fc2 = nn.Linear(hidden, d_model)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class TransformerLayer(nn.Module):
    """Pre-norm self-attention block: y = MSA(LN(z)) + z, out = MLP(LN(y)) + y."""

    def __init__(self, d_model: int, n_heads: int, dim_feedforward: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiheadAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = FeedForward(d_model, dim_feedforward)

    def forward(self, z, mask=None):
        y = self.attn.self_attention(self.norm1(z), mask=mask) + z
        return self.mlp(self.norm2(y)) + y
