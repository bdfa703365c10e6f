"""Query decoder blocks: masked cross-attention, self-attention, FFN.

The model orchestrates cross/self/ffn separately so fused variants can let
both streams exchange queries between the sub-steps.
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import FeedForward, MultiheadAttention


def attention_mask_from_logits(mask_logits: torch.Tensor, hw, threshold: float = 0.5):
    """(B, N, h, w) mask logits -> (B, N, h_l*w_l) boolean keep-mask.

    Queries whose predicted mask vanishes at this scale fall back to full
    attention, so every row keeps at least one key.
    """
    h, w = hw
    resized = F.interpolate(mask_logits, size=(h, w), mode="bilinear", align_corners=False)
    keep = (resized.sigmoid() > threshold).flatten(2).detach()
    empty = ~keep.any(dim=-1, keepdim=True)
    return keep | empty


class DecoderBlock(nn.Module):
    """One decoder layer, pre-norm residuals throughout."""

    def __init__(self, d_model: int, n_heads: int, dim_feedforward: int):
        super().__init__()
        self.norm_cross = nn.LayerNorm(d_model)
        self.cross_attn = MultiheadAttention(d_model, n_heads)
        self.norm_self = nn.LayerNorm(d_model)
        self.self_attn = MultiheadAttention(d_model, n_heads)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.mlp = FeedForward(d_model, dim_feedforward)

    def cross(self, q, q_pos, memory, memory_pos, mask=None):
        x = self.norm_cross(q)
        out = self.cross_attn(x + q_pos, memory + memory_pos, memory, mask=mask)
        return q + out

    def self_mix(self, q, q_pos, tokens, tokens_pos, mask=None):
        """Self-attention of q against a token set that contains it."""
        x = self.norm_self(q)
        kv = self.norm_self(tokens)
        out = self.self_attn(x + q_pos, kv + tokens_pos, kv, mask=mask)
        return q + out

    def ffn(self, q):
        return self.mlp(self.norm_ffn(q)) + q


class MaskedQueryHead(nn.Module):
    """Per-layer prediction head: class logits and mask logits via a dot
    product between query embeddings and the stride-4 mask features."""

    def __init__(self, d_model: int, n_classes: int = 2):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.class_head = nn.Linear(d_model, n_classes)
        self.mask_embed = nn.Sequential(
            nn.Linear(d_model, d_model),
            nn.ReLU(inplace=True),
            nn.Linear(d_model, d_model),
        )

    def forward(self, q, mask_features):
        x = self.norm(q)
        class_logits = self.class_head(x)
        emb = self.mask_embed(x)
        mask_logits = torch.einsum("bnd,bdhw->bnhw", emb, mask_features)
        return class_logits, mask_logits
