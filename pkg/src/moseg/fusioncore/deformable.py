"""Multi-scale deformable attention encoder with optional x-axis fusion."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import FeedForward
from .counting import record_pairs
from .position import sine_position_encoding


def deformable_core(value_levels, sampling_locations, attention_weights):
    """Bilinear sampling core.

    value_levels: list of (B*n_heads, d_head, h, w) per level
    sampling_locations: (B, T, n_heads, n_levels, n_points, 2) in [0, 1]
    attention_weights: (B, T, n_heads, n_levels, n_points), rows sum to 1
    """
    b, t, n_heads, n_levels, n_points, _ = sampling_locations.shape
    grids = 2 * sampling_locations - 1
    sampled = []
    for lvl, value in enumerate(value_levels):
        # (B*n_heads, T, n_points, 2) -> grid_sample gives (B*H, d_head, T, P)
        g = grids[:, :, :, lvl].transpose(1, 2).flatten(0, 1)
        sampled.append(
            F.grid_sample(value, g, mode="bilinear", padding_mode="zeros", align_corners=False)
        )
    stacked = torch.stack(sampled, dim=-2)  # (B*H, d_head, T, L, P)
    weights = attention_weights.permute(0, 2, 1, 3, 4).flatten(0, 1)  # (B*H, T, L, P)
    out = (stacked * weights[:, None]).sum(dim=(-2, -1))  # (B*H, d_head, T)
    d_head = out.shape[1]
    return out.view(b, n_heads, d_head, t).permute(0, 3, 1, 2).reshape(b, t, n_heads * d_head)


class MSDeformAttention(nn.Module):
    """Each query samples n_points locations per level and mixes them with
    softmax weights: interaction cost is linear in points*levels, not in T."""

    def __init__(self, d_model: int, n_heads: int, n_levels: int, n_points: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_levels = n_levels
        self.n_points = n_points
        self.sampling_offsets = nn.Linear(d_model, n_heads * n_levels * n_points * 2)
        self.attention_weights = nn.Linear(d_model, n_heads * n_levels * n_points)
        self.value_proj = nn.Linear(d_model, d_model)
        self.output_proj = nn.Linear(d_model, d_model)
        self._reset_parameters()

    def _reset_parameters(self):
        nn.init.zeros_(self.sampling_offsets.weight)
        thetas = torch.arange(self.n_heads, dtype=torch.float32) * (2 * math.pi / self.n_heads)
        grid = torch.stack([thetas.cos(), thetas.sin()], dim=-1)
        grid = grid / grid.abs().max(-1, keepdim=True).values
        grid = grid[:, None, None].repeat(1, self.n_levels, self.n_points, 1)
        for p in range(self.n_points):
            grid[:, :, p] *= p + 1
        with torch.no_grad():
            self.sampling_offsets.bias.copy_(grid.reshape(-1))
        nn.init.zeros_(self.attention_weights.weight)
        nn.init.zeros_(self.attention_weights.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.zeros_(self.value_proj.bias)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def forward(self, query, reference_points, value, spatial_shapes):
        """query: (B, T, d); reference_points: (B, T, 2) normalized;
        value: (B, T_v, d) flattened levels; spatial_shapes: [(h, w), ...]."""
        b, t, _ = query.shape
        if not torch.isfinite(query).all():
            raise ValueError("attention inputs must be finite")
        record_pairs(b * t * self.n_levels * self.n_points, "deformable")

        v = self.value_proj(value)
        value_levels = []
        start = 0
        for h, w in spatial_shapes:
            lvl = v[:, start : start + h * w]
            value_levels.append(
                lvl.view(b, h, w, self.n_heads, -1)
                .permute(0, 3, 4, 1, 2)
                .flatten(0, 1)
            )
            start += h * w

        offsets = self.sampling_offsets(query).view(
            b, t, self.n_heads, self.n_levels, self.n_points, 2
        )
        weights = self.attention_weights(query).view(
            b, t, self.n_heads, self.n_levels * self.n_points
        )
        weights = weights.softmax(-1).view(b, t, self.n_heads, self.n_levels, self.n_points)

        shapes = torch.as_tensor(spatial_shapes, dtype=query.dtype, device=query.device)
        scale = shapes.flip(-1)[None, None, None, :, None]  # (.., n_levels, .., 2) as (w, h)
        locations = reference_points[:, :, None, None, None] + offsets / scale
        out = deformable_core(value_levels, locations, weights)
        return self.output_proj(out)


class DeformableEncoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, n_levels, n_points, dim_feedforward):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MSDeformAttention(d_model, n_heads, n_levels, n_points)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = FeedForward(d_model, dim_feedforward)

    def forward(self, tokens, pos, reference_points, spatial_shapes):
        n = self.norm1(tokens)
        tokens = tokens + self.attn(n + pos, reference_points, n, spatial_shapes)
        return self.mlp(self.norm2(tokens)) + tokens


def _reference_points(spatial_shapes, device, dtype):
    refs = []
    for h, w in spatial_shapes:
        ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) / h
        xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) / w
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        refs.append(torch.stack([gx, gy], dim=-1).reshape(-1, 2))
    return torch.cat(refs, dim=0)


class DeformableEncoder(nn.Module):
    """6-layer multi-scale encoder over strides {8, 16, 32}.

    Unfused: encodes one pyramid. Fused: the two pyramids are concatenated
    along x per level and split back afterwards; each half keeps its own
    coordinate frame and a learned modality encoding, and every query samples
    both halves of every scale, so information flows across modalities. The
    per-half frames keep the two halves exactly symmetric: a token never sees
    padding on one side that its twin would not see on the other.
    """

    def __init__(self, d_model, n_heads, n_layers, n_points, dim_feedforward, fused: bool):
        super().__init__()
        self.d_model = d_model
        self.fused = fused
        self.n_levels = 6 if fused else 3
        self.layers = nn.ModuleList(
            DeformableEncoderLayer(d_model, n_heads, self.n_levels, n_points, dim_feedforward)
            for _ in range(n_layers)
        )
        self.level_embed = nn.Parameter(torch.zeros(3, d_model))
        nn.init.normal_(self.level_embed, std=0.02)
        if fused:
            self.modality_embed = nn.Parameter(torch.zeros(2, d_model))
            nn.init.normal_(self.modality_embed, std=0.02)

    def _encode(self, maps, pos_extras):
        """maps: token maps treated as separate sampling levels; pos_extras:
        learned per-map additions to the sine positional encoding."""
        b = maps[0].shape[0]
        dtype, device = maps[0].dtype, maps[0].device
        spatial_shapes = [(f.shape[2], f.shape[3]) for f in maps]
        tokens = torch.cat([f.flatten(2).transpose(1, 2) for f in maps], dim=1)
        pos = torch.cat(
            [
                sine_position_encoding(h, w, self.d_model, device, dtype) + extra
                for (h, w), extra in zip(spatial_shapes, pos_extras)
            ],
            dim=0,
        )[None].expand(b, -1, -1)
        refs = _reference_points(spatial_shapes, device, dtype)[None].expand(b, -1, -1)
        for layer in self.layers:
            tokens = layer(tokens, pos, refs, spatial_shapes)
        out = []
        start = 0
        for (h, w) in spatial_shapes:
            out.append(
                tokens[:, start : start + h * w].transpose(1, 2).reshape(b, self.d_model, h, w)
            )
            start += h * w
        return out

    def forward(self, levels, levels_motion=None):
        if not self.fused:
            if levels_motion is not None:
                raise ValueError("encoder built unfused cannot take two pyramids")
            return self._encode(levels, list(self.level_embed))
        if levels_motion is None:
            raise ValueError("fused encoder needs both pyramids")
        maps, extras = [], []
        for i, (a, m) in enumerate(zip(levels, levels_motion)):
            if a.shape != m.shape:
                raise ValueError("fused pyramids must share spatial sizes")
            maps.extend([a, m])
            extras.extend(
                [
                    self.level_embed[i] + self.modality_embed[0],
                    self.level_embed[i] + self.modality_embed[1],
                ]
            )
        encoded = self._encode(maps, extras)
        return encoded[0::2], encoded[1::2]
