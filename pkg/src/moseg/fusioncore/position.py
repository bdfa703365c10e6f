"""Fixed 2D sine positional encodings for spatial token maps."""

from __future__ import annotations

import math

import torch


def sine_position_encoding(h: int, w: int, d_model: int, device=None, dtype=None) -> torch.Tensor:
    """(h*w, d_model) encoding; first half encodes y, second half x."""
    if d_model % 4:
        raise ValueError("d_model must be divisible by 4")
    half = d_model // 2
    ys = torch.arange(h, device=device, dtype=dtype or torch.float32)
    xs = torch.arange(w, device=device, dtype=dtype or torch.float32)
    dim_t = torch.arange(half // 2, device=device, dtype=dtype or torch.float32)
    freq = 1.0 / (10000.0 ** (2 * dim_t / half))

    def encode(coords):
        ang = coords[:, None] * freq[None]
        return torch.cat([ang.sin(), ang.cos()], dim=1)

    ey = encode(ys)  # (h, half)
    ex = encode(xs)  # (w, half)
    out = torch.cat(
        [
            ey[:, None].expand(h, w, half),
            ex[None].expand(h, w, half),
        ],
        dim=-1,
    )
    return out.reshape(h * w, d_model)
