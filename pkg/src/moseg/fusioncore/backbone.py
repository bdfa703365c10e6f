"""Small strided convolutional backbone producing a 4-level pyramid."""

from __future__ import annotations

import torch
import torch.nn as nn


def _norm(channels: int) -> nn.GroupNorm:
    # GroupNorm keeps tiny batches stable and adds no running buffers.
    groups = next(g for g in (8, 4, 2, 1) if channels % g == 0)
    return nn.GroupNorm(groups, channels)


class _Stage(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.down = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.norm1 = _norm(c_out)
        self.conv = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = _norm(c_out)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        x = self.act(self.norm1(self.down(x)))
        return self.act(self.norm2(self.conv(x)))


class ConvBackbone(nn.Module):
    """Input (B, C, H, W) -> features at strides 4, 8, 16, 32."""

    def __init__(self, in_channels: int, widths=(32, 64, 128, 256)):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, w1, 3, stride=2, padding=1),
            _norm(w1),
            nn.ReLU(inplace=True),
        )
        self.stage1 = _Stage(w1, w1)  # stride 4
        self.stage2 = _Stage(w1, w2)  # stride 8
        self.stage3 = _Stage(w2, w3)  # stride 16
        self.stage4 = _Stage(w3, w4)  # stride 32
        self.widths = tuple(widths)

    def forward(self, x) -> list:
        x = self.stem(x)
        c4 = self.stage1(x)
        c8 = self.stage2(c4)
        c16 = self.stage3(c8)
        c32 = self.stage4(c16)
        return [c4, c8, c16, c32]
