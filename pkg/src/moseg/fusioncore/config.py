"""Model configuration for the two-stream segmenter."""

from __future__ import annotations

from dataclasses import dataclass, field

MECHANISMS = ("single", "decoder", "encoder", "encoder_decoder", "mbt_decoder")

# Short aliases accepted on the command line.
MECHANISM_ALIASES = {
    "single": "single",
    "d": "decoder",
    "e": "encoder",
    "ed": "encoder_decoder",
    "mbt": "mbt_decoder",
}


@dataclass(frozen=True)
class FusionConfig:
    mechanism: str = "single"
    d_model: int = 128
    n_heads: int = 4
    n_queries: int = 100
    n_enc_layers: int = 6
    n_dec_layers: int = 9
    n_bottleneck: int = 8
    n_points: int = 4
    dim_feedforward: int = 0  # 0 -> 4 * d_model
    rgb_channels: int = 3
    motion_channels: int = 2
    single_stream: str = "rgb"  # which input feeds the lone stream
    share_positional: bool = False
    backbone_widths: tuple = (32, 64, 128, 256)
    mask_threshold: float = 0.5

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism: {self.mechanism}")
        if self.single_stream not in ("rgb", "motion"):
            raise ValueError("single_stream must be 'rgb' or 'motion'")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.mechanism == "mbt_decoder" and self.n_bottleneck < 1:
            raise ValueError("mbt_decoder needs n_bottleneck >= 1")
        if min(self.n_queries, self.n_enc_layers, self.n_dec_layers, self.n_points) < 1:
            raise ValueError("layer/query/point counts must be positive")
        if len(self.backbone_widths) != 4:
            raise ValueError("backbone_widths must list 4 stages")
        object.__setattr__(self, "backbone_widths", tuple(self.backbone_widths))

    @property
    def ffn_dim(self) -> int:
        return self.dim_feedforward if self.dim_feedforward else 4 * self.d_model

    @property
    def two_stream(self) -> bool:
        return self.mechanism != "single"

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_queries": self.n_queries,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "n_bottleneck": self.n_bottleneck,
            "n_points": self.n_points,
            "dim_feedforward": self.dim_feedforward,
            "rgb_channels": self.rgb_channels,
            "motion_channels": self.motion_channels,
            "single_stream": self.single_stream,
            "share_positional": self.share_positional,
            "backbone_widths": list(self.backbone_widths),
            "mask_threshold": self.mask_threshold,
        }

    @staticmethod
    def from_dict(d: dict) -> "FusionConfig":
        clean = dict(d)
        if "backbone_widths" in clean:
            clean["backbone_widths"] = tuple(clean["backbone_widths"])
        return FusionConfig(**clean)
