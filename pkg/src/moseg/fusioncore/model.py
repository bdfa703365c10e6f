"""The two-stream segmenter: backbones, encoders, query decoding, fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import ConvBackbone
from .config import FusionConfig
from .decoder import DecoderBlock, MaskedQueryHead, attention_mask_from_logits
from .deformable import DeformableEncoder
from .position import sine_position_encoding

_PROJ_WIDTH = 16  # width after the 1x1 input projection, before the backbone


@dataclass
class FeaturePyramid:
    levels: list  # (B, d_model, H_l, W_l) at strides 8, 16, 32
    mask_features: torch.Tensor  # (B, d_model, H/4, W/4)


@dataclass
class QuerySet:
    embeddings: torch.Tensor  # (B, N, d)
    modality: str  # appearance | motion | bottleneck


@dataclass
class Prediction:
    mask_logits: torch.Tensor  # (B, N, H/4, W/4)
    class_logits: torch.Tensor  # (B, N, 2)
    layer_index: int


class StreamBranch(nn.Module):
    """Everything one modality owns: projection, backbone, laterals, queries,
    decoder blocks, prediction head, and (when not encoder-fused) an encoder."""

    def __init__(self, cfg: FusionConfig, in_channels: int, own_encoder: bool):
        super().__init__()
        d = cfg.d_model
        widths = cfg.backbone_widths
        self.in_proj = nn.Conv2d(in_channels, _PROJ_WIDTH, 1)
        self.backbone = ConvBackbone(_PROJ_WIDTH, widths)
        self.laterals = nn.ModuleList(
            nn.Conv2d(widths[i], d, 1) for i in (1, 2, 3)
        )
        self.mask_lateral = nn.Conv2d(widths[0], d, 1)
        self.mask_out = nn.Conv2d(d, d, 3, padding=1)
        self.encoder = (
            DeformableEncoder(d, cfg.n_heads, cfg.n_enc_layers, cfg.n_points, cfg.ffn_dim, fused=False)
            if own_encoder
            else None
        )
        self.query_feat = nn.Parameter(torch.zeros(cfg.n_queries, d))
        self.query_pos = nn.Parameter(torch.zeros(cfg.n_queries, d))
        self.level_embed = nn.Parameter(torch.zeros(3, d))
        for p in (self.query_feat, self.query_pos, self.level_embed):
            nn.init.normal_(p, std=0.02)
        self.blocks = nn.ModuleList(
            DecoderBlock(d, cfg.n_heads, cfg.ffn_dim) for _ in range(cfg.n_dec_layers)
        )
        self.head = MaskedQueryHead(d)

    def extract(self, x) -> tuple:
        """Input image/field -> (stride-4 map, [stride 8, 16, 32 laterals])."""
        c4, c8, c16, c32 = self.backbone(self.in_proj(x))
        return c4, [lat(c) for lat, c in zip(self.laterals, (c8, c16, c32))]

    def build_pyramid(self, c4, encoded_levels) -> FeaturePyramid:
        up = F.interpolate(encoded_levels[0], size=c4.shape[2:], mode="bilinear", align_corners=False)
        mask_features = self.mask_out(self.mask_lateral(c4) + up)
        return FeaturePyramid(levels=list(encoded_levels), mask_features=mask_features)


class TwoStreamSegmenter(nn.Module):
    """Appearance + motion instance segmenter with selectable fusion."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        encoder_fused = cfg.mechanism in ("encoder", "encoder_decoder")
        streams = {}
        if cfg.two_stream or cfg.single_stream == "rgb":
            streams["rgb"] = StreamBranch(cfg, cfg.rgb_channels, own_encoder=not encoder_fused)
        if cfg.two_stream or cfg.single_stream == "motion":
            streams["motion"] = StreamBranch(cfg, cfg.motion_channels, own_encoder=not encoder_fused)
        self.streams = nn.ModuleDict(streams)
        self.fused_encoder = (
            DeformableEncoder(cfg.d_model, cfg.n_heads, cfg.n_enc_layers, cfg.n_points, cfg.ffn_dim, fused=True)
            if encoder_fused
            else None
        )
        if cfg.mechanism == "mbt_decoder":
            self.bottleneck_feat = nn.Parameter(torch.zeros(cfg.n_bottleneck, cfg.d_model))
            self.bottleneck_pos = nn.Parameter(torch.zeros(cfg.n_bottleneck, cfg.d_model))
            nn.init.normal_(self.bottleneck_feat, std=0.02)
            nn.init.normal_(self.bottleneck_pos, std=0.02)
            self.bottleneck_blocks = nn.ModuleList(
                DecoderBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim)
                for _ in range(cfg.n_dec_layers)
            )
        if cfg.two_stream:
            self.mask_fuse = nn.Conv2d(2, 1, 1)
            self.class_fuse = nn.Linear(4, 2)
        if cfg.share_positional and cfg.two_stream:
            self.streams["motion"].query_pos = self.streams["rgb"].query_pos
            self.streams["motion"].level_embed = self.streams["rgb"].level_embed
            if not encoder_fused:
                self.streams["motion"].encoder.level_embed = self.streams["rgb"].encoder.level_embed

    @property
    def stream_names(self) -> list:
        if self.cfg.two_stream:
            return ["rgb", "motion"]
        return [self.cfg.single_stream]

    def fuse_outputs(self, pred_rgb: Prediction, pred_motion: Prediction) -> Prediction:
        if pred_rgb.mask_logits.shape[1] != pred_motion.mask_logits.shape[1]:
            raise ValueError("streams must predict the same number of queries")
        b, n, h, w = pred_rgb.mask_logits.shape
        stacked = torch.stack([pred_rgb.mask_logits, pred_motion.mask_logits], dim=2)
        fused_masks = self.mask_fuse(stacked.reshape(b * n, 2, h, w)).reshape(b, n, h, w)
        fused_classes = self.class_fuse(
            torch.cat([pred_rgb.class_logits, pred_motion.class_logits], dim=-1)
        )
        return Prediction(fused_masks, fused_classes, pred_rgb.layer_index)

    def _memory(self, pyramids: dict, level: int) -> dict:
        """Flattened tokens and positional encodings per stream at one level."""
        out = {}
        for name, pyr in pyramids.items():
            f = pyr.levels[level]
            b, d, h, w = f.shape
            tokens = f.flatten(2).transpose(1, 2)
            pos = sine_position_encoding(h, w, d, f.device, f.dtype)
            pos = pos[None] + self.streams[name].level_embed[level]
            out[name] = (tokens, pos.expand(b, -1, -1), (h, w))
        return out

    def decode(self, pyramids: dict, isolate_streams: bool = False) -> list:
        """Run the query decoder; returns per-prediction-set dict of stream
        Prediction objects (n_dec_layers + 1 sets)."""
        cfg = self.cfg
        names = self.stream_names
        mech = cfg.mechanism
        batch = next(iter(pyramids.values())).mask_features.shape[0]

        q = {
            n: self.streams[n].query_feat[None].expand(batch, -1, -1)
            for n in names
        }
        q_pos = {
            n: self.streams[n].query_pos[None].expand(batch, -1, -1)
            for n in names
        }
        preds = {
            n: Prediction(*reversed(self.streams[n].head(q[n], pyramids[n].mask_features)), 0)
            for n in names
        }
        sets = [dict(preds)]

        fused_decode = mech in ("decoder", "encoder_decoder") and len(names) == 2
        mbt = mech == "mbt_decoder"
        if mbt:
            b_tokens = self.bottleneck_feat[None].expand(batch, -1, -1)
            b_pos = self.bottleneck_pos[None].expand(batch, -1, -1)

        level_order = [2, 1, 0]  # 1/32 -> 1/16 -> 1/8, repeated
        for layer in range(cfg.n_dec_layers):
            level = level_order[layer % 3]
            memory = self._memory(pyramids, level)
            masks = {
                n: attention_mask_from_logits(
                    sets[-1][n].mask_logits, memory[n][2], cfg.mask_threshold
                )
                for n in names
            }

            if mbt:
                # Bottleneck reads both streams before the modality queries run.
                block = self.bottleneck_blocks[layer]
                mem_all = torch.cat([memory[n][0] for n in names], dim=1)
                pos_all = torch.cat([memory[n][1] for n in names], dim=1)
                b_tokens = block.cross(b_tokens, b_pos, mem_all, pos_all)
                b_tokens = block.self_mix(b_tokens, b_pos, b_tokens, b_pos)
                b_tokens = block.ffn(b_tokens)

            new_q = {}
            for n in names:
                block = self.streams[n].blocks[layer]
                mem, pos, _ = memory[n]
                mask = masks[n]
                if fused_decode:
                    other = names[1] if n == "rgb" else names[0]
                    mem = torch.cat([memory[n][0], memory[other][0]], dim=1)
                    pos = torch.cat([memory[n][1], memory[other][1]], dim=1)
                    if isolate_streams:
                        blocked = torch.zeros_like(masks[n])
                        mask = torch.cat([masks[n], blocked], dim=-1)
                    else:
                        mask = torch.cat([masks[n], masks[n]], dim=-1)
                elif mbt:
                    allow = torch.ones(
                        batch, cfg.n_queries, b_tokens.shape[1],
                        dtype=torch.bool, device=mask.device,
                    )
                    if isolate_streams:
                        allow = allow & False
                    mem = torch.cat([mem, b_tokens], dim=1)
                    pos = torch.cat([pos, b_pos], dim=1)
                    mask = torch.cat([mask, allow], dim=-1)
                new_q[n] = block.cross(q[n], q_pos[n], mem, pos, mask)
            q = new_q

            if fused_decode:
                all_q = torch.cat([q[n] for n in names], dim=1)
                all_pos = torch.cat([q_pos[n] for n in names], dim=1)
                self_mask = None
                if isolate_streams:
                    n_q = cfg.n_queries
                    self_mask = torch.zeros(
                        batch, n_q, 2 * n_q, dtype=torch.bool, device=all_q.device
                    )
                updated = {}
                for i, n in enumerate(names):
                    mask = None
                    if self_mask is not None:
                        mask = self_mask.clone()
                        mask[:, :, i * cfg.n_queries : (i + 1) * cfg.n_queries] = True
                    updated[n] = self.streams[n].blocks[layer].self_mix(
                        q[n], q_pos[n], all_q, all_pos, mask
                    )
                q = updated
            else:
                q = {
                    n: self.streams[n].blocks[layer].self_mix(q[n], q_pos[n], q[n], q_pos[n])
                    for n in names
                }

            q = {n: self.streams[n].blocks[layer].ffn(q[n]) for n in names}
            sets.append(
                {
                    n: Prediction(
                        *reversed(self.streams[n].head(q[n], pyramids[n].mask_features)),
                        layer + 1,
                    )
                    for n in names
                }
            )
        return sets

    def forward(self, rgb=None, motion=None, isolate_streams: bool = False, return_streams: bool = False):
        cfg = self.cfg
        inputs = {"rgb": rgb, "motion": motion}
        names = self.stream_names
        for n in names:
            if inputs[n] is None:
                raise ValueError(f"mechanism {cfg.mechanism} needs the {n} input")

        c4s, lats = {}, {}
        for n in names:
            c4s[n], lats[n] = self.streams[n].extract(inputs[n])

        if self.fused_encoder is not None:
            enc_rgb, enc_motion = self.fused_encoder(lats["rgb"], lats["motion"])
            encoded = {"rgb": enc_rgb, "motion": enc_motion}
        else:
            encoded = {n: self.streams[n].encoder(lats[n]) for n in names}

        pyramids = {
            n: self.streams[n].build_pyramid(c4s[n], encoded[n]) for n in names
        }
        sets = self.decode(pyramids, isolate_streams=isolate_streams)

        if not cfg.two_stream:
            only = names[0]
            final = [s[only] for s in sets]
        else:
            final = [self.fuse_outputs(s["rgb"], s["motion"]) for s in sets]
        if return_streams:
            return final, sets
        return final
