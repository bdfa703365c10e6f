"""Two-stream fusion transformer for moving-object instance segmentation."""

from .attention import FeedForward, MultiheadAttention, TransformerLayer
from .backbone import ConvBackbone
from .config import MECHANISM_ALIASES, MECHANISMS, FusionConfig
from .counting import (
    PairCounter,
    deformable_pairs,
    dense_pairs,
    mbt_cross_pairs,
    naive_decoder_cross_pairs,
    record_pairs,
)
from .decoder import DecoderBlock, MaskedQueryHead, attention_mask_from_logits
from .deformable import DeformableEncoder, MSDeformAttention, deformable_core
from .model import (
    FeaturePyramid,
    Prediction,
    QuerySet,
    StreamBranch,
    TwoStreamSegmenter,
)
from .position import sine_position_encoding

__all__ = [
    "MECHANISMS",
    "MECHANISM_ALIASES",
    "ConvBackbone",
    "DecoderBlock",
    "DeformableEncoder",
    "FeaturePyramid",
    "FeedForward",
    "FusionConfig",
    "MSDeformAttention",
    "MaskedQueryHead",
    "MultiheadAttention",
    "PairCounter",
    "Prediction",
    "QuerySet",
    "StreamBranch",
    "TransformerLayer",
    "TwoStreamSegmenter",
    "attention_mask_from_logits",
    "deformable_core",
    "deformable_pairs",
    "dense_pairs",
    "mbt_cross_pairs",
    "naive_decoder_cross_pairs",
    "record_pairs",
    "sine_position_encoding",
]
