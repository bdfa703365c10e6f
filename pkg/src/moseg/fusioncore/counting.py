"""Instrumented counting of attention query-key pairs.

Every attention primitive reports how many (query, key) interactions it
evaluates: T_q * T_k for dense attention, n_points * n_levels per query for
deformable sampling. Head counts are not multiplied in; the tally tracks the
interaction structure, not FLOPs.
"""

from __future__ import annotations

from collections import defaultdict

_ACTIVE: list = []


class PairCounter:
    """Context manager accumulating attention pairs while active."""

    def __init__(self):
        self.total = 0
        self.by_tag = defaultdict(int)

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def add(self, n: int, tag: str):
        self.total += int(n)
        self.by_tag[tag] += int(n)


def record_pairs(n: int, tag: str = "attention"):
    for counter in _ACTIVE:
        counter.add(n, tag)


def dense_pairs(n_queries: int, n_keys: int, batch: int = 1) -> int:
    return batch * n_queries * n_keys


def deformable_pairs(n_query_tokens: int, n_points: int, n_levels: int, batch: int = 1) -> int:
    return batch * n_query_tokens * n_points * n_levels


def naive_decoder_cross_pairs(n_q: int, t_rgb: int, t_motion: int) -> int:
    """Cross-attention pairs per fused decoder layer: all queries see all tokens."""
    return (2 * n_q) * (t_rgb + t_motion)


def mbt_cross_pairs(n_q: int, n_b: int, t_rgb: int, t_motion: int) -> int:
    """Bottleneck variant: each modality sees own tokens plus the bottleneck,
    and the bottleneck alone sees both streams."""
    return n_q * (t_rgb + n_b) + n_q * (t_motion + n_b) + n_b * (t_rgb + t_motion)
