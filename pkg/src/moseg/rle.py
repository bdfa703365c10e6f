"""Run-length encoding for binary masks.

Masks are flattened row-major and stored as alternating run lengths, always
starting with a zero-run (possibly of length 0). The decoded size is part of
the payload so round-trips need no side channel.
"""

from __future__ import annotations

import numpy as np


def encode_mask(mask: np.ndarray) -> dict:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2D")
    flat = (mask.reshape(-1) != 0).astype(np.int8)
    if flat.size == 0:
        return {"size": [0, 0], "counts": []}
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:  # runs must start with a zero-run
        runs = [0] + runs
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": runs}


def decode_mask(payload: dict) -> np.ndarray:
    h, w = payload["size"]
    counts = payload["counts"]
    if sum(counts) != h * w:
        raise ValueError("run lengths do not cover the mask")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if run < 0:
            raise ValueError("negative run length")
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(h, w)
