"""Seeded procedural textures.

Each texture is a small bank of sinusoidal gratings over local surface
coordinates, so it is smooth, cheap, and moves rigidly with its surface.
Movable bodies draw from a vivid family (saturated, high contrast) while the
background and immovable bodies draw from a muted family, giving the
appearance stream a learnable cue for what could move.
"""

from __future__ import annotations

import numpy as np

_N_WAVES = 5


class TextureParams:
    def __init__(self, seed: int, family: str):
        rng = np.random.default_rng(seed)
        if family == "movable":
            freq_range = (2.0, 7.0)
            self.contrast = rng.uniform(0.18, 0.30)
            self.base = rng.uniform(0.25, 0.75, size=3)
        elif family == "immovable":
            freq_range = (1.0, 4.0)
            self.contrast = rng.uniform(0.05, 0.10)
            gray = rng.uniform(0.30, 0.60)
            self.base = gray + rng.uniform(-0.04, 0.04, size=3)
        elif family == "background":
            freq_range = (0.15, 0.9)
            self.contrast = rng.uniform(0.04, 0.09)
            gray = rng.uniform(0.35, 0.55)
            self.base = gray + rng.uniform(-0.03, 0.03, size=3)
        else:
            raise ValueError(f"unknown texture family {family}")
        angles = rng.uniform(0.0, np.pi, size=_N_WAVES)
        freqs = rng.uniform(*freq_range, size=_N_WAVES) * 2.0 * np.pi
        self.wave_k = np.stack([np.cos(angles), np.sin(angles)], axis=-1) * freqs[:, None]
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=(3, _N_WAVES))
        self.amp = rng.dirichlet(np.ones(_N_WAVES), size=3)


def texture_rgb(params: TextureParams, xy: np.ndarray) -> np.ndarray:
    """Evaluate the texture at local coordinates xy (..., 2) -> (..., 3) in [0, 1]."""
    proj = xy @ params.wave_k.T  # (..., n_waves)
    out = np.empty(xy.shape[:-1] + (3,), dtype=np.float64)
    for c in range(3):
        wave = np.sin(proj + params.phase[c]) @ params.amp[c]
        out[..., c] = params.base[c] + params.contrast * wave
    return np.clip(out, 0.0, 1.0)
