"""Smooth translating test sequences for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from ddcn.video import DegradationConfig, FrameSequence, TrainingPair, crop_pair


def translating_pattern(frames: int = 5, size: int = 96, shift: float = 1.5,
                        seed: int = 0) -> FrameSequence:
    """Colour sinusoid mixture drifting ``shift`` HR pixels per frame along a diagonal."""
    rng = np.random.default_rng(seed)
    waves = []
    for _ in range(4):
        period = rng.uniform(10.0, 24.0)
        theta = rng.uniform(0, np.pi)
        waves.append((2 * np.pi / period * np.cos(theta), 2 * np.pi / period * np.sin(theta),
                      rng.uniform(0, 2 * np.pi), rng.uniform(0.3, 1.0, size=3)))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = []
    for t in range(frames):
        dx = dy = (t - frames // 2) * shift
        img = np.zeros((3, size, size))
        for kx, ky, phase, color in waves:
            img += color[:, None, None] * np.sin(kx * (xx - dx) + ky * (yy - dy) + phase)
        out.append(0.5 + 0.45 * img / len(waves))
    return FrameSequence(out)


def toy_pair(frames: int = 5, size: int = 96, seed: int = 0, sigma: float = 1.6) -> TrainingPair:
    hr = translating_pattern(frames, size, seed=seed)
    return crop_pair(hr, 0, 0, DegradationConfig(sigma=sigma, scale=4, crop=size))
