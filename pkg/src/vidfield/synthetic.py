"""Deterministic synthetic videos for demos, calibration, and tests."""

from __future__ import annotations

import numpy as np

from . import precision
from .video import VideoTensor


def _lattice(T: int, H: int, W: int):
    t = (np.arange(T, dtype=np.float64) + 0.5) / T
    y = (np.arange(H, dtype=np.float64) + 0.5) / H
    x = (np.arange(W, dtype=np.float64) + 0.5) / W
    return np.meshgrid(t, y, x, indexing="ij")


def constant_video(T: int, H: int, W: int, color=(0.2, 0.5, 0.8)) -> VideoTensor:
    data = np.empty((T, H, W, 3), dtype=precision.dtype())
    data[...] = np.asarray(color, dtype=precision.dtype())
    return VideoTensor(data)


def _static_background(tt, yy, xx) -> np.ndarray:
    """Smooth time-invariant pattern, distinct per channel."""
    r = 0.5 + 0.22 * np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
    g = 0.5 + 0.22 * np.cos(2 * np.pi * (xx + yy))
    b = 0.5 + 0.22 * np.sin(2 * np.pi * yy)
    return np.stack([r, g, b], axis=-1)


def moving_sinusoid_video(
    T: int, H: int, W: int, cycles: float = 2.0, amplitude: float = 0.22
) -> VideoTensor:
    """Static background plus a 2D sinusoid translating over time."""
    tt, yy, xx = _lattice(T, H, W)
    frames = _static_background(tt, yy, xx)
    wave = amplitude * np.sin(2 * np.pi * (cycles * xx + cycles * yy - tt))
    frames = frames + wave[..., None] * np.array([1.0, 0.8, 0.6])
    return VideoTensor(np.clip(frames, 0.0, 1.0).astype(precision.dtype()))


def inpainting_scene(
    T: int, H: int, W: int, square: int | None = None
) -> tuple[VideoTensor, np.ndarray, VideoTensor]:
    """Static background occluded by a moving solid square.

    Returns (video with the square, mask marking the square, clean
    background); the mask is True exactly where the square was painted.
    """
    tt, yy, xx = _lattice(T, H, W)
    clean = np.clip(_static_background(tt, yy, xx), 0.0, 1.0).astype(precision.dtype())
    side = square or max(2, min(H, W) // 4)
    video = clean.copy()
    mask = np.zeros((T, H, W), dtype=bool)
    for t in range(T):
        frac = t / max(1, T - 1)
        top = int(round(frac * (H - side)))
        left = int(round(frac * (W - side)))
        video[t, top : top + side, left : left + side] = (0.95, 0.1, 0.1)
        mask[t, top : top + side, left : left + side] = True
    return VideoTensor(video), mask, VideoTensor(clean)
