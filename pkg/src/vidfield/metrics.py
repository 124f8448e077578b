"""Reconstruction quality metrics and CSV emission.

PSNR is the decibel form -10*log10(MSE) for signals in [0, 1], capped at
100 dB for exact matches. SSIM is the windowed structural similarity on
mean luma with an 11x11 Gaussian window (sigma 1.5) and the usual
stabilizers K1=0.01, K2=0.03 at dynamic range 1; only full windows count
(valid-mode filtering), so frames must be at least 11x11.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class FrameMetrics:
    frame: int
    psnr: float
    ssim: float


def mse_to_psnr(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio between two equally-shaped frames."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return mse_to_psnr(float(np.mean(np.square(a.astype(np.float64) - b.astype(np.float64)))))


def _gaussian_kernel(width: int, sigma: float) -> np.ndarray:
    offsets = np.arange(width) - (width - 1) / 2.0
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    tmp = sliding_window_view(img, len(kernel), axis=0) @ kernel
    return sliding_window_view(tmp, len(kernel), axis=1) @ kernel


def _luma(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return frame.mean(axis=2)
    if frame.ndim == 2:
        return frame
    raise ValueError(f"expected (H, W) or (H, W, 3) frame, got shape {frame.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over all full 11x11 windows of the luma planes."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    ya = _luma(a)
    yb = _luma(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"frame {ya.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _filter_valid(ya, kernel)
    mu_b = _filter_valid(yb, kernel)
    var_a = _filter_valid(ya * ya, kernel) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, kernel) - mu_b * mu_b
    cov = _filter_valid(ya * yb, kernel) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def per_frame_curve(recon: np.ndarray, truth: np.ndarray) -> list[FrameMetrics]:
    """Per-frame PSNR/SSIM records for two (T, H, W, 3) arrays."""
    recon = np.asarray(recon)
    truth = np.asarray(truth)
    if recon.shape != truth.shape:
        raise ValueError(f"shapes differ: {recon.shape} vs {truth.shape}")
    return [
        FrameMetrics(t, psnr(recon[t], truth[t]), ssim(recon[t], truth[t]))
        for t in range(recon.shape[0])
    ]


def frame_curve_csv(records: list[FrameMetrics]) -> str:
    lines = ["frame,psnr,ssim"]
    for r in records:
        lines.append(f"{r.frame},{r.psnr:.6g},{r.ssim:.6g}")
    return "\n".join(lines) + "\n"


def rd_table(points) -> str:
    """Rate-distortion CSV, rows sorted by ascending BPP.

    Each point is (bpp, psnr, ssim) or (bpp, psnr, ssim, label).
    """
    rows = []
    for p in points:
        bpp, p_db, s = p[0], p[1], p[2]
        label = p[3] if len(p) > 3 else ""
        rows.append((float(bpp), float(p_db), float(s), str(label)))
    if not rows:
        raise ValueError("rate-distortion table needs at least one point")
    rows.sort(key=lambda r: r[0])
    lines = ["bpp,psnr,ssim,label"]
    for bpp, p_db, s, label in rows:
        lines.append(f"{bpp:.6g},{p_db:.6g},{s:.6g},{label}")
    return "\n".join(lines) + "\n"
