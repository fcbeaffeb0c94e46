"""Charbonnier-smoothed total-variation losses with analytic gradients.

All losses subtract the smoothing offset so that constant inputs give exactly
zero, and all are normalised by the number of pixels of the input.
"""

from __future__ import annotations

import numpy as np

__all__ = ["charbonnier", "tv_spatial", "tv_temporal", "tv_axial", "DEFAULT_EPS"]

DEFAULT_EPS = 1e-6


def charbonnier(d, eps: float = DEFAULT_EPS):
    """``sqrt(d^2 + eps^2) - eps`` and its derivative."""
    root = np.sqrt(d * d + eps * eps)
    return root - eps, d / root


def tv_spatial(image: np.ndarray, eps: float = DEFAULT_EPS):
    """Anisotropic TV of the last two axes.

    Forward differences share the ``(H-1) x (W-1)`` support; the sum is
    divided by the total pixel count, so a stack of slices gives the mean of
    the per-slice losses.
    """
    image = np.asarray(image)
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise ValueError("spatial TV needs at least 2x2 pixels")
    n = image.size
    base = image[..., :-1, :-1]
    dx = image[..., :-1, 1:] - base
    dy = image[..., 1:, :-1] - base
    fx, gx = charbonnier(dx, eps)
    fy, gy = charbonnier(dy, eps)
    loss = (fx.sum() + fy.sum()) / n
    grad = np.zeros_like(image)
    grad[..., :-1, 1:] += gx / n
    grad[..., 1:, :-1] += gy / n
    grad[..., :-1, :-1] -= (gx + gy) / n
    return float(loss), grad


def tv_temporal(frame: np.ndarray, prev: np.ndarray, eps: float = DEFAULT_EPS):
    """Mean smoothed ``|frame - prev|``; ``prev`` is treated as a constant."""
    frame = np.asarray(frame)
    prev = np.asarray(prev)
    if frame.shape != prev.shape:
        raise ValueError(f"frame shapes differ: {frame.shape} vs {prev.shape}")
    f, g = charbonnier(frame - prev, eps)
    return float(f.sum() / frame.size), g / frame.size


def tv_axial(volume: np.ndarray, eps: float = DEFAULT_EPS):
    """Smoothed differences between neighbouring slices along axis 0."""
    volume = np.asarray(volume)
    grad = np.zeros_like(volume)
    if volume.shape[0] < 2:
        return 0.0, grad
    n = volume.size
    f, g = charbonnier(volume[1:] - volume[:-1], eps)
    grad[1:] += g / n
    grad[:-1] -= g / n
    return float(f.sum() / n), grad
