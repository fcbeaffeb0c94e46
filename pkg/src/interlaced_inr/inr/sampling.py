"""Coordinate grids in [-1, 1] for evaluating the network."""

from __future__ import annotations

import numpy as np

__all__ = ["pixel_centers", "jittered_grid", "full_grid", "downsample", "with_extra_coords", "normalized_axis"]


def pixel_centers(n: int) -> np.ndarray:
    return (2.0 * np.arange(n) + 1.0) / n - 1.0


def normalized_axis(n: int) -> np.ndarray:
    """``n`` evenly spaced values spanning [-1, 1] (zero when ``n == 1``)."""
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def jittered_grid(h: int, w: int, s: int = 1, rng=None, jitter: bool = True) -> np.ndarray:
    """Coarse-cell centres of an ``h x w`` image with optional uniform jitter.

    Returns ``(h/s * w/s, 2)`` points as ``(x, y)`` with ``x`` along the
    width, row-major over the coarse grid. Jitter is uniform in
    ``(-s/2, s/2)`` pixels per axis and point, so every sample stays inside
    its own cell.
    """
    if s < 1 or h % s or w % s:
        raise ValueError(f"downsample factor {s} must divide the image size {h}x{w}")
    hc, wc = h // s, w // s
    y = (2.0 * np.arange(hc) * s + s) / h - 1.0
    x = (2.0 * np.arange(wc) * s + s) / w - 1.0
    yy, xx = np.meshgrid(y, x, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    if jitter and s >= 1:
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        offsets = rng.uniform(-0.5 * s, 0.5 * s, size=pts.shape)
        pts = pts + offsets * np.array([2.0 / w, 2.0 / h])
        np.clip(pts, -1.0, 1.0, out=pts)
    return pts


def full_grid(h: int, w: int) -> np.ndarray:
    return jittered_grid(h, w, 1, jitter=False)


def downsample(img: np.ndarray, s: int) -> np.ndarray:
    """Mean pooling over ``s x s`` blocks of the last two axes."""
    if s == 1:
        return img
    *lead, h, w = img.shape
    return img.reshape(*lead, h // s, s, w // s, s).mean(axis=(-1, -3))


def with_extra_coords(xy: np.ndarray, *extra: float) -> np.ndarray:
    """Append constant coordinates (e.g. ``z`` and ``t``) to every point."""
    cols = [xy] + [np.full((xy.shape[0], 1), float(v)) for v in extra]
    return np.concatenate(cols, axis=1)
