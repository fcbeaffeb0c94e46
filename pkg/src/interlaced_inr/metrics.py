"""PSNR / SSIM with per-frame and sequence-level reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = ["psnr", "ssim", "circle_mask", "MetricReport", "evaluate_sequence", "dynamic_range"]


def circle_mask(shape) -> np.ndarray:
    """Pixels inside the circle inscribed in the image."""
    h, w = shape
    yy, xx = np.mgrid[:h, :w]
    r = min(h, w) / 2.0
    return ((xx - (w - 1) / 2.0) ** 2 + (yy - (h - 1) / 2.0) ** 2) <= r * r


def _pair(x, x_star):
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x.shape != x_star.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_star.shape}")
    return x, x_star


def psnr(x, x_star, max_val: float, mask=None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images agree."""
    x, x_star = _pair(x, x_star)
    if not max_val > 0:
        raise ValueError("max_val must be positive")
    d = x - x_star if mask is None else (x - x_star)[mask]
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(max_val * max_val / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    g /= g.sum()
    return g


def ssim(
    x,
    x_star,
    max_val: float = 1.0,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    mask=None,
    return_map: bool = False,
):
    """Mean structural similarity over all fully-contained windows.

    Local statistics use a separable Gaussian window. With ``mask``, pixels
    outside are zeroed before filtering and the map is averaged over masked
    window centres only, so nothing outside the mask is ever read.
    """
    x, x_star = _pair(x, x_star)
    if window % 2 == 0 or window < 1:
        raise ValueError("window size must be odd")
    if mask is not None:
        x = np.where(mask, x, 0.0)
        x_star = np.where(mask, x_star, 0.0)
    g = _gaussian_window(window, sigma)

    def filt(img):
        out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
        return ndimage.correlate1d(out, g, axis=1, mode="reflect")

    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    mx = filt(x)
    my = filt(x_star)
    sxx = filt(x * x) - mx * mx
    syy = filt(x_star * x_star) - my * my
    sxy = filt(x * x_star) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    r = window // 2
    valid = np.zeros(smap.shape, dtype=bool)
    valid[r : smap.shape[0] - r, r : smap.shape[1] - r] = True
    if not valid.any():
        raise ValueError(f"image {smap.shape} smaller than the {window}x{window} window")
    if mask is not None:
        valid &= mask
    value = float(smap[valid].mean())
    return (value, smap) if return_map else value


def dynamic_range(frames) -> float:
    frames = np.asarray(frames, dtype=np.float64)
    return float(frames.max() - frames.min())


@dataclass
class MetricReport:
    per_frame: list[tuple[float, float]]
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    mask_mode: str
    max_val: float

    def row(self, name: str) -> dict:
        return {
            "method": name,
            "psnr": f"{self.psnr_mean:.2f} ± {self.psnr_std:.2f}",
            "ssim": f"{self.ssim_mean:.3f} ± {self.ssim_std:.3f}",
        }


def evaluate_sequence(recon, truth, max_val: float | None = None, mask_mode: str = "full") -> MetricReport:
    """PSNR/SSIM per frame plus mean and sample standard deviation.

    ``max_val`` defaults to the dynamic range of the ground-truth sequence.
    ``mask_mode`` is ``"full"`` or ``"circle"``.
    """
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    if max_val is None:
        max_val = dynamic_range(truth)
    if mask_mode not in ("full", "circle"):
        raise ValueError(f"unknown mask mode {mask_mode!r}")
    mask = circle_mask(truth.shape[-2:]) if mask_mode == "circle" else None
    rows = [(psnr(r, t, max_val, mask), ssim(r, t, max_val, mask=mask)) for r, t in zip(recon, truth)]
    p = np.array([a for a, _ in rows])
    s = np.array([b for _, b in rows])
    ddof = 1 if len(rows) > 1 else 0
    return MetricReport(rows, float(p.mean()), float(p.std(ddof=ddof)), float(s.mean()), float(s.std(ddof=ddof)), mask_mode, max_val)
