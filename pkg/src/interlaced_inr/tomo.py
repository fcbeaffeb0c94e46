"""Parallel-beam projector, its exact transpose, and filtered back-projection.

The forward operator is ray driven: every (angle, detector) ray is sampled at
a fixed step, each sample gathers a bilinear interpolation of the image, and
the sum is scaled by the step length in mm. The adjoint scatters every sample
back with the *same* four bilinear weights, so ``<P x, y> == <x, P^T y>``
holds to rounding error.

Both operators exist as numba kernels and as vectorised numpy code; which one
runs is decided once at import time (see :mod:`interlaced_inr._accel`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

__all__ = [
    "ProjectorGeometry",
    "radon_forward",
    "radon_adjoint",
    "fbp",
    "ramp_filter",
    "adjoint_defect",
    "full_coverage_n_det",
]

# Contiguous angle blocks reduced in this fixed order keep the adjoint
# bit-reproducible regardless of how many threads numba uses.
_ADJOINT_BLOCKS = 8


def full_coverage_n_det(width: int) -> int:
    """Detector count whose span covers the image diagonal at every angle."""
    return int(math.ceil(math.sqrt(2.0) * width))


@dataclass(frozen=True)
class ProjectorGeometry:
    """Image grid, detector and angle set of a 2D parallel-beam scan.

    Distances are in mm. ``step`` is the sampling interval along each ray as
    a fraction of ``pixel_size``. The rotation axis sits at pixel coordinate
    ``((W - 1) / 2, (H - 1) / 2)`` and detector bin centres are symmetric
    about it.
    """

    shape: tuple[int, int]
    angles: np.ndarray
    n_det: int | None = None
    pixel_size: float = 0.003
    det_spacing: float | None = None
    step: float = 0.5
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h, w = (int(v) for v in self.shape)
        if h < 1 or w < 1:
            raise ValueError(f"image shape must be positive, got {self.shape}")
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64)).copy()
        if angles.ndim != 1 or angles.size == 0:
            raise ValueError("need a non-empty 1D array of angles")
        if np.any(angles < 0) or np.any(angles >= np.pi):
            raise ValueError("angles must lie in [0, pi)")
        angles.setflags(write=False)
        n_det = w if self.n_det is None else int(self.n_det)
        if n_det < 1:
            raise ValueError("n_det must be >= 1")
        if self.pixel_size <= 0 or self.step <= 0:
            raise ValueError("pixel_size and step must be positive")
        det_spacing = self.pixel_size if self.det_spacing is None else float(self.det_spacing)
        if det_spacing <= 0:
            raise ValueError("det_spacing must be positive")
        object.__setattr__(self, "shape", (h, w))
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "n_det", n_det)
        object.__setattr__(self, "det_spacing", det_spacing)
        object.__setattr__(
            self, "_key", (h, w, n_det, float(self.pixel_size), det_spacing, float(self.step), angles.tobytes())
        )

    def __hash__(self):
        return hash(self._key)

    def __eq__(self, other):
        return isinstance(other, ProjectorGeometry) and self._key == other._key

    @property
    def n_angles(self) -> int:
        return int(self.angles.size)

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_det)

    def with_angles(self, angles) -> "ProjectorGeometry":
        return ProjectorGeometry(
            self.shape, angles, self.n_det, self.pixel_size, self.det_spacing, self.step
        )

    @cached_property
    def _rays(self):
        """Ray layout in pixel units: (cos, sin, detector offsets, sample offsets)."""
        h, w = self.shape
        s = (np.arange(self.n_det) - (self.n_det - 1) / 2.0) * (self.det_spacing / self.pixel_size)
        # Long enough to cross the image diagonal from any detector bin.
        half = 0.5 * math.hypot(h + 2, w + 2)
        n_s = int(math.ceil(2.0 * half / self.step)) + 1
        t = (np.arange(n_s) - (n_s - 1) / 2.0) * self.step
        return np.cos(self.angles), np.sin(self.angles), s, t

    @property
    def center(self) -> tuple[float, float]:
        h, w = self.shape
        return (w - 1) / 2.0, (h - 1) / 2.0

    @property
    def weight(self) -> float:
        """Length in mm represented by one ray sample."""
        return self.step * self.pixel_size


# ---------------------------------------------------------------- kernels


@njit(cache=True, parallel=True, fastmath=False)
def _forward_kernel(image, cos_a, sin_a, s, t, cx, cy, weight, out):
    h, w = image.shape
    n_ang = cos_a.size
    n_det = s.size
    n_s = t.size
    for a in prange(n_ang):
        ca = cos_a[a]
        sa = sin_a[a]
        for k in range(n_det):
            acc = 0.0
            bx = cx + s[k] * ca
            by = cy + s[k] * sa
            for j in range(n_s):
                col = bx - t[j] * sa
                row = by + t[j] * ca
                if col <= -1.0 or row <= -1.0 or col >= w or row >= h:
                    continue
                j0 = int(math.floor(col))
                i0 = int(math.floor(row))
                fx = col - j0
                fy = row - i0
                if i0 >= 0:
                    if j0 >= 0:
                        acc += (1.0 - fy) * (1.0 - fx) * image[i0, j0]
                    if j0 + 1 < w:
                        acc += (1.0 - fy) * fx * image[i0, j0 + 1]
                if i0 + 1 < h:
                    if j0 >= 0:
                        acc += fy * (1.0 - fx) * image[i0 + 1, j0]
                    if j0 + 1 < w:
                        acc += fy * fx * image[i0 + 1, j0 + 1]
            out[a, k] = acc * weight


@njit(cache=True, parallel=True, fastmath=False)
def _adjoint_kernel(sino, cos_a, sin_a, s, t, cx, cy, weight, partial):
    n_blocks, h, w = partial.shape
    n_ang = cos_a.size
    n_det = s.size
    n_s = t.size
    per_block = (n_ang + n_blocks - 1) // n_blocks
    for b in prange(n_blocks):
        img = partial[b]
        for a in range(b * per_block, min(n_ang, (b + 1) * per_block)):
            ca = cos_a[a]
            sa = sin_a[a]
            for k in range(n_det):
                v = sino[a, k] * weight
                if v == 0.0:
                    continue
                bx = cx + s[k] * ca
                by = cy + s[k] * sa
                for j in range(n_s):
                    col = bx - t[j] * sa
                    row = by + t[j] * ca
                    if col <= -1.0 or row <= -1.0 or col >= w or row >= h:
                        continue
                    j0 = int(math.floor(col))
                    i0 = int(math.floor(row))
                    fx = col - j0
                    fy = row - i0
                    if i0 >= 0:
                        if j0 >= 0:
                            img[i0, j0] += (1.0 - fy) * (1.0 - fx) * v
                        if j0 + 1 < w:
                            img[i0, j0 + 1] += (1.0 - fy) * fx * v
                    if i0 + 1 < h:
                        if j0 >= 0:
                            img[i0 + 1, j0] += fy * (1.0 - fx) * v
                        if j0 + 1 < w:
                            img[i0 + 1, j0 + 1] += fy * fx * v


def _angle_samples(geom: ProjectorGeometry, a: int):
    """Bilinear corner indices and weights of every sample of one angle."""
    cos_a, sin_a, s, t = geom._rays
    cx, cy = geom.center
    h, w = geom.shape
    ca, sa = cos_a[a], sin_a[a]
    col = (cx + s[:, None] * ca) - t[None, :] * sa
    row = (cy + s[:, None] * sa) + t[None, :] * ca
    inside = (col > -1.0) & (row > -1.0) & (col < w) & (row < h)
    det_idx = np.broadcast_to(np.arange(s.size)[:, None], col.shape)[inside]
    col = col[inside]
    row = row[inside]
    j0 = np.floor(col).astype(np.int64)
    i0 = np.floor(row).astype(np.int64)
    fx = col - j0
    fy = row - i0
    corners = []
    for di, dj, wgt in (
        (0, 0, (1.0 - fy) * (1.0 - fx)),
        (0, 1, (1.0 - fy) * fx),
        (1, 0, fy * (1.0 - fx)),
        (1, 1, fy * fx),
    ):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
        corners.append((det_idx[ok], ii[ok] * w + jj[ok], wgt[ok]))
    return corners


def _forward_numpy(image, geom):
    out = np.zeros(geom.sino_shape, dtype=np.float64)
    flat = image.ravel()
    for a in range(geom.n_angles):
        row = out[a]
        for det_idx, pix, wgt in _angle_samples(geom, a):
            row += np.bincount(det_idx, weights=wgt * flat[pix], minlength=geom.n_det)
    return out * geom.weight


def _adjoint_numpy(sino, geom):
    h, w = geom.shape
    out = np.zeros(h * w, dtype=np.float64)
    for a in range(geom.n_angles):
        vals = sino[a] * geom.weight
        for det_idx, pix, wgt in _angle_samples(geom, a):
            out += np.bincount(pix, weights=wgt * vals[det_idx], minlength=h * w)
    return out.reshape(h, w)


# ---------------------------------------------------------------- public API


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")


def radon_forward(image: np.ndarray, geom: ProjectorGeometry) -> np.ndarray:
    """Line integrals of ``image`` (mm^-1) along every ray; dimensionless.

    Returns an ``(n_angles, n_det)`` array in the image dtype (float32 inputs
    stay float32, everything else is promoted to float64).
    """
    image = np.asarray(image)
    if image.shape != geom.shape:
        raise ValueError(f"image shape {image.shape} does not match geometry {geom.shape}")
    dtype = np.float32 if image.dtype == np.float32 else np.float64
    image = np.ascontiguousarray(image, dtype=np.float64)
    if HAVE_NUMBA:
        cos_a, sin_a, s, t = geom._rays
        cx, cy = geom.center
        out = np.empty(geom.sino_shape, dtype=np.float64)
        _forward_kernel(image, cos_a, sin_a, s, t, cx, cy, geom.weight, out)
    else:
        out = _forward_numpy(image, geom)
    return out.astype(dtype, copy=False)


def radon_adjoint(sino: np.ndarray, geom: ProjectorGeometry) -> np.ndarray:
    """Exact transpose of :func:`radon_forward` (unfiltered back-projection)."""
    sino = np.asarray(sino)
    if sino.shape != geom.sino_shape:
        raise ValueError(f"sinogram shape {sino.shape} does not match geometry {geom.sino_shape}")
    dtype = np.float32 if sino.dtype == np.float32 else np.float64
    sino = np.ascontiguousarray(sino, dtype=np.float64)
    if HAVE_NUMBA:
        cos_a, sin_a, s, t = geom._rays
        cx, cy = geom.center
        n_blocks = min(_ADJOINT_BLOCKS, geom.n_angles)
        partial = np.zeros((n_blocks,) + geom.shape, dtype=np.float64)
        _adjoint_kernel(sino, cos_a, sin_a, s, t, cx, cy, geom.weight, partial)
        out = partial[0].copy()
        for b in range(1, n_blocks):
            out += partial[b]
    else:
        out = _adjoint_numpy(sino, geom)
    return out.astype(dtype, copy=False)


def ramp_filter(n_det: int, kind: str = "ramlak") -> np.ndarray:
    """Frequency response of the ramp filter on the zero-padded detector axis.

    Built from the band-limited spatial kernel (1/4 at the origin, ``-1/(pi n)^2``
    at odd offsets), which avoids the DC offset of a sampled ``|f|`` ramp.
    The padded length is the next power of two >= ``2 * n_det``.
    """
    size = max(64, int(2 ** math.ceil(math.log2(2 * n_det))))
    n = np.concatenate((np.arange(1, size // 2 + 1, 2), np.arange(size // 2 - 1, 0, -2)))
    kernel = np.zeros(size)
    kernel[0] = 0.25
    kernel[1::2] = -1.0 / (np.pi * n) ** 2
    response = 2.0 * np.real(np.fft.fft(kernel))
    response[0] = 0.0  # the truncated kernel leaves a ~1/size residue at DC
    if kind == "hann":
        freq = np.fft.fftfreq(size)
        response *= 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    elif kind != "ramlak":
        raise ValueError(f"unknown filter {kind!r}; expected 'ramlak' or 'hann'")
    return response


def filter_sinogram(sino: np.ndarray, geom: ProjectorGeometry, kind: str = "ramlak") -> np.ndarray:
    """Ramp-filter every projection; output is per mm of detector."""
    response = ramp_filter(geom.n_det, kind)
    padded = np.fft.fft(np.asarray(sino, dtype=np.float64), n=response.size, axis=1)
    filtered = np.real(np.fft.ifft(padded * response, axis=1))[:, : geom.n_det]
    return filtered / geom.det_spacing


def fbp(sino: np.ndarray, geom: ProjectorGeometry, filter: str = "ramlak") -> np.ndarray:
    """Filtered back-projection in attenuation units (mm^-1)."""
    sino = np.asarray(sino)
    if sino.shape != geom.sino_shape:
        raise ValueError(f"sinogram shape {sino.shape} does not match geometry {geom.sino_shape}")
    filtered = filter_sinogram(sino, geom, filter)
    scale = np.pi / (2.0 * geom.n_angles) * geom.det_spacing / geom.pixel_size**2
    return radon_adjoint(filtered, geom) * scale


def adjoint_defect(geom: ProjectorGeometry, n_pairs: int = 1, seed: int = 0) -> np.ndarray:
    """Relative dot-product defect ``|<Px,y> - <x,P^T y>| / (|Px| |y|)`` per random pair."""
    rng = np.random.default_rng(seed)
    out = np.empty(n_pairs)
    for i in range(n_pairs):
        x = rng.standard_normal(geom.shape)
        y = rng.standard_normal(geom.sino_shape)
        px = radon_forward(x, geom)
        pty = radon_adjoint(y, geom)
        lhs = float(np.vdot(px, y))
        rhs = float(np.vdot(x, pty))
        out[i] = abs(lhs - rhs) / (np.linalg.norm(px) * np.linalg.norm(y))
    return out
