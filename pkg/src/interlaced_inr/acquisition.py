"""Interlaced view schedules and dynamic scan simulation.

Terminology: ``k`` is the number of sub-frames per rotation of ``n_theta``
projections; a scan of ``n_cycles`` rotations yields ``k * n_cycles`` frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tomo import ProjectorGeometry, radon_forward

__all__ = [
    "bit_reverse",
    "interlaced_angle",
    "AcquisitionSchedule",
    "build_schedule",
    "SinogramFrame",
    "SinogramStack",
    "RingBias",
    "simulate_scan",
    "apply_poisson",
    "inject_ring_bias",
    "gaussian_bumps_bias",
]


def _check_pow2_divisor(n_theta: int, k: int) -> None:
    if k < 1 or (k & (k - 1)) != 0:
        raise ValueError(f"sub-frame count must be a power of two, got {k}")
    if n_theta < 1 or n_theta % k != 0:
        raise ValueError(f"sub-frame count {k} must divide n_theta={n_theta}")


def bit_reverse(value: int, n_bits: int) -> int:
    out = 0
    for _ in range(n_bits):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


def interlaced_angle(n: int, n_theta: int, k: int) -> float:
    """Angle in radians of projection ``n`` in a bit-reversal interlaced scan."""
    _check_pow2_divisor(n_theta, k)
    per_frame = n_theta // k
    n_bits = k.bit_length() - 1
    slot = (n % per_frame) * k + bit_reverse((n * k // n_theta) % k, n_bits)
    return slot * np.pi / n_theta


@dataclass(frozen=True)
class AcquisitionSchedule:
    """Per-projection angle and sub-frame assignment.

    ``subframe[n]`` counts across cycles, so frames of the second rotation
    are numbered ``k .. 2k-1``.
    """

    n_theta: int
    k: int
    angles: np.ndarray
    subframe: np.ndarray

    @property
    def n_frames(self) -> int:
        return int(self.subframe.max()) + 1 if self.subframe.size else 0

    def __len__(self) -> int:
        return int(self.angles.size)

    def frame_indices(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.subframe == t)

    def frame_angles(self, t: int) -> np.ndarray:
        return self.angles[self.subframe == t]


def build_schedule(n_theta: int, k: int, n_cycles: int = 1) -> AcquisitionSchedule:
    _check_pow2_divisor(n_theta, k)
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    n = np.arange(n_cycles * n_theta)
    angles = np.array([interlaced_angle(int(i), n_theta, k) for i in n])
    subframe = (n % n_theta) * k // n_theta + (n // n_theta) * k
    return AcquisitionSchedule(n_theta, k, angles, subframe.astype(np.int64))


@dataclass
class SinogramFrame:
    angles: np.ndarray
    data: np.ndarray
    counts: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != self.angles.size:
            raise ValueError(f"sinogram shape {self.data.shape} does not match {self.angles.size} angles")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != self.data.shape:
                raise ValueError("weights must match the sinogram shape")
            if not (np.all(np.isfinite(self.weights)) and np.all(self.weights > 0)):
                raise ValueError("weights must be strictly positive and finite")


@dataclass
class SinogramStack:
    """Per-frame sinograms of one dynamic scan plus provenance."""

    frames: list[SinogramFrame]
    n_det: int
    n_theta: int | None = None
    k: int | None = None
    reference_index: list[int] = field(default_factory=list)
    dose: float | None = None
    seed: int | None = None
    bias: np.ndarray | None = None
    bias_id: str | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, t) -> SinogramFrame:
        return self.frames[t]

    @property
    def has_counts(self) -> bool:
        return all(f.counts is not None for f in self.frames)

    def all_angles(self) -> np.ndarray:
        return np.concatenate([f.angles for f in self.frames])

    def copy(self) -> "SinogramStack":
        frames = [
            SinogramFrame(
                f.angles.copy(),
                f.data.copy(),
                None if f.counts is None else f.counts.copy(),
                None if f.weights is None else f.weights.copy(),
            )
            for f in self.frames
        ]
        return replace(self, frames=frames, reference_index=list(self.reference_index))


@dataclass(frozen=True)
class RingBias:
    """Static additive offset per detector bin."""

    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=np.float64).ravel())


def simulate_scan(
    seq,
    sched: AcquisitionSchedule,
    geom: ProjectorGeometry,
) -> SinogramStack:
    """Project object state ``seq[n]`` at the angle of projection ``n``.

    ``geom`` fixes the image grid, detector and sampling; its angle set is
    ignored. Rows are grouped into one sinogram per sub-frame, in
    acquisition order.
    """
    seq = [np.asarray(s) for s in seq]
    if len(seq) < len(sched):
        raise ValueError(f"need one object state per projection: {len(seq)} states for {len(sched)} projections")
    rows = []
    for n in range(len(sched)):
        g = geom.with_angles([sched.angles[n]])
        rows.append(radon_forward(seq[n], g)[0])
    rows = np.asarray(rows)
    frames = []
    reference = []
    for t in range(sched.n_frames):
        idx = sched.frame_indices(t)
        frames.append(SinogramFrame(sched.angles[idx], rows[idx]))
        reference.append(int(idx[(idx.size - 1) // 2]))
    return SinogramStack(frames, geom.n_det, sched.n_theta, sched.k, reference)


def apply_poisson(stack: SinogramStack, dose: float, seed: int = 0) -> SinogramStack:
    """Photon-counting noise at ``dose`` expected counts per unattenuated ray.

    Every frame draws from its own child stream of ``seed``. Counts are
    clamped to at least one before taking the log; the WLS weights are the
    counts normalised by the dose.
    """
    if not dose > 0:
        raise ValueError(f"dose must be positive, got {dose}")
    children = np.random.SeedSequence(seed).spawn(len(stack))
    out = stack.copy()
    for frame, child in zip(out.frames, children):
        rng = np.random.default_rng(child)
        expected = dose * np.exp(-np.asarray(frame.data, dtype=np.float64))
        counts = np.maximum(rng.poisson(expected), 1).astype(np.float64)
        frame.data = np.log(dose / counts).astype(frame.data.dtype, copy=False)
        frame.counts = counts
        frame.weights = counts / dose
    out.dose = float(dose)
    out.seed = seed
    return out


def inject_ring_bias(stack: SinogramStack, bias: RingBias, bias_id: str | None = None) -> SinogramStack:
    """Add the same detector offset to every row of every frame."""
    if bias.c.size != stack.n_det:
        raise ValueError(f"bias has {bias.c.size} entries, detector has {stack.n_det} bins")
    out = stack.copy()
    for frame in out.frames:
        frame.data = frame.data + bias.c[None, :]
    out.bias = bias.c.copy() if stack.bias is None else stack.bias + bias.c
    out.bias_id = bias_id
    return out


def gaussian_bumps_bias(
    n_det: int,
    amplitude: float,
    centers=(0.3, 0.65),
    width: float = 0.02,
    signs=(1.0, -1.0),
) -> RingBias:
    """Smooth detector bias made of Gaussian bumps.

    ``centers`` and ``width`` are fractions of the detector length.
    """
    u = (np.arange(n_det) + 0.5) / n_det
    c = np.zeros(n_det)
    for mu, s in zip(centers, signs):
        c += s * np.exp(-0.5 * ((u - mu) / width) ** 2)
    return RingBias(amplitude * c)
