"""Phantom -> scan -> reconstruction -> metrics, as plain functions over config sections."""

from __future__ import annotations

import numpy as np

from .acquisition import SinogramStack, apply_poisson, build_schedule, gaussian_bumps_bias, inject_ring_bias, simulate_scan
from .admm import admm_reconstruct, fbp_frames
from .config import MetricsSection, PhantomSection, ReconstructSection, ScanSection
from .metrics import MetricReport, evaluate_sequence
from .phantom import ChParams, crop, initial_field, map_attenuation, simulate_sequence
from .tomo import ProjectorGeometry, full_coverage_n_det

__all__ = [
    "generate_phantom",
    "scan_geometry",
    "run_scan",
    "run_reconstruction",
    "reference_frames",
    "run_metrics",
]


def generate_phantom(p: PhantomSection) -> tuple[np.ndarray, dict]:
    """Attenuation frames ``(n_frames, H, W)`` in mm^-1 and their metadata."""
    params = ChParams(p.mobility, p.epsilon, p.dt, p.barrier)
    field = initial_field((p.size, p.size), p.c0, p.noise, p.seed)
    if p.burn_in:
        field = simulate_sequence(field, params, p.burn_in, p.burn_in)[-1]
    states = simulate_sequence(field, params, (p.n_frames - 1) * p.save_every, p.save_every)
    if p.crop_size:
        states = [crop(s, p.crop_origin, (p.crop_size, p.crop_size)) for s in states]
    frames = np.stack([map_attenuation(s, p.threshold, p.mu_low, p.mu_high, p.pixel_size).values for s in states])
    meta = {
        "kind": "attenuation",
        "units": "mm^-1",
        "pixel_size_mm": p.pixel_size,
        "dt": p.dt,
        "steps_per_frame": p.save_every,
        "first_step": p.burn_in,
        "seed": p.seed,
        "params": {"mobility": p.mobility, "epsilon": p.epsilon, "barrier": p.barrier, "c0": p.c0, "noise": p.noise},
    }
    return frames, meta


def scan_geometry(shape, pixel_size: float, s: ScanSection) -> ProjectorGeometry:
    w = shape[-1]
    if s.n_det == "width":
        n_det = w
    elif s.n_det == "full":
        n_det = full_coverage_n_det(w)
    else:
        n_det = int(s.n_det)
    return ProjectorGeometry(tuple(shape[-2:]), [0.0], n_det=n_det, pixel_size=pixel_size, step=s.step)


def run_scan(frames: np.ndarray, pixel_size: float, s: ScanSection) -> tuple[SinogramStack, ProjectorGeometry]:
    """Interlaced scan of ``frames`` (one object state per projection)."""
    geom = scan_geometry(frames.shape, pixel_size, s)
    sched = build_schedule(s.n_theta, s.k, s.n_cycles)
    stack = simulate_scan(frames, sched, geom)
    if s.ring_amplitude > 0:
        peak = max(float(np.abs(f.data).max()) for f in stack.frames)
        signs = [(-1.0) ** i for i in range(len(s.ring_centers))]
        bias = gaussian_bumps_bias(geom.n_det, s.ring_amplitude * peak, s.ring_centers, s.ring_width, signs)
        stack = inject_ring_bias(stack, bias, f"bumps:{s.ring_amplitude:g}")
    if s.dose > 0:
        stack = apply_poisson(stack, s.dose, s.noise_seed)
    return stack, geom


def run_reconstruction(stack: SinogramStack, geom: ProjectorGeometry, r: ReconstructSection, callback=None):
    """``(frames, AdmmResult or None)``; frames in mm^-1."""
    if r.method == "fbp":
        return fbp_frames(stack, geom, r.fbp_filter), None
    res = admm_reconstruct(stack, geom, r.to_reconstruction_config(), callback=callback)
    return res.frames, res


def reference_frames(sequence: np.ndarray, stack_meta: dict) -> np.ndarray:
    """Ground-truth object state of every sub-frame (its central projection)."""
    idx = stack_meta["reference_index"]
    if max(idx) >= len(sequence):
        raise ValueError("the sequence is shorter than the scan it should describe")
    return np.stack([sequence[i] for i in idx])


def run_metrics(recon: np.ndarray, truth: np.ndarray, m: MetricsSection) -> MetricReport:
    return evaluate_sequence(recon, truth, m.max_val or None, m.mask)
