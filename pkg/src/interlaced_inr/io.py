"""File formats: raw float32 frame stacks, sinogram stacks, image export and CSV logs.

Every array file is raw little-endian float32 with a JSON sidecar that
records its shape and provenance, so outputs stay readable without this
package.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .acquisition import SinogramFrame, SinogramStack

__all__ = [
    "FRAME_SIDECAR",
    "STACK_SIDECAR",
    "write_frames",
    "read_frames",
    "write_stack",
    "read_stack",
    "export_image",
    "write_history_csv",
    "write_ring_csv",
    "write_metrics_csv",
    "write_table_csv",
    "file_digest",
    "dir_digests",
    "write_json",
]

FRAME_SIDECAR = "frames.json"
STACK_SIDECAR = "stack.json"
_F32 = "<f4"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _to_list(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def write_frames(out_dir, frames, meta: dict | None = None, prefix: str = "frame") -> list[Path]:
    """One ``<prefix>_NNNN.f32`` file per frame plus ``frames.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    if frames.ndim < 3:
        raise ValueError("expected a stack of frames with shape (T, ...)")
    names = []
    for i, f in enumerate(frames):
        name = f"{prefix}_{i:04d}.f32"
        (out / name).write_bytes(np.ascontiguousarray(f, dtype=_F32).tobytes())
        names.append(name)
    side = {"dtype": "float32", "byteorder": "little", "frame_shape": list(frames.shape[1:]), "files": names}
    side.update({k: _to_list(v) for k, v in (meta or {}).items()})
    write_json(out / FRAME_SIDECAR, side)
    return [out / n for n in names]


def read_frames(in_dir) -> tuple[np.ndarray, dict]:
    d = Path(in_dir)
    side_path = d / FRAME_SIDECAR
    if not side_path.exists():
        raise FileNotFoundError(f"no {FRAME_SIDECAR} in {d}")
    side = json.loads(side_path.read_text())
    shape = tuple(side["frame_shape"])
    n = int(np.prod(shape))
    frames = []
    for name in side["files"]:
        raw = np.frombuffer((d / name).read_bytes(), dtype=_F32)
        if raw.size != n:
            raise ValueError(f"{name} holds {raw.size} values, sidecar says {shape}")
        frames.append(raw.reshape(shape))
    return np.stack(frames).astype(np.float64), side


def write_stack(out_dir, stack: SinogramStack, extra: dict | None = None) -> None:
    """Sinogram planes in (frame, angle, detector) order.

    ``sinogram.f32`` always exists; ``counts.f32`` only for noisy stacks.
    Frames must share the angle count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {f.data.shape[0] for f in stack.frames}
    if len(sizes) != 1:
        raise ValueError("frames have different angle counts")
    data = np.stack([f.data for f in stack.frames])
    (out / "sinogram.f32").write_bytes(np.ascontiguousarray(data, dtype=_F32).tobytes())
    if stack.has_counts:
        counts = np.stack([f.counts for f in stack.frames])
        (out / "counts.f32").write_bytes(np.ascontiguousarray(counts, dtype=_F32).tobytes())
    side = {
        "dtype": "float32",
        "byteorder": "little",
        "layout": ["frame", "angle", "detector"],
        "shape": list(data.shape),
        "n_frames": len(stack),
        "n_det": stack.n_det,
        "n_theta": stack.n_theta,
        "k": stack.k,
        "angles": [f.angles.tolist() for f in stack.frames],
        "reference_index": list(stack.reference_index),
        "dose": stack.dose,
        "seed": stack.seed,
        "has_counts": stack.has_counts,
        "bias_id": stack.bias_id,
        "bias": None if stack.bias is None else np.asarray(stack.bias).tolist(),
    }
    side.update({k: _to_list(v) for k, v in (extra or {}).items()})
    write_json(out / STACK_SIDECAR, side)


def read_stack(in_dir) -> tuple[SinogramStack, dict]:
    d = Path(in_dir)
    side_path = d / STACK_SIDECAR
    if not side_path.exists():
        raise FileNotFoundError(f"no {STACK_SIDECAR} in {d}")
    side = json.loads(side_path.read_text())
    shape = tuple(side["shape"])
    data = np.frombuffer((d / "sinogram.f32").read_bytes(), dtype=_F32).reshape(shape).astype(np.float64)
    counts = None
    if side.get("has_counts"):
        counts = np.frombuffer((d / "counts.f32").read_bytes(), dtype=_F32).reshape(shape).astype(np.float64)
    dose = side.get("dose")
    frames = []
    for t, angles in enumerate(side["angles"]):
        c = None if counts is None else counts[t]
        w = None if c is None else c / dose
        frames.append(SinogramFrame(np.asarray(angles), data[t], c, w))
    bias = side.get("bias")
    stack = SinogramStack(
        frames,
        int(side["n_det"]),
        side.get("n_theta"),
        side.get("k"),
        list(side.get("reference_index", [])),
        dose,
        side.get("seed"),
        None if bias is None else np.asarray(bias),
        side.get("bias_id"),
    )
    return stack, side


def export_image(img, path, vmin: float, vmax: float) -> None:
    """Write a 16-bit grayscale PNG or PGM (by suffix), mapping [vmin, vmax] to [0, 65535]."""
    from PIL import Image

    if not vmax > vmin:
        raise ValueError("vmax must exceed vmin")
    path = Path(path)
    if path.suffix.lower() not in (".png", ".pgm"):
        raise ValueError(f"unsupported image format {path.suffix!r}")
    img = np.asarray(img, dtype=np.float64)
    scaled = np.clip((img - vmin) / (vmax - vmin), 0.0, 1.0)
    u16 = np.round(scaled * 65535.0).astype(np.uint16)
    Image.fromarray(u16).save(path)


def write_history_csv(path, history) -> None:
    """One row per outer iteration."""
    n_frames = max((len(r.data_residual) for r in history), default=0)
    header = ["iteration", "order", "mean_residual"] + [f"data_residual_{t}" for t in range(n_frames)]
    header += ["mse", "tv_space", "tv_time", "tv_axial", "lr", "ring_norm", "cgls_flags"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in history:
            row = [r.iteration, r.order, repr(r.mean_residual)] + [repr(v) for v in r.data_residual]
            row += [repr(v) for v in (r.mse, r.tv_space, r.tv_time, r.tv_axial, r.lr, r.ring_norm)]
            row.append(";".join(r.cgls_flags))
            w.writerow(row)


def write_ring_csv(path, c) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["detector", "bias"])
        for i, v in enumerate(np.asarray(c, dtype=np.float64)):
            w.writerow([i, repr(float(v))])


def write_metrics_csv(path, report, name: str) -> None:
    """Per-frame rows followed by the aggregate ``mean ± std`` row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "frame", "psnr", "ssim"])
        for t, (p, s) in enumerate(report.per_frame):
            w.writerow([name, t, f"{p:.6f}", f"{s:.6f}"])
        row = report.row(name)
        w.writerow([name, "mean±std", row["psnr"], row["ssim"]])


def write_table_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dir_digests(d) -> dict[str, str]:
    """SHA-256 of every regular file directly inside ``d``, by name."""
    d = Path(d)
    return {p.name: file_digest(p) for p in sorted(d.iterdir()) if p.is_file()}
