"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 configuration or validation error.
Every output directory receives ``config.toml`` (the fully resolved config)
and ``manifest.json`` (package version, command and SHA-256 of the inputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, apply_overrides, dump_config, load_config
from .io import (
    dir_digests,
    export_image,
    read_frames,
    read_stack,
    write_frames,
    write_history_csv,
    write_json,
    write_metrics_csv,
    write_ring_csv,
    write_stack,
    write_table_csv,
)
from .pipeline import generate_phantom, reference_frames, run_metrics, run_reconstruction, run_scan, scan_geometry

log = logging.getLogger("interlaced_inr")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ValidationError(Exception):
    pass


def _prepare_out(out, cfg: ExperimentConfig, command: str, inputs: dict) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.toml")
    manifest = {
        "package": "interlaced_inr",
        "version": __version__,
        "command": command,
        "inputs": {name: dir_digests(d) for name, d in inputs.items()},
    }
    write_json(out / "manifest.json", manifest)
    return out


def cmd_phantom(cfg: ExperimentConfig, out) -> Path:
    out = _prepare_out(out, cfg, "phantom", {})
    frames, meta = generate_phantom(cfg.phantom)
    write_frames(out, frames, meta)
    return out


def cmd_scan(sequence_dir, cfg: ExperimentConfig, out) -> Path:
    frames, meta = read_frames(sequence_dir)
    s = cfg.scan
    needed = s.n_theta * s.n_cycles
    if len(frames) < needed:
        raise ValidationError(f"scan needs {needed} object states, sequence has {len(frames)}")
    out = _prepare_out(out, cfg, "scan", {"sequence": sequence_dir})
    stack, geom = run_scan(frames, meta["pixel_size_mm"], s)
    write_stack(
        out,
        stack,
        {"image_shape": list(geom.shape), "pixel_size_mm": geom.pixel_size, "det_spacing_mm": geom.det_spacing, "step": geom.step},
    )
    if stack.bias is not None:
        write_ring_csv(out / "ring_injected.csv", stack.bias)
    return out


def _stack_geometry(side: dict, cfg: ExperimentConfig):
    shape = tuple(side["image_shape"])
    geom = scan_geometry(shape, side["pixel_size_mm"], replace(cfg.scan, n_det=int(side["n_det"]), step=side["step"]))
    return geom


def cmd_reconstruct(stack_dir, cfg: ExperimentConfig, out) -> Path:
    stack, side = read_stack(stack_dir)
    r = cfg.reconstruct
    if r.method == "admm-inr" and r.wls and not stack.has_counts:
        raise ValidationError("WLS requires photon counts")
    geom = _stack_geometry(side, cfg)
    out = _prepare_out(out, cfg, f"reconstruct:{r.method}", {"stack": stack_dir})
    frames, res = run_reconstruction(stack, geom, r, callback=lambda rec: log.info("iteration %d residual %.5g", rec.iteration, rec.mean_residual))
    meta = {"method": r.method, "units": "mm^-1", "pixel_size_mm": geom.pixel_size}
    if res is not None:
        from .inr.network import save_checkpoint

        meta.update({"best_iteration": res.best_iteration, "best_residual": res.best_residual, "scale": res.scale})
        write_history_csv(out / "history.csv", res.history)
        save_checkpoint(res.model, out / "model.inrckpt", {"best_iteration": res.best_iteration, "scale": res.scale})
        if res.ring_bias is not None:
            write_ring_csv(out / "ring.csv", res.ring_bias.c)
    write_frames(out, frames, meta)
    return out


def cmd_metrics(recon_dir, sequence_dir, stack_dir, cfg: ExperimentConfig, out) -> dict:
    recon, rmeta = read_frames(recon_dir)
    seq, _ = read_frames(sequence_dir)
    _, side = read_stack(stack_dir)
    truth = reference_frames(seq, side)
    if recon.shape != truth.shape:
        raise ValidationError(f"reconstruction {recon.shape} does not match the ground truth {truth.shape}")
    out = _prepare_out(out, cfg, "metrics", {"recon": recon_dir, "sequence": sequence_dir, "stack": stack_dir})
    report = run_metrics(recon, truth, cfg.metrics)
    name = rmeta.get("method", "recon")
    write_metrics_csv(out / "metrics.csv", report, name)
    summary = {
        "method": name,
        "mask": report.mask_mode,
        "max_val": report.max_val,
        "psnr_mean": report.psnr_mean,
        "psnr_std": report.psnr_std,
        "ssim_mean": report.ssim_mean,
        "ssim_std": report.ssim_std,
    }
    write_json(out / "metrics.json", summary)
    return summary


def _experiment_entry(args):
    cfg, entry_dir, overrides = args
    entry_dir = Path(entry_dir)
    rows = []
    try:
        entry_dir.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, entry_dir / "config.toml")
        seq = cmd_phantom(cfg, entry_dir / "phantom")
        stack = cmd_scan(seq, cfg, entry_dir / "scan")
    except Exception as exc:  # a failed entry becomes a failed row
        return [{"entry": entry_dir.name, "overrides": overrides, "method": m, "status": "failed", "error": str(exc)} for m in cfg.experiment.methods]
    for method in cfg.experiment.methods:
        mcfg = replace(cfg, reconstruct=replace(cfg.reconstruct, method=method))
        row = {"entry": entry_dir.name, "overrides": overrides, "method": method}
        try:
            t0 = time.perf_counter()
            rec = cmd_reconstruct(stack, mcfg, entry_dir / method)
            row["seconds"] = f"{time.perf_counter() - t0:.1f}"
            summary = cmd_metrics(rec, seq, stack, mcfg, entry_dir / method / "metrics")
            row.update(
                psnr=f"{summary['psnr_mean']:.2f} ± {summary['psnr_std']:.2f}",
                ssim=f"{summary['ssim_mean']:.3f} ± {summary['ssim_std']:.3f}",
                status="ok",
                error="",
            )
        except Exception as exc:
            log.error("entry %s method %s failed: %s", entry_dir.name, method, exc)
            row.update(status="failed", error=str(exc))
        rows.append(row)
    return rows


def cmd_experiment(cfg: ExperimentConfig, out) -> Path:
    out = _prepare_out(out, cfg, "experiment", {})
    e = cfg.experiment
    base = replace(cfg, experiment=replace(e, sweep=[]))
    entries = e.sweep or [{}]
    jobs = []
    for i, ov in enumerate(entries):
        jobs.append((apply_overrides(base, ov).validate(), out / f"entry_{i:02d}", json.dumps(ov, sort_keys=True)))
    t0 = time.perf_counter()
    if e.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(e.workers, mp_context=multiprocessing.get_context("spawn")) as ex:
            results = list(ex.map(_experiment_entry, jobs))
    else:
        results = [_experiment_entry(j) for j in jobs]
    rows = [r for rs in results for r in rs]
    for r in rows:
        r.setdefault("psnr", "")
        r.setdefault("ssim", "")
        r.setdefault("seconds", "")
    write_table_csv(out / "table.csv", rows)
    minutes = (time.perf_counter() - t0) / 60.0
    if minutes > e.budget_minutes:
        log.warning("experiment took %.1f min, over the %.1f min budget", minutes, e.budget_minutes)
    return out


def cmd_certify_adjoint(size: int, n_angles: int, pairs: int, seed: int, tol: float) -> tuple[bool, float, float]:
    from .tomo import ProjectorGeometry, adjoint_defect

    t0 = time.perf_counter()
    geom = ProjectorGeometry((size, size), np.linspace(0, np.pi, n_angles, endpoint=False), n_det=size)
    defects = adjoint_defect(geom, pairs, seed)
    worst = float(np.max(defects))
    return worst <= tol, worst, time.perf_counter() - t0


def cmd_export_png(frames_dir, out, reference_dir=None, fmt: str = "png") -> Path:
    frames, meta = read_frames(frames_dir)
    ref = frames if reference_dir is None else read_frames(reference_dir)[0]
    vmin, vmax = float(ref.min()), float(ref.max())
    if not vmax > vmin:
        vmax = vmin + 1.0
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(frames):
        if f.ndim != 2:
            raise ValidationError("export expects 2D frames")
        name = f"frame_{i:04d}.{fmt}"
        export_image(f, out / name, vmin, vmax)
        names.append(name)
    write_json(out / "export.json", {"vmin": vmin, "vmax": vmax, "source": str(frames_dir), "reference": None if reference_dir is None else str(reference_dir), "files": names})
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="interlaced-inr", description="Dynamic interlaced CT simulation and ADMM-INR reconstruction.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML config file (defaults when omitted)")
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    with_config(sub.add_parser("phantom", help="simulate a spinodal-decomposition sequence"))
    sp = with_config(sub.add_parser("scan", help="interlaced scan of a sequence"))
    sp.add_argument("sequence", help="phantom output directory")
    sp.add_argument("--dose", type=float, help="photon dose; adds Poisson noise")
    sp.add_argument("--ring", type=float, help="ring-bias amplitude as a fraction of the sinogram maximum")
    sp = with_config(sub.add_parser("reconstruct", help="reconstruct a sinogram stack"))
    sp.add_argument("stack", help="scan output directory")
    sp.add_argument("--method", choices=["fbp", "admm-inr"])
    sp.add_argument("--wls", action="store_true", help="weighted least squares (needs photon counts)")
    sp.add_argument("--ring-correction", action="store_true")
    sp = with_config(sub.add_parser("metrics", help="PSNR/SSIM of a reconstruction"))
    sp.add_argument("recon")
    sp.add_argument("--sequence", required=True)
    sp.add_argument("--stack", required=True)
    sp.add_argument("--mask", choices=["full", "circle"])
    with_config(sub.add_parser("experiment", help="phantom -> scan -> reconstructions -> metrics sweep"))
    sp = sub.add_parser("certify-adjoint", help="dot-product test of the projector pair")
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--angles", type=int, default=32)
    sp.add_argument("--pairs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp = sub.add_parser("export-png", help="16-bit image export of a frame stack")
    sp.add_argument("frames")
    sp.add_argument("--out", required=True)
    sp.add_argument("--reference", help="sequence whose min/max sets the grey scale")
    sp.add_argument("--format", choices=["png", "pgm"], default="png")
    return p


def _run(args) -> int:
    if args.command == "certify-adjoint":
        ok, worst, secs = cmd_certify_adjoint(args.size, args.angles, args.pairs, args.seed, args.tol)
        print(f"max relative defect {worst:.3e} over {args.pairs} pairs in {secs:.2f} s: {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_RUNTIME
    if args.command == "export-png":
        cmd_export_png(args.frames, args.out, args.reference, args.format)
        return EXIT_OK
    cfg = load_config(args.config)
    if args.command == "phantom":
        cmd_phantom(cfg, args.out)
    elif args.command == "scan":
        s = cfg.scan
        if args.dose is not None:
            s = replace(s, dose=args.dose)
        if args.ring is not None:
            s = replace(s, ring_amplitude=args.ring)
        cmd_scan(args.sequence, replace(cfg, scan=s).validate(), args.out)
    elif args.command == "reconstruct":
        r = cfg.reconstruct
        if args.method:
            r = replace(r, method=args.method)
        if args.wls:
            r = replace(r, wls=True)
        if args.ring_correction:
            r = replace(r, ring_correction=True)
        cmd_reconstruct(args.stack, replace(cfg, reconstruct=r).validate(), args.out)
    elif args.command == "metrics":
        m = cfg.metrics if args.mask is None else replace(cfg.metrics, mask=args.mask)
        summary = cmd_metrics(args.recon, args.sequence, args.stack, replace(cfg, metrics=m), args.out)
        print(f"{summary['method']}: PSNR {summary['psnr_mean']:.2f} ± {summary['psnr_std']:.2f} dB, SSIM {summary['ssim_mean']:.3f} ± {summary['ssim_std']:.3f}")
    elif args.command == "experiment":
        out = cmd_experiment(cfg, args.out)
        print((out / "table.csv").read_text(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
