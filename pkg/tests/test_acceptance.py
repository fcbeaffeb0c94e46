"""End-to-end acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (printed immediately and repeated
in the terminal summary) before asserting.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, dense_projector
from interlaced_inr.acquisition import (
    apply_poisson,
    build_schedule,
    gaussian_bumps_bias,
    inject_ring_bias,
    interlaced_angle,
    simulate_scan,
)
from interlaced_inr.admm import ReconstructionConfig, TvConfig, admm_reconstruct, fbp_frames, reconstruct_4d
from interlaced_inr.cli import main
from interlaced_inr.inr import EncodingConfig, InrConfig, InrModel, inr_backward, inr_forward, tv_axial, tv_spatial, tv_temporal
from interlaced_inr.metrics import dynamic_range, evaluate_sequence, psnr, ssim
from interlaced_inr.phantom import ChParams, PhaseField, amplification_factor, ch_step, initial_field, map_attenuation, simulate_sequence
from interlaced_inr.solvers import CglsConfig, cgls_xupdate
from interlaced_inr.tomo import ProjectorGeometry, adjoint_defect, full_coverage_n_det

pytestmark = pytest.mark.slow


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line, flush=True)


def fd4(f, x, h):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        x0 = flat[i]
        vals = []
        for s in (2, 1, -1, -2):
            flat[i] = x0 + s * h
            vals.append(f())
        flat[i] = x0
        g.reshape(-1)[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-3 * np.abs(b).max())))


def test_01_adjoint_certification():
    geom = ProjectorGeometry((64, 64), np.linspace(0, np.pi, 32, endpoint=False), n_det=64)
    adjoint_defect(geom, 1, seed=99)  # compile outside the timed region
    t0 = time.perf_counter()
    worst = float(adjoint_defect(geom, 100, seed=0).max())
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and secs < 10
    record(1, "adjoint certification", ok, f"max relative defect {worst:.2e} over 100 pairs in {secs:.2f} s")
    assert ok


def test_02_cgls_oracle():
    t0 = time.perf_counter()
    geom = ProjectorGeometry((8, 8), np.linspace(0, np.pi, 24, endpoint=False), n_det=12)
    P = dense_projector(geom)
    rng = np.random.default_rng(2)
    worst = 0.0
    for mu in (0.0, 0.1, 10.0):
        for wls in (False, True):
            y, z = rng.standard_normal((24, 12)), rng.standard_normal((8, 8))
            w = rng.uniform(0.2, 1.0, (24, 12)) if wls else np.ones((24, 12))
            res = cgls_xupdate(geom, y, z, CglsConfig(500, 1e-13, mu), weights=w if wls else None)
            lhs = P.T @ (w.ravel()[:, None] * P) + mu * np.eye(64)
            ref = np.linalg.solve(lhs, P.T @ (w * y).ravel() + mu * z.ravel())
            worst = max(worst, np.linalg.norm(res.x.ravel() - ref) / np.linalg.norm(ref))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-6 and secs < 5
    record(2, "CGLS oracle equivalence", ok, f"max relative error {worst:.2e} over 6 cases in {secs:.2f} s")
    assert ok


def test_03_gradient_integrity():
    t0 = time.perf_counter()
    worst = {"network": 0.0, "modulation": 0.0, "tv_spatial": 0.0, "tv_temporal": 0.0, "tv_axial": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = InrModel(InrConfig(EncodingConfig(3, 2.0, 3), hidden=4, n_layers=2, seed=seed, dtype="float64"))
        for sl in m.modulation_slices():
            m.params[sl] += rng.normal(0.0, 0.1, 4)
        feats = m.encode(rng.uniform(-1, 1, (5, 3)))
        g = rng.standard_normal(5)
        _, cache = inr_forward(m, feats)
        an = inr_backward(m, cache, g)
        fd = fd4(lambda: float(g @ inr_forward(m, feats, keep_cache=False)[0]), m.params, 1e-5)
        mods = np.concatenate(m.modulation_slices())
        worst["network"] = max(worst["network"], rel_err(an, fd))
        worst["modulation"] = max(worst["modulation"], rel_err(an[mods], fd[mods]))
        img, prev, vol = rng.standard_normal((5, 6)), rng.standard_normal((5, 6)), rng.standard_normal((3, 4, 5))
        for name, fn, x, args in (
            ("tv_spatial", tv_spatial, img, ()),
            ("tv_temporal", tv_temporal, img, (prev,)),
            ("tv_axial", tv_axial, vol, ()),
        ):
            grad = fn(x, *args, eps=1e-2)[1]
            num = fd4(lambda: fn(x, *args, eps=1e-2)[0], x, 1e-4)
            worst[name] = max(worst[name], rel_err(grad, num))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-6 and secs < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(3, "gradient integrity", ok, f"max relative error over 20 seeds: {detail} ({secs:.1f} s)")
    assert ok


def test_04_phantom_physics():
    f0 = initial_field((64, 64), seed=4)
    f = f0
    p = ChParams()
    for _ in range(1000):
        f = ch_step(f, p)
    drift = abs(f.mean() - f0.mean())
    n = 32
    q = ChParams(mobility=0.7, epsilon=1.5, dt=0.3)
    x = np.arange(n)
    worst = 0.0
    for kx, ky in [(1, 0), (2, 3), (5, 1), (0, 7), (8, 8)]:
        mode = np.cos(2 * np.pi * (kx * x[None, :] + ky * x[:, None]) / n)
        out = ch_step(PhaseField(0.5 + 1e-6 * mode), q).grid - 0.5
        gain = float(np.sum(out * mode) / np.sum(mode * mode)) / 1e-6
        ref = float(amplification_factor(np.array((2 * np.pi / n) ** 2 * (kx * kx + ky * ky)), q))
        worst = max(worst, abs(gain - ref) / abs(ref))
    ok = drift <= 1e-8 and worst <= 1e-6
    record(4, "phantom physics", ok, f"mean drift {drift:.1e} over 1000 steps, max mode-gain error {worst:.1e}")
    assert ok


def test_05_schedule_correctness():
    bad = []
    for n_theta in range(4, 257):
        for k in (1, 2, 4, 8, 16):
            if n_theta % k:
                continue
            idx = build_schedule(n_theta, k).angles * n_theta / np.pi
            if not (np.allclose(idx, np.rint(idx), atol=1e-9) and sorted(np.rint(idx).astype(int)) == list(range(n_theta))):
                bad.append((n_theta, k))
    example = [interlaced_angle(i, 4, 2) for i in range(4)]
    ex_ok = np.allclose(example, [0, np.pi / 2, np.pi / 4, 3 * np.pi / 4], atol=1e-15)
    ok = not bad and ex_ok
    record(5, "schedule correctness", ok, f"{len(bad)} (N, K) pairs off the lattice; (4, 2) sequence {'matches' if ex_ok else 'differs'}")
    assert ok


def _spinodal(n, epsilon, n_states, every, seed):
    p = ChParams(epsilon=epsilon)
    start = simulate_sequence((n, n), p, 150, 150, seed=seed)[-1]
    return [map_attenuation(f).values for f in simulate_sequence(start, p, (n_states - 1) * every, every)]


def test_06_ring_round_trip():
    imgs = _spinodal(64, 0.25, 64, 1, seed=1)
    geom = ProjectorGeometry((64, 64), [0.0], n_det=full_coverage_n_det(64))
    stack = simulate_scan(imgs, build_schedule(64, 8), geom)
    peak = max(float(np.abs(f.data).max()) for f in stack.frames)
    bias = gaussian_bumps_bias(geom.n_det, 0.1 * peak)
    ringed = inject_ring_bias(stack, bias)
    base = dict(
        outer_iters=15, inr_updates_per_iter=10, hidden=64, mapping_size=64, time_scale=0.1,
        cgls=CglsConfig(20, 1e-6, 10.0), tv=TvConfig(lambda_s=0.1),
    )
    on = admm_reconstruct(ringed, geom, ReconstructionConfig(ring_correction=True, **base))
    off = admm_reconstruct(ringed, geom, ReconstructionConfig(ring_correction=False, **base))
    c0 = bias.c - bias.c.mean()
    err = float(np.linalg.norm(on.ring_bias.c - c0) / np.linalg.norm(c0))
    r_on, r_off = np.mean(on.history[-1].data_residual), np.mean(off.history[-1].data_residual)
    ok = err <= 0.05 and r_on < r_off
    record(6, "ring round-trip", ok, f"bias relative error {err:.3f} (limit 0.05); data residual {r_on:.4f} with correction vs {r_off:.4f} without")
    assert err <= 0.05, "the even part of an angle-invariant bias is not identifiable from the data (see the decisions ledger)"
    assert r_on < r_off


@pytest.fixture(scope="module")
def dynamic_instance():
    imgs = _spinodal(128, 4.0, 64, 4, seed=0)
    geom = ProjectorGeometry((128, 128), [0.0], n_det=183)
    stack = simulate_scan(imgs, build_schedule(64, 8), geom)
    truth = np.stack([imgs[i] for i in stack.reference_index])
    return stack, geom, truth


DYNAMIC_CFG = dict(outer_iters=8, inr_updates_per_iter=20, hidden=128, mapping_size=128, time_scale=0.1)


def test_07_dynamic_benefit(dynamic_instance):
    stack, geom, truth = dynamic_instance
    fb = evaluate_sequence(fbp_frames(stack, geom), truth)
    t0 = time.perf_counter()
    res = admm_reconstruct(stack, geom, ReconstructionConfig(**DYNAMIC_CFG))
    secs = time.perf_counter() - t0
    inr = evaluate_sequence(res.frames, truth)
    ok = inr.psnr_mean >= fb.psnr_mean + 3 and inr.ssim_mean >= fb.ssim_mean + 0.05 and secs <= 1200
    record(
        7, "dynamic benefit", ok,
        f"ADMM-INR {inr.psnr_mean:.2f} dB / SSIM {inr.ssim_mean:.3f} vs FBP {fb.psnr_mean:.2f} dB / {fb.ssim_mean:.3f} in {secs:.0f} s",
    )
    assert ok


def test_08_noise_ordering(dynamic_instance):
    stack, geom, truth = dynamic_instance
    noisy = apply_poisson(stack, 1e3, seed=0)
    plain = evaluate_sequence(admm_reconstruct(noisy, geom, ReconstructionConfig(**DYNAMIC_CFG)).frames, truth)
    wls = evaluate_sequence(admm_reconstruct(noisy, geom, ReconstructionConfig(wls=True, **DYNAMIC_CFG)).frames, truth)
    ok = wls.ssim_mean >= plain.ssim_mean
    record(8, "noise-regime ordering", ok, f"dose 1e3: SSIM {wls.ssim_mean:.4f} with WLS vs {plain.ssim_mean:.4f} without")
    assert ok


def test_09_metric_unit_values():
    p = psnr(np.full((16, 16), 0.5), np.zeros((16, 16)), 1.0)
    rng = np.random.default_rng(9)
    x = rng.random((32, 32))
    s_same = ssim(x, x, 1.0)
    s_const = ssim(np.zeros((16, 16)), np.ones((16, 16)), 1.0)
    c1 = 1e-4
    ok = abs(p - 6.0206) <= 1e-3 and s_same == 1.0 and abs(s_const - c1 / (1 + c1)) <= 1e-8
    record(9, "metric unit values", ok, f"PSNR {p:.4f} dB, SSIM(x, x) = {s_same!r}, SSIM(0, 1) = {s_const:.6e}")
    assert ok


def test_10_4d_smoke():
    n, n_theta, k = 64, 256, 8
    yy, xx = np.mgrid[:n, :n] / n - 0.5

    def blobs(s):
        out = np.full((n, n), 0.075)
        for cx, cy, vx, vy, r in [(-0.15, -0.1, 0.1, 0.05, 0.12), (0.15, 0.1, -0.05, 0.1, 0.1), (0.0, 0.2, 0.08, -0.1, 0.08)]:
            out += 0.35 * np.exp(-((xx - cx - vx * s) ** 2 + (yy - cy - vy * s) ** 2) / (2 * r * r))
        return out

    imgs = [blobs(i / n_theta) for i in range(n_theta)]
    geom = ProjectorGeometry((n, n), [0.0], n_det=n)
    stack = simulate_scan(imgs, build_schedule(n_theta, k), geom)
    truth = np.stack([imgs[i] for i in stack.reference_index])
    cfg = ReconstructionConfig(
        outer_iters=8, inr_updates_per_iter=30, hidden=64, mapping_size=64, encoding_scale=2.0, time_scale=0.1, axial_batch=4
    )
    t0 = time.perf_counter()
    vol, results = reconstruct_4d([stack] * 8, geom, cfg)
    secs = time.perf_counter() - t0
    mv = dynamic_range(truth)
    boundary = float(np.mean([psnr(vol[t, 3], vol[t, 4], mv) for t in range(k)]))
    fidelity = evaluate_sequence(vol[:, 3], truth).psnr_mean
    ok = vol.shape == (k, 8, n, n) and len(results) == 2 and boundary >= 30 and fidelity >= 25
    record(10, "4D smoke test", ok, f"slices 3|4 agree at {boundary:.2f} dB across the batch boundary; {fidelity:.2f} dB vs truth; {secs:.0f} s")
    assert ok


TINY = """
[phantom]
size = 32
n_frames = 32
burn_in = 50

[scan]
n_theta = 32
k = 4
dose = 1e4

[reconstruct]
outer_iters = 3
inr_updates_per_iter = 3
hidden = 32
mapping_size = 32
wls = true
"""


def _tree(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_11_determinism(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(TINY)
    trees = []
    for run in ("a", "b"):
        root = tmp_path / run
        c = str(cfg)
        assert main(["phantom", "--config", c, "--out", str(root / "seq")]) == 0
        assert main(["scan", str(root / "seq"), "--config", c, "--out", str(root / "scan")]) == 0
        for method in ("fbp", "admm-inr"):
            assert main(["reconstruct", str(root / "scan"), "--config", c, "--method", method, "--out", str(root / method)]) == 0
            assert main(["metrics", str(root / method), "--sequence", str(root / "seq"), "--stack", str(root / "scan"), "--out", str(root / method / "m")]) == 0
        trees.append(_tree(root))
    a, b = trees
    # manifests record input digests, not paths, so whole trees must match
    differing = sorted(k for k in a if a.get(k) != b.get(k)) + sorted(set(b) - set(a))
    ok = not differing and "admm-inr/history.csv" in a
    record(11, "determinism", ok, f"{len(a)} output files compared, {len(differing)} differ (history.csv included)")
    assert ok
