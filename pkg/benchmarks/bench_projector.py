"""Forward/adjoint projector throughput: numba kernels against the numpy fallback.

Each backend runs in its own interpreter because the backend is fixed at
import time by ``INTERLACED_INR_BACKEND``.

    python benchmarks/bench_projector.py --size 128 --angles 64 --repeat 5
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

_CHILD = r"""
import json, sys, time
import numpy as np
from interlaced_inr import _accel
from interlaced_inr.tomo import ProjectorGeometry, radon_adjoint, radon_forward, full_coverage_n_det
size, n_angles, repeat = map(int, sys.argv[1:4])
geom = ProjectorGeometry((size, size), np.linspace(0, np.pi, n_angles, endpoint=False), n_det=full_coverage_n_det(size))
rng = np.random.default_rng(0)
img = rng.random((size, size))
sino = rng.random(geom.sino_shape)
t0 = time.perf_counter(); radon_forward(img, geom); radon_adjoint(sino, geom); first = time.perf_counter() - t0
fwd, adj = [], []
for _ in range(repeat):
    t0 = time.perf_counter(); p = radon_forward(img, geom); fwd.append(time.perf_counter() - t0)
    t0 = time.perf_counter(); b = radon_adjoint(sino, geom); adj.append(time.perf_counter() - t0)
print(json.dumps({"backend": _accel.BACKEND, "first_call_s": first, "forward_s": min(fwd), "adjoint_s": min(adj),
                  "checksum": [float(p.sum()), float(b.sum())]}))
"""


def run_backend(backend: str, size: int, angles: int, repeat: int) -> dict:
    env = dict(os.environ, INTERLACED_INR_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-W", "ignore", "-c", _CHILD, str(size), str(angles), str(repeat)],
        env=env, check=True, capture_output=True, text=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--angles", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rows = [run_backend(b, args.size, args.angles, args.repeat) for b in ("numba", "numpy")]
    print(f"{args.size}x{args.size} image, {args.angles} angles, best of {args.repeat}")
    print(f"{'backend':8s} {'first call':>11s} {'forward':>10s} {'adjoint':>10s}")
    for r in rows:
        print(f"{r['backend']:8s} {r['first_call_s']:10.3f}s {r['forward_s'] * 1e3:8.2f}ms {r['adjoint_s'] * 1e3:8.2f}ms")
    nb, npy = rows
    print(f"speed-up forward x{npy['forward_s'] / nb['forward_s']:.1f}, adjoint x{npy['adjoint_s'] / nb['adjoint_s']:.1f}")
    agree = all(abs(a - b) <= 1e-9 * max(1.0, abs(a)) for a, b in zip(nb["checksum"], npy["checksum"]))
    print("backends agree" if agree else "WARNING: backend outputs differ")
    return 0 if agree else 1


if __name__ == "__main__":
    sys.exit(main())
