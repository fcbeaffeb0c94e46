"""CGLS for the per-frame x-update and Huber-IRLS ring-bias estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .acquisition import RingBias, SinogramStack
from .tomo import ProjectorGeometry, radon_adjoint, radon_forward

__all__ = [
    "CglsConfig",
    "CglsResult",
    "cgls_xupdate",
    "RingEstimatorConfig",
    "huber_loss",
    "default_huber_delta",
    "estimate_ring_bias",
    "compute_residuals",
]


@dataclass(frozen=True)
class CglsConfig:
    max_iters: int = 20
    rel_tol: float = 1e-6
    mu: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")


@dataclass
class CglsResult:
    x: np.ndarray
    residual: float
    """Final normal-equation residual ``|A^T (b - A x)|``."""
    status: str
    iterations: int
    history: list[float] = field(default_factory=list)
    """Normal-equation residual before the first and after every iteration."""
    ls_history: list[float] = field(default_factory=list)
    """Least-squares residual ``|b - A x|`` along the same iterations."""


def _operators(op):
    if isinstance(op, ProjectorGeometry):
        return (lambda v: radon_forward(v, op)), (lambda r: radon_adjoint(r, op))
    forward, adjoint = op
    return forward, adjoint


def cgls_xupdate(
    op,
    y: np.ndarray,
    z: np.ndarray,
    cfg: CglsConfig = CglsConfig(),
    weights: np.ndarray | None = None,
    warm_start: np.ndarray | None = None,
) -> CglsResult:
    """Minimise ``1/2 |W^(1/2) (P x - y)|^2 + mu/2 |x - z|^2`` by CGLS.

    Parameters
    ----------
    op : ProjectorGeometry or (forward, adjoint)
        The projector pair ``P, P^T`` of the frame's angle subset.
    y : array
        Measured (or bias-corrected) sinogram.
    z : array
        Proximal target, ``q - u`` in the ADMM splitting.
    cfg : CglsConfig
        Iteration cap, relative tolerance on the normal-equation residual
        and the penalty ``mu``.
    weights : array, optional
        Positive per-ray WLS weights ``w``.
    warm_start : array, optional
        Initial iterate; zeros otherwise.

    Notes
    -----
    CGLS runs on the stacked system ``[W^(1/2) P; sqrt(mu) I] x = [W^(1/2) y; sqrt(mu) z]``,
    so the normal equations ``(P^T W P + mu I) x = P^T W y + mu z`` are never
    formed.
    """
    forward, adjoint = _operators(op)
    y = np.asarray(y)
    z = np.asarray(z)
    dtype = np.result_type(y.dtype, z.dtype, np.float32)
    for arr, what in ((y, "y"), (z, "z"), (warm_start, "warm start"), (weights, "weights")):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise ValueError(f"{what} contains non-finite values")
    sqrt_w = None
    if weights is not None:
        if np.any(np.asarray(weights) <= 0):
            raise ValueError("weights must be strictly positive")
        sqrt_w = np.sqrt(np.asarray(weights, dtype=dtype))
    sqrt_mu = float(np.sqrt(cfg.mu))

    def A(v):
        out = forward(v)
        return out if sqrt_w is None else sqrt_w * out

    def At(r):
        return adjoint(r if sqrt_w is None else sqrt_w * r)

    x = np.zeros(z.shape, dtype=dtype) if warm_start is None else np.array(warm_start, dtype=dtype)
    r1 = (y if sqrt_w is None else sqrt_w * y) - A(x)
    r2 = sqrt_mu * (z - x)
    s = At(r1) + sqrt_mu * r2
    p = s.copy()
    gamma = float(np.vdot(s, s))
    norm0 = np.sqrt(gamma)
    history = [norm0]
    ls_history = [float(np.sqrt(np.vdot(r1, r1) + np.vdot(r2, r2)))]
    status = "max_iters"
    it = 0
    if norm0 == 0.0:
        return CglsResult(x, 0.0, "converged", 0, history, ls_history)
    for it in range(1, cfg.max_iters + 1):
        q1 = A(p)
        q2 = sqrt_mu * p
        delta = float(np.vdot(q1, q1) + np.vdot(q2, q2))
        if delta <= 0.0 or not np.isfinite(delta):
            status = "breakdown"
            it -= 1
            break
        alpha = gamma / delta
        x += alpha * p
        r1 -= alpha * q1
        r2 -= alpha * q2
        s = At(r1) + sqrt_mu * r2
        gamma_new = float(np.vdot(s, s))
        history.append(np.sqrt(gamma_new))
        ls_history.append(float(np.sqrt(np.vdot(r1, r1) + np.vdot(r2, r2))))
        if np.sqrt(gamma_new) <= cfg.rel_tol * norm0:
            status = "converged"
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return CglsResult(x, history[-1], status, it, history, ls_history)


@dataclass(frozen=True)
class RingEstimatorConfig:
    huber_delta: float | None = None
    """Huber threshold in sinogram units; ``None`` picks 1.345 robust sigmas."""
    irls_iters: int = 10
    smooth_lambda: float = 0.0

    def __post_init__(self):
        if self.huber_delta is not None and not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.irls_iters < 1:
            raise ValueError("irls_iters must be >= 1")
        if self.smooth_lambda < 0:
            raise ValueError("smooth_lambda must be >= 0")


def huber_loss(r, delta: float):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))


def default_huber_delta(R: np.ndarray) -> float:
    """1.345 times the normal-consistent MAD of all entries."""
    mad = 1.4826 * float(np.median(np.abs(R - np.median(R))))
    scale = float(np.max(np.abs(R))) if R.size else 0.0
    return max(1.345 * mad, 1e-12 * max(scale, 1.0))


def estimate_ring_bias(R: np.ndarray, cfg: RingEstimatorConfig = RingEstimatorConfig()) -> RingBias:
    """Zero-mean Huber location estimate of every column of ``R``.

    ``R`` stacks sinogram residuals with one row per ray and one column per
    detector bin. IRLS starts from the column medians.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 1:
        raise ValueError("residual matrix must be 2D with at least one row")
    if not np.all(np.isfinite(R)):
        raise ValueError("residual matrix contains non-finite values")
    delta = cfg.huber_delta if cfg.huber_delta is not None else default_huber_delta(R)
    c = np.median(R, axis=0)
    for _ in range(cfg.irls_iters):
        a = np.abs(R - c)
        w = np.where(a <= delta, 1.0, delta / np.maximum(a, delta))
        c = (w * R).sum(axis=0) / w.sum(axis=0)
    if cfg.smooth_lambda > 0 and c.size > 1:
        c = _tikhonov_smooth(c, cfg.smooth_lambda)
    return RingBias(c - c.mean())


def _tikhonov_smooth(c: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(I + lam D^T D) x = c`` with ``D`` the first difference."""
    n = c.size
    diag = np.full(n, 1.0 + 2.0 * lam)
    diag[0] = diag[-1] = 1.0 + lam
    off = np.full(n, -lam)
    ab = np.vstack([off, diag, off])
    ab[0, 0] = 0.0
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, c)


def compute_residuals(stack: SinogramStack, X, geom: ProjectorGeometry) -> np.ndarray:
    """Stack ``y_t - P_t x_t`` of all frames into an ``(M, n_det)`` matrix."""
    X = list(X)
    if len(X) != len(stack):
        raise ValueError(f"{len(X)} images for {len(stack)} frames")
    if geom.n_det != stack.n_det:
        raise ValueError("geometry and stack disagree on the detector count")
    rows = []
    for frame, x in zip(stack.frames, X):
        g = geom.with_angles(frame.angles)
        rows.append(np.asarray(frame.data, dtype=np.float64) - radon_forward(np.asarray(x, dtype=np.float64), g))
    return np.concatenate(rows, axis=0)
