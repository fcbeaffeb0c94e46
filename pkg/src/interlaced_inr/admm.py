"""ADMM-INR reconstruction of interlaced dynamic scans.

Each outer iteration alternates four updates per frame ``t``::

    x_t <- argmin 1/2 |W^(1/2) (P_t x - (y_t - c))|^2 + mu/2 |x - q_t + u_t|^2   (CGLS)
    theta <- Adam steps on MSE(net(t), D_s(x_t + u_t)) + TV terms                (shared net)
    q_t <- net(t) on the full-resolution grid
    u_t <- u_t + x_t - q_t

optionally followed by a robust re-estimate of the detector bias ``c`` from
the stacked data residuals. The network parameters of the iteration with the
smallest mean ``|x_t - q_t|`` are kept.

Internally the problem is solved in normalised units: the projector uses unit
pixels and images are divided by a robust amplitude of the FBP start, so
``mu`` and the TV weights do not depend on the physical pixel size or the
attenuation scale.
"""

from __future__ import annotations

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import RingBias, SinogramStack
from .inr.network import EncodingConfig, InrConfig, InrModel, inr_backward, inr_forward
from .inr.optim import AdamState, adam_step
from .inr.regularizers import tv_axial, tv_spatial, tv_temporal
from .inr.sampling import downsample, full_grid, jittered_grid, normalized_axis
from .solvers import CglsConfig, RingEstimatorConfig, cgls_xupdate, estimate_ring_bias
from .tomo import ProjectorGeometry, fbp, radon_adjoint, radon_forward

__all__ = [
    "TvConfig",
    "ReconstructionConfig",
    "IterationRecord",
    "AdmmResult",
    "ReconstructionError",
    "admm_reconstruct",
    "select_model",
    "reconstruct_4d",
    "fbp_frames",
    "time_coordinates",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TvConfig:
    lambda_s: float = 1e-3
    lambda_t: float = 1e-3
    lambda_a: float = 0.0
    eps: float = 1e-6
    k_s: int = 2
    k_t: int = 2

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_t, self.lambda_a) < 0:
            raise ValueError("TV weights must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class ReconstructionConfig:
    outer_iters: int = 20
    inr_updates_per_iter: int = 50
    cgls: CglsConfig = CglsConfig()
    tv: TvConfig = TvConfig()
    downsample: int = 2
    jitter: bool = True
    wls: bool = False
    ring_correction: bool = False
    ring: RingEstimatorConfig = RingEstimatorConfig()
    axial_batch: int = 1
    hidden: int = 256
    n_layers: int = 3
    mapping_size: int = 256
    encoding_scale: float = 5.0
    time_scale: float = 1.0
    omega0: float = 30.0
    lr: float = 1e-3
    lr_decay: float = 0.98
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"
    mask_circle: bool = False
    fbp_filter: str = "ramlak"
    normalize: bool = True
    n_workers: int = 1

    def __post_init__(self):
        for name in ("outer_iters", "inr_updates_per_iter", "downsample", "axial_batch", "hidden", "n_layers", "mapping_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def inr_config(self, input_dim: int, seed: int | None = None) -> InrConfig:
        enc = EncodingConfig(self.mapping_size, self.encoding_scale, input_dim, self.time_scale)
        return InrConfig(enc, self.hidden, self.n_layers, self.omega0, self.seed if seed is None else seed, self.dtype)


@dataclass
class IterationRecord:
    iteration: int
    order: str
    mean_residual: float
    data_residual: list[float]
    mse: float
    tv_space: float
    tv_time: float
    tv_axial: float
    lr: float
    ring_norm: float
    cgls_flags: list[str] = field(default_factory=list)


@dataclass
class AdmmResult:
    model: InrModel
    frames: np.ndarray
    """Renders of the selected model, ``(T, H, W)`` or ``(T, Z, H, W)``, mm^-1."""
    history: list[IterationRecord]
    best_iteration: int
    best_residual: float
    x: np.ndarray
    q: np.ndarray
    u: np.ndarray
    ring_bias: RingBias | None
    scale: float
    orders: list[list[int]]


class ReconstructionError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def time_coordinates(n_frames: int) -> np.ndarray:
    return normalized_axis(n_frames)


def fbp_frames(stack: SinogramStack, geom: ProjectorGeometry, filter: str = "ramlak") -> np.ndarray:
    """Per-frame FBP from each frame's own (sparse) angle subset."""
    return np.stack([fbp(f.data, geom.with_angles(f.angles), filter) for f in stack.frames])


def select_model(residuals, checkpoints):
    """Checkpoint at the first minimum of ``residuals``."""
    residuals = list(residuals)
    if not residuals:
        raise ValueError("no iterations recorded")
    if len(checkpoints) != len(residuals):
        raise ValueError("need one checkpoint per recorded iteration")
    return checkpoints[int(np.argmin(residuals))]


class _Problem:
    """One axial batch in normalised units: slices x frames of 2D subproblems."""

    def __init__(self, stacks: list[SinogramStack], geom: ProjectorGeometry, cfg: ReconstructionConfig):
        self.cfg = cfg
        self.n_slices = len(stacks)
        self.n_frames = len(stacks[0])
        for st in stacks:
            if len(st) != self.n_frames:
                raise ValueError("all slices must share the frame layout")
            if st.n_det != geom.n_det:
                raise ValueError(f"stack has {st.n_det} detector bins, geometry {geom.n_det}")
        if cfg.wls and not all(st.has_counts for st in stacks):
            raise ValueError("WLS requires photon counts")
        h, w = geom.shape
        if h % cfg.downsample or w % cfg.downsample:
            raise ValueError(f"downsample factor {cfg.downsample} must divide the image size {geom.shape}")
        self.shape = geom.shape
        self.ps = geom.pixel_size
        unit = ProjectorGeometry(geom.shape, geom.angles, geom.n_det, 1.0, geom.det_spacing / geom.pixel_size, geom.step)
        self.geoms = [unit.with_angles(f.angles) for f in stacks[0].frames]
        self.phys_geoms = [geom.with_angles(f.angles) for f in stacks[0].frames]
        self.stacks = stacks
        x0 = np.stack(
            [np.stack([fbp(f.data, g, cfg.fbp_filter) for f, g in zip(st.frames, self.phys_geoms)]) for st in stacks],
            axis=1,
        )  # (T, Z, H, W) in mm^-1
        if cfg.normalize:
            # amplitude from the FBP of all views pooled: far less noisy than the sparse per-frame FBPs
            pooled = geom.with_angles(np.concatenate([f.angles for f in stacks[0].frames]))
            static = [fbp(np.concatenate([f.data for f in st.frames]), pooled, cfg.fbp_filter) for st in stacks]
            scale = float(np.percentile(np.abs(np.stack(static)), 99.5))
        else:
            scale = 1.0 / self.ps
        self.scale = scale if scale > 0 else 1.0
        # y_n = y / (pixel_size * scale) pairs with unit-pixel projector and x / scale
        self.y_factor = 1.0 / (self.ps * self.scale)
        self.x0 = x0 / self.scale
        self.y = [[np.asarray(f.data, dtype=np.float64) * self.y_factor for f in st.frames] for st in stacks]
        self.w = [[f.weights if cfg.wls else None for f in st.frames] for st in stacks]
        self.mask = None
        if cfg.mask_circle:
            yy, xx = np.mgrid[:h, :w]
            r = min(h, w) / 2.0
            self.mask = (((xx - (w - 1) / 2) ** 2 + (yy - (h - 1) / 2) ** 2) <= r * r).astype(np.float64)

    def op(self, t):
        g = self.geoms[t]
        if self.mask is None:
            return g
        m = self.mask
        return (lambda v: radon_forward(m * v, g)), (lambda r: m * radon_adjoint(r, g))


def _render(model: InrModel, xy: np.ndarray, z_vals, t: float, chunk: int = 8192) -> np.ndarray:
    """Evaluate the network on ``xy`` for every slice coordinate; ``(Z, n)``."""
    out = []
    for z in z_vals:
        extra = [t] if z is None else [z, t]
        coords = np.concatenate([xy] + [np.full((xy.shape[0], 1), v) for v in extra], axis=1)
        vals = [inr_forward(model, model.encode(coords[i : i + chunk]), keep_cache=False)[0] for i in range(0, coords.shape[0], chunk)]
        out.append(np.concatenate(vals))
    return np.stack(out)


def _admm_batch(
    stacks: list[SinogramStack],
    geom: ProjectorGeometry,
    cfg: ReconstructionConfig,
    volumetric: bool,
    ring_bias: RingBias | None = None,
    callback=None,
) -> AdmmResult:
    prob = _Problem(stacks, geom, cfg)
    T, Z = prob.n_frames, prob.n_slices
    h, w = prob.shape
    s = cfg.downsample
    hc, wc = h // s, w // s
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(seeds[1])
    model = InrModel(cfg.inr_config(4 if volumetric else 3, seed=int(seeds[0].generate_state(1)[0])))
    dtype = model.dtype
    adam = AdamState.for_params(model.params, lr=cfg.lr, beta1=cfg.adam_betas[0], beta2=cfg.adam_betas[1], eps=cfg.adam_eps)
    t_coords = time_coordinates(T)
    z_vals = list(normalized_axis(Z)) if volumetric else [None]
    xy_full = full_grid(h, w)

    def render_all(m):
        return np.stack([_render(m, xy_full, z_vals, t_coords[t]).reshape(Z, h, w) for t in range(T)]).astype(np.float64)

    x = prob.x0.copy()
    q = render_all(model)
    u = np.zeros_like(x)
    c = None
    if ring_bias is not None:
        c = np.asarray(ring_bias.c, dtype=np.float64) * prob.y_factor
    elif cfg.ring_correction:
        c = np.zeros(geom.n_det)

    history: list[IterationRecord] = []
    checkpoints: list[np.ndarray] = []
    orders: list[list[int]] = []
    best_res = np.inf
    best_params = model.params.copy()
    best_iter = -1
    tv = cfg.tv

    for k in range(cfg.outer_iters):
        # x-update, frame-wise
        flags = []
        data_res = []
        for t in range(T):
            for zi in range(Z):
                y = prob.y[zi][t] if c is None else prob.y[zi][t] - c[None, :]
                res = cgls_xupdate(prob.op(t), y, q[t, zi] - u[t, zi], cfg.cgls, prob.w[zi][t], warm_start=x[t, zi])
                x[t, zi] = res.x
                if res.status == "breakdown":
                    flags.append(f"t{t}z{zi}:breakdown")
        # detector bias from the stacked data residuals
        if cfg.ring_correction:
            R = np.concatenate(
                [prob.y[zi][t] - radon_forward(x[t, zi], prob.geoms[t]) for zi in range(Z) for t in range(T)]
            )
            c = estimate_ring_bias(R, cfg.ring).c
        # theta-update
        order = list(range(T)) if k % 2 == 0 else list(range(T - 1, -1, -1))
        orders.append(order)
        targets = [downsample(x[t] + u[t], s).reshape(Z, -1).astype(dtype) for t in order]
        sums = np.zeros(4)
        n_terms = 0
        for _ in range(cfg.inr_updates_per_iter):
            xy = jittered_grid(h, w, s, rng, jitter=cfg.jitter)
            n_pts = xy.shape[0]
            prev = None
            for t, target in zip(order, targets):
                extra_cols = [[t_coords[t]] if z is None else [z, t_coords[t]] for z in z_vals]
                coords = np.concatenate(
                    [np.concatenate([xy] + [np.full((n_pts, 1), v) for v in ex], axis=1) for ex in extra_cols]
                )
                out, cache = inr_forward(model, model.encode(coords))
                p = out.reshape(Z, n_pts)
                diff = p - target
                mse = float(np.mean(diff * diff))
                grad = (2.0 / diff.size) * diff
                img = p.reshape(Z, hc, wc)
                l_s = l_t = l_a = 0.0
                if k > tv.k_s and tv.lambda_s > 0:
                    l_s, g = tv_spatial(img, tv.eps)
                    grad += tv.lambda_s * g.reshape(Z, n_pts)
                if k > tv.k_s and tv.lambda_a > 0 and Z > 1:
                    l_a, g = tv_axial(img, tv.eps)
                    grad += tv.lambda_a * g.reshape(Z, n_pts)
                if prev is not None and k > tv.k_t and tv.lambda_t > 0:
                    l_t, g = tv_temporal(img, prev, tv.eps)
                    grad += tv.lambda_t * g.reshape(Z, n_pts)
                loss = mse + tv.lambda_s * l_s + tv.lambda_t * l_t + tv.lambda_a * l_a
                if not np.isfinite(loss):
                    raise ReconstructionError(
                        f"non-finite loss at outer iteration {k}, frame {t}",
                        {"iteration": k, "frame": t, "mse": mse, "tv_space": l_s, "tv_time": l_t, "tv_axial": l_a,
                         "lr": adam.lr, "params_finite": bool(np.all(np.isfinite(model.params)))},
                    )
                g_params = inr_backward(model, cache, grad.reshape(-1))
                adam_step(adam, model.params, g_params)
                prev = img.copy()
                sums += (mse, l_s, l_t, l_a)
                n_terms += 1
        # q- and u-updates
        q = render_all(model)
        u += x - q
        per_frame = [float(np.mean([np.linalg.norm(x[t, zi] - q[t, zi]) for zi in range(Z)])) for t in range(T)]
        mean_res = float(np.mean(per_frame)) * prob.scale
        for t in range(T):
            rel = []
            for zi in range(Z):
                y = prob.y[zi][t] if c is None else prob.y[zi][t] - c[None, :]
                r = radon_forward(x[t, zi], prob.geoms[t]) - y
                rel.append(np.linalg.norm(r) / max(np.linalg.norm(prob.y[zi][t]), 1e-30))
            data_res.append(float(np.mean(rel)))
        sums /= max(n_terms, 1)
        rec = IterationRecord(
            k, "chronological" if k % 2 == 0 else "reversed", mean_res, data_res, *map(float, sums), adam.lr,
            0.0 if c is None else float(np.linalg.norm(c) / prob.y_factor), flags,
        )
        history.append(rec)
        checkpoints.append(model.params.copy())
        if mean_res < best_res:
            best_res, best_iter = mean_res, k
            best_params = model.params.copy()
        if callback is not None:
            callback(rec)
        log.debug("iter %d residual %.4g mse %.4g", k, mean_res, rec.mse)
        adam.decay(cfg.lr_decay)

    chosen = select_model([r.mean_residual for r in history], checkpoints) if history else best_params
    best = model.copy()
    best.set_params(chosen)
    frames = render_all(best) * prob.scale
    bias = None if c is None else RingBias(c / prob.y_factor)
    return AdmmResult(
        best, frames, history, best_iter, best_res, x * prob.scale, q * prob.scale, u * prob.scale, bias, prob.scale, orders
    )


def admm_reconstruct(
    stack: SinogramStack,
    geom: ProjectorGeometry,
    cfg: ReconstructionConfig = ReconstructionConfig(),
    ring_bias: RingBias | None = None,
    callback=None,
) -> AdmmResult:
    """Reconstruct a 2D+t sequence from one slice's interlaced sinograms.

    ``geom`` supplies the image grid, detector and pixel size; angles come
    from the stack. ``ring_bias`` seeds the detector-bias estimate (and is
    used as a fixed correction when ``cfg.ring_correction`` is off).
    Returned images have shape ``(T, H, W)``.
    """
    res = _admm_batch([stack], geom, cfg, volumetric=False, ring_bias=ring_bias, callback=callback)
    res.frames = res.frames[:, 0]
    res.x, res.q, res.u = res.x[:, 0], res.q[:, 0], res.u[:, 0]
    return res


def _batch_job(args):
    stacks, geom, cfg = args
    return _admm_batch(stacks, geom, cfg, volumetric=True)


def reconstruct_4d(
    stacks: list[SinogramStack],
    geom: ProjectorGeometry,
    cfg: ReconstructionConfig = ReconstructionConfig(),
) -> tuple[np.ndarray, list[AdmmResult]]:
    """Axially batched reconstruction of a ``(T, Z, H, W)`` volume sequence.

    Slices are split into contiguous batches of ``cfg.axial_batch`` (the last
    one may be smaller); each batch gets its own network with input
    ``(x, y, z, t)`` and its own seed, and batches never interact.
    """
    n = len(stacks)
    if n == 0:
        raise ValueError("no slices given")
    zb = cfg.axial_batch
    bounds = [(i, min(i + zb, n)) for i in range(0, n, zb)]
    batch_seeds = np.random.SeedSequence(cfg.seed).generate_state(len(bounds))
    jobs = [(stacks[a:b], geom, replace(cfg, seed=int(sd))) for (a, b), sd in zip(bounds, batch_seeds)]
    if cfg.n_workers > 1 and len(jobs) > 1:
        # spawn: forking after the OpenMP runtime has started is unsafe
        with ProcessPoolExecutor(cfg.n_workers, mp_context=multiprocessing.get_context("spawn")) as ex:
            results = list(ex.map(_batch_job, jobs))
    else:
        results = [_batch_job(j) for j in jobs]
    volume = np.concatenate([r.frames for r in results], axis=1)
    return volume, results
